#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "riir/data.hpp"
#include "riir/grid.hpp"
#include "riir/net.hpp"
#include "riir/solver.hpp"

namespace riir {

enum class DType { f32, f64, u16 };

std::string to_string(DType dtype);
std::size_t dtype_size(DType dtype);

// "RIIR1", u32 header length, JSON header {dtype, shape, tag, crc32}, then the
// little-endian payload in row-major order.
struct ArrayFile {
    std::vector<int> shape;
    std::string tag;
    std::variant<std::vector<float>, std::vector<double>, std::vector<std::uint16_t>> values;

    DType dtype() const;
    std::size_t element_count() const;
    bool operator==(const ArrayFile&) const = default;
};

inline constexpr std::string_view kArrayMagic = "RIIR1";

std::string encode_array(const ArrayFile& array);
// Throws FormatError (bad_magic, truncated_payload, checksum_mismatch, malformed).
ArrayFile decode_array(std::string_view bytes);

void write_array(const std::filesystem::path& path, const ArrayFile& array);
ArrayFile read_array(const std::filesystem::path& path);

ArrayFile image_to_array(const Image& img, const std::string& tag = "image");
Image array_to_image(const ArrayFile& array);
// Shape [2, H, W]: row displacement plane, then column displacement plane.
ArrayFile field_to_array(const DisplacementField& disp, const std::string& tag = "displacement(row,col)");
DisplacementField array_to_field(const ArrayFile& array);
ArrayFile labels_to_array(const LabelMap& labels, const std::string& tag = "labels");
LabelMap array_to_labels(const ArrayFile& array);

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
    int version = kCheckpointVersion;
    CellConfig cell;
    TrainConfig train;
    ParameterStore<float> params;
    std::vector<EpochLog> log_tail;
};

// Container: "RIIRCKPT", u32 header length, JSON header (version, configs,
// entry table, log tail), concatenated ArrayFile entries, u32 CRC-32 of all
// preceding bytes. Epoch timings are not stored, so equal runs give equal bytes.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

struct RunConfig {
    TrainConfig train;
    CellConfig cell;
};

// Flat "key = value" lines; '#' starts a comment. Keys: steps, lambda,
// inner_sim, outer_sim, weight_scheme, hidden1, hidden2, input_mode, lr,
// beta1, beta2, epochs, batch, seed, data_fraction. Throws ConfigError.
RunConfig parse_config(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);
std::string format_config(const RunConfig& cfg);

// Columns: id,metric,before,after,step. Floats as %.6g, missing values empty.
std::string format_metrics_report(const std::vector<MetricsRow>& rows);
void write_metrics_report(const std::vector<MetricsRow>& rows, const std::filesystem::path& path);
std::vector<MetricsRow> parse_metrics_report(std::string_view text);
std::vector<MetricsRow> read_metrics_report(const std::filesystem::path& path);

// 8-bit binary PGM, min-max scaled.
void write_pgm(const std::filesystem::path& path, const Plane<double>& img);
void write_field_magnitude_pgm(const std::filesystem::path& path, const DisplacementField& disp);

// One directory per pair: mov, fixed, labels_mov, labels_fixed, ground_truth (.riir).
void save_pair(const std::filesystem::path& dir, const RegistrationPair& pair);
RegistrationPair load_pair(const std::filesystem::path& dir);
// One directory per series: frame_KK, ground_truth_KK, reference_KK, labels (.riir).
void save_series(const std::filesystem::path& dir, const ImageSeries& series);
ImageSeries load_series(const std::filesystem::path& dir);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace riir
