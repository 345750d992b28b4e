#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "riir/data.hpp"

namespace riir {

inline constexpr int kExitOk = 0;
inline constexpr int kExitUsage = 2;
inline constexpr int kExitData = 3;
inline constexpr int kExitNumerical = 4;

// Entry point of the riir tool. args[0] is the program name. Errors are
// reported as one line "riir: error kind=<usage|data|numerical> exit=<n>: <reason>".
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

enum class DatasetKind { pairs, series };

struct DatasetItem {
    std::string id;
    std::string split;  // train | val | test
};

struct Dataset {
    DatasetKind kind = DatasetKind::pairs;
    std::vector<DatasetItem> items;
    std::vector<RegistrationPair> pairs;  // parallel to items when kind == pairs
    std::vector<ImageSeries> series;      // parallel to items when kind == series
};

// Reads manifest.json and the item directories below `dir`.
Dataset load_dataset(const std::filesystem::path& dir);

// Pairs of the given split ("all" selects everything). Series become
// (frame k, template) pairs.
std::vector<RegistrationPair> dataset_pairs(const Dataset& ds, const std::string& split);
std::vector<ImageSeries> dataset_series(const Dataset& ds, const std::string& split);

}  // namespace riir
