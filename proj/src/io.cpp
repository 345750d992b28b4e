#include "riir/io.hpp"

#include <boost/crc.hpp>
#include <json.hpp>

#include <bit>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <limits>
#include <map>
#include <sstream>

#include "riir/errors.hpp"
#include "riir/field.hpp"

static_assert(std::endian::native == std::endian::little, "file formats assume a little-endian host");

namespace riir {

using nlohmann::json;
namespace fs = std::filesystem;

std::string to_string(DType dtype) {
    switch (dtype) {
        case DType::f32:
            return "f32";
        case DType::f64:
            return "f64";
        case DType::u16:
            return "u16";
    }
    return "?";
}

std::size_t dtype_size(DType dtype) {
    switch (dtype) {
        case DType::f32:
            return 4;
        case DType::f64:
            return 8;
        case DType::u16:
            return 2;
    }
    return 0;
}

DType ArrayFile::dtype() const {
    switch (values.index()) {
        case 0:
            return DType::f32;
        case 1:
            return DType::f64;
        default:
            return DType::u16;
    }
}

std::size_t ArrayFile::element_count() const {
    return std::visit([](const auto& v) { return v.size(); }, values);
}

namespace {

std::uint32_t crc32(std::string_view bytes) {
    boost::crc_32_type crc;
    crc.process_bytes(bytes.data(), bytes.size());
    return crc.checksum();
}

void put_u32(std::string& out, std::uint32_t v) {
    char b[4];
    std::memcpy(b, &v, 4);
    out.append(b, 4);
}

std::uint32_t get_u32(std::string_view bytes, std::size_t offset) {
    std::uint32_t v = 0;
    std::memcpy(&v, bytes.data() + offset, 4);
    return v;
}

std::size_t shape_product(const std::vector<int>& shape) {
    std::size_t n = 1;
    for (int d : shape) {
        if (d < 0) throw FormatError(FormatError::Kind::malformed, "negative dimension in array shape");
        n *= static_cast<std::size_t>(d);
    }
    return n;
}

DType parse_dtype(const std::string& s) {
    if (s == "f32") return DType::f32;
    if (s == "f64") return DType::f64;
    if (s == "u16") return DType::u16;
    throw FormatError(FormatError::Kind::malformed, "unknown dtype '" + s + "'");
}

template <typename T>
std::vector<T> read_values(std::string_view payload, std::size_t count) {
    std::vector<T> v(count);
    if (count) std::memcpy(v.data(), payload.data(), count * sizeof(T));
    return v;
}

}  // namespace

std::string encode_array(const ArrayFile& array) {
    if (shape_product(array.shape) != array.element_count()) {
        throw ShapeError("array shape does not match its element count");
    }
    std::string payload = std::visit(
        [](const auto& v) {
            return std::string(reinterpret_cast<const char*>(v.data()), v.size() * sizeof(v[0]));
        },
        array.values);
    json header = {{"dtype", to_string(array.dtype())},
                   {"shape", array.shape},
                   {"tag", array.tag},
                   {"endianness", "little"},
                   {"crc32", crc32(payload)}};
    const std::string h = header.dump();
    std::string out(kArrayMagic);
    put_u32(out, static_cast<std::uint32_t>(h.size()));
    out += h;
    out += payload;
    return out;
}

ArrayFile decode_array(std::string_view bytes) {
    const std::size_t magic = kArrayMagic.size();
    if (bytes.size() < magic || bytes.substr(0, magic) != kArrayMagic) {
        throw FormatError(FormatError::Kind::bad_magic, "bad magic: not an RIIR1 array file");
    }
    if (bytes.size() < magic + 4) throw FormatError(FormatError::Kind::truncated_payload, "truncated header");
    const std::uint32_t hlen = get_u32(bytes, magic);
    if (bytes.size() < magic + 4 + hlen) throw FormatError(FormatError::Kind::truncated_payload, "truncated header");
    json header;
    try {
        header = json::parse(bytes.substr(magic + 4, hlen));
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Kind::malformed, std::string("malformed array header: ") + e.what());
    }
    ArrayFile a;
    DType dtype{};
    std::uint32_t expected_crc = 0;
    try {
        dtype = parse_dtype(header.at("dtype").get<std::string>());
        a.shape = header.at("shape").get<std::vector<int>>();
        a.tag = header.value("tag", std::string{});
        expected_crc = header.at("crc32").get<std::uint32_t>();
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Kind::malformed, std::string("malformed array header: ") + e.what());
    }
    const std::size_t count = shape_product(a.shape);
    const std::size_t nbytes = count * dtype_size(dtype);
    const std::string_view payload = bytes.substr(magic + 4 + hlen);
    if (payload.size() < nbytes) {
        throw FormatError(FormatError::Kind::truncated_payload,
                          "truncated payload: expected " + std::to_string(nbytes) + " bytes, found " +
                              std::to_string(payload.size()));
    }
    if (payload.size() > nbytes) {
        throw FormatError(FormatError::Kind::malformed, "trailing bytes after array payload");
    }
    if (crc32(payload) != expected_crc) {
        throw FormatError(FormatError::Kind::checksum_mismatch, "checksum mismatch in array payload");
    }
    switch (dtype) {
        case DType::f32:
            a.values = read_values<float>(payload, count);
            break;
        case DType::f64:
            a.values = read_values<double>(payload, count);
            break;
        case DType::u16:
            a.values = read_values<std::uint16_t>(payload, count);
            break;
    }
    return a;
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open '" + path.string() + "'");
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + path.string() + "'");
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed for '" + path.string() + "'");
}

void write_array(const fs::path& path, const ArrayFile& array) { write_file(path, encode_array(array)); }

ArrayFile read_array(const fs::path& path) {
    const std::string bytes = read_file(path);
    try {
        return decode_array(bytes);
    } catch (const FormatError& e) {
        throw FormatError(e.kind(), path.string() + ": " + e.what());
    }
}

namespace {

GridShape grid_from(const std::vector<int>& shape, std::size_t skip) {
    return {shape[skip], shape[skip + 1]};
}

template <typename T>
const std::vector<T>& values_as(const ArrayFile& a, const char* what) {
    if (!std::holds_alternative<std::vector<T>>(a.values)) {
        throw FormatError(FormatError::Kind::malformed, std::string(what) + ": unexpected dtype " +
                                                            to_string(a.dtype()));
    }
    return std::get<std::vector<T>>(a.values);
}

}  // namespace

ArrayFile image_to_array(const Image& img, const std::string& tag) {
    return {{img.height(), img.width()}, tag, img.values()};
}

Image array_to_image(const ArrayFile& a) {
    if (a.shape.size() != 2) throw FormatError(FormatError::Kind::malformed, "image array must be 2-D");
    return Image(grid_from(a.shape, 0), values_as<double>(a, "image"));
}

ArrayFile field_to_array(const DisplacementField& disp, const std::string& tag) {
    std::vector<double> v = disp.row.values();
    v.insert(v.end(), disp.col.values().begin(), disp.col.values().end());
    return {{2, disp.row.height(), disp.row.width()}, tag, std::move(v)};
}

DisplacementField array_to_field(const ArrayFile& a) {
    if (a.shape.size() != 3 || a.shape[0] != 2) {
        throw FormatError(FormatError::Kind::malformed, "displacement array must have shape [2, H, W]");
    }
    const auto& v = values_as<double>(a, "displacement");
    const GridShape s = grid_from(a.shape, 1);
    const auto mid = v.begin() + static_cast<std::ptrdiff_t>(s.size());
    return {Plane<double>(s, std::vector<double>(v.begin(), mid)), Plane<double>(s, std::vector<double>(mid, v.end()))};
}

ArrayFile labels_to_array(const LabelMap& labels, const std::string& tag) {
    return {{labels.height(), labels.width()}, tag, labels.values()};
}

LabelMap array_to_labels(const ArrayFile& a) {
    if (a.shape.size() != 2) throw FormatError(FormatError::Kind::malformed, "label array must be 2-D");
    return LabelMap(grid_from(a.shape, 0), values_as<std::uint16_t>(a, "labels"));
}

// ---------------------------------------------------------------- checkpoint

namespace {

constexpr std::string_view kCheckpointMagic = "RIIRCKPT";

json kind_to_json(const SimilarityKind& k) {
    return {{"type", to_string(k.type)}, {"window", k.window}, {"bins", k.bins}, {"kernel_sigma", k.kernel_sigma}};
}

SimilarityKind kind_from_json(const json& j) {
    SimilarityKind k;
    k.type = parse_similarity(j.at("type").get<std::string>());
    k.window = j.at("window").get<int>();
    k.bins = j.at("bins").get<int>();
    k.kernel_sigma = j.at("kernel_sigma").get<double>();
    return k;
}

json cell_to_json(const CellConfig& c) {
    return {{"input_mode", to_string(c.input_mode)},
            {"hidden_enabled", {c.hidden_enabled[0], c.hidden_enabled[1]}},
            {"hidden_channels", {c.hidden_channels[0], c.hidden_channels[1]}},
            {"conv_kernel", c.conv_kernel},
            {"io_channels", c.io_channels}};
}

CellConfig cell_from_json(const json& j) {
    CellConfig c;
    c.input_mode = parse_input_mode(j.at("input_mode").get<std::string>());
    const auto he = j.at("hidden_enabled").get<std::vector<bool>>();
    const auto hc = j.at("hidden_channels").get<std::vector<int>>();
    if (he.size() != 2 || hc.size() != 2) throw std::invalid_argument("hidden settings must have two entries");
    c.hidden_enabled = {he[0], he[1]};
    c.hidden_channels = {hc[0], hc[1]};
    c.conv_kernel = j.at("conv_kernel").get<int>();
    c.io_channels = j.at("io_channels").get<int>();
    return c;
}

json train_to_json(const TrainConfig& t) {
    json j = {{"steps", t.steps},
              {"inner", kind_to_json(t.inner)},
              {"outer", kind_to_json(t.outer)},
              {"weights", to_string(t.weights)},
              {"learning_rate", t.learning_rate},
              {"beta1", t.beta1},
              {"beta2", t.beta2},
              {"adam_eps", t.adam_eps},
              {"epochs", t.epochs},
              {"batch", t.batch},
              {"seed", t.seed},
              {"data_fraction", t.data_fraction},
              {"clip_norm", t.clip_norm}};
    j["lambda"] = t.lambda ? json(*t.lambda) : json(nullptr);
    return j;
}

TrainConfig train_from_json(const json& j) {
    TrainConfig t;
    t.steps = j.at("steps").get<int>();
    if (!j.at("lambda").is_null()) t.lambda = j.at("lambda").get<double>();
    t.inner = kind_from_json(j.at("inner"));
    t.outer = kind_from_json(j.at("outer"));
    t.weights = parse_weight_scheme(j.at("weights").get<std::string>());
    t.learning_rate = j.at("learning_rate").get<double>();
    t.beta1 = j.at("beta1").get<double>();
    t.beta2 = j.at("beta2").get<double>();
    t.adam_eps = j.at("adam_eps").get<double>();
    t.epochs = j.at("epochs").get<int>();
    t.batch = j.at("batch").get<int>();
    t.seed = j.at("seed").get<std::uint64_t>();
    t.data_fraction = j.at("data_fraction").get<double>();
    t.clip_norm = j.at("clip_norm").get<double>();
    return t;
}

json nullable(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double from_nullable(const json& j) {
    return j.is_null() ? std::numeric_limits<double>::quiet_NaN() : j.get<double>();
}

}  // namespace

std::string encode_checkpoint(const Checkpoint& ckpt) {
    json entries = json::array();
    std::string blob;
    for (const auto& a : ckpt.params.arrays()) {
        const std::string enc = encode_array({a.shape, a.name, a.data});
        entries.push_back({{"name", a.name}, {"offset", blob.size()}, {"length", enc.size()}});
        blob += enc;
    }
    json log = json::array();
    for (const auto& e : ckpt.log_tail) {
        log.push_back({{"epoch", e.epoch}, {"train_loss", nullable(e.train_loss)}, {"val_loss", nullable(e.val_loss)}});
    }
    const json header = {{"version", ckpt.version},
                         {"cell", cell_to_json(ckpt.cell)},
                         {"train", train_to_json(ckpt.train)},
                         {"entries", entries},
                         {"log_tail", log}};
    const std::string h = header.dump();
    std::string out(kCheckpointMagic);
    put_u32(out, static_cast<std::uint32_t>(h.size()));
    out += h;
    out += blob;
    put_u32(out, crc32(out));
    return out;
}

Checkpoint decode_checkpoint(std::string_view bytes) {
    const std::size_t magic = kCheckpointMagic.size();
    if (bytes.size() < magic || bytes.substr(0, magic) != kCheckpointMagic) {
        throw FormatError(FormatError::Kind::bad_magic, "bad magic: not an RIIR checkpoint");
    }
    if (bytes.size() < magic + 8) throw FormatError(FormatError::Kind::truncated_payload, "truncated checkpoint");
    const std::string_view body = bytes.substr(0, bytes.size() - 4);
    if (crc32(body) != get_u32(bytes, bytes.size() - 4)) {
        throw FormatError(FormatError::Kind::checksum_mismatch, "checkpoint checksum mismatch");
    }
    const std::uint32_t hlen = get_u32(bytes, magic);
    if (body.size() < magic + 4 + hlen) {
        throw FormatError(FormatError::Kind::truncated_payload, "truncated checkpoint header");
    }
    Checkpoint ckpt;
    json header;
    try {
        header = json::parse(body.substr(magic + 4, hlen));
        ckpt.version = header.at("version").get<int>();
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Kind::malformed, std::string("malformed checkpoint header: ") + e.what());
    }
    if (ckpt.version != kCheckpointVersion) {
        throw FormatError(FormatError::Kind::version_mismatch,
                          "checkpoint version " + std::to_string(ckpt.version) + " is not supported (expected " +
                              std::to_string(kCheckpointVersion) + ")");
    }
    const std::string_view blob = body.substr(magic + 4 + hlen);
    try {
        ckpt.cell = cell_from_json(header.at("cell"));
        ckpt.train = train_from_json(header.at("train"));
        for (const auto& e : header.at("log_tail")) {
            ckpt.log_tail.push_back(
                {e.at("epoch").get<int>(), from_nullable(e.at("train_loss")), from_nullable(e.at("val_loss")), 0.0});
        }
        for (const auto& e : header.at("entries")) {
            const auto offset = e.at("offset").get<std::size_t>();
            const auto length = e.at("length").get<std::size_t>();
            if (offset > blob.size() || length > blob.size() - offset) {
                throw FormatError(FormatError::Kind::truncated_payload, "checkpoint entry out of range");
            }
            ArrayFile a = decode_array(blob.substr(offset, length));
            const auto name = e.at("name").get<std::string>();
            if (a.tag != name) throw FormatError(FormatError::Kind::malformed, "entry name differs from array tag");
            ckpt.params.arrays().push_back({name, a.shape, values_as<float>(a, name.c_str())});
        }
    } catch (const json::exception& e) {
        throw FormatError(FormatError::Kind::malformed, std::string("malformed checkpoint header: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw FormatError(FormatError::Kind::malformed, std::string("invalid checkpoint configuration: ") + e.what());
    }
    const auto layout = parameter_layout(ckpt.cell);
    if (layout.size() != ckpt.params.size()) {
        throw FormatError(FormatError::Kind::malformed,
                          "configuration mismatch: cell config expects " + std::to_string(layout.size()) +
                              " arrays, checkpoint holds " + std::to_string(ckpt.params.size()));
    }
    for (std::size_t i = 0; i < layout.size(); ++i) {
        if (layout[i].name != ckpt.params[i].name || layout[i].shape != ckpt.params[i].shape) {
            throw FormatError(FormatError::Kind::malformed,
                              "configuration mismatch at array '" + ckpt.params[i].name + "' (expected '" +
                                  layout[i].name + "')");
        }
    }
    return ckpt;
}

void save_checkpoint(const fs::path& path, const Checkpoint& ckpt) { write_file(path, encode_checkpoint(ckpt)); }

Checkpoint load_checkpoint(const fs::path& path) {
    const std::string bytes = read_file(path);
    try {
        return decode_checkpoint(bytes);
    } catch (const FormatError& e) {
        throw FormatError(e.kind(), path.string() + ": " + e.what());
    }
}

// ---------------------------------------------------------------- run config

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return std::string(s.substr(b, e - b + 1));
}

long long parse_int(const std::string& v, int line, const std::string& key) {
    std::size_t pos = 0;
    long long x = 0;
    try {
        x = std::stoll(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size()) throw ConfigError(line, key + ": expected an integer, got '" + v + "'");
    return x;
}

double parse_real(const std::string& v, int line, const std::string& key) {
    std::size_t pos = 0;
    double x = 0.0;
    try {
        x = std::stod(v, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos == 0 || pos != v.size() || !std::isfinite(x)) {
        throw ConfigError(line, key + ": expected a finite number, got '" + v + "'");
    }
    return x;
}

bool parse_bool(const std::string& v, int line, const std::string& key) {
    if (v == "true" || v == "1" || v == "on" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "off" || v == "no") return false;
    throw ConfigError(line, key + ": expected true or false, got '" + v + "'");
}

}  // namespace

RunConfig parse_config(std::string_view text) {
    RunConfig cfg;
    std::map<std::string, int> seen;
    int line_no = 0;
    std::size_t start = 0;
    while (start <= text.size()) {
        const std::size_t end = std::min(text.find('\n', start), text.size());
        ++line_no;
        std::string line(text.substr(start, end - start));
        start = end + 1;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        line = trim(line);
        if (line.empty()) {
            if (end == text.size()) break;
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError(line_no, "expected 'key = value'");
        const std::string key = trim(std::string_view(line).substr(0, eq));
        const std::string value = trim(std::string_view(line).substr(eq + 1));
        if (key.empty()) throw ConfigError(line_no, "missing key");
        if (value.empty()) throw ConfigError(line_no, key + ": missing value");
        if (auto it = seen.find(key); it != seen.end()) {
            throw ConfigError(line_no, "duplicate key '" + key + "' (first set on line " +
                                           std::to_string(it->second) + ")");
        }
        seen[key] = line_no;
        auto similarity = [&](SimilarityKind& k) {
            try {
                k.type = parse_similarity(value);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(line_no, key + ": " + e.what());
            }
        };
        TrainConfig& t = cfg.train;
        if (key == "steps") {
            const long long v = parse_int(value, line_no, key);
            if (v < 1 || v > 1000) throw ConfigError(line_no, "steps must be in [1, 1000]");
            t.steps = static_cast<int>(v);
        } else if (key == "lambda") {
            const double v = parse_real(value, line_no, key);
            if (v < 0.0) throw ConfigError(line_no, "lambda must be >= 0");
            t.lambda = v;
        } else if (key == "inner_sim") {
            similarity(t.inner);
        } else if (key == "outer_sim") {
            similarity(t.outer);
        } else if (key == "weight_scheme") {
            try {
                t.weights = parse_weight_scheme(value);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(line_no, key + ": " + e.what());
            }
        } else if (key == "hidden1") {
            cfg.cell.hidden_enabled[0] = parse_bool(value, line_no, key);
        } else if (key == "hidden2") {
            cfg.cell.hidden_enabled[1] = parse_bool(value, line_no, key);
        } else if (key == "input_mode") {
            try {
                cfg.cell.input_mode = parse_input_mode(value);
            } catch (const std::invalid_argument& e) {
                throw ConfigError(line_no, key + ": " + e.what());
            }
        } else if (key == "lr") {
            const double v = parse_real(value, line_no, key);
            if (v <= 0.0) throw ConfigError(line_no, "lr must be > 0");
            t.learning_rate = v;
        } else if (key == "beta1" || key == "beta2") {
            const double v = parse_real(value, line_no, key);
            if (v < 0.0 || v >= 1.0) throw ConfigError(line_no, key + " must be in [0, 1)");
            (key == "beta1" ? t.beta1 : t.beta2) = v;
        } else if (key == "epochs") {
            const long long v = parse_int(value, line_no, key);
            if (v < 0 || v > 1000000) throw ConfigError(line_no, "epochs must be >= 0");
            t.epochs = static_cast<int>(v);
        } else if (key == "batch") {
            const long long v = parse_int(value, line_no, key);
            if (v < 1 || v > 1000000) throw ConfigError(line_no, "batch must be >= 1");
            t.batch = static_cast<int>(v);
        } else if (key == "seed") {
            const long long v = parse_int(value, line_no, key);
            if (v < 0) throw ConfigError(line_no, "seed must be >= 0");
            t.seed = static_cast<std::uint64_t>(v);
        } else if (key == "data_fraction") {
            const double v = parse_real(value, line_no, key);
            if (v <= 0.0 || v > 1.0) throw ConfigError(line_no, "data_fraction must be in (0, 1]");
            t.data_fraction = v;
        } else {
            throw ConfigError(line_no, "unknown key '" + key + "'");
        }
        if (end == text.size()) break;
    }
    return cfg;
}

RunConfig load_config(const fs::path& path) { return parse_config(read_file(path)); }

namespace {

std::string fmt_real(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

}  // namespace

std::string format_config(const RunConfig& cfg) {
    const TrainConfig& t = cfg.train;
    std::ostringstream o;
    o << "steps = " << t.steps << "\n";
    if (t.lambda) o << "lambda = " << fmt_real(*t.lambda) << "\n";
    o << "inner_sim = " << to_string(t.inner.type) << "\n";
    o << "outer_sim = " << to_string(t.outer.type) << "\n";
    o << "weight_scheme = " << to_string(t.weights) << "\n";
    o << "hidden1 = " << (cfg.cell.hidden_enabled[0] ? "true" : "false") << "\n";
    o << "hidden2 = " << (cfg.cell.hidden_enabled[1] ? "true" : "false") << "\n";
    o << "input_mode = " << to_string(cfg.cell.input_mode) << "\n";
    o << "lr = " << fmt_real(t.learning_rate) << "\n";
    o << "beta1 = " << fmt_real(t.beta1) << "\n";
    o << "beta2 = " << fmt_real(t.beta2) << "\n";
    o << "epochs = " << t.epochs << "\n";
    o << "batch = " << t.batch << "\n";
    o << "seed = " << t.seed << "\n";
    o << "data_fraction = " << fmt_real(t.data_fraction) << "\n";
    return o.str();
}

// ---------------------------------------------------------------- metrics report

namespace {

std::string fmt6(const std::optional<double>& v) {
    if (!v) return {};
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.6g", *v);
    return buf;
}

std::vector<std::string> split_csv(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.push_back(line.substr(start, comma == std::string::npos ? std::string::npos : comma - start));
        if (comma == std::string::npos) break;
        start = comma + 1;
    }
    return out;
}

}  // namespace

std::string format_metrics_report(const std::vector<MetricsRow>& rows) {
    std::string out = "id,metric,before,after,step\n";
    for (const auto& r : rows) {
        if (r.id.find(',') != std::string::npos || r.metric.find(',') != std::string::npos) {
            throw std::invalid_argument("metrics report ids and names must not contain commas");
        }
        out += r.id + "," + r.metric + "," + fmt6(r.before) + "," + fmt6(r.after) + "," +
               (r.step ? std::to_string(*r.step) : std::string{}) + "\n";
    }
    return out;
}

void write_metrics_report(const std::vector<MetricsRow>& rows, const fs::path& path) {
    if (rows.empty()) throw std::invalid_argument("metrics report needs at least one row");
    write_file(path, format_metrics_report(rows));
}

std::vector<MetricsRow> parse_metrics_report(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::string line;
    if (!std::getline(in, line) || line != "id,metric,before,after,step") {
        throw DataError("metrics report: unexpected header");
    }
    std::vector<MetricsRow> rows;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto f = split_csv(line);
        if (f.size() != 5) throw DataError("metrics report line " + std::to_string(line_no) + ": expected 5 fields");
        MetricsRow r{f[0], f[1], std::nullopt, std::nullopt, std::nullopt};
        try {
            if (!f[2].empty()) r.before = std::stod(f[2]);
            if (!f[3].empty()) r.after = std::stod(f[3]);
            if (!f[4].empty()) r.step = std::stoi(f[4]);
        } catch (const std::exception&) {
            throw DataError("metrics report line " + std::to_string(line_no) + ": bad number");
        }
        rows.push_back(std::move(r));
    }
    return rows;
}

std::vector<MetricsRow> read_metrics_report(const fs::path& path) { return parse_metrics_report(read_file(path)); }

// ---------------------------------------------------------------- previews

void write_pgm(const fs::path& path, const Plane<double>& img) {
    double lo = img[0];
    double hi = img[0];
    for (double v : img.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    std::string out = "P5\n" + std::to_string(img.width()) + " " + std::to_string(img.height()) + "\n255\n";
    const double range = hi - lo;
    for (double v : img.values()) {
        const double s = range > 0.0 ? (v - lo) / range : 0.0;
        out.push_back(static_cast<char>(static_cast<unsigned char>(std::lround(255.0 * s))));
    }
    write_file(path, out);
}

void write_field_magnitude_pgm(const fs::path& path, const DisplacementField& disp) {
    Plane<double> mag(disp.shape());
    for (std::size_t i = 0; i < mag.size(); ++i) mag[i] = std::hypot(disp.row[i], disp.col[i]);
    write_pgm(path, mag);
}

// ---------------------------------------------------------------- datasets

namespace {

std::string indexed(const char* stem, std::size_t k) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%s_%02zu.riir", stem, k);
    return buf;
}

}  // namespace

void save_pair(const fs::path& dir, const RegistrationPair& pair) {
    fs::create_directories(dir);
    write_array(dir / "mov.riir", image_to_array(pair.mov, "mov"));
    write_array(dir / "fixed.riir", image_to_array(pair.fixed, "fixed"));
    if (pair.labels_mov) write_array(dir / "labels_mov.riir", labels_to_array(*pair.labels_mov, "labels_mov"));
    if (pair.labels_fixed) {
        write_array(dir / "labels_fixed.riir", labels_to_array(*pair.labels_fixed, "labels_fixed"));
    }
    if (pair.ground_truth) write_array(dir / "ground_truth.riir", field_to_array(*pair.ground_truth));
}

RegistrationPair load_pair(const fs::path& dir) {
    RegistrationPair p;
    p.id = dir.filename().string();
    p.mov = array_to_image(read_array(dir / "mov.riir"));
    p.fixed = array_to_image(read_array(dir / "fixed.riir"));
    require_same_shape(p.mov.shape(), p.fixed.shape(), "pair images");
    if (fs::exists(dir / "labels_mov.riir")) p.labels_mov = array_to_labels(read_array(dir / "labels_mov.riir"));
    if (fs::exists(dir / "labels_fixed.riir")) {
        p.labels_fixed = array_to_labels(read_array(dir / "labels_fixed.riir"));
    }
    if (fs::exists(dir / "ground_truth.riir")) p.ground_truth = array_to_field(read_array(dir / "ground_truth.riir"));
    return p;
}

void save_series(const fs::path& dir, const ImageSeries& s) {
    fs::create_directories(dir);
    for (std::size_t k = 0; k < s.frames.size(); ++k) {
        write_array(dir / indexed("frame", k), image_to_array(s.frames[k], "frame"));
    }
    for (std::size_t k = 0; k < s.ground_truth.size(); ++k) {
        write_array(dir / indexed("ground_truth", k), field_to_array(s.ground_truth[k]));
    }
    for (std::size_t k = 0; k < s.reference.size(); ++k) {
        write_array(dir / indexed("reference", k), image_to_array(s.reference[k], "reference"));
    }
    if (s.labels) write_array(dir / "labels.riir", labels_to_array(*s.labels));
}

ImageSeries load_series(const fs::path& dir) {
    ImageSeries s;
    s.id = dir.filename().string();
    for (std::size_t k = 0; fs::exists(dir / indexed("frame", k)); ++k) {
        s.frames.push_back(array_to_image(read_array(dir / indexed("frame", k))));
    }
    if (s.frames.size() < 2) throw DataError("series '" + dir.string() + "' has fewer than 2 frames");
    for (std::size_t k = 0; fs::exists(dir / indexed("ground_truth", k)); ++k) {
        s.ground_truth.push_back(array_to_field(read_array(dir / indexed("ground_truth", k))));
    }
    for (std::size_t k = 0; fs::exists(dir / indexed("reference", k)); ++k) {
        s.reference.push_back(array_to_image(read_array(dir / indexed("reference", k))));
    }
    if (fs::exists(dir / "labels.riir")) s.labels = array_to_labels(read_array(dir / "labels.riir"));
    return s;
}

}  // namespace riir
