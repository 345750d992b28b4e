#include "riir/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>

#include "riir/errors.hpp"
#include "riir/field.hpp"
#include "riir/io.hpp"
#include "riir/random.hpp"
#include "riir/solver.hpp"
#include "riir/synth.hpp"

namespace riir {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kManifest = "manifest.json";

std::string fmt(const char* spec, double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, spec, v);
    return buf;
}

std::string split_of(std::size_t i, std::size_t n, std::size_t n_val, std::size_t n_test) {
    if (i >= n - n_test) return "test";
    if (i >= n - n_test - n_val) return "val";
    return "train";
}

std::size_t holdout_count(std::size_t n, double fraction) {
    if (fraction <= 0.0 || n < 3) return 0;
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::llround(fraction * static_cast<double>(n))));
}

json phantom_json(const PhantomSpec& p) {
    return {{"height", p.shape.height},         {"width", p.shape.width},
            {"outer_radius", p.outer_radius},   {"inner_radius", p.inner_radius},
            {"center_jitter", p.center_jitter}, {"texture_amplitude", p.texture_amplitude},
            {"texture_sigma", p.texture_sigma}, {"noise_sigma", p.noise_sigma},
            {"seed", p.seed}};
}

void ensure_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec || !fs::is_directory(dir)) throw DataError("cannot create directory '" + dir.string() + "'");
}

// ------------------------------------------------------------------ synth

struct SynthArgs {
    fs::path out;
    int pairs = 0;
    int series = 0;
    int frames = 8;
    double amplitude = 3.0;
    double sigma = 8.0;
    std::uint64_t seed = 0;
    int size = 64;
    double val = 0.1;
    double test = 0.1;
};

int cmd_synth(const SynthArgs& a, std::ostream& out) {
    if ((a.pairs > 0) == (a.series > 0)) throw std::invalid_argument("give exactly one of --pairs N or --series N");
    PhantomSpec ps;
    ps.shape = {a.size, a.size};
    const double scale = a.size / 64.0;
    ps.outer_radius *= scale;
    ps.inner_radius *= scale;
    ps.seed = derive_seed(a.seed, 1);
    MotionSpec ms{a.amplitude, a.sigma, derive_seed(a.seed, 2)};
    validate(ps);
    validate(ms);
    if (a.val < 0.0 || a.test < 0.0 || a.val + a.test >= 1.0) {
        throw std::invalid_argument("--val and --test must be >= 0 with sum < 1");
    }
    ensure_dir(a.out);

    json manifest = {{"format", "riir-dataset"},
                     {"version", 1},
                     {"seed", a.seed},
                     {"phantom", phantom_json(ps)},
                     {"motion", {{"amplitude", ms.amplitude}, {"sigma", ms.sigma}, {"seed", ms.seed}}},
                     {"zero_motion", ms.amplitude == 0.0}};
    json items = json::array();
    const std::size_t n = static_cast<std::size_t>(a.pairs > 0 ? a.pairs : a.series);
    const std::size_t n_val = holdout_count(n, a.val);
    const std::size_t n_test = holdout_count(n, a.test);
    if (a.pairs > 0) {
        manifest["kind"] = "pairs";
        const auto pairs = generate_pair_dataset(a.pairs, ps, ms);
        for (std::size_t i = 0; i < pairs.size(); ++i) {
            save_pair(a.out / "pairs" / pairs[i].id, pairs[i]);
            items.push_back({{"id", pairs[i].id}, {"split", split_of(i, n, n_val, n_test)}});
        }
    } else {
        manifest["kind"] = "series";
        const auto schedule = default_schedule(a.frames);
        json sched = json::array();
        for (const auto& f : schedule) sched.push_back({{"ts", f.ts}, {"te", f.te}, {"td", f.td}});
        manifest["frames"] = a.frames;
        manifest["schedule"] = sched;
        const auto series = generate_series_dataset(a.series, ps, ms, schedule);
        for (std::size_t i = 0; i < series.size(); ++i) {
            save_series(a.out / "series" / series[i].id, series[i]);
            items.push_back({{"id", series[i].id}, {"split", split_of(i, n, n_val, n_test)}});
        }
    }
    manifest["count"] = n;
    manifest["items"] = items;
    write_file(a.out / kManifest, manifest.dump(2) + "\n");
    out << "wrote " << n << " " << manifest["kind"].get<std::string>() << " to " << a.out.string() << " (train "
        << n - n_val - n_test << ", val " << n_val << ", test " << n_test << ")\n";
    return kExitOk;
}

// ------------------------------------------------------------------ train

struct TrainArgs {
    fs::path data;
    fs::path config;
    fs::path out;
    std::optional<double> data_fraction;
    std::optional<std::uint64_t> seed;
    std::optional<int> epochs;
};

std::string log_csv(const std::vector<EpochLog>& log) {
    std::string s = "epoch,train_loss,val_loss\n";
    for (const auto& e : log) {
        s += std::to_string(e.epoch) + "," + fmt("%.9g", e.train_loss) + "," +
             (std::isfinite(e.val_loss) ? fmt("%.9g", e.val_loss) : std::string{}) + "\n";
    }
    return s;
}

RunConfig resolve_config(const TrainArgs& a) {
    RunConfig cfg = a.config.empty() ? RunConfig{} : load_config(a.config);
    if (a.data_fraction) {
        if (!(*a.data_fraction > 0.0 && *a.data_fraction <= 1.0)) {
            throw std::invalid_argument("--data-fraction must be in (0, 1]");
        }
        cfg.train.data_fraction = *a.data_fraction;
    }
    if (a.seed) cfg.train.seed = *a.seed;
    if (a.epochs) {
        if (*a.epochs < 0) throw std::invalid_argument("--epochs must be >= 0");
        cfg.train.epochs = *a.epochs;
    }
    return cfg;
}

struct TrainOutcome {
    TrainResult result;
    Checkpoint ckpt;
};

TrainOutcome train_and_save(const RunConfig& cfg, const Dataset& ds, const fs::path& ckpt_path, std::ostream& out) {
    const auto train_set = dataset_pairs(ds, "train");
    const auto val_set = dataset_pairs(ds, "val");
    if (train_set.empty()) throw DataError("dataset has no training items");
    TrainOptions opt;
    opt.on_epoch = [&](const EpochLog& e) {
        out << "epoch " << e.epoch << "/" << cfg.train.epochs << " train_loss " << fmt("%.6g", e.train_loss);
        if (std::isfinite(e.val_loss)) out << " val_loss " << fmt("%.6g", e.val_loss);
        out << " (" << fmt("%.1f", e.seconds) << " s)\n";
        out.flush();
    };
    TrainOutcome o{train(cfg.train, cfg.cell, train_set, val_set, opt), {}};
    out << "training pairs used: " << o.result.train_ids.size() << " of " << train_set.size() << "\n";
    o.ckpt.cell = cfg.cell;
    o.ckpt.train = cfg.train;
    o.ckpt.params = o.result.params;
    const std::size_t tail = std::min<std::size_t>(o.result.log.size(), 20);
    o.ckpt.log_tail.assign(o.result.log.end() - static_cast<std::ptrdiff_t>(tail), o.result.log.end());
    if (ckpt_path.has_parent_path()) ensure_dir(ckpt_path.parent_path());
    save_checkpoint(ckpt_path, o.ckpt);
    write_file(fs::path(ckpt_path.string() + ".log.csv"), log_csv(o.result.log));
    std::string ids;
    for (const auto& id : o.result.train_ids) ids += id + "\n";
    write_file(fs::path(ckpt_path.string() + ".ids.txt"), ids);
    return o;
}

int cmd_train(const TrainArgs& a, std::ostream& out) {
    const RunConfig cfg = resolve_config(a);
    validate(cfg.train);
    validate(cfg.cell);
    const Dataset ds = load_dataset(a.data);
    const TrainOutcome o = train_and_save(cfg, ds, a.out, out);
    if (o.result.diverged) {
        throw NumericalError(o.result.message + "; last good parameters saved to " + a.out.string());
    }
    out << "checkpoint written to " << a.out.string() << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------ register

struct RegisterArgs {
    fs::path ckpt;
    fs::path mov;
    fs::path fixed;
    fs::path out;
    std::optional<int> steps;
};

int cmd_register(const RegisterArgs& a, std::ostream& out) {
    const Checkpoint ckpt = load_checkpoint(a.ckpt);
    const Image mov = array_to_image(read_array(a.mov));
    const Image fixed = array_to_image(read_array(a.fixed));
    if (!(mov.shape() == fixed.shape())) {
        throw DataError("moving image " + to_string(mov.shape()) + " and fixed image " + to_string(fixed.shape()) +
                        " differ in shape");
    }
    const int steps = a.steps.value_or(ckpt.train.steps);
    if (steps < 1) throw std::invalid_argument("--steps must be >= 1");
    const InferenceTrace trace = recurrent_infer<float>(ckpt.cell, ckpt.params, ckpt.train.inner, mov, fixed, steps);
    ensure_dir(a.out);
    const Image warped = warp_image(mov, trace.final_disp);
    write_array(a.out / "displacement.riir", field_to_array(trace.final_disp));
    write_array(a.out / "warped.riir", image_to_array(warped, "warped"));
    std::string csv = "step,inner_loss,delta_max,delta_mean,mean_displacement\n";
    for (std::size_t t = 0; t < trace.steps.size(); ++t) {
        const StepRecord& s = trace.steps[t];
        csv += std::to_string(t) + "," + fmt("%.6g", s.inner) + "," + fmt("%.6g", s.delta_max) + "," +
               fmt("%.6g", s.delta_mean) + "," + fmt("%.6g", mean_magnitude(s.u)) + "\n";
    }
    write_file(a.out / "trace.csv", csv);
    write_pgm(a.out / "mov.pgm", mov);
    write_pgm(a.out / "fixed.pgm", fixed);
    write_pgm(a.out / "warped.pgm", warped);
    write_field_magnitude_pgm(a.out / "displacement_magnitude.pgm", trace.final_disp);
    out << "steps " << steps << " inner_loss " << fmt("%.6g", trace.steps.front().inner) << " -> "
        << fmt("%.6g", trace.final_inner) << " mean_displacement " << fmt("%.6g", mean_magnitude(trace.final_disp))
        << " px\n";
    return kExitOk;
}

// ------------------------------------------------------------------ evaluate

struct EvalArgs {
    fs::path ckpt;
    fs::path data;
    fs::path out;
    fs::path fields_dir;
    std::string split = "test";
    std::optional<int> steps;
    std::string method = "riir";
    std::string sim;
    std::optional<double> lambda;
    int iters = 500;
    double step_size = 1.0;
};

struct Evaluation {
    std::vector<MetricsRow> rows;
    std::vector<std::pair<std::string, DisplacementField>> fields;
};

Evaluation evaluate_dataset(const Registrar& base, const SimilarityKind& inner, const Dataset& ds,
                            const std::string& split) {
    Evaluation ev;
    std::vector<DisplacementField> produced;
    const Registrar reg = [&](const Image& mov, const Image& fixed) {
        InferenceTrace t = base(mov, fixed);
        produced.push_back(t.final_disp);
        return t;
    };
    if (ds.kind == DatasetKind::pairs) {
        const auto pairs = dataset_pairs(ds, split);
        if (pairs.empty()) throw DataError("no items in split '" + split + "'");
        ev.rows = evaluate_pairs(reg, inner, pairs);
        for (std::size_t i = 0; i < pairs.size(); ++i) ev.fields.emplace_back(pairs[i].id, produced[i]);
    } else {
        const auto series = dataset_series(ds, split);
        if (series.empty()) throw DataError("no items in split '" + split + "'");
        ev.rows = evaluate_series(reg, series);
        std::size_t k = 0;
        for (const auto& s : series) {
            for (std::size_t f = 0; f + 1 < s.frames.size(); ++f) {
                char buf[32];
                std::snprintf(buf, sizeof buf, "_frame_%02zu", f);
                ev.fields.emplace_back(s.id + buf, produced[k++]);
            }
        }
    }
    return ev;
}

int cmd_evaluate(const EvalArgs& a, std::ostream& out) {
    const Dataset ds = load_dataset(a.data);
    Registrar reg;
    SimilarityKind inner = SimilarityKind::mse();
    if (a.method == "riir") {
        if (a.ckpt.empty()) throw std::invalid_argument("--ckpt is required for method riir");
        const Checkpoint ckpt = load_checkpoint(a.ckpt);
        inner = ckpt.train.inner;
        const int steps = a.steps.value_or(ckpt.train.steps);
        if (steps < 1) throw std::invalid_argument("--steps must be >= 1");
        reg = riir_registrar(ckpt.cell, ckpt.params, inner, steps);
    } else if (a.method == "classical") {
        if (!a.sim.empty()) inner.type = parse_similarity(a.sim);
        TrainConfig defaults;
        defaults.outer = inner;
        const double lambda = a.lambda.value_or(defaults.effective_lambda());
        if (a.iters < 1 || !(a.step_size > 0.0) || !(lambda >= 0.0)) {
            throw std::invalid_argument("classical method needs --iters >= 1, --step-size > 0, --lambda >= 0");
        }
        reg = [inner, lambda, a](const Image& mov, const Image& fixed) {
            return classical_register(mov, fixed, inner, lambda, a.iters, a.step_size);
        };
    } else {
        throw std::invalid_argument("--method must be riir or classical");
    }
    const Evaluation ev = evaluate_dataset(reg, inner, ds, a.split);
    if (a.out.has_parent_path()) ensure_dir(a.out.parent_path());
    write_metrics_report(ev.rows, a.out);
    if (!a.fields_dir.empty()) {
        ensure_dir(a.fields_dir);
        for (const auto& [id, f] : ev.fields) write_array(a.fields_dir / (id + ".riir"), field_to_array(f));
    }
    out << "wrote " << ev.rows.size() << " rows to " << a.out.string() << "\n";
    return kExitOk;
}

// ------------------------------------------------------------------ ablate

struct AblateArgs {
    fs::path data;
    fs::path grid;
    fs::path out;
};

struct GridSpec {
    std::vector<std::pair<std::string, std::vector<std::string>>> axes;  // in file order
    std::vector<std::uint64_t> seeds;
    std::string base_text;
};

std::vector<std::string> split_values(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : s + ",") {
        if (ch == ',' || ch == '{' || ch == '}') {
            const auto b = cur.find_first_not_of(" \t\r");
            if (b != std::string::npos) out.push_back(cur.substr(b, cur.find_last_not_of(" \t\r") - b + 1));
            cur.clear();
        } else {
            cur += ch;
        }
    }
    return out;
}

const std::map<std::string, std::string>& axis_keys() {
    static const std::map<std::string, std::string> k = {{"hidden", ""},
                                                         {"inner", "inner_sim"},
                                                         {"input", "input_mode"},
                                                         {"steps", "steps"},
                                                         {"weights", "weight_scheme"},
                                                         {"fraction", "data_fraction"}};
    return k;
}

GridSpec parse_grid(const std::string& text) {
    GridSpec g;
    std::istringstream in(text);
    std::string line;
    int line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        std::string body = line.substr(0, line.find('#'));
        const auto eq = body.find('=');
        if (body.find_first_not_of(" \t\r") == std::string::npos) {
            g.base_text += "\n";
            continue;
        }
        if (eq == std::string::npos) throw ConfigError(line_no, "expected 'axis = v1, v2, ...'");
        auto key = split_values(body.substr(0, eq));
        const auto values = split_values(body.substr(eq + 1));
        if (key.size() != 1 || values.empty()) throw ConfigError(line_no, "expected 'axis = v1, v2, ...'");
        if (key[0] == "seeds") {
            for (const auto& v : values) {
                try {
                    std::size_t pos = 0;
                    const long long s = std::stoll(v, &pos);
                    if (pos != v.size() || s < 0) throw std::invalid_argument(v);
                    g.seeds.push_back(static_cast<std::uint64_t>(s));
                } catch (const std::exception&) {
                    throw ConfigError(line_no, "seeds: expected non-negative integers, got '" + v + "'");
                }
            }
            g.base_text += "\n";
        } else if (axis_keys().count(key[0])) {
            if (key[0] == "hidden") {
                for (const auto& v : values) {
                    if (v.size() != 2 || (v[0] != '0' && v[0] != '1') || (v[1] != '0' && v[1] != '1')) {
                        throw ConfigError(line_no, "hidden: expected values among 00, 01, 10, 11");
                    }
                }
            }
            for (const auto& [k, _] : g.axes) {
                if (k == key[0]) throw ConfigError(line_no, "duplicate axis '" + key[0] + "'");
            }
            g.axes.emplace_back(key[0], values);
            g.base_text += "\n";
        } else {
            if (values.size() != 1) throw ConfigError(line_no, "fixed key '" + key[0] + "' takes a single value");
            g.base_text += line + "\n";
        }
    }
    return g;
}

struct GridCell {
    std::string name;
    std::string config_text;
};

std::vector<GridCell> expand_grid(const GridSpec& g) {
    std::vector<GridCell> cells{{"", ""}};
    for (const auto& [axis, values] : g.axes) {
        std::vector<GridCell> next;
        for (const auto& c : cells) {
            for (const auto& v : values) {
                GridCell n = c;
                if (values.size() > 1) n.name += (n.name.empty() ? "" : "_") + axis + "-" + v;
                if (axis == "hidden") {
                    n.config_text += std::string("hidden1 = ") + (v[0] == '1' ? "true" : "false") + "\n";
                    n.config_text += std::string("hidden2 = ") + (v[1] == '1' ? "true" : "false") + "\n";
                } else {
                    n.config_text += axis_keys().at(axis) + " = " + v + "\n";
                }
                next.push_back(std::move(n));
            }
        }
        cells = std::move(next);
    }
    for (auto& c : cells) {
        if (c.name.empty()) c.name = "base";
    }
    return cells;
}

std::vector<std::string> summary_metrics(DatasetKind kind) {
    if (kind == DatasetKind::pairs) {
        return {"endpoint_error", "dice", "dice_myocardium", "hausdorff_myocardium", "inner_loss",
                "log_jacobian_std"};
    }
    return {"d_pca1", "d_pca2", "endpoint_error", "log_jacobian_std_max"};
}

std::optional<double> mean_after(const std::vector<MetricsRow>& rows, const std::string& metric) {
    double sum = 0.0;
    int n = 0;
    for (const auto& r : rows) {
        if (r.metric == metric && !r.step && r.after) {
            sum += *r.after;
            ++n;
        }
    }
    if (n == 0) return std::nullopt;
    return sum / n;
}

int cmd_ablate(const AblateArgs& a, std::ostream& out) {
    const GridSpec grid = parse_grid(read_file(a.grid));
    const RunConfig base = parse_config(grid.base_text);
    const Dataset ds = load_dataset(a.data);
    const std::string eval_split =
        std::any_of(ds.items.begin(), ds.items.end(), [](const auto& i) { return i.split == "test"; }) ? "test"
                                                                                                       : "val";
    std::vector<GridCell> cells = expand_grid(grid);
    const std::vector<std::uint64_t> seeds = grid.seeds.empty() ? std::vector<std::uint64_t>{base.train.seed}
                                                                : grid.seeds;
    const auto metrics = summary_metrics(ds.kind);
    ensure_dir(a.out);

    std::string runs = "cell,seed,status";
    for (const auto& m : metrics) runs += "," + m;
    runs += ",message\n";
    std::string agg = "cell,n_ok,n_failed,seeds";
    for (const auto& m : metrics) agg += "," + m + "_mean," + m + "_sd";
    agg += "\n";

    for (const auto& cell : cells) {
        std::map<std::string, std::vector<double>> values;
        int ok = 0;
        int failed = 0;
        std::string seed_list;
        for (std::uint64_t seed : seeds) {
            seed_list += (seed_list.empty() ? "" : ";") + std::to_string(seed);
            const fs::path run_dir = a.out / "runs" / (cell.name + "_seed" + std::to_string(seed));
            std::string line = cell.name + "," + std::to_string(seed);
            out << "[ablate] cell " << cell.name << " seed " << seed << "\n";
            try {
                RunConfig cfg = parse_config(grid.base_text + cell.config_text);
                cfg.train.seed = seed;
                validate(cfg.train);
                validate(cfg.cell);
                ensure_dir(run_dir);
                write_file(run_dir / "config.txt", format_config(cfg));
                const TrainOutcome o = train_and_save(cfg, ds, run_dir / "model.ckpt", out);
                if (o.result.diverged) throw NumericalError(o.result.message);
                const Registrar reg = riir_registrar(cfg.cell, o.result.params, cfg.train.inner, cfg.train.steps);
                const Evaluation ev = evaluate_dataset(reg, cfg.train.inner, ds, eval_split);
                write_metrics_report(ev.rows, run_dir / "report.csv");
                line += ",ok";
                for (const auto& m : metrics) {
                    const auto v = mean_after(ev.rows, m);
                    line += "," + (v ? fmt("%.6g", *v) : std::string{});
                    if (v) values[m].push_back(*v);
                }
                line += ",\n";
                ++ok;
            } catch (const std::exception& e) {
                std::string msg = e.what();
                std::replace(msg.begin(), msg.end(), ',', ';');
                std::replace(msg.begin(), msg.end(), '\n', ' ');
                line += ",failed";
                for (std::size_t i = 0; i < metrics.size(); ++i) line += ",";
                line += "," + msg + "\n";
                ++failed;
                out << "[ablate] cell " << cell.name << " seed " << seed << " failed: " << e.what() << "\n";
            }
            runs += line;
        }
        agg += cell.name + "," + std::to_string(ok) + "," + std::to_string(failed) + "," + seed_list;
        for (const auto& m : metrics) {
            const auto& v = values[m];
            if (v.empty()) {
                agg += ",,";
                continue;
            }
            const double mean = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
            agg += "," + fmt("%.6g", mean) + ",";
            if (v.size() > 1) {
                double ss = 0.0;
                for (double x : v) ss += (x - mean) * (x - mean);
                agg += fmt("%.6g", std::sqrt(ss / static_cast<double>(v.size() - 1)));
            }
        }
        agg += "\n";
    }
    write_file(a.out / "runs.csv", runs);
    write_file(a.out / "aggregate.csv", agg);
    out << "ablation: " << cells.size() << " cells x " << seeds.size() << " seeds written to " << a.out.string()
        << "\n";
    return kExitOk;
}

std::string one_line(std::string s) {
    std::replace(s.begin(), s.end(), '\n', ' ');
    std::replace(s.begin(), s.end(), '\r', ' ');
    return s;
}

int report_error(std::ostream& err, int code, const std::string& msg) {
    const char* kind = code == kExitUsage ? "usage" : code == kExitNumerical ? "numerical" : "data";
    err << "riir: error kind=" << kind << " exit=" << code << ": " << one_line(msg) << "\n";
    return code;
}

}  // namespace

Dataset load_dataset(const fs::path& dir) {
    const fs::path mpath = dir / kManifest;
    if (!fs::exists(mpath)) throw DataError("no " + std::string(kManifest) + " in '" + dir.string() + "'");
    json m;
    try {
        m = json::parse(read_file(mpath));
    } catch (const json::exception& e) {
        throw DataError("malformed manifest: " + std::string(e.what()));
    }
    Dataset ds;
    try {
        const auto kind = m.at("kind").get<std::string>();
        if (kind == "pairs") {
            ds.kind = DatasetKind::pairs;
        } else if (kind == "series") {
            ds.kind = DatasetKind::series;
        } else {
            throw DataError("manifest: unknown dataset kind '" + kind + "'");
        }
        for (const auto& it : m.at("items")) {
            DatasetItem item{it.at("id").get<std::string>(), it.value("split", std::string("train"))};
            if (item.split != "train" && item.split != "val" && item.split != "test") {
                throw DataError("manifest: item '" + item.id + "' has unknown split '" + item.split + "'");
            }
            if (ds.kind == DatasetKind::pairs) {
                ds.pairs.push_back(load_pair(dir / "pairs" / item.id));
            } else {
                ds.series.push_back(load_series(dir / "series" / item.id));
            }
            ds.items.push_back(std::move(item));
        }
    } catch (const json::exception& e) {
        throw DataError("malformed manifest: " + std::string(e.what()));
    }
    return ds;
}

std::vector<RegistrationPair> dataset_pairs(const Dataset& ds, const std::string& split) {
    std::vector<RegistrationPair> out;
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        if (split != "all" && ds.items[i].split != split) continue;
        if (ds.kind == DatasetKind::pairs) {
            out.push_back(ds.pairs[i]);
            continue;
        }
        const ImageSeries& s = ds.series[i];
        for (std::size_t k = 0; k + 1 < s.frames.size(); ++k) {
            RegistrationPair p;
            char buf[32];
            std::snprintf(buf, sizeof buf, "_frame_%02zu", k);
            p.id = s.id + buf;
            p.mov = s.frames[k];
            p.fixed = s.frames.back();
            p.labels_mov = s.labels;
            p.labels_fixed = s.labels;
            if (s.ground_truth.size() == s.frames.size()) p.ground_truth = s.ground_truth[k];
            out.push_back(std::move(p));
        }
    }
    return out;
}

std::vector<ImageSeries> dataset_series(const Dataset& ds, const std::string& split) {
    std::vector<ImageSeries> out;
    if (ds.kind != DatasetKind::series) return out;
    for (std::size_t i = 0; i < ds.items.size(); ++i) {
        if (split == "all" || ds.items[i].split == split) out.push_back(ds.series[i]);
    }
    return out;
}

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Recurrent inference image registration in 2D", "riir"};
    app.require_subcommand(1);
    app.set_help_all_flag("--help-all", "Show help for all subcommands");

    SynthArgs synth;
    auto* s = app.add_subcommand("synth", "Generate a synthetic pair or series dataset");
    s->add_option("--out", synth.out, "Output directory")->required();
    s->add_option("--pairs", synth.pairs, "Number of registration pairs");
    s->add_option("--series", synth.series, "Number of image series");
    s->add_option("--frames", synth.frames, "Frames per series")->check(CLI::Range(2, 1000));
    s->add_option("--amplitude", synth.amplitude, "Maximum displacement magnitude (px)")->check(CLI::NonNegativeNumber);
    s->add_option("--sigma", synth.sigma, "Motion smoothness (px)")->check(CLI::PositiveNumber);
    s->add_option("--seed", synth.seed, "Random seed");
    s->add_option("--size", synth.size, "Image height and width (px)")->check(CLI::Range(16, 4096));
    s->add_option("--val", synth.val, "Validation fraction");
    s->add_option("--test", synth.test, "Test fraction");

    TrainArgs train_args;
    auto* t = app.add_subcommand("train", "Train the recurrent cell");
    t->add_option("--data", train_args.data, "Dataset directory")->required();
    t->add_option("--config", train_args.config, "Run configuration file");
    t->add_option("--out", train_args.out, "Checkpoint path")->required();
    t->add_option("--data-fraction", train_args.data_fraction, "Fraction of training pairs to use");
    t->add_option("--seed", train_args.seed, "Override the configured seed");
    t->add_option("--epochs", train_args.epochs, "Override the configured epoch count");

    RegisterArgs reg;
    auto* r = app.add_subcommand("register", "Register one moving image to a fixed image");
    r->add_option("--ckpt", reg.ckpt, "Checkpoint")->required();
    r->add_option("--mov", reg.mov, "Moving image (.riir)")->required();
    r->add_option("--fixed", reg.fixed, "Fixed image (.riir)")->required();
    r->add_option("--out", reg.out, "Output directory")->required();
    r->add_option("--steps", reg.steps, "Inference steps (default: training steps)");

    EvalArgs ev;
    auto* e = app.add_subcommand("evaluate", "Compute the metrics report on a dataset split");
    e->add_option("--ckpt", ev.ckpt, "Checkpoint (method riir)");
    e->add_option("--data", ev.data, "Dataset directory")->required();
    e->add_option("--out", ev.out, "Report CSV path")->required();
    e->add_option("--split", ev.split, "train, val, test or all")
        ->check(CLI::IsMember({"train", "val", "test", "all"}));
    e->add_option("--steps", ev.steps, "Inference steps (default: training steps)");
    e->add_option("--method", ev.method, "riir or classical")->check(CLI::IsMember({"riir", "classical"}));
    e->add_option("--sim", ev.sim, "Similarity for the classical method (mse, ncc, nmi)");
    e->add_option("--lambda", ev.lambda, "Regularization weight for the classical method");
    e->add_option("--iters", ev.iters, "Iterations for the classical method");
    e->add_option("--step-size", ev.step_size, "Step size for the classical method");
    e->add_option("--fields-dir", ev.fields_dir, "Directory for the predicted displacement fields");

    AblateArgs abl;
    auto* a = app.add_subcommand("ablate", "Train and evaluate every cell of an ablation grid");
    a->add_option("--data", abl.data, "Dataset directory")->required();
    a->add_option("--grid", abl.grid, "Ablation grid file")->required();
    a->add_option("--out", abl.out, "Output directory")->required();

    std::vector<std::string> rev;
    for (std::size_t i = args.size(); i > 1; --i) rev.push_back(args[i - 1]);
    try {
        app.parse(rev);
    } catch (const CLI::CallForHelp&) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp&) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError& pe) {
        return report_error(err, kExitUsage, pe.what());
    }

    try {
        if (s->parsed()) return cmd_synth(synth, out);
        if (t->parsed()) return cmd_train(train_args, out);
        if (r->parsed()) return cmd_register(reg, out);
        if (e->parsed()) return cmd_evaluate(ev, out);
        if (a->parsed()) return cmd_ablate(abl, out);
        return report_error(err, kExitUsage, "no command given");
    } catch (const ConfigError& ce) {
        return report_error(err, kExitUsage, std::string("config ") + ce.what());
    } catch (const NumericalError& ne) {
        return report_error(err, kExitNumerical, ne.what());
    } catch (const DataError& de) {
        return report_error(err, kExitData, de.what());
    } catch (const ShapeError& se) {
        return report_error(err, kExitData, se.what());
    } catch (const std::invalid_argument& ia) {
        return report_error(err, kExitUsage, ia.what());
    } catch (const fs::filesystem_error& fe) {
        return report_error(err, kExitData, fe.what());
    } catch (const std::exception& ex) {
        return report_error(err, kExitData, ex.what());
    }
}

}  // namespace riir
