#include "riir/solver.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "riir/errors.hpp"
#include "riir/field.hpp"
#include "riir/random.hpp"

namespace riir {

std::string to_string(WeightScheme scheme) {
    return scheme == WeightScheme::uniform ? "uniform" : "exponential";
}

WeightScheme parse_weight_scheme(const std::string& name) {
    if (name == "uniform") return WeightScheme::uniform;
    if (name == "exponential" || name == "exp") return WeightScheme::exponential;
    throw std::invalid_argument("unknown weight scheme '" + name + "' (expected uniform|exponential)");
}

std::vector<double> loss_weights(WeightScheme scheme, int steps) {
    if (steps < 1) throw std::invalid_argument("loss_weights: steps must be >= 1");
    std::vector<double> w(static_cast<std::size_t>(steps));
    for (int t = 1; t <= steps; ++t) {
        double v = 1.0 / steps;
        if (scheme == WeightScheme::exponential) {
            v = steps == 1 ? 1.0 : std::pow(10.0, static_cast<double>(t - 1) / (steps - 1));
        }
        w[static_cast<std::size_t>(t - 1)] = v;
    }
    return w;
}

double TrainConfig::effective_lambda() const {
    if (lambda) return *lambda;
    return outer.type == SimilarityType::mse ? 0.05 : 0.1;
}

void validate(const TrainConfig& cfg) {
    if (cfg.steps < 1) throw std::invalid_argument("steps must be >= 1");
    if (cfg.lambda && !(*cfg.lambda >= 0.0)) throw std::invalid_argument("lambda must be >= 0");
    if (!(cfg.learning_rate > 0.0)) throw std::invalid_argument("learning rate must be > 0");
    if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0)) throw std::invalid_argument("beta1 must be in [0, 1)");
    if (!(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0)) throw std::invalid_argument("beta2 must be in [0, 1)");
    if (cfg.epochs < 0) throw std::invalid_argument("epochs must be >= 0");
    if (cfg.batch < 1) throw std::invalid_argument("batch must be >= 1");
    if (!(cfg.data_fraction > 0.0 && cfg.data_fraction <= 1.0)) {
        throw std::invalid_argument("data fraction must be in (0, 1]");
    }
    if (!(cfg.clip_norm > 0.0)) throw std::invalid_argument("clip norm must be > 0");
    validate(cfg.inner);
    validate(cfg.outer);
}

namespace {

DisplacementField zero_field(GridShape s) { return {Plane<double>(s), Plane<double>(s)}; }

void add_scaled(DisplacementField& acc, double s, const DisplacementField& x) {
    for (std::size_t i = 0; i < acc.size(); ++i) {
        acc.row[i] += s * x.row[i];
        acc.col[i] += s * x.col[i];
    }
}

StepRecord make_record(const DisplacementField& u, double inner, const DisplacementField& delta) {
    return {u, inner, max_magnitude(delta), mean_magnitude(delta)};
}

}  // namespace

InferenceTrace recurrent_infer(const StepFunction& step, const SimilarityKind& inner, const Image& mov,
                               const Image& fixed, int steps) {
    require_same_shape(mov.shape(), fixed.shape(), "recurrent_infer");
    if (steps < 1) throw std::invalid_argument("recurrent_infer: steps must be >= 1");
    InferenceTrace trace;
    DisplacementField u = zero_field(mov.shape());
    for (int t = 0; t < steps; ++t) {
        const double value = inner_loss(inner, warp_image(mov, u), fixed);
        const VectorField grad = inner_loss_gradient(inner, mov, fixed, u);
        DisplacementField delta = step(t, u, grad);
        require_same_shape(delta.shape(), u.shape(), "recurrent_infer increment");
        if (!std::isfinite(value) || !all_finite(delta)) {
            throw NumericalError("non-finite value at inference step " + std::to_string(t + 1));
        }
        trace.steps.push_back(make_record(u, value, delta));
        u = u + delta;
    }
    trace.final_inner = inner_loss(inner, warp_image(mov, u), fixed);
    if (!std::isfinite(trace.final_inner)) {
        throw NumericalError("non-finite inner loss after step " + std::to_string(steps));
    }
    trace.final_disp = std::move(u);
    return trace;
}

template <typename T>
InferenceTrace recurrent_infer(const CellConfig& cell_cfg, const ParameterStore<T>& params,
                               const SimilarityKind& inner, const Image& mov, const Image& fixed, int steps) {
    const RiirCell<T> cell(cell_cfg, params);
    HiddenState<T> hidden = HiddenState<T>::zeros(cell_cfg, mov.shape());
    CellCache<T> cache;
    const StepFunction step = [&](int, const DisplacementField& u, const VectorField& grad) {
        const FeatureMap<T> input = assemble_input<T>(cell_cfg.input_mode, u, mov, fixed, grad);
        CellOutput<T> out = cell.forward(input, hidden, cache);
        hidden = std::move(out.hidden);
        return to_displacement(out.delta);
    };
    return recurrent_infer(step, inner, mov, fixed, steps);
}

double outer_loss(const InferenceTrace& trace, const Image& fixed, const Image& mov, const SimilarityKind& sim,
                  const std::vector<double>& weights, double lambda) {
    const std::size_t steps = trace.steps.size();
    if (steps == 0 || weights.size() != steps) {
        throw std::invalid_argument("outer_loss: weights must have one entry per step");
    }
    double total = 0.0;
    for (std::size_t t = 1; t <= steps; ++t) {
        const DisplacementField& u = t == steps ? trace.final_disp : trace.steps[t].u;
        total += weights[t - 1] * (inner_loss(sim, warp_image(mov, u), fixed) + lambda * diffusion_regularizer(u));
    }
    return total;
}

namespace {

template <typename T>
struct Unrolled {
    std::vector<DisplacementField> u;  // u_0 .. u_T
    double loss = 0.0;
};

template <typename T>
Unrolled<T> unroll(const RiirCell<T>& cell, const CellConfig& cell_cfg, const TrainConfig& cfg, const Image& mov,
                   const Image& fixed, const std::vector<VectorField>* frozen, std::vector<VectorField>* used,
                   std::vector<CellCache<T>>& caches) {
    require_same_shape(mov.shape(), fixed.shape(), "training pair");
    const int steps = cfg.steps;
    if (frozen && frozen->size() != static_cast<std::size_t>(steps)) {
        throw std::invalid_argument("frozen gradients must have one field per step");
    }
    const std::vector<double> w = loss_weights(cfg.weights, steps);
    const double lambda = cfg.effective_lambda();
    const GridShape shape = mov.shape();
    Unrolled<T> r;
    r.u.reserve(static_cast<std::size_t>(steps) + 1);
    r.u.push_back(zero_field(shape));
    if (used) used->clear();
    HiddenState<T> hidden = HiddenState<T>::zeros(cell_cfg, shape);
    for (int t = 0; t < steps; ++t) {
        const DisplacementField& u = r.u.back();
        VectorField grad;
        if (frozen) {
            grad = (*frozen)[static_cast<std::size_t>(t)];
        } else if (cell_cfg.input_mode == InputMode::gradient) {
            grad = inner_loss_gradient(cfg.inner, mov, fixed, u);
        } else {
            grad = zero_field(shape);
        }
        const FeatureMap<T> input = assemble_input<T>(cell_cfg.input_mode, u, mov, fixed, grad);
        if (used) used->push_back(std::move(grad));
        CellOutput<T> out = cell.forward(input, hidden, caches[static_cast<std::size_t>(t)]);
        hidden = std::move(out.hidden);
        r.u.push_back(u + to_displacement(out.delta));
        const DisplacementField& next = r.u.back();
        r.loss += w[static_cast<std::size_t>(t)] *
                  (inner_loss(cfg.outer, warp_image(mov, next), fixed) + lambda * diffusion_regularizer(next));
    }
    if (!std::isfinite(r.loss)) throw NumericalError("outer loss is not finite");
    return r;
}

template <typename T>
std::vector<CellCache<T>>& cache_pool(int steps) {
    thread_local std::vector<CellCache<T>> pool;
    if (pool.size() < static_cast<std::size_t>(steps)) pool.resize(static_cast<std::size_t>(steps));
    return pool;
}

}  // namespace

template <typename T>
double pair_outer_loss(const CellConfig& cell_cfg, const ParameterStore<T>& params, const TrainConfig& cfg,
                       const Image& mov, const Image& fixed, const std::vector<VectorField>* frozen_grads) {
    const RiirCell<T> cell(cell_cfg, params);
    return unroll(cell, cell_cfg, cfg, mov, fixed, frozen_grads, nullptr, cache_pool<T>(cfg.steps)).loss;
}

template <typename T>
LossAndGradient<T> outer_loss_gradient(const CellConfig& cell_cfg, const ParameterStore<T>& params,
                                       const TrainConfig& cfg, const Image& mov, const Image& fixed,
                                       const std::vector<VectorField>* frozen_grads,
                                       std::vector<VectorField>* used_grads) {
    const RiirCell<T> cell(cell_cfg, params);
    std::vector<CellCache<T>>& caches = cache_pool<T>(cfg.steps);
    const Unrolled<T> r = unroll(cell, cell_cfg, cfg, mov, fixed, frozen_grads, used_grads, caches);

    const int steps = cfg.steps;
    const std::vector<double> w = loss_weights(cfg.weights, steps);
    const double lambda = cfg.effective_lambda();
    const GridShape shape = mov.shape();
    const int h = shape.height;
    const int wd = shape.width;
    const std::size_t plane = shape.size();

    LossAndGradient<T> out{r.loss, params.zeros_like()};
    DisplacementField du = zero_field(shape);
    HiddenState<T> dh = HiddenState<T>::zeros(cell_cfg, shape);
    FeatureMap<T> d_delta(2, h, wd);
    for (int t = steps; t >= 1; --t) {
        const DisplacementField& u = r.u[static_cast<std::size_t>(t)];
        const double wt = w[static_cast<std::size_t>(t - 1)];
        add_scaled(du, wt, inner_loss_gradient(cfg.outer, mov, fixed, u));
        if (lambda != 0.0) add_scaled(du, wt * lambda, diffusion_regularizer_gradient(u));

        for (std::size_t i = 0; i < plane; ++i) {
            d_delta.data[i] = static_cast<T>(du.row[i]);
            d_delta.data[plane + i] = static_cast<T>(du.col[i]);
        }
        auto ig = cell.backward(caches[static_cast<std::size_t>(t - 1)], d_delta, dh, out.grads);
        dh = std::move(ig.hidden);
        // u_t = u_{t-1} + delta, so du passes through unchanged; add the u input channels.
        const auto c0 = ig.input.channel(0);
        const auto c1 = ig.input.channel(1);
        for (std::size_t i = 0; i < plane; ++i) {
            du.row[i] += static_cast<double>(c0[i]);
            du.col[i] += static_cast<double>(c1[i]);
        }
        if (cell_cfg.input_mode == InputMode::explicit_warp) {
            Image upstream(shape);
            const auto c2 = ig.input.channel(2);
            for (std::size_t i = 0; i < plane; ++i) upstream[i] = static_cast<double>(c2[i]);
            add_scaled(du, 1.0, warp_image_disp_backward(mov, r.u[static_cast<std::size_t>(t - 1)], upstream));
        }
    }
    return out;
}

template <typename T>
void adam_update(ParameterStore<T>& params, const ParameterStore<T>& grads, AdamState<T>& state, double lr,
                 double beta1, double beta2, double eps) {
    if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size()) {
        throw ShapeError("adam_update: parameter, gradient and state layouts differ");
    }
    if (!grads.all_finite()) throw NumericalError("adam_update: non-finite gradient");
    state.step += 1;
    const double c1 = 1.0 - std::pow(beta1, static_cast<double>(state.step));
    const double c2 = 1.0 - std::pow(beta2, static_cast<double>(state.step));
    for (std::size_t a = 0; a < params.size(); ++a) {
        auto& p = params[a].data;
        const auto& g = grads[a].data;
        auto& m = state.m[a].data;
        auto& v = state.v[a].data;
        if (p.size() != g.size() || p.size() != m.size() || p.size() != v.size()) {
            throw ShapeError("adam_update: array '" + params[a].name + "' has mismatched size");
        }
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double gi = static_cast<double>(g[i]);
            const double mi = beta1 * static_cast<double>(m[i]) + (1.0 - beta1) * gi;
            const double vi = beta2 * static_cast<double>(v[i]) + (1.0 - beta2) * gi * gi;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            const double mhat = mi / c1;
            const double vhat = vi / c2;
            p[i] = static_cast<T>(static_cast<double>(p[i]) - lr * mhat / (std::sqrt(vhat) + eps));
        }
    }
}

template <typename T>
double clip_global_norm(ParameterStore<T>& grads, double max_norm) {
    double sq = 0.0;
    for (const auto& a : grads.arrays())
        for (T v : a.data) sq += static_cast<double>(v) * static_cast<double>(v);
    const double norm = std::sqrt(sq);
    if (norm > max_norm) {
        const double s = max_norm / norm;
        for (auto& a : grads.arrays())
            for (T& v : a.data) v = static_cast<T>(static_cast<double>(v) * s);
    }
    return norm;
}

std::vector<std::size_t> fraction_subset(std::size_t n, double fraction, std::uint64_t seed) {
    if (n == 0) return {};
    if (!(fraction > 0.0 && fraction <= 1.0)) throw std::invalid_argument("data fraction must be in (0, 1]");
    const auto count = std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(fraction * n)), 1, n);
    Rng rng(derive_seed(seed, 0x5b5e7));
    std::vector<std::size_t> perm = permutation(n, rng);
    perm.resize(count);
    std::sort(perm.begin(), perm.end());
    return perm;
}

namespace {

void accumulate(ParameterStore<float>& acc, const ParameterStore<float>& g) {
    for (std::size_t a = 0; a < acc.size(); ++a) {
        auto& x = acc[a].data;
        const auto& y = g[a].data;
        for (std::size_t i = 0; i < x.size(); ++i) x[i] += y[i];
    }
}

void scale(ParameterStore<float>& acc, double s) {
    for (auto& a : acc.arrays())
        for (float& v : a.data) v = static_cast<float>(static_cast<double>(v) * s);
}

double validation_loss(const CellConfig& cell_cfg, const ParameterStore<float>& params, const TrainConfig& cfg,
                       const std::vector<RegistrationPair>& val) {
    if (val.empty()) return std::numeric_limits<double>::quiet_NaN();
    double sum = 0.0;
    for (const auto& p : val) sum += pair_outer_loss(cell_cfg, params, cfg, p.mov, p.fixed);
    return sum / static_cast<double>(val.size());
}

}  // namespace

TrainResult train(const TrainConfig& cfg, const CellConfig& cell_cfg, const std::vector<RegistrationPair>& train_set,
                  const std::vector<RegistrationPair>& val_set, const TrainOptions& options) {
    validate(cfg);
    validate(cell_cfg);
    const std::vector<std::size_t> subset = fraction_subset(train_set.size(), cfg.data_fraction, cfg.seed);
    if (subset.empty()) throw DataError("empty effective training set");

    TrainResult result;
    for (std::size_t i : subset) result.train_ids.push_back(train_set[i].id);
    result.params = options.initial ? *options.initial : init_parameters<float>(cell_cfg, derive_seed(cfg.seed, 1));
    AdamState<float> adam = AdamState<float>::zeros_like(result.params);
    ParameterStore<float> last_good = result.params;

    for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        Rng rng(derive_seed(cfg.seed, 1000 + static_cast<std::uint64_t>(epoch)));
        const std::vector<std::size_t> order = permutation(subset.size(), rng);
        double loss_sum = 0.0;
        try {
            for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
                const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
                ParameterStore<float> grads = result.params.zeros_like();
                double batch_loss = 0.0;
                for (std::size_t j = start; j < end; ++j) {
                    const RegistrationPair& p = train_set[subset[order[j]]];
                    const LossAndGradient<float> lg =
                        outer_loss_gradient<float>(cell_cfg, result.params, cfg, p.mov, p.fixed);
                    batch_loss += lg.loss;
                    accumulate(grads, lg.grads);
                }
                if (!std::isfinite(batch_loss)) throw NumericalError("training loss is not finite");
                scale(grads, 1.0 / static_cast<double>(end - start));
                clip_global_norm(grads, cfg.clip_norm);
                last_good = result.params;
                adam_update(result.params, grads, adam, cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps);
                if (!result.params.all_finite()) throw NumericalError("parameters became non-finite");
                loss_sum += batch_loss;
            }
        } catch (const NumericalError& e) {
            result.params = last_good;
            result.diverged = true;
            result.message = "diverged in epoch " + std::to_string(epoch) + ": " + e.what();
            return result;
        }
        EpochLog entry;
        entry.epoch = epoch;
        entry.train_loss = loss_sum / static_cast<double>(order.size());
        try {
            entry.val_loss = validation_loss(cell_cfg, result.params, cfg, val_set);
        } catch (const NumericalError& e) {
            result.params = last_good;
            result.diverged = true;
            result.message = "diverged in epoch " + std::to_string(epoch) + " validation: " + e.what();
            return result;
        }
        entry.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        result.log.push_back(entry);
        if (options.on_epoch) options.on_epoch(entry);
    }
    return result;
}

InferenceTrace classical_register(const Image& mov, const Image& fixed, const SimilarityKind& kind, double lambda,
                                  int iters, double step_size) {
    require_same_shape(mov.shape(), fixed.shape(), "classical_register");
    if (iters < 1) throw std::invalid_argument("classical_register: iters must be >= 1");
    if (!(lambda >= 0.0)) throw std::invalid_argument("classical_register: lambda must be >= 0");
    if (!(step_size > 0.0)) throw std::invalid_argument("classical_register: step size must be > 0");
    const double scale = -step_size * static_cast<double>(mov.shape().size());
    const StepFunction step = [&](int, const DisplacementField& u, const VectorField& grad) {
        DisplacementField g = grad;
        if (lambda != 0.0) add_scaled(g, lambda, diffusion_regularizer_gradient(u));
        return scale * g;
    };
    try {
        return recurrent_infer(step, kind, mov, fixed, iters);
    } catch (const NumericalError& e) {
        throw NumericalError(std::string("classical registration diverged: ") + e.what());
    }
}

Registrar riir_registrar(const CellConfig& cell_cfg, const ParameterStore<float>& params, const SimilarityKind& inner,
                         int steps) {
    return [cell_cfg, params, inner, steps](const Image& mov, const Image& fixed) {
        return recurrent_infer<float>(cell_cfg, params, inner, mov, fixed, steps);
    };
}

namespace {

bool has_label(const LabelMap& m, std::uint16_t label) {
    return std::find(m.values().begin(), m.values().end(), label) != m.values().end();
}

}  // namespace

std::vector<MetricsRow> evaluate_pairs(const Registrar& reg, const SimilarityKind& inner,
                                       const std::vector<RegistrationPair>& pairs) {
    std::vector<MetricsRow> rows;
    for (const RegistrationPair& p : pairs) {
        const InferenceTrace trace = reg(p.mov, p.fixed);
        const DisplacementField& u = trace.final_disp;
        rows.push_back({p.id, "inner_loss", inner_loss(inner, p.mov, p.fixed), trace.final_inner, std::nullopt});
        for (std::size_t t = 0; t < trace.steps.size(); ++t) {
            rows.push_back({p.id, "inner_loss_step", std::nullopt, trace.steps[t].inner, static_cast<int>(t)});
        }
        rows.push_back(
            {p.id, "inner_loss_step", std::nullopt, trace.final_inner, static_cast<int>(trace.steps.size())});
        if (p.ground_truth) {
            const DisplacementField zero = zero_field(u.shape());
            rows.push_back({p.id, "endpoint_error", mean_endpoint_error(zero, *p.ground_truth),
                            mean_endpoint_error(u, *p.ground_truth), std::nullopt});
        }
        if (p.labels_mov && p.labels_fixed) {
            const LabelMap warped = warp_labels(*p.labels_mov, u);
            const auto labels = foreground_labels(*p.labels_mov, *p.labels_fixed);
            if (!labels.empty()) {
                rows.push_back({p.id, "dice", dice_score(*p.labels_mov, *p.labels_fixed, labels),
                                dice_score(warped, *p.labels_fixed, labels), std::nullopt});
            }
            rows.push_back({p.id, "dice_myocardium", dice_for_label(*p.labels_mov, *p.labels_fixed, kMyocardiumLabel),
                            dice_for_label(warped, *p.labels_fixed, kMyocardiumLabel), std::nullopt});
            if (has_label(*p.labels_mov, kMyocardiumLabel) && has_label(*p.labels_fixed, kMyocardiumLabel)) {
                MetricsRow hd{p.id, "hausdorff_myocardium", hausdorff_distance(*p.labels_mov, *p.labels_fixed,
                                                                               kMyocardiumLabel),
                              std::nullopt, std::nullopt};
                if (has_label(warped, kMyocardiumLabel)) {
                    hd.after = hausdorff_distance(warped, *p.labels_fixed, kMyocardiumLabel);
                }
                rows.push_back(hd);
            }
        }
        const LogJacobianStats jac = log_jacobian_std(u);
        rows.push_back({p.id, "log_jacobian_std", 0.0, jac.std_log_det, std::nullopt});
        rows.push_back({p.id, "negative_jacobian_fraction", 0.0, jac.negative_fraction, std::nullopt});
    }
    return rows;
}

std::vector<DisplacementField> register_series(const Registrar& reg, const ImageSeries& series) {
    if (series.frames.size() < 2) throw std::invalid_argument("series must have at least 2 frames");
    const Image& tmpl = series.frames.back();
    std::vector<DisplacementField> fields;
    for (std::size_t k = 0; k + 1 < series.frames.size(); ++k) {
        fields.push_back(reg(series.frames[k], tmpl).final_disp);
    }
    fields.push_back(zero_field(tmpl.shape()));
    return fields;
}

std::vector<MetricsRow> evaluate_series(const Registrar& reg, const std::vector<ImageSeries>& series) {
    std::vector<MetricsRow> rows;
    for (const ImageSeries& s : series) {
        const std::vector<DisplacementField> fields = register_series(reg, s);
        std::vector<Image> warped;
        for (std::size_t k = 0; k < s.frames.size(); ++k) warped.push_back(warp_image(s.frames[k], fields[k]));
        const PcaReport before = series_pca(s.frames);
        const PcaReport after = series_pca(warped);
        rows.push_back({s.id, "d_pca1", before.d_pca1, after.d_pca1, std::nullopt});
        rows.push_back({s.id, "d_pca2", before.d_pca2, after.d_pca2, std::nullopt});
        if (!s.reference.empty()) {
            const PcaReport ref = series_pca(s.reference);
            rows.push_back({s.id, "d_pca1_reference", std::nullopt, ref.d_pca1, std::nullopt});
            rows.push_back({s.id, "d_pca2_reference", std::nullopt, ref.d_pca2, std::nullopt});
        }
        if (s.ground_truth.size() == s.frames.size()) {
            double before_epe = 0.0;
            double after_epe = 0.0;
            const std::size_t moving = s.frames.size() - 1;
            for (std::size_t k = 0; k < moving; ++k) {
                before_epe += mean_endpoint_error(zero_field(fields[k].shape()), s.ground_truth[k]);
                after_epe += mean_endpoint_error(fields[k], s.ground_truth[k]);
            }
            rows.push_back({s.id, "endpoint_error", before_epe / static_cast<double>(moving),
                            after_epe / static_cast<double>(moving), std::nullopt});
        }
        double jac_max = 0.0;
        for (const auto& f : fields) jac_max = std::max(jac_max, log_jacobian_std(f).std_log_det);
        rows.push_back({s.id, "log_jacobian_std_max", 0.0, jac_max, std::nullopt});
    }
    return rows;
}

#define RIIR_INSTANTIATE(T)                                                                                         \
    template InferenceTrace recurrent_infer<T>(const CellConfig&, const ParameterStore<T>&, const SimilarityKind&,  \
                                               const Image&, const Image&, int);                                   \
    template LossAndGradient<T> outer_loss_gradient<T>(const CellConfig&, const ParameterStore<T>&,                 \
                                                       const TrainConfig&, const Image&, const Image&,              \
                                                       const std::vector<VectorField>*, std::vector<VectorField>*); \
    template double pair_outer_loss<T>(const CellConfig&, const ParameterStore<T>&, const TrainConfig&,             \
                                       const Image&, const Image&, const std::vector<VectorField>*);                \
    template void adam_update<T>(ParameterStore<T>&, const ParameterStore<T>&, AdamState<T>&, double, double,       \
                                 double, double);                                                                   \
    template double clip_global_norm<T>(ParameterStore<T>&, double);

RIIR_INSTANTIATE(float)
RIIR_INSTANTIATE(double)
#undef RIIR_INSTANTIATE

}  // namespace riir
