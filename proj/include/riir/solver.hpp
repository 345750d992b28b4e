#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "riir/data.hpp"
#include "riir/metrics.hpp"
#include "riir/net.hpp"

namespace riir {

enum class WeightScheme { uniform, exponential };

std::string to_string(WeightScheme scheme);
WeightScheme parse_weight_scheme(const std::string& name);

// w_t for t = 1..T: uniform 1/T, exponential 10^((t-1)/(T-1)).
std::vector<double> loss_weights(WeightScheme scheme, int steps);

struct TrainConfig {
    int steps = 6;
    std::optional<double> lambda;  // unset: 0.05 for MSE, 0.1 otherwise
    SimilarityKind inner = SimilarityKind::mse();
    SimilarityKind outer = SimilarityKind::mse();
    WeightScheme weights = WeightScheme::exponential;
    double learning_rate = 8e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double adam_eps = 1e-8;
    int epochs = 100;
    int batch = 8;
    std::uint64_t seed = 0;
    double data_fraction = 1.0;
    double clip_norm = 10.0;

    double effective_lambda() const;
};

void validate(const TrainConfig& cfg);

struct StepRecord {
    DisplacementField u;  // u_t, before the increment of this step
    double inner = 0.0;   // inner loss at u_t
    double delta_max = 0.0;
    double delta_mean = 0.0;
};

struct InferenceTrace {
    std::vector<StepRecord> steps;
    DisplacementField final_disp;
    double final_inner = 0.0;
};

// Produces the increment for step t from the current field and the inner-loss gradient.
using StepFunction = std::function<DisplacementField(int t, const DisplacementField& u, const VectorField& grad)>;

InferenceTrace recurrent_infer(const StepFunction& step, const SimilarityKind& inner, const Image& mov,
                               const Image& fixed, int steps);

template <typename T>
InferenceTrace recurrent_infer(const CellConfig& cell_cfg, const ParameterStore<T>& params,
                               const SimilarityKind& inner, const Image& mov, const Image& fixed, int steps);

// sum_t w_t [L_sim(warp(mov, u_t), fixed) + lambda R(u_t)] over t = 1..T, where
// u_1..u_{T-1} come from trace.steps[1..] and u_T is trace.final_disp.
double outer_loss(const InferenceTrace& trace, const Image& fixed, const Image& mov, const SimilarityKind& sim,
                  const std::vector<double>& weights, double lambda);

// Outer loss of one pair and its gradient with respect to every parameter
// (backpropagation through all steps and hidden states). The gradient input
// channels are treated as constants. If `frozen_grads` is given those fields
// replace the inner-loss gradients, which makes the loss an exact function of
// the parameters; `used_grads` receives the fields actually fed to the cell.
template <typename T>
struct LossAndGradient {
    double loss = 0.0;
    ParameterStore<T> grads;
};

template <typename T>
LossAndGradient<T> outer_loss_gradient(const CellConfig& cell_cfg, const ParameterStore<T>& params,
                                       const TrainConfig& cfg, const Image& mov, const Image& fixed,
                                       const std::vector<VectorField>* frozen_grads = nullptr,
                                       std::vector<VectorField>* used_grads = nullptr);

// Forward-only outer loss with the same conventions as outer_loss_gradient.
template <typename T>
double pair_outer_loss(const CellConfig& cell_cfg, const ParameterStore<T>& params, const TrainConfig& cfg,
                       const Image& mov, const Image& fixed,
                       const std::vector<VectorField>* frozen_grads = nullptr);

template <typename T>
struct AdamState {
    long step = 0;
    ParameterStore<T> m;
    ParameterStore<T> v;

    static AdamState zeros_like(const ParameterStore<T>& params) {
        return {0, params.zeros_like(), params.zeros_like()};
    }
};

template <typename T>
void adam_update(ParameterStore<T>& params, const ParameterStore<T>& grads, AdamState<T>& state, double lr,
                 double beta1, double beta2, double eps = 1e-8);

// Scales grads so their global L2 norm is at most max_norm; returns the norm before scaling.
template <typename T>
double clip_global_norm(ParameterStore<T>& grads, double max_norm);

struct EpochLog {
    int epoch = 0;
    double train_loss = 0.0;
    double val_loss = 0.0;  // NaN when there is no validation set
    double seconds = 0.0;
};

struct TrainResult {
    ParameterStore<float> params;
    std::vector<EpochLog> log;
    std::vector<std::string> train_ids;
    bool diverged = false;
    std::string message;
};

struct TrainOptions {
    std::function<void(const EpochLog&)> on_epoch;
    std::optional<ParameterStore<float>> initial;
};

// Deterministic subset of max(1, round(fraction * n)) indices, in ascending order.
std::vector<std::size_t> fraction_subset(std::size_t n, double fraction, std::uint64_t seed);

TrainResult train(const TrainConfig& cfg, const CellConfig& cell_cfg, const std::vector<RegistrationPair>& train_set,
                  const std::vector<RegistrationPair>& val_set, const TrainOptions& options = {});

// Gradient descent on L_sim(warp(mov, u), fixed) + lambda R(u). The step is
// applied to the gradient scaled by the pixel count.
InferenceTrace classical_register(const Image& mov, const Image& fixed, const SimilarityKind& kind, double lambda,
                                  int iters, double step_size);

struct MetricsRow {
    std::string id;
    std::string metric;
    std::optional<double> before;
    std::optional<double> after;
    std::optional<int> step;
};

using Registrar = std::function<InferenceTrace(const Image& mov, const Image& fixed)>;

Registrar riir_registrar(const CellConfig& cell_cfg, const ParameterStore<float>& params, const SimilarityKind& inner,
                         int steps);

inline constexpr std::uint16_t kMyocardiumLabel = 2;

// Per pair: inner loss, endpoint error, Dice (mean and myocardium), Hausdorff
// (myocardium), std log|J|, and the inner loss at every step.
std::vector<MetricsRow> evaluate_pairs(const Registrar& reg, const SimilarityKind& inner,
                                       const std::vector<RegistrationPair>& pairs);

// Per series: every frame registered to the template; D_PCA1/D_PCA2 before
// and after, plus the motion-free values when reference frames are present.
std::vector<MetricsRow> evaluate_series(const Registrar& reg, const std::vector<ImageSeries>& series);

std::vector<DisplacementField> register_series(const Registrar& reg, const ImageSeries& series);

}  // namespace riir
