#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "riir/grid.hpp"
#include "riir/tensor.hpp"

namespace riir {

enum class InputMode { gradient, explicit_warp, implicit };

std::string to_string(InputMode mode);
InputMode parse_input_mode(const std::string& name);

struct CellConfig {
    InputMode input_mode = InputMode::gradient;
    std::array<bool, 2> hidden_enabled{true, true};
    std::array<int, 2> hidden_channels{32, 16};
    int conv_kernel = 3;
    int io_channels = 16;

    bool operator==(const CellConfig&) const = default;
};

void validate(const CellConfig& cfg);

inline constexpr int kCellInputChannels = 4;

template <typename T>
struct NamedArray {
    std::string name;
    std::vector<int> shape;
    std::vector<T> data;

    bool operator==(const NamedArray&) const = default;
};

// Learnable arrays of the cell, in a fixed order determined by CellConfig.
template <typename T>
class ParameterStore {
public:
    std::vector<NamedArray<T>>& arrays() { return arrays_; }
    const std::vector<NamedArray<T>>& arrays() const { return arrays_; }

    NamedArray<T>& operator[](std::size_t i) { return arrays_[i]; }
    const NamedArray<T>& operator[](std::size_t i) const { return arrays_[i]; }
    std::size_t size() const { return arrays_.size(); }

    const NamedArray<T>* find(const std::string& name) const;
    std::size_t total_count() const;
    bool all_finite() const;

    // Same names and shapes, all values zero.
    ParameterStore zeros_like() const;

    template <typename U>
    ParameterStore<U> cast() const {
        ParameterStore<U> out;
        for (const auto& a : arrays_) {
            out.arrays().push_back({a.name, a.shape, std::vector<U>(a.data.begin(), a.data.end())});
        }
        return out;
    }

    bool operator==(const ParameterStore&) const = default;

private:
    std::vector<NamedArray<T>> arrays_;
};

struct ArraySpec {
    std::string name;
    std::vector<int> shape;
};

// Names and shapes init_parameters produces for `cfg`, in store order.
std::vector<ArraySpec> parameter_layout(const CellConfig& cfg);

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) kernels, zero biases, output kernels
// additionally scaled by 1e-3.
template <typename T>
ParameterStore<T> init_parameters(const CellConfig& cfg, std::uint64_t seed);

template <typename T>
struct HiddenState {
    FeatureMap<T> h1;
    FeatureMap<T> h2;

    static HiddenState zeros(const CellConfig& cfg, GridShape shape) {
        return {FeatureMap<T>(cfg.hidden_channels[0], shape.height, shape.width),
                FeatureMap<T>(cfg.hidden_channels[1], shape.height, shape.width)};
    }
    bool operator==(const HiddenState&) const = default;
};

inline constexpr double kGradientInputGain = 300.0;

// Channels fed to the cell. The gradient channels carry d loss / d u scaled
// by the pixel count times kGradientInputGain, so their magnitude does not
// depend on image size.
template <typename T>
FeatureMap<T> assemble_input(InputMode mode, const DisplacementField& disp, const Image& mov, const Image& fixed,
                             const VectorField& grad);

// Parameters of one ConvGRU level (spans into a ParameterStore).
template <typename T>
struct GruWeights {
    std::span<const T> wz, uz, bz;  // update gate
    std::span<const T> wr, ur, br;  // reset gate
    std::span<const T> wh, uh, bh;  // candidate
    int channels = 0;
    int kernel = 3;
};

// z = s(Wz*x + Uz*h + bz), r = s(Wr*x + Ur*h + br),
// c = tanh(Wh*x + Uh*(r.h) + bh), h' = (1 - z).h + z.c
template <typename T>
FeatureMap<T> conv_gru_step(const FeatureMap<T>& x, const FeatureMap<T>& h, const GruWeights<T>& w);

namespace detail {

template <typename T>
struct ConvCache {
    RowMatrix<T> cols;
    FeatureMap<T> out;  // post-activation
};

template <typename T>
struct GruCache {
    RowMatrix<T> cols_x, cols_h, cols_rh;
    FeatureMap<T> h, z, r, cand, rh;
    bool h_zero = false;
};

}  // namespace detail

// Activations of one forward pass, kept for the backward pass. Reusing one
// cache across calls avoids reallocating the im2col buffers.
template <typename T>
struct CellCache {
    int height = 0;
    int width = 0;
    detail::ConvCache<T> in;
    detail::GruCache<T> gru[2];
    detail::ConvCache<T> plain[2];
    detail::ConvCache<T> mid;
    RowMatrix<T> out_cols;
};

template <typename T>
struct CellOutput {
    FeatureMap<T> delta;  // 2 channels: (row, col) displacement increment
    HiddenState<T> hidden;
};

// conv -> GRU-1 -> conv -> GRU-2 -> conv(2). A disabled hidden level is a
// conv + tanh and its hidden slot stays zero.
template <typename T>
class RiirCell {
public:
    RiirCell(CellConfig cfg, const ParameterStore<T>& params);

    const CellConfig& config() const { return cfg_; }

    CellOutput<T> forward(const FeatureMap<T>& input, const HiddenState<T>& hidden, CellCache<T>& cache) const;
    CellOutput<T> forward(const FeatureMap<T>& input, const HiddenState<T>& hidden) const;

    struct InputGradients {
        FeatureMap<T> input;
        HiddenState<T> hidden;
    };

    // Accumulates parameter gradients into `grads` (same layout as params).
    InputGradients backward(const CellCache<T>& cache, const FeatureMap<T>& d_delta,
                            const HiddenState<T>& d_new_hidden, ParameterStore<T>& grads) const;

private:
    CellConfig cfg_;
    const ParameterStore<T>* params_;
};

template <typename T>
CellOutput<T> riir_cell_forward(const CellConfig& cfg, const ParameterStore<T>& params, const DisplacementField& disp,
                                const Image& mov, const Image& fixed, const VectorField& grad,
                                const HiddenState<T>& hidden);

DisplacementField to_displacement(const FeatureMap<float>& delta);
DisplacementField to_displacement(const FeatureMap<double>& delta);

}  // namespace riir
