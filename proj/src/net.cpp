#include "riir/net.hpp"

#include <cmath>
#include <map>
#include <stdexcept>

#include "riir/field.hpp"
#include "riir/random.hpp"

namespace riir {

std::string to_string(InputMode mode) {
    switch (mode) {
        case InputMode::gradient: return "gradient";
        case InputMode::explicit_warp: return "explicit";
        case InputMode::implicit: return "implicit";
    }
    return "?";
}

InputMode parse_input_mode(const std::string& name) {
    if (name == "gradient") return InputMode::gradient;
    if (name == "explicit") return InputMode::explicit_warp;
    if (name == "implicit") return InputMode::implicit;
    throw std::invalid_argument("unknown input mode '" + name + "' (expected gradient, explicit or implicit)");
}

void validate(const CellConfig& cfg) {
    if (cfg.conv_kernel < 1 || cfg.conv_kernel % 2 == 0) throw std::invalid_argument("conv_kernel must be odd");
    if (cfg.hidden_channels[0] < 1 || cfg.hidden_channels[1] < 1 || cfg.io_channels < 1) {
        throw std::invalid_argument("channel counts must be >= 1");
    }
}

template <typename T>
const NamedArray<T>* ParameterStore<T>::find(const std::string& name) const {
    for (const auto& a : arrays_) {
        if (a.name == name) return &a;
    }
    return nullptr;
}

template <typename T>
std::size_t ParameterStore<T>::total_count() const {
    std::size_t n = 0;
    for (const auto& a : arrays_) n += a.data.size();
    return n;
}

template <typename T>
bool ParameterStore<T>::all_finite() const {
    for (const auto& a : arrays_)
        for (T v : a.data)
            if (!std::isfinite(v)) return false;
    return true;
}

template <typename T>
ParameterStore<T> ParameterStore<T>::zeros_like() const {
    ParameterStore out;
    for (const auto& a : arrays_) out.arrays_.push_back({a.name, a.shape, std::vector<T>(a.data.size(), T{})});
    return out;
}

namespace {

std::string level_prefix(int level) { return "gru" + std::to_string(level + 1); }
std::string plain_prefix(int level) { return "level" + std::to_string(level + 1) + ".conv"; }

const char* const kGates[] = {"update", "reset", "candidate"};

}  // namespace

std::vector<ArraySpec> parameter_layout(const CellConfig& cfg) {
    validate(cfg);
    const int k = cfg.conv_kernel;
    const int io = cfg.io_channels;
    std::vector<ArraySpec> specs;
    specs.push_back({"in_conv.weight", {io, kCellInputChannels, k, k}});
    specs.push_back({"in_conv.bias", {io}});
    auto level = [&](int l) {
        const int c = cfg.hidden_channels[l];
        if (cfg.hidden_enabled[l]) {
            for (const char* gate : kGates) {
                const std::string p = level_prefix(l) + "." + gate;
                specs.push_back({p + ".input_kernel", {c, io, k, k}});
                specs.push_back({p + ".hidden_kernel", {c, c, k, k}});
                specs.push_back({p + ".bias", {c}});
            }
        } else {
            specs.push_back({plain_prefix(l) + ".weight", {c, io, k, k}});
            specs.push_back({plain_prefix(l) + ".bias", {c}});
        }
    };
    level(0);
    specs.push_back({"mid_conv.weight", {io, cfg.hidden_channels[0], k, k}});
    specs.push_back({"mid_conv.bias", {io}});
    level(1);
    specs.push_back({"out_conv.weight", {2, cfg.hidden_channels[1], k, k}});
    specs.push_back({"out_conv.bias", {2}});
    return specs;
}

template <typename T>
ParameterStore<T> init_parameters(const CellConfig& cfg, std::uint64_t seed) {
    Rng rng(seed);
    ParameterStore<T> store;
    for (const ArraySpec& spec : parameter_layout(cfg)) {
        std::size_t count = 1;
        for (int d : spec.shape) count *= static_cast<std::size_t>(d);
        NamedArray<T> a{spec.name, spec.shape, std::vector<T>(count, T{})};
        if (spec.shape.size() == 4) {
            const double fan_in = static_cast<double>(spec.shape[1] * spec.shape[2] * spec.shape[3]);
            double bound = 1.0 / std::sqrt(fan_in);
            if (spec.name.rfind("out_conv", 0) == 0) bound *= 1e-3;
            for (T& v : a.data) v = static_cast<T>(rng.uniform(-bound, bound));
        }
        store.arrays().push_back(std::move(a));
    }
    return store;
}

template <typename T>
FeatureMap<T> assemble_input(InputMode mode, const DisplacementField& disp, const Image& mov, const Image& fixed,
                             const VectorField& grad) {
    require_same_shape(disp.shape(), mov.shape(), "assemble_input moving");
    require_same_shape(disp.shape(), fixed.shape(), "assemble_input fixed");
    const GridShape s = disp.shape();
    FeatureMap<T> x(kCellInputChannels, s.height, s.width);
    auto put = [&](int c, const Plane<double>& p, double scale) {
        auto ch = x.channel(c);
        for (std::size_t i = 0; i < p.size(); ++i) ch[i] = static_cast<T>(scale * p[i]);
    };
    put(0, disp.row, 1.0);
    put(1, disp.col, 1.0);
    switch (mode) {
        case InputMode::gradient: {
            require_same_shape(disp.shape(), grad.shape(), "assemble_input gradient");
            const double scale = kGradientInputGain * static_cast<double>(s.size());
            put(2, grad.row, scale);
            put(3, grad.col, scale);
            break;
        }
        case InputMode::explicit_warp:
            put(2, warp_image(mov, disp), 1.0);
            put(3, fixed, 1.0);
            break;
        case InputMode::implicit:
            put(2, mov, 1.0);
            put(3, fixed, 1.0);
            break;
    }
    return x;
}

namespace detail {

template <typename T>
std::span<const T> cspan(const NamedArray<T>& a) {
    return {a.data.data(), a.data.size()};
}

template <typename T>
std::span<T> mspan(NamedArray<T>& a) {
    return {a.data.data(), a.data.size()};
}

template <typename T>
Eigen::Map<Eigen::Array<T, Eigen::Dynamic, 1>> as_array(FeatureMap<T>& m) {
    return {m.data.data(), static_cast<Eigen::Index>(m.data.size())};
}

template <typename T>
void apply_tanh(FeatureMap<T>& m) {
    as_array(m) = as_array(m).tanh();
}

template <typename T>
void apply_sigmoid(FeatureMap<T>& m) {
    as_array(m) = as_array(m).logistic();
}

template <typename T>
void reshape(FeatureMap<T>& m, int channels, int height, int width) {
    if (m.channels != channels || m.height != height || m.width != width) m = FeatureMap<T>(channels, height, width);
}

template <typename T>
bool is_zero(const FeatureMap<T>& m) {
    for (T v : m.data)
        if (v != T{}) return false;
    return true;
}

template <typename T>
FeatureMap<T> gru_forward(const FeatureMap<T>& x, const FeatureMap<T>& h, const GruWeights<T>& w, GruCache<T>& cache) {
    const int c = w.channels;
    const int k = w.kernel;
    if (h.channels != c || h.height != x.height || h.width != x.width) {
        throw ShapeError("conv_gru_step: hidden state shape mismatch");
    }
    cache.h_zero = is_zero(h);
    cache.h = h;
    im2col_into(x, k, cache.cols_x);
    reshape(cache.z, c, x.height, x.width);
    reshape(cache.r, c, x.height, x.width);
    reshape(cache.cand, c, x.height, x.width);
    conv_from_cols(cache.cols_x, w.wz, w.bz, c, cache.z, false);
    conv_from_cols(cache.cols_x, w.wr, w.br, c, cache.r, false);
    conv_from_cols(cache.cols_x, w.wh, w.bh, c, cache.cand, false);
    if (!cache.h_zero) {
        im2col_into(h, k, cache.cols_h);
        conv_from_cols(cache.cols_h, w.uz, {}, c, cache.z, true);
        conv_from_cols(cache.cols_h, w.ur, {}, c, cache.r, true);
    }
    apply_sigmoid(cache.z);
    apply_sigmoid(cache.r);
    if (!cache.h_zero) {
        reshape(cache.rh, c, x.height, x.width);
        for (std::size_t i = 0; i < cache.rh.data.size(); ++i) cache.rh.data[i] = cache.r.data[i] * h.data[i];
        im2col_into(cache.rh, k, cache.cols_rh);
        conv_from_cols(cache.cols_rh, w.uh, {}, c, cache.cand, true);
    }
    apply_tanh(cache.cand);
    FeatureMap<T> out(c, x.height, x.width);
    const auto& z = cache.z.data;
    const auto& cand = cache.cand.data;
    for (std::size_t i = 0; i < out.data.size(); ++i) {
        out.data[i] = (T(1) - z[i]) * h.data[i] + z[i] * cand[i];
    }
    return out;
}

template <typename T>
struct GruGradSpans {
    std::span<T> wz, uz, bz, wr, ur, br, wh, uh, bh;
};

// Returns d loss / d x; accumulates d loss / d h into dh.
template <typename T>
FeatureMap<T> gru_backward(const GruCache<T>& cache, const GruWeights<T>& w, const FeatureMap<T>& dout,
                           GruGradSpans<T> g, FeatureMap<T>& dh, int x_channels) {
    const int c = w.channels;
    const int k = w.kernel;
    const int h = dout.height;
    const int wd = dout.width;
    const std::size_t n = dout.data.size();
    FeatureMap<T> dz_pre(c, h, wd), dr_pre(c, h, wd), dc_pre(c, h, wd);
    for (std::size_t i = 0; i < n; ++i) {
        const T z = cache.z.data[i];
        const T cand = cache.cand.data[i];
        const T d = dout.data[i];
        dh.data[i] += d * (T(1) - z);
        const T dz = d * (cand - cache.h.data[i]);
        dz_pre.data[i] = dz * z * (T(1) - z);
        dc_pre.data[i] = d * z * (T(1) - cand * cand);
    }
    thread_local RowMatrix<T> dcols_x, dcols_aux;
    conv_backward_into(cache.cols_x, w.wh, c, dc_pre, g.wh, g.bh, dcols_x, false);
    if (!cache.h_zero) {
        conv_backward_into(cache.cols_rh, w.uh, c, dc_pre, g.uh, {}, dcols_aux, false);
        FeatureMap<T> drh(c, h, wd);
        col2im_add(dcols_aux, k, drh);
        for (std::size_t i = 0; i < n; ++i) {
            const T r = cache.r.data[i];
            dh.data[i] += drh.data[i] * r;
            const T dr = drh.data[i] * cache.h.data[i];
            dr_pre.data[i] = dr * r * (T(1) - r);
        }
    }
    conv_backward_into(cache.cols_x, w.wz, c, dz_pre, g.wz, g.bz, dcols_x, true);
    conv_backward_into(cache.cols_x, w.wr, c, dr_pre, g.wr, g.br, dcols_x, true);
    if (!cache.h_zero) {
        conv_backward_into(cache.cols_h, w.uz, c, dz_pre, g.uz, {}, dcols_aux, false);
        conv_backward_into(cache.cols_h, w.ur, c, dr_pre, g.ur, {}, dcols_aux, true);
        col2im_add(dcols_aux, k, dh);
    }
    FeatureMap<T> dx(x_channels, h, wd);
    col2im_add(dcols_x, k, dx);
    return dx;
}

template <typename T>
const FeatureMap<T>& conv_tanh_forward(const FeatureMap<T>& x, std::span<const T> w, std::span<const T> b, int cout,
                                       int k, ConvCache<T>& cache) {
    im2col_into(x, k, cache.cols);
    reshape(cache.out, cout, x.height, x.width);
    conv_from_cols(cache.cols, w, b, cout, cache.out, false);
    apply_tanh(cache.out);
    return cache.out;
}

template <typename T>
FeatureMap<T> conv_tanh_backward(const ConvCache<T>& cache, std::span<const T> w, int cout, int k, int cin,
                                 const FeatureMap<T>& dy, std::span<T> dw, std::span<T> db) {
    FeatureMap<T> dpre = dy;
    for (std::size_t i = 0; i < dpre.data.size(); ++i) {
        const T y = cache.out.data[i];
        dpre.data[i] *= T(1) - y * y;
    }
    thread_local RowMatrix<T> dcols;
    conv_backward_into(cache.cols, w, cout, dpre, dw, db, dcols, false);
    FeatureMap<T> dx(cin, dy.height, dy.width);
    col2im_add(dcols, k, dx);
    return dx;
}

}  // namespace detail

using namespace detail;

template <typename T>
FeatureMap<T> conv_gru_step(const FeatureMap<T>& x, const FeatureMap<T>& h, const GruWeights<T>& w) {
    GruCache<T> cache;
    return gru_forward<T>(x, h, w, cache);
}

namespace {

// Array indices of one level inside the store.
struct LevelIndex {
    bool gru = true;
    std::size_t first = 0;  // first array of the level
};

struct Layout {
    std::size_t in_w = 0, in_b = 1;
    LevelIndex level[2];
    std::size_t mid_w = 0, mid_b = 0;
    std::size_t out_w = 0, out_b = 0;
};

Layout layout_indices(const CellConfig& cfg) {
    Layout l;
    std::size_t i = 2;
    l.level[0] = {cfg.hidden_enabled[0], i};
    i += cfg.hidden_enabled[0] ? 9 : 2;
    l.mid_w = i++;
    l.mid_b = i++;
    l.level[1] = {cfg.hidden_enabled[1], i};
    i += cfg.hidden_enabled[1] ? 9 : 2;
    l.out_w = i++;
    l.out_b = i++;
    return l;
}

template <typename T>
GruWeights<T> gru_weights(const ParameterStore<T>& p, std::size_t first, int channels, int kernel) {
    return {cspan(p[first + 0]), cspan(p[first + 1]), cspan(p[first + 2]), cspan(p[first + 3]),
            cspan(p[first + 4]), cspan(p[first + 5]), cspan(p[first + 6]), cspan(p[first + 7]),
            cspan(p[first + 8]), channels, kernel};
}

template <typename T>
GruGradSpans<T> gru_grads(ParameterStore<T>& g, std::size_t first) {
    return {mspan(g[first + 0]), mspan(g[first + 1]), mspan(g[first + 2]), mspan(g[first + 3]), mspan(g[first + 4]),
            mspan(g[first + 5]), mspan(g[first + 6]), mspan(g[first + 7]), mspan(g[first + 8])};
}

template <typename T>
void check_store(const CellConfig& cfg, const ParameterStore<T>& params) {
    const auto specs = parameter_layout(cfg);
    if (specs.size() != params.size()) {
        throw std::invalid_argument("parameter store does not match cell configuration (array count)");
    }
    for (std::size_t i = 0; i < specs.size(); ++i) {
        if (specs[i].name != params[i].name || specs[i].shape != params[i].shape) {
            throw std::invalid_argument("parameter store does not match cell configuration at '" + specs[i].name +
                                        "'");
        }
    }
}

}  // namespace

template <typename T>
RiirCell<T>::RiirCell(CellConfig cfg, const ParameterStore<T>& params) : cfg_(cfg), params_(&params) {
    validate(cfg_);
    check_store(cfg_, params);
    if (!params.all_finite()) throw NumericalError("cell parameters contain non-finite values");
}

template <typename T>
CellOutput<T> RiirCell<T>::forward(const FeatureMap<T>& input, const HiddenState<T>& hidden) const {
    CellCache<T> cache;
    return forward(input, hidden, cache);
}

template <typename T>
CellOutput<T> RiirCell<T>::forward(const FeatureMap<T>& input, const HiddenState<T>& hidden,
                                   CellCache<T>& cache) const {
    const ParameterStore<T>& p = *params_;
    const Layout l = layout_indices(cfg_);
    const int k = cfg_.conv_kernel;
    const int io = cfg_.io_channels;
    if (input.channels != kCellInputChannels) throw ShapeError("cell input must have 4 channels");
    if (hidden.h1.channels != cfg_.hidden_channels[0] || hidden.h2.channels != cfg_.hidden_channels[1] ||
        hidden.h1.height != input.height || hidden.h1.width != input.width || hidden.h2.height != input.height ||
        hidden.h2.width != input.width) {
        throw ShapeError("hidden state does not match cell input");
    }
    cache.height = input.height;
    cache.width = input.width;

    const FeatureMap<T>& a1 = conv_tanh_forward(input, cspan(p[l.in_w]), cspan(p[l.in_b]), io, k, cache.in);

    CellOutput<T> out;
    out.hidden = HiddenState<T>::zeros(cfg_, GridShape{input.height, input.width});

    auto run_level = [&](int level, const FeatureMap<T>& x, const FeatureMap<T>& h) -> const FeatureMap<T>& {
        const int c = cfg_.hidden_channels[level];
        const LevelIndex li = l.level[level];
        if (li.gru) {
            FeatureMap<T>& slot = level == 0 ? out.hidden.h1 : out.hidden.h2;
            slot = gru_forward(x, h, gru_weights(p, li.first, c, k), cache.gru[level]);
            return slot;
        }
        return conv_tanh_forward(x, cspan(p[li.first]), cspan(p[li.first + 1]), c, k, cache.plain[level]);
    };

    const FeatureMap<T>& y1 = run_level(0, a1, hidden.h1);
    const FeatureMap<T>& a2 = conv_tanh_forward(y1, cspan(p[l.mid_w]), cspan(p[l.mid_b]), io, k, cache.mid);
    const FeatureMap<T>& y2 = run_level(1, a2, hidden.h2);

    im2col_into(y2, k, cache.out_cols);
    out.delta = FeatureMap<T>(2, input.height, input.width);
    conv_from_cols(cache.out_cols, cspan(p[l.out_w]), cspan(p[l.out_b]), 2, out.delta, false);
    for (T v : out.delta.data) {
        if (!std::isfinite(v)) throw NumericalError("cell produced a non-finite displacement increment");
    }
    return out;
}

template <typename T>
typename RiirCell<T>::InputGradients RiirCell<T>::backward(const CellCache<T>& cache, const FeatureMap<T>& d_delta,
                                                           const HiddenState<T>& d_new_hidden,
                                                           ParameterStore<T>& grads) const {
    const ParameterStore<T>& p = *params_;
    const Layout l = layout_indices(cfg_);
    const int k = cfg_.conv_kernel;
    const int io = cfg_.io_channels;
    const int h = cache.height;
    const int w = cache.width;

    InputGradients result{FeatureMap<T>(kCellInputChannels, h, w),
                          HiddenState<T>::zeros(cfg_, GridShape{h, w})};

    // Output conv (linear).
    const RowMatrix<T> dcols_out =
        conv_backward_from_cols(cache.out_cols, cspan(p[l.out_w]), 2, d_delta, mspan(grads[l.out_w]),
                                mspan(grads[l.out_b]), true);
    FeatureMap<T> dy2(cfg_.hidden_channels[1], h, w);
    col2im_add(dcols_out, k, dy2);

    auto back_level = [&](int level, FeatureMap<T> dy, const FeatureMap<T>& d_hidden_out, FeatureMap<T>& d_hidden_in) {
        const int c = cfg_.hidden_channels[level];
        const LevelIndex li = l.level[level];
        if (li.gru) {
            for (std::size_t i = 0; i < dy.data.size(); ++i) dy.data[i] += d_hidden_out.data[i];
            return gru_backward(cache.gru[level], gru_weights(p, li.first, c, k), dy, gru_grads(grads, li.first),
                                d_hidden_in, io);
        }
        return conv_tanh_backward(cache.plain[level], cspan(p[li.first]), c, k, io, dy, mspan(grads[li.first]),
                                  mspan(grads[li.first + 1]));
    };

    const FeatureMap<T> da2 = back_level(1, std::move(dy2), d_new_hidden.h2, result.hidden.h2);
    const FeatureMap<T> dy1 = conv_tanh_backward(cache.mid, cspan(p[l.mid_w]), io, k, cfg_.hidden_channels[0], da2,
                                                 mspan(grads[l.mid_w]), mspan(grads[l.mid_b]));
    const FeatureMap<T> da1 = back_level(0, dy1, d_new_hidden.h1, result.hidden.h1);
    result.input = conv_tanh_backward(cache.in, cspan(p[l.in_w]), io, k, kCellInputChannels, da1,
                                      mspan(grads[l.in_w]), mspan(grads[l.in_b]));
    return result;
}

template <typename T>
CellOutput<T> riir_cell_forward(const CellConfig& cfg, const ParameterStore<T>& params, const DisplacementField& disp,
                                const Image& mov, const Image& fixed, const VectorField& grad,
                                const HiddenState<T>& hidden) {
    const RiirCell<T> cell(cfg, params);
    return cell.forward(assemble_input<T>(cfg.input_mode, disp, mov, fixed, grad), hidden);
}

namespace {
template <typename T>
DisplacementField to_displacement_impl(const FeatureMap<T>& delta) {
    if (delta.channels != 2) throw ShapeError("displacement map must have 2 channels");
    DisplacementField d(GridShape{delta.height, delta.width});
    const auto r = delta.channel(0);
    const auto c = delta.channel(1);
    for (std::size_t i = 0; i < d.size(); ++i) {
        d.row[i] = static_cast<double>(r[i]);
        d.col[i] = static_cast<double>(c[i]);
    }
    return d;
}
}  // namespace

DisplacementField to_displacement(const FeatureMap<float>& delta) { return to_displacement_impl(delta); }
DisplacementField to_displacement(const FeatureMap<double>& delta) { return to_displacement_impl(delta); }

#define RIIR_INSTANTIATE(T)                                                                                    \
    template class ParameterStore<T>;                                                                          \
    template ParameterStore<T> init_parameters<T>(const CellConfig&, std::uint64_t);                           \
    template FeatureMap<T> assemble_input<T>(InputMode, const DisplacementField&, const Image&, const Image&,  \
                                             const VectorField&);                                              \
    template FeatureMap<T> conv_gru_step<T>(const FeatureMap<T>&, const FeatureMap<T>&, const GruWeights<T>&); \
    template struct CellCache<T>;                                                                              \
    template class RiirCell<T>;                                                                                \
    template CellOutput<T> riir_cell_forward<T>(const CellConfig&, const ParameterStore<T>&,                   \
                                                const DisplacementField&, const Image&, const Image&,          \
                                                const VectorField&, const HiddenState<T>&);

RIIR_INSTANTIATE(float)
RIIR_INSTANTIATE(double)
#undef RIIR_INSTANTIATE

}  // namespace riir
