#include "riir/diffable.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "riir/field.hpp"
#include "riir/metrics.hpp"
#include "riir/random.hpp"
#include "riir/tensor.hpp"

namespace riir {

Tensor Tensor::zeros(std::vector<int> shape) {
    std::size_t n = 1;
    for (int d : shape) n *= static_cast<std::size_t>(d);
    return {std::move(shape), std::vector<double>(n, 0.0)};
}

namespace {

constexpr double kEps = 1e-6;
constexpr int kWindowHalf = 1;
constexpr int kKdeBins = 8;
constexpr double kKdeSigma = 0.5 / kKdeBins;

Tensor random_tensor(std::vector<int> shape, Rng& rng, double lo, double hi) {
    Tensor t = Tensor::zeros(std::move(shape));
    for (double& v : t.data) v = rng.uniform(lo, hi);
    return t;
}

using Fwd = std::function<double(double)>;

// Elementwise unary primitive from f and f'.
DifferentiablePrimitive unary(std::string name, std::string contract, Fwd f, Fwd df, double lo, double hi) {
    DifferentiablePrimitive p;
    p.name = std::move(name);
    p.arity = 1;
    p.forward_contract = contract;
    p.backward_contract = "dx = upstream * f'(x)";
    p.forward = [f](std::span<const Tensor> in) {
        Tensor out = in[0];
        for (double& v : out.data) v = f(v);
        return out;
    };
    p.backward = [df](std::span<const Tensor> in, const Tensor& up) {
        Tensor g = in[0];
        for (std::size_t i = 0; i < g.size(); ++i) g.data[i] = up.data[i] * df(in[0].data[i]);
        return std::vector<Tensor>{g};
    };
    p.sample_inputs = [lo, hi](Rng& rng) { return std::vector<Tensor>{random_tensor({3, 5}, rng, lo, hi)}; };
    return p;
}

DifferentiablePrimitive binary(std::string name, std::string contract, std::function<double(double, double)> f,
                               std::function<std::pair<double, double>(double, double)> df) {
    DifferentiablePrimitive p;
    p.name = std::move(name);
    p.arity = 2;
    p.forward_contract = contract;
    p.backward_contract = "da = upstream * df/da, db = upstream * df/db";
    p.forward = [f](std::span<const Tensor> in) {
        Tensor out = in[0];
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] = f(in[0].data[i], in[1].data[i]);
        return out;
    };
    p.backward = [df](std::span<const Tensor> in, const Tensor& up) {
        Tensor ga = in[0], gb = in[1];
        for (std::size_t i = 0; i < ga.size(); ++i) {
            const auto [da, db] = df(in[0].data[i], in[1].data[i]);
            ga.data[i] = up.data[i] * da;
            gb.data[i] = up.data[i] * db;
        }
        return std::vector<Tensor>{ga, gb};
    };
    p.sample_inputs = [](Rng& rng) {
        return std::vector<Tensor>{random_tensor({4, 4}, rng, -2, 2), random_tensor({4, 4}, rng, -2, 2)};
    };
    return p;
}

Plane<double> as_plane(const Tensor& t) {
    return Plane<double>(GridShape{t.shape[0], t.shape[1]}, t.data);
}

Tensor from_plane(const Plane<double>& p) { return {{p.height(), p.width()}, p.values()}; }

FeatureMap<double> as_map(const Tensor& t) {
    FeatureMap<double> m(t.shape[0], t.shape[1], t.shape[2]);
    m.data = t.data;
    return m;
}

}  // namespace

std::vector<DifferentiablePrimitive> required_primitives() {
    std::vector<DifferentiablePrimitive> prims;

    prims.push_back(binary("add", "a + b", [](double a, double b) { return a + b; },
                           [](double, double) { return std::pair{1.0, 1.0}; }));
    prims.push_back(binary("sub", "a - b", [](double a, double b) { return a - b; },
                           [](double, double) { return std::pair{1.0, -1.0}; }));
    prims.push_back(binary("mul", "a * b (elementwise)", [](double a, double b) { return a * b; },
                           [](double a, double b) { return std::pair{b, a}; }));

    {
        DifferentiablePrimitive p;
        p.name = "scale";
        p.arity = 2;
        p.forward_contract = "s * x for scalar s";
        p.backward_contract = "dx = s * upstream, ds = sum(x * upstream)";
        p.forward = [](std::span<const Tensor> in) {
            Tensor out = in[0];
            for (double& v : out.data) v *= in[1].data[0];
            return out;
        };
        p.backward = [](std::span<const Tensor> in, const Tensor& up) {
            Tensor gx = in[0];
            Tensor gs = Tensor::zeros({1});
            for (std::size_t i = 0; i < gx.size(); ++i) {
                gx.data[i] = up.data[i] * in[1].data[0];
                gs.data[0] += up.data[i] * in[0].data[i];
            }
            return std::vector<Tensor>{gx, gs};
        };
        p.sample_inputs = [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({3, 4}, rng, -2, 2), random_tensor({1}, rng, -2, 2)};
        };
        prims.push_back(std::move(p));
    }

    prims.push_back(unary("sigmoid", "1 / (1 + exp(-x))", [](double x) { return sigmoid(x); },
                          [](double x) { const double s = sigmoid(x); return s * (1.0 - s); }, -4, 4));
    prims.push_back(unary("tanh", "tanh(x)", [](double x) { return std::tanh(x); },
                          [](double x) { const double t = std::tanh(x); return 1.0 - t * t; }, -3, 3));

    {
        DifferentiablePrimitive p;
        p.name = "concat_channels";
        p.arity = 2;
        p.forward_contract = "[a; b] along the channel axis of [C, H, W] maps";
        p.backward_contract = "split upstream by channel counts";
        p.forward = [](std::span<const Tensor> in) {
            Tensor out{{in[0].shape[0] + in[1].shape[0], in[0].shape[1], in[0].shape[2]}, in[0].data};
            out.data.insert(out.data.end(), in[1].data.begin(), in[1].data.end());
            return out;
        };
        p.backward = [](std::span<const Tensor> in, const Tensor& up) {
            const auto mid = up.data.begin() + static_cast<std::ptrdiff_t>(in[0].size());
            return std::vector<Tensor>{{in[0].shape, std::vector<double>(up.data.begin(), mid)},
                                       {in[1].shape, std::vector<double>(mid, up.data.end())}};
        };
        p.sample_inputs = [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({2, 3, 4}, rng, -1, 1), random_tensor({3, 3, 4}, rng, -1, 1)};
        };
        prims.push_back(std::move(p));
    }

    {
        DifferentiablePrimitive p;
        p.name = "conv2d";
        p.arity = 3;
        p.forward_contract = "stride-1 zero-padded shape-preserving convolution: x [Cin,H,W], w [Cout,Cin,k,k], b [Cout]";
        p.backward_contract = "dx = conv^T(upstream), dw = upstream (x) im2col(x), db = spatial sum of upstream";
        p.forward = [](std::span<const Tensor> in) {
            const int cout = in[1].shape[0];
            const int k = in[1].shape[2];
            const FeatureMap<double> y = conv2d<double>(as_map(in[0]), in[1].data, in[2].data, cout, k);
            return Tensor{{y.channels, y.height, y.width}, y.data};
        };
        p.backward = [](std::span<const Tensor> in, const Tensor& up) {
            const int cout = in[1].shape[0];
            const int k = in[1].shape[2];
            FeatureMap<double> dx(in[0].shape[0], in[0].shape[1], in[0].shape[2]);
            Tensor dw = Tensor::zeros(in[1].shape);
            Tensor db = Tensor::zeros(in[2].shape);
            conv2d_backward<double>(as_map(in[0]), in[1].data, cout, k, as_map(up), dw.data, db.data, &dx);
            return std::vector<Tensor>{{in[0].shape, dx.data}, dw, db};
        };
        p.sample_inputs = [](Rng& rng) {
            return std::vector<Tensor>{random_tensor({2, 5, 6}, rng, -1, 1), random_tensor({3, 2, 3, 3}, rng, -1, 1),
                                       random_tensor({3}, rng, -1, 1)};
        };
        prims.push_back(std::move(p));
    }

    {
        DifferentiablePrimitive p;
        p.name = "bilinear_sample";
        p.arity = 2;
        p.forward_contract = "out(x) = img(x + u(x)), bilinear, border-clamped; img [H,W], u [2,H,W]";
        p.backward_contract = "scatter to the four neighbours for img; interpolated cell slope for u";
        auto split = [](const Tensor& u) {
            const std::size_t n = u.size() / 2;
            const GridShape s{u.shape[1], u.shape[2]};
            return DisplacementField(Plane<double>(s, std::vector<double>(u.data.begin(), u.data.begin() + n)),
                                     Plane<double>(s, std::vector<double>(u.data.begin() + n, u.data.end())));
        };
        p.forward = [split](std::span<const Tensor> in) {
            return from_plane(warp_image(as_plane(in[0]), split(in[1])));
        };
        p.backward = [split](std::span<const Tensor> in, const Tensor& up) {
            const WarpGradients g = warp_image_backward(as_plane(in[0]), split(in[1]), as_plane(up));
            Tensor gu{in[1].shape, g.disp.row.values()};
            gu.data.insert(gu.data.end(), g.disp.col.values().begin(), g.disp.col.values().end());
            return std::vector<Tensor>{from_plane(g.image), gu};
        };
        p.sample_inputs = [](Rng& rng) {
            // Keep sample points away from integer coordinates, where the interpolant has kinks.
            Tensor u = Tensor::zeros({2, 5, 6});
            for (double& v : u.data) v = std::floor(rng.uniform(-2, 2)) + rng.uniform(0.1, 0.9);
            return std::vector<Tensor>{random_tensor({5, 6}, rng, -1, 1), u};
        };
        prims.push_back(std::move(p));
    }

    {
        DifferentiablePrimitive p;
        p.name = "window_mean";
        p.arity = 1;
        p.forward_contract = "mean over the border-truncated 3x3 window";
        p.backward_contract = "window sum of upstream / count (windows are symmetric)";
        p.forward = [](std::span<const Tensor> in) {
            const Plane<double> x = as_plane(in[0]);
            Plane<double> s = window_sum(x, kWindowHalf);
            const Plane<double> n = window_sum(Plane<double>(x.shape(), 1.0), kWindowHalf);
            for (std::size_t i = 0; i < s.size(); ++i) s[i] /= n[i];
            return from_plane(s);
        };
        p.backward = [](std::span<const Tensor> in, const Tensor& up) {
            Plane<double> g = as_plane(up);
            const Plane<double> n = window_sum(Plane<double>(g.shape(), 1.0), kWindowHalf);
            for (std::size_t i = 0; i < g.size(); ++i) g[i] /= n[i];
            return std::vector<Tensor>{from_plane(window_sum(g, kWindowHalf))};
        };
        p.sample_inputs = [](Rng& rng) { return std::vector<Tensor>{random_tensor({5, 6}, rng, -1, 1)}; };
        prims.push_back(std::move(p));
    }

    {
        DifferentiablePrimitive p;
        p.name = "window_variance";
        p.arity = 1;
        p.forward_contract = "mean(x^2) - mean(x)^2 over the border-truncated 3x3 window";
        p.backward_contract = "dx = W(g/n) * 2x - W(2 g m / n)";
        p.forward = [](std::span<const Tensor> in) {
            const Plane<double> x = as_plane(in[0]);
            Plane<double> x2 = x;
            for (double& v : x2.values()) v *= v;
            const Plane<double> n = window_sum(Plane<double>(x.shape(), 1.0), kWindowHalf);
            const Plane<double> s = window_sum(x, kWindowHalf);
            const Plane<double> s2 = window_sum(x2, kWindowHalf);
            Plane<double> out(x.shape());
            for (std::size_t i = 0; i < out.size(); ++i) {
                const double m = s[i] / n[i];
                out[i] = s2[i] / n[i] - m * m;
            }
            return from_plane(out);
        };
        p.backward = [](std::span<const Tensor> in, const Tensor& up) {
            const Plane<double> x = as_plane(in[0]);
            const Plane<double> n = window_sum(Plane<double>(x.shape(), 1.0), kWindowHalf);
            const Plane<double> s = window_sum(x, kWindowHalf);
            Plane<double> g1(x.shape()), g2(x.shape());
            for (std::size_t i = 0; i < x.size(); ++i) {
                g2[i] = up.data[i] / n[i];
                g1[i] = -2.0 * up.data[i] * (s[i] / n[i]) / n[i];
            }
            const Plane<double> w1 = window_sum(g1, kWindowHalf);
            const Plane<double> w2 = window_sum(g2, kWindowHalf);
            Plane<double> g(x.shape());
            for (std::size_t i = 0; i < x.size(); ++i) g[i] = w1[i] + 2.0 * x[i] * w2[i];
            return std::vector<Tensor>{from_plane(g)};
        };
        p.sample_inputs = [](Rng& rng) { return std::vector<Tensor>{random_tensor({5, 6}, rng, -1, 1)}; };
        prims.push_back(std::move(p));
    }

    for (const bool is_mean : {true, false}) {
        DifferentiablePrimitive p;
        p.name = is_mean ? "mean" : "sum";
        p.arity = 1;
        p.forward_contract = is_mean ? "mean of all elements" : "sum of all elements";
        p.backward_contract = is_mean ? "upstream / n broadcast" : "upstream broadcast";
        p.forward = [is_mean](std::span<const Tensor> in) {
            const double s = std::accumulate(in[0].data.begin(), in[0].data.end(), 0.0);
            return Tensor{{1}, {is_mean ? s / static_cast<double>(in[0].size()) : s}};
        };
        p.backward = [is_mean](std::span<const Tensor> in, const Tensor& up) {
            const double v = is_mean ? up.data[0] / static_cast<double>(in[0].size()) : up.data[0];
            return std::vector<Tensor>{{in[0].shape, std::vector<double>(in[0].size(), v)}};
        };
        p.sample_inputs = [](Rng& rng) { return std::vector<Tensor>{random_tensor({4, 3}, rng, -1, 1)}; };
        prims.push_back(std::move(p));
    }

    prims.push_back(unary("square", "x^2", [](double x) { return x * x; }, [](double x) { return 2.0 * x; }, -2, 2));
    prims.push_back(unary("sqrt_eps", "sqrt(x + eps)", [](double x) { return std::sqrt(x + kEps); },
                          [](double x) { return 0.5 / std::sqrt(x + kEps); }, 0.05, 3));
    prims.push_back(unary("log_eps", "log(x + eps)", [](double x) { return std::log(x + kEps); },
                          [](double x) { return 1.0 / (x + kEps); }, 0.05, 3));

    {
        DifferentiablePrimitive p;
        p.name = "gaussian_kde";
        p.arity = 1;
        p.forward_contract = "density[i] = sum_x exp(-(v_x - c_i)^2 / 2s^2), c_i = (i + 0.5) / bins";
        p.backward_contract = "dv_x = sum_i upstream_i * K(x, i) * -(v_x - c_i) / s^2";
        p.forward = [](std::span<const Tensor> in) {
            Tensor out = Tensor::zeros({kKdeBins});
            for (double v : in[0].data) {
                for (int i = 0; i < kKdeBins; ++i) {
                    const double d = v - (i + 0.5) / kKdeBins;
                    out.data[static_cast<std::size_t>(i)] += std::exp(-d * d / (2 * kKdeSigma * kKdeSigma));
                }
            }
            return out;
        };
        p.backward = [](std::span<const Tensor> in, const Tensor& up) {
            Tensor g = in[0];
            for (std::size_t x = 0; x < g.size(); ++x) {
                const double v = in[0].data[x];
                double s = 0.0;
                for (int i = 0; i < kKdeBins; ++i) {
                    const double d = v - (i + 0.5) / kKdeBins;
                    const double k = std::exp(-d * d / (2 * kKdeSigma * kKdeSigma));
                    s += up.data[static_cast<std::size_t>(i)] * k * (-d / (kKdeSigma * kKdeSigma));
                }
                g.data[x] = s;
            }
            return std::vector<Tensor>{g};
        };
        p.sample_inputs = [](Rng& rng) { return std::vector<Tensor>{random_tensor({12}, rng, 0, 1)}; };
        prims.push_back(std::move(p));
    }

    return prims;
}

GradientCheckReport check_gradient(const std::string& name, const DifferentiableFunction& fn,
                                   std::span<const double> point, double step, double tolerance,
                                   std::size_t max_coordinates, std::uint64_t seed) {
    if (!(step > 0.0)) throw std::invalid_argument("check_gradient: step must be positive");
    const std::vector<double> analytic = fn.gradient(point);
    if (analytic.size() != point.size()) throw std::invalid_argument("check_gradient: gradient size mismatch");
    for (double g : analytic) {
        if (!std::isfinite(g)) throw NumericalError("check_gradient(" + name + "): non-finite analytic gradient");
    }

    std::vector<std::size_t> coords(point.size());
    std::iota(coords.begin(), coords.end(), std::size_t{0});
    if (max_coordinates > 0 && point.size() > max_coordinates) {
        Rng rng(seed);
        const auto perm = permutation(point.size(), rng);
        coords.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(std::max<std::size_t>(64, max_coordinates)));
        std::sort(coords.begin(), coords.end());
    }

    GradientCheckReport report;
    report.name = name;
    report.tolerance = tolerance;
    std::vector<double> x(point.begin(), point.end());
    double diff_sq = 0.0;
    double ref_sq = 0.0;
    for (std::size_t i : coords) {
        const double saved = x[i];
        x[i] = saved + step;
        const double fp = fn.value(x);
        x[i] = saved - step;
        const double fm = fn.value(x);
        x[i] = saved;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw NumericalError("check_gradient(" + name + "): non-finite function value");
        }
        const double numeric = (fp - fm) / (2.0 * step);
        const double a = analytic[i];
        const double err = std::abs(a - numeric) / std::max({1.0, std::abs(a), std::abs(numeric)});
        report.max_relative_error = std::max(report.max_relative_error, err);
        diff_sq += (a - numeric) * (a - numeric);
        ref_sq += numeric * numeric;
    }
    report.checked = coords.size();
    report.relative_l2_error = std::sqrt(diff_sq) / std::max(std::sqrt(ref_sq), 1e-300);
    if (ref_sq == 0.0 && diff_sq == 0.0) report.relative_l2_error = 0.0;
    report.pass = report.max_relative_error <= tolerance;
    return report;
}

GradientCheckReport check_primitive(const DifferentiablePrimitive& prim, std::uint64_t seed, double step,
                                    double tolerance) {
    Rng rng(seed);
    const std::vector<Tensor> inputs = prim.sample_inputs(rng);
    const Tensor out = prim.forward(inputs);
    Tensor projection = out;
    for (double& v : projection.data) v = rng.uniform(-1, 1);

    std::vector<double> flat;
    for (const Tensor& t : inputs) flat.insert(flat.end(), t.data.begin(), t.data.end());

    auto unflatten = [&inputs](std::span<const double> x) {
        std::vector<Tensor> ts = inputs;
        std::size_t off = 0;
        for (Tensor& t : ts) {
            std::copy(x.begin() + static_cast<std::ptrdiff_t>(off),
                      x.begin() + static_cast<std::ptrdiff_t>(off + t.size()), t.data.begin());
            off += t.size();
        }
        return ts;
    };

    DifferentiableFunction fn;
    fn.value = [&](std::span<const double> x) {
        const Tensor y = prim.forward(unflatten(x));
        double s = 0.0;
        for (std::size_t i = 0; i < y.size(); ++i) s += projection.data[i] * y.data[i];
        return s;
    };
    fn.gradient = [&](std::span<const double> x) {
        const std::vector<Tensor> grads = prim.backward(unflatten(x), projection);
        std::vector<double> g;
        for (const Tensor& t : grads) g.insert(g.end(), t.data.begin(), t.data.end());
        return g;
    };
    return check_gradient(prim.name, fn, flat, step, tolerance);
}

}  // namespace riir
