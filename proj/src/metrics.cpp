#include "riir/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

namespace riir {

Plane<double> window_sum(const Plane<double>& f, int half) {
    const int h = f.height();
    const int w = f.width();
    std::vector<double> prefix(static_cast<std::size_t>(h + 1) * (w + 1), 0.0);
    auto at = [&](int r, int c) -> double& { return prefix[static_cast<std::size_t>(r) * (w + 1) + c]; };
    for (int r = 0; r < h; ++r) {
        double row = 0.0;
        for (int c = 0; c < w; ++c) {
            row += f(r, c);
            at(r + 1, c + 1) = at(r, c + 1) + row;
        }
    }
    Plane<double> out(f.shape());
    for (int r = 0; r < h; ++r) {
        const int r0 = std::max(0, r - half);
        const int r1 = std::min(h, r + half + 1);
        for (int c = 0; c < w; ++c) {
            const int c0 = std::max(0, c - half);
            const int c1 = std::min(w, c + half + 1);
            out(r, c) = at(r1, c1) - at(r0, c1) - at(r1, c0) + at(r0, c0);
        }
    }
    return out;
}

namespace {

Plane<double> box_sum(const Plane<double>& f, int half) { return window_sum(f, half); }


Plane<double> box_count(GridShape shape, int half) {
    Plane<double> out(shape);
    for (int r = 0; r < shape.height; ++r) {
        const int nr = std::min(shape.height, r + half + 1) - std::max(0, r - half);
        for (int c = 0; c < shape.width; ++c) {
            const int nc = std::min(shape.width, c + half + 1) - std::max(0, c - half);
            out(r, c) = static_cast<double>(nr * nc);
        }
    }
    return out;
}

Plane<double> product(const Plane<double>& a, const Plane<double>& b) {
    Plane<double> out(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] * b[i];
    return out;
}

void check_window(int window) {
    if (window < 1 || window % 2 == 0) {
        throw std::invalid_argument("NCC window must be odd and positive, got " + std::to_string(window));
    }
}

// Per-pixel local statistics shared by the NCC value and gradient.
struct NccTerms {
    Plane<double> n, ma, mb, va, vb, cov;
};

NccTerms ncc_terms(const Image& a, const Image& b, int half) {
    NccTerms t{box_count(a.shape(), half), box_sum(a, half), box_sum(b, half), box_sum(product(a, a), half),
               box_sum(product(b, b), half), box_sum(product(a, b), half)};
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double n = t.n[i];
        t.ma[i] /= n;
        t.mb[i] /= n;
        t.va[i] = std::max(0.0, t.va[i] / n - t.ma[i] * t.ma[i]);
        t.vb[i] = std::max(0.0, t.vb[i] / n - t.mb[i] * t.mb[i]);
        t.cov[i] = t.cov[i] / n - t.ma[i] * t.mb[i];
    }
    return t;
}

struct Spread {
    double mean = 0.0;
    double sd = 0.0;
};

Spread spread(const Image& img) {
    Spread s;
    for (double v : img.values()) s.mean += v;
    s.mean /= static_cast<double>(img.size());
    for (double v : img.values()) s.sd += (v - s.mean) * (v - s.mean);
    s.sd = std::sqrt(s.sd / static_cast<double>(img.size()));
    return s;
}

double ncc_ratio(double cov, double d) { return d > 0.0 ? cov / d : 0.0; }

bool is_constant(const Image& img) {
    return std::all_of(img.values().begin(), img.values().end(), [&](double v) { return v == img[0]; });
}

struct MinMax {
    double lo;
    double hi;
    std::size_t arg_lo;
    std::size_t arg_hi;
};

MinMax min_max(const Image& img) {
    const auto [lo, hi] = std::minmax_element(img.values().begin(), img.values().end());
    MinMax m{*lo, *hi, static_cast<std::size_t>(lo - img.values().begin()),
             static_cast<std::size_t>(hi - img.values().begin())};
    if (!(m.hi > m.lo)) {
        throw NumericalError("nmi_parzen: image has zero intensity range");
    }
    return m;
}

// Gaussian Parzen weights K(x, i) = exp(-(v_x - c_i)^2 / (2 s^2)) on bin centres
// c_i = (i + 0.5) / bins for min-max normalised intensities v.
Eigen::MatrixXd parzen_weights(const Eigen::VectorXd& v, int bins, double sigma) {
    Eigen::MatrixXd k(v.size(), bins);
    const double inv = 1.0 / (2.0 * sigma * sigma);
    for (int i = 0; i < bins; ++i) {
        const double centre = (i + 0.5) / bins;
        for (Eigen::Index x = 0; x < v.size(); ++x) {
            const double d = v[x] - centre;
            k(x, i) = std::exp(-d * d * inv);
        }
    }
    return k;
}

Eigen::VectorXd normalised(const Image& img, const MinMax& m) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(img.size()));
    const double range = m.hi - m.lo;
    for (std::size_t i = 0; i < img.size(); ++i) v[static_cast<Eigen::Index>(i)] = (img[i] - m.lo) / range;
    return v;
}

double entropy(const Eigen::Ref<const Eigen::ArrayXd>& p) {
    return -(p * (p + kNmiDensityFloor).log()).sum();
}

// d entropy / d p
Eigen::ArrayXd entropy_gradient(const Eigen::Ref<const Eigen::ArrayXd>& p) {
    return -((p + kNmiDensityFloor).log() + p / (p + kNmiDensityFloor));
}

struct NmiForward {
    MinMax ma, mb;
    Eigen::VectorXd va, vb;
    Eigen::MatrixXd ka, kb;
    Eigen::MatrixXd joint;  // unnormalised
    double total = 0.0;
    double ha = 0.0, hb = 0.0, hab = 0.0;
    double sigma = 0.0;
};

NmiForward nmi_forward(const Image& a, const Image& b, int bins, double kernel_sigma) {
    require_same_shape(a.shape(), b.shape(), "nmi_parzen");
    if (bins < 8) throw std::invalid_argument("nmi_parzen: bins must be >= 8");
    if (!(kernel_sigma > 0.0)) throw std::invalid_argument("nmi_parzen: kernel_sigma must be positive");
    NmiForward f;
    f.ma = min_max(a);
    f.mb = min_max(b);
    f.va = normalised(a, f.ma);
    f.vb = normalised(b, f.mb);
    f.sigma = kernel_sigma / bins;
    f.ka = parzen_weights(f.va, bins, f.sigma);
    f.kb = parzen_weights(f.vb, bins, f.sigma);
    f.joint = f.ka.transpose() * f.kb;
    f.total = f.joint.sum();
    const Eigen::MatrixXd p = f.joint / f.total;
    f.hab = entropy(p.array().reshaped());
    f.ha = entropy(p.rowwise().sum().array());
    f.hb = entropy(p.colwise().sum().transpose().array());
    return f;
}

}  // namespace

void validate(const SimilarityKind& kind) {
    if (kind.type == SimilarityType::ncc) check_window(kind.window);
    if (kind.type == SimilarityType::nmi) {
        if (kind.bins < 8) throw std::invalid_argument("NMI bins must be >= 8");
        if (!(kind.kernel_sigma > 0.0)) throw std::invalid_argument("NMI kernel sigma must be positive");
    }
}

std::string to_string(SimilarityType type) {
    switch (type) {
        case SimilarityType::mse: return "mse";
        case SimilarityType::ncc: return "ncc";
        case SimilarityType::nmi: return "nmi";
    }
    return "?";
}

SimilarityType parse_similarity(const std::string& name) {
    if (name == "mse") return SimilarityType::mse;
    if (name == "ncc") return SimilarityType::ncc;
    if (name == "nmi") return SimilarityType::nmi;
    throw std::invalid_argument("unknown similarity '" + name + "' (expected mse, ncc or nmi)");
}

double mse(const Image& a, const Image& b) {
    require_same_shape(a.shape(), b.shape(), "mse");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        sum += d * d;
    }
    return sum / static_cast<double>(a.size());
}

Image mse_gradient(const Image& a, const Image& b) {
    require_same_shape(a.shape(), b.shape(), "mse");
    Image g(a.shape());
    const double scale = 2.0 / static_cast<double>(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) g[i] = scale * (a[i] - b[i]);
    return g;
}

double local_ncc(const Image& a, const Image& b, int window) {
    require_same_shape(a.shape(), b.shape(), "local_ncc");
    check_window(window);
    if (is_constant(a) || is_constant(b)) return 0.0;
    const NccTerms t = ncc_terms(a, b, window / 2);
    const double eps = kNccEpsilon * spread(a).sd * spread(b).sd;
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += ncc_ratio(t.cov[i], std::sqrt(t.va[i] * t.vb[i]) + eps);
    }
    return sum / static_cast<double>(a.size());
}

Image local_ncc_gradient(const Image& a, const Image& b, int window) {
    require_same_shape(a.shape(), b.shape(), "local_ncc");
    check_window(window);
    if (is_constant(a) || is_constant(b)) return Image(a.shape());
    const int half = window / 2;
    const NccTerms t = ncc_terms(a, b, half);
    const double inv_p = 1.0 / static_cast<double>(a.size());

    const Spread sa = spread(a);
    const double sb = spread(b).sd;
    const double eps = kNccEpsilon * sa.sd * sb;

    // Adjoints with respect to the window sums Sa, Saa, Sab at each centre.
    Plane<double> g_sa(a.shape()), g_saa(a.shape()), g_sab(a.shape());
    double g_eps = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double root = std::sqrt(t.va[i] * t.vb[i]);
        const double d = root + eps;
        if (!(d > 0.0)) continue;
        const double g_cov = inv_p / d;
        const double g_d = -inv_p * t.cov[i] / (d * d);
        g_eps += g_d;
        const double g_va = root > 0.0 ? g_d * t.vb[i] / (2.0 * root) : 0.0;
        const double n = t.n[i];
        g_sab[i] = g_cov / n;
        g_saa[i] = g_va / n;
        g_sa[i] = -g_cov * t.mb[i] / n - 2.0 * g_va * t.ma[i] / n;
    }
    // Truncated square windows are symmetric, so the box sum is self-adjoint.
    const Plane<double> s_sa = box_sum(g_sa, half);
    const Plane<double> s_saa = box_sum(g_saa, half);
    const Plane<double> s_sab = box_sum(g_sab, half);
    Image g(a.shape());
    for (std::size_t i = 0; i < a.size(); ++i) {
        g[i] = s_sa[i] + 2.0 * a[i] * s_saa[i] + b[i] * s_sab[i];
    }
    if (sa.sd > 0.0) {
        const double g_sd = g_eps * kNccEpsilon * sb / (static_cast<double>(a.size()) * sa.sd);
        for (std::size_t i = 0; i < a.size(); ++i) g[i] += g_sd * (a[i] - sa.mean);
    }
    return g;
}

double nmi_parzen(const Image& a, const Image& b, int bins, double kernel_sigma) {
    const NmiForward f = nmi_forward(a, b, bins, kernel_sigma);
    return (f.ha + f.hb) / f.hab;
}

Image nmi_parzen_gradient(const Image& a, const Image& b, int bins, double kernel_sigma) {
    const NmiForward f = nmi_forward(a, b, bins, kernel_sigma);
    const Eigen::MatrixXd p = f.joint / f.total;
    const Eigen::ArrayXd pa = p.rowwise().sum().array();
    const Eigen::ArrayXd pb = p.colwise().sum().transpose().array();

    const double d_ha = 1.0 / f.hab;
    const double d_hab = -(f.ha + f.hb) / (f.hab * f.hab);
    const Eigen::ArrayXd g_pa = d_ha * entropy_gradient(pa);
    const Eigen::ArrayXd g_pb = d_ha * entropy_gradient(pb);
    Eigen::MatrixXd g_p(bins, bins);
    for (int i = 0; i < bins; ++i) {
        for (int j = 0; j < bins; ++j) {
            const double pij = p(i, j);
            g_p(i, j) = -d_hab * (std::log(pij + kNmiDensityFloor) + pij / (pij + kNmiDensityFloor)) + g_pa[i] + g_pb[j];
        }
    }
    // p = J / sum(J)
    const double mean_term = (g_p.array() * p.array()).sum();
    const Eigen::MatrixXd g_joint = (g_p.array() - mean_term).matrix() / f.total;
    // J = Ka^T Kb
    const Eigen::MatrixXd g_ka = f.kb * g_joint.transpose();

    const double inv_s2 = 1.0 / (f.sigma * f.sigma);
    Eigen::VectorXd g_v(f.va.size());
    for (Eigen::Index x = 0; x < f.va.size(); ++x) {
        double s = 0.0;
        for (int i = 0; i < bins; ++i) {
            const double centre = (i + 0.5) / bins;
            s += g_ka(x, i) * f.ka(x, i) * (-(f.va[x] - centre) * inv_s2);
        }
        g_v[x] = s;
    }
    // v = (a - lo) / (hi - lo)
    const double range = f.ma.hi - f.ma.lo;
    Image g(a.shape());
    double g_lo = 0.0;
    double g_hi = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double gv = g_v[static_cast<Eigen::Index>(i)];
        const double v = f.va[static_cast<Eigen::Index>(i)];
        g[i] = gv / range;
        g_lo += gv * (v - 1.0) / range;
        g_hi += gv * (-v) / range;
    }
    g[f.ma.arg_lo] += g_lo;
    g[f.ma.arg_hi] += g_hi;
    return g;
}

double diffusion_regularizer(const DisplacementField& disp) {
    const DisplacementGradient g = displacement_gradient(disp);
    double sum = 0.0;
    for (std::size_t i = 0; i < disp.size(); ++i) {
        sum += g.drow_drow[i] * g.drow_drow[i] + g.drow_dcol[i] * g.drow_dcol[i] + g.dcol_drow[i] * g.dcol_drow[i] +
               g.dcol_dcol[i] * g.dcol_dcol[i];
    }
    return sum / static_cast<double>(disp.size());
}

DisplacementField diffusion_regularizer_gradient(const DisplacementField& disp) {
    DisplacementGradient g = displacement_gradient(disp);
    const double scale = 2.0 / static_cast<double>(disp.size());
    for (Plane<double>* p : {&g.drow_drow, &g.drow_dcol, &g.dcol_drow, &g.dcol_dcol}) {
        for (double& v : p->values()) v *= scale;
    }
    return displacement_gradient_adjoint(g);
}

double inner_loss(const SimilarityKind& kind, const Image& warped, const Image& fixed) {
    validate(kind);
    switch (kind.type) {
        case SimilarityType::mse: return mse(warped, fixed);
        case SimilarityType::ncc: return -local_ncc(warped, fixed, kind.window);
        case SimilarityType::nmi: return -nmi_parzen(warped, fixed, kind.bins, kind.kernel_sigma);
    }
    return 0.0;
}

Image inner_loss_image_gradient(const SimilarityKind& kind, const Image& warped, const Image& fixed) {
    validate(kind);
    Image g;
    switch (kind.type) {
        case SimilarityType::mse: return mse_gradient(warped, fixed);
        case SimilarityType::ncc: g = local_ncc_gradient(warped, fixed, kind.window); break;
        case SimilarityType::nmi: g = nmi_parzen_gradient(warped, fixed, kind.bins, kind.kernel_sigma); break;
    }
    for (double& v : g.values()) v = -v;
    return g;
}

DisplacementField inner_loss_gradient(const SimilarityKind& kind, const Image& mov, const Image& fixed,
                                      const DisplacementField& disp) {
    require_same_shape(mov.shape(), fixed.shape(), "inner_loss_gradient");
    const Image warped = warp_image(mov, disp);
    return warp_image_disp_backward(mov, disp, inner_loss_image_gradient(kind, warped, fixed));
}

double dice_for_label(const LabelMap& x, const LabelMap& y, std::uint16_t label) {
    require_same_shape(x.shape(), y.shape(), "dice_score");
    std::size_t nx = 0, ny = 0, both = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
        const bool in_x = x[i] == label;
        const bool in_y = y[i] == label;
        nx += in_x;
        ny += in_y;
        both += in_x && in_y;
    }
    if (nx + ny == 0) return 1.0;
    return 2.0 * static_cast<double>(both) / static_cast<double>(nx + ny);
}

double dice_score(const LabelMap& x, const LabelMap& y, std::span<const std::uint16_t> labels) {
    if (labels.empty()) throw std::invalid_argument("dice_score: empty label set");
    double sum = 0.0;
    for (std::uint16_t l : labels) sum += dice_for_label(x, y, l);
    return sum / static_cast<double>(labels.size());
}

double hausdorff_distance(const LabelMap& x, const LabelMap& y, std::uint16_t label) {
    require_same_shape(x.shape(), y.shape(), "hausdorff_distance");
    std::vector<std::pair<int, int>> px, py;
    for (int r = 0; r < x.height(); ++r) {
        for (int c = 0; c < x.width(); ++c) {
            if (x(r, c) == label) px.emplace_back(r, c);
            if (y(r, c) == label) py.emplace_back(r, c);
        }
    }
    if (px.empty() || py.empty()) {
        throw std::invalid_argument("hausdorff_distance: label " + std::to_string(label) + " absent from a map");
    }
    auto directed = [](const auto& from, const auto& to) {
        long worst = 0;
        for (const auto& [r, c] : from) {
            long best = std::numeric_limits<long>::max();
            for (const auto& [r2, c2] : to) {
                const long dr = r - r2;
                const long dc = c - c2;
                best = std::min(best, dr * dr + dc * dc);
                if (best <= worst) break;
            }
            worst = std::max(worst, best);
        }
        return worst;
    };
    const long sq = std::max(directed(px, py), directed(py, px));
    return std::sqrt(static_cast<double>(sq));
}

std::vector<std::uint16_t> foreground_labels(const LabelMap& x, const LabelMap& y) {
    std::set<std::uint16_t> s;
    for (auto v : x.values()) if (v != 0) s.insert(v);
    for (auto v : y.values()) if (v != 0) s.insert(v);
    return {s.begin(), s.end()};
}

Eigen::MatrixXd correlation_matrix(std::span<const Image> series) {
    if (series.size() < 2) throw std::invalid_argument("correlation_matrix: need at least 2 images");
    const GridShape shape = series.front().shape();
    const Eigen::Index pixels = static_cast<Eigen::Index>(shape.size());
    const Eigen::Index n = static_cast<Eigen::Index>(series.size());
    Eigen::MatrixXd m(pixels, n);
    for (Eigen::Index j = 0; j < n; ++j) {
        require_same_shape(shape, series[static_cast<std::size_t>(j)].shape(), "correlation_matrix");
        m.col(j) = Eigen::Map<const Eigen::VectorXd>(series[static_cast<std::size_t>(j)].values().data(), pixels);
    }
    const Eigen::RowVectorXd mean = m.colwise().mean();
    m.rowwise() -= mean;
    Eigen::VectorXd sd(n);
    for (Eigen::Index j = 0; j < n; ++j) {
        sd[j] = std::sqrt(m.col(j).squaredNorm() / static_cast<double>(pixels - 1));
        if (!(sd[j] > 0.0)) {
            throw NumericalError("correlation_matrix: image " + std::to_string(j) + " is constant");
        }
        m.col(j) /= sd[j];
    }
    Eigen::MatrixXd k = (m.transpose() * m) / static_cast<double>(pixels - 1);
    return 0.5 * (k + k.transpose());
}

PcaReport pca_divergences(const Eigen::MatrixXd& k, int L) {
    if (k.rows() != k.cols() || k.rows() == 0) throw std::invalid_argument("pca_divergences: matrix must be square");
    if (L < 1) throw std::invalid_argument("pca_divergences: L must be positive");
    const double scale = std::max(1.0, k.cwiseAbs().maxCoeff());
    if ((k - k.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) {
        throw std::invalid_argument("pca_divergences: matrix is not symmetric");
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(k, Eigen::EigenvaluesOnly);
    PcaReport report;
    report.L = L;
    const Eigen::VectorXd ev = solver.eigenvalues();
    for (Eigen::Index i = ev.size() - 1; i >= 0; --i) report.eigenvalues.push_back(ev[i]);
    report.trace = k.trace();
    const std::size_t keep = std::min<std::size_t>(static_cast<std::size_t>(L), report.eigenvalues.size());
    double head = 0.0;
    for (std::size_t j = 0; j < keep; ++j) head += report.eigenvalues[j];
    report.d_pca1 = report.trace - head;
    for (std::size_t j = 0; j < report.eigenvalues.size(); ++j) {
        report.d_pca2 += static_cast<double>(j + 1) * report.eigenvalues[j];
    }
    return report;
}

Image center_crop(const Image& img, double ratio) {
    if (!(ratio > 0.0 && ratio <= 1.0)) throw std::invalid_argument("center_crop: ratio must be in (0, 1]");
    const int h = std::max(2, static_cast<int>(std::lround(img.height() * ratio)));
    const int w = std::max(2, static_cast<int>(std::lround(img.width() * ratio)));
    const int r0 = (img.height() - h) / 2;
    const int c0 = (img.width() - w) / 2;
    Image out(GridShape{h, w});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) out(r, c) = img(r0 + r, c0 + c);
    return out;
}

PcaReport series_pca(std::span<const Image> series, int L, double crop_ratio) {
    std::vector<Image> cropped;
    cropped.reserve(series.size());
    for (const Image& img : series) cropped.push_back(center_crop(img, crop_ratio));
    return pca_divergences(correlation_matrix(cropped), L);
}

}  // namespace riir
