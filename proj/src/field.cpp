#include "riir/field.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace riir {
namespace {

struct Cell {
    int lo;      // lower node index, at most n - 2
    double frac; // position inside [lo, lo + 1]
};

Cell locate(double p, int n) {
    const double q = std::clamp(p, 0.0, static_cast<double>(n - 1));
    const int lo = std::min(static_cast<int>(std::floor(q)), n - 2);
    return {lo, q - lo};
}

double lerp_cols(const Image& img, int r, const Cell& c) {
    return (1.0 - c.frac) * img(r, c.lo) + c.frac * img(r, c.lo + 1);
}

double lerp_rows(const Image& img, const Cell& r, int c) {
    return (1.0 - r.frac) * img(r.lo, c) + r.frac * img(r.lo + 1, c);
}

double sample(const Image& img, double pr, double pc) {
    const Cell r = locate(pr, img.height());
    const Cell c = locate(pc, img.width());
    return (1.0 - r.frac) * lerp_cols(img, r.lo, c) + r.frac * lerp_cols(img, r.lo + 1, c);
}

// Slope of the clamped piecewise-linear interpolant along one axis. `cell_slope(k)`
// returns the slope inside cell [k, k + 1] for 0 <= k <= n - 2.
template <typename CellSlope>
double axis_slope(double p, int n, CellSlope&& cell_slope) {
    if (p < 0.0 || p > static_cast<double>(n - 1)) return 0.0;
    const double fl = std::floor(p);
    const int k = static_cast<int>(fl);
    if (p == fl) {
        const double left = k - 1 >= 0 ? cell_slope(k - 1) : 0.0;
        const double right = k <= n - 2 ? cell_slope(k) : 0.0;
        return 0.5 * (left + right);
    }
    return cell_slope(k);
}

double slope_row(const Image& img, double pr, double pc) {
    const Cell c = locate(pc, img.width());
    return axis_slope(pr, img.height(), [&](int k) { return lerp_cols(img, k + 1, c) - lerp_cols(img, k, c); });
}

double slope_col(const Image& img, double pr, double pc) {
    const Cell r = locate(pr, img.height());
    return axis_slope(pc, img.width(), [&](int k) { return lerp_rows(img, r, k + 1) - lerp_rows(img, r, k); });
}

double diff_row(const Plane<double>& f, int r, int c) {
    const int h = f.height();
    return r < h - 1 ? f(r + 1, c) - f(r, c) : f(h - 1, c) - f(h - 2, c);
}

double diff_col(const Plane<double>& f, int r, int c) {
    const int w = f.width();
    return c < w - 1 ? f(r, c + 1) - f(r, c) : f(r, w - 1) - f(r, w - 2);
}

void diff_row_adjoint(const Plane<double>& g, Plane<double>& out) {
    const int h = g.height();
    for (int r = 0; r < h; ++r) {
        const int hi = r < h - 1 ? r + 1 : h - 1;
        const int lo = hi - 1;
        for (int c = 0; c < g.width(); ++c) {
            out(hi, c) += g(r, c);
            out(lo, c) -= g(r, c);
        }
    }
}

void diff_col_adjoint(const Plane<double>& g, Plane<double>& out) {
    const int w = g.width();
    for (int r = 0; r < g.height(); ++r) {
        for (int c = 0; c < w; ++c) {
            const int hi = c < w - 1 ? c + 1 : w - 1;
            out(r, hi) += g(r, c);
            out(r, hi - 1) -= g(r, c);
        }
    }
}

}  // namespace

VectorField identity_grid(GridShape shape) {
    validate(shape);
    VectorField grid(shape);
    for (int r = 0; r < shape.height; ++r) {
        for (int c = 0; c < shape.width; ++c) {
            grid.row(r, c) = r;
            grid.col(r, c) = c;
        }
    }
    return grid;
}

Image warp_image(const Image& img, const DisplacementField& disp) {
    require_same_shape(img.shape(), disp.shape(), "warp_image");
    Image out(img.shape());
    for (int r = 0; r < img.height(); ++r) {
        for (int c = 0; c < img.width(); ++c) {
            out(r, c) = sample(img, r + disp.row(r, c), c + disp.col(r, c));
        }
    }
    return out;
}

DisplacementField warp_image_disp_backward(const Image& img, const DisplacementField& disp, const Image& upstream) {
    require_same_shape(img.shape(), disp.shape(), "warp_image_backward");
    require_same_shape(img.shape(), upstream.shape(), "warp_image_backward upstream");
    DisplacementField grad(img.shape());
    for (int r = 0; r < img.height(); ++r) {
        for (int c = 0; c < img.width(); ++c) {
            const double g = upstream(r, c);
            if (g == 0.0) continue;
            const double pr = r + disp.row(r, c);
            const double pc = c + disp.col(r, c);
            grad.row(r, c) = g * slope_row(img, pr, pc);
            grad.col(r, c) = g * slope_col(img, pr, pc);
        }
    }
    return grad;
}

WarpGradients warp_image_backward(const Image& img, const DisplacementField& disp, const Image& upstream) {
    WarpGradients out{Image(img.shape()), warp_image_disp_backward(img, disp, upstream)};
    for (int r = 0; r < img.height(); ++r) {
        for (int c = 0; c < img.width(); ++c) {
            const double g = upstream(r, c);
            const Cell cr = locate(r + disp.row(r, c), img.height());
            const Cell cc = locate(c + disp.col(r, c), img.width());
            out.image(cr.lo, cc.lo) += g * (1.0 - cr.frac) * (1.0 - cc.frac);
            out.image(cr.lo, cc.lo + 1) += g * (1.0 - cr.frac) * cc.frac;
            out.image(cr.lo + 1, cc.lo) += g * cr.frac * (1.0 - cc.frac);
            out.image(cr.lo + 1, cc.lo + 1) += g * cr.frac * cc.frac;
        }
    }
    return out;
}

LabelMap warp_labels(const LabelMap& labels, const DisplacementField& disp) {
    require_same_shape(labels.shape(), disp.shape(), "warp_labels");
    const int h = labels.height();
    const int w = labels.width();
    LabelMap out(labels.shape());
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            const long rr = std::clamp(std::lround(r + disp.row(r, c)), 0L, static_cast<long>(h - 1));
            const long cc = std::clamp(std::lround(c + disp.col(r, c)), 0L, static_cast<long>(w - 1));
            out(r, c) = labels(static_cast<int>(rr), static_cast<int>(cc));
        }
    }
    return out;
}

DisplacementGradient displacement_gradient(const DisplacementField& disp) {
    const GridShape s = disp.shape();
    DisplacementGradient g{Plane<double>(s), Plane<double>(s), Plane<double>(s), Plane<double>(s)};
    for (int r = 0; r < s.height; ++r) {
        for (int c = 0; c < s.width; ++c) {
            g.drow_drow(r, c) = diff_row(disp.row, r, c);
            g.drow_dcol(r, c) = diff_col(disp.row, r, c);
            g.dcol_drow(r, c) = diff_row(disp.col, r, c);
            g.dcol_dcol(r, c) = diff_col(disp.col, r, c);
        }
    }
    return g;
}

DisplacementField displacement_gradient_adjoint(const DisplacementGradient& upstream) {
    DisplacementField out(upstream.drow_drow.shape());
    diff_row_adjoint(upstream.drow_drow, out.row);
    diff_col_adjoint(upstream.drow_dcol, out.row);
    diff_row_adjoint(upstream.dcol_drow, out.col);
    diff_col_adjoint(upstream.dcol_dcol, out.col);
    return out;
}

ScalarField jacobian_determinant(const DisplacementField& disp) {
    const DisplacementGradient g = displacement_gradient(disp);
    ScalarField det(disp.shape());
    for (std::size_t i = 0; i < det.size(); ++i) {
        det[i] = (1.0 + g.drow_drow[i]) * (1.0 + g.dcol_dcol[i]) - g.drow_dcol[i] * g.dcol_drow[i];
    }
    return det;
}

LogJacobianStats log_jacobian_std(const DisplacementField& disp) {
    const ScalarField det = jacobian_determinant(disp);
    LogJacobianStats stats;
    double sum = 0.0;
    double sum_sq = 0.0;
    std::size_t negative = 0;
    for (double d : det.values()) {
        if (d <= 0.0) ++negative;
        if (d > kDetFloor) {
            const double l = std::log(d);
            sum += l;
            sum_sq += l * l;
            ++stats.used_pixels;
        }
    }
    if (stats.used_pixels == 0) {
        throw NumericalError("log_jacobian_std: no pixel has a positive Jacobian determinant");
    }
    const double n = static_cast<double>(stats.used_pixels);
    const double mean = sum / n;
    stats.std_log_det = std::sqrt(std::max(0.0, sum_sq / n - mean * mean));
    stats.negative_fraction = static_cast<double>(negative) / static_cast<double>(det.size());
    return stats;
}

VectorField image_spatial_gradient(const Image& img) {
    const int h = img.height();
    const int w = img.width();
    VectorField g(img.shape());
    for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
            if (r == 0) g.row(r, c) = img(1, c) - img(0, c);
            else if (r == h - 1) g.row(r, c) = img(h - 1, c) - img(h - 2, c);
            else g.row(r, c) = 0.5 * (img(r + 1, c) - img(r - 1, c));

            if (c == 0) g.col(r, c) = img(r, 1) - img(r, 0);
            else if (c == w - 1) g.col(r, c) = img(r, w - 1) - img(r, w - 2);
            else g.col(r, c) = 0.5 * (img(r, c + 1) - img(r, c - 1));
        }
    }
    return g;
}

DisplacementField invert_displacement(const DisplacementField& disp, int iterations) {
    DisplacementField inv(disp.shape());
    for (int it = 0; it < iterations; ++it) {
        DisplacementField next(disp.shape());
        for (int r = 0; r < disp.shape().height; ++r) {
            for (int c = 0; c < disp.shape().width; ++c) {
                const double pr = r + inv.row(r, c);
                const double pc = c + inv.col(r, c);
                next.row(r, c) = -sample(disp.row, pr, pc);
                next.col(r, c) = -sample(disp.col, pr, pc);
            }
        }
        inv = std::move(next);
    }
    return inv;
}

double mean_endpoint_error(const DisplacementField& a, const DisplacementField& b) {
    require_same_shape(a.shape(), b.shape(), "mean_endpoint_error");
    double sum = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sum += std::hypot(a.row[i] - b.row[i], a.col[i] - b.col[i]);
    }
    return sum / static_cast<double>(a.size());
}

double max_magnitude(const DisplacementField& disp) {
    double m = 0.0;
    for (std::size_t i = 0; i < disp.size(); ++i) m = std::max(m, std::hypot(disp.row[i], disp.col[i]));
    return m;
}

double mean_magnitude(const DisplacementField& disp) {
    double s = 0.0;
    for (std::size_t i = 0; i < disp.size(); ++i) s += std::hypot(disp.row[i], disp.col[i]);
    return s / static_cast<double>(disp.size());
}

DisplacementField operator+(const DisplacementField& a, const DisplacementField& b) {
    require_same_shape(a.shape(), b.shape(), "displacement sum");
    DisplacementField out = a;
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.row[i] += b.row[i];
        out.col[i] += b.col[i];
    }
    return out;
}

DisplacementField operator*(double s, const DisplacementField& a) {
    DisplacementField out = a;
    for (std::size_t i = 0; i < a.size(); ++i) {
        out.row[i] *= s;
        out.col[i] *= s;
    }
    return out;
}

}  // namespace riir
