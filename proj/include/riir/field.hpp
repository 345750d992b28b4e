#pragma once

#include "riir/grid.hpp"

namespace riir {

// Entry (r, c) holds the coordinate pair (r, c).
VectorField identity_grid(GridShape shape);

// Backward-mapping bilinear resampling: out(x) = img(x + u(x)), sample
// coordinates clamped to the image border.
Image warp_image(const Image& img, const DisplacementField& disp);

struct WarpGradients {
    Image image;               // d loss / d img
    DisplacementField disp;    // d loss / d u
};

// Vector-Jacobian product of warp_image. `upstream` is d loss / d output.
// At exactly integer sample coordinates the sampling slope is the mean of
// the two adjacent cells, which equals the central difference.
WarpGradients warp_image_backward(const Image& img, const DisplacementField& disp, const Image& upstream);

// Same as warp_image_backward but only the displacement part.
DisplacementField warp_image_disp_backward(const Image& img, const DisplacementField& disp, const Image& upstream);

// Nearest-neighbour resampling with border clamping.
LabelMap warp_labels(const LabelMap& labels, const DisplacementField& disp);

// Forward differences of u, backward differences on the last row/column.
struct DisplacementGradient {
    Plane<double> drow_drow;  // d u_row / d row
    Plane<double> drow_dcol;  // d u_row / d col
    Plane<double> dcol_drow;
    Plane<double> dcol_dcol;
};

DisplacementGradient displacement_gradient(const DisplacementField& disp);

// Adjoint of displacement_gradient.
DisplacementField displacement_gradient_adjoint(const DisplacementGradient& upstream);

// det(I + grad u) per pixel.
ScalarField jacobian_determinant(const DisplacementField& disp);

struct LogJacobianStats {
    double std_log_det = 0.0;
    double negative_fraction = 0.0;  // fraction of pixels with det <= 0
    std::size_t used_pixels = 0;     // pixels with det > kDetFloor
};

inline constexpr double kDetFloor = 1e-6;

LogJacobianStats log_jacobian_std(const DisplacementField& disp);

// Central differences in the interior, one-sided at the border.
VectorField image_spatial_gradient(const Image& img);

// Fixed-point inverse v(x) = -u(x + v(x)); warp(warp(I, v), u) ~ I.
DisplacementField invert_displacement(const DisplacementField& disp, int iterations = 30);

// Mean over pixels of |a(x) - b(x)|.
double mean_endpoint_error(const DisplacementField& a, const DisplacementField& b);
double max_magnitude(const DisplacementField& disp);
double mean_magnitude(const DisplacementField& disp);

DisplacementField operator+(const DisplacementField& a, const DisplacementField& b);
DisplacementField operator*(double s, const DisplacementField& a);

}  // namespace riir
