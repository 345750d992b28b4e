#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "riir/field.hpp"
#include "riir/grid.hpp"

namespace riir {

enum class SimilarityType { mse, ncc, nmi };

// Parzen kernel width in bin widths. Wider kernels cap NMI(I, I) well below 2.
inline constexpr double kNmiKernelSigma = 0.25;

// Similarity measure plus its parameters. Window is only read for NCC,
// bins/kernel_sigma only for NMI.
struct SimilarityKind {
    SimilarityType type = SimilarityType::mse;
    int window = 9;
    int bins = 32;
    double kernel_sigma = kNmiKernelSigma;  // in bin widths

    static SimilarityKind mse() { return {}; }
    static SimilarityKind ncc(int window = 9) { return {SimilarityType::ncc, window, 32, kNmiKernelSigma}; }
    static SimilarityKind nmi(int bins = 32, double kernel_sigma = kNmiKernelSigma) { return {SimilarityType::nmi, 9, bins, kernel_sigma}; }

    bool operator==(const SimilarityKind&) const = default;
};

void validate(const SimilarityKind& kind);
std::string to_string(SimilarityType type);
SimilarityType parse_similarity(const std::string& name);

// The NCC denominator is sqrt(var_a var_b) + kNccEpsilon * sd(a) * sd(b), with
// sd the global standard deviation, so NCC is invariant to affine intensity maps.
inline constexpr double kNccEpsilon = 1e-5;
inline constexpr double kNmiDensityFloor = 1e-10;

// Sum of f over the (2*half+1)^2 window around each pixel, truncated at the border.
Plane<double> window_sum(const Plane<double>& f, int half);

double mse(const Image& a, const Image& b);
double local_ncc(const Image& a, const Image& b, int window);
double nmi_parzen(const Image& a, const Image& b, int bins, double kernel_sigma);

// d metric / d a, holding b fixed.
Image mse_gradient(const Image& a, const Image& b);
Image local_ncc_gradient(const Image& a, const Image& b, int window);
Image nmi_parzen_gradient(const Image& a, const Image& b, int bins, double kernel_sigma);

// Mean over pixels of ||grad u||_F^2 with the forward-difference operator
// shared with jacobian_determinant.
double diffusion_regularizer(const DisplacementField& disp);
DisplacementField diffusion_regularizer_gradient(const DisplacementField& disp);

// Lower is better for every kind: MSE as-is, NCC and NMI negated.
double inner_loss(const SimilarityKind& kind, const Image& warped, const Image& fixed);
Image inner_loss_image_gradient(const SimilarityKind& kind, const Image& warped, const Image& fixed);

// d inner_loss(kind, warp(mov, disp), fixed) / d disp.
DisplacementField inner_loss_gradient(const SimilarityKind& kind, const Image& mov, const Image& fixed,
                                      const DisplacementField& disp);

double dice_score(const LabelMap& x, const LabelMap& y, std::span<const std::uint16_t> labels);
double dice_for_label(const LabelMap& x, const LabelMap& y, std::uint16_t label);
double hausdorff_distance(const LabelMap& x, const LabelMap& y, std::uint16_t label);
// Nonzero labels present in either map, ascending.
std::vector<std::uint16_t> foreground_labels(const LabelMap& x, const LabelMap& y);

Eigen::MatrixXd correlation_matrix(std::span<const Image> series);

struct PcaReport {
    std::vector<double> eigenvalues;  // descending
    double trace = 0.0;
    double d_pca1 = 0.0;
    double d_pca2 = 0.0;
    int L = 4;
};

PcaReport pca_divergences(const Eigen::MatrixXd& k, int L = 4);

// Keeps the central `ratio` fraction of each dimension (at least 2 pixels).
Image center_crop(const Image& img, double ratio);

inline constexpr double kPcaCropRatio = 0.70;

// correlation_matrix + pca_divergences after a center crop of every frame.
PcaReport series_pca(std::span<const Image> series, int L = 4, double crop_ratio = kPcaCropRatio);

}  // namespace riir
