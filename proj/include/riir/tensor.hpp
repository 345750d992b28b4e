#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include <Eigen/Core>

namespace riir {

// Channel-major stack of 2D maps: data[c][r][col].
template <typename T>
struct FeatureMap {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;

    FeatureMap() = default;
    FeatureMap(int c, int h, int w) : channels(c), height(h), width(w), data(static_cast<std::size_t>(c) * h * w, T{}) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    std::span<T> channel(int c) { return {data.data() + c * plane(), plane()}; }
    std::span<const T> channel(int c) const { return {data.data() + c * plane(), plane()}; }
    T& at(int c, int r, int col) { return data[c * plane() + static_cast<std::size_t>(r) * width + col]; }
    const T& at(int c, int r, int col) const { return data[c * plane() + static_cast<std::size_t>(r) * width + col]; }

    bool same_shape(const FeatureMap& o) const { return channels == o.channels && height == o.height && width == o.width; }
    bool operator==(const FeatureMap&) const = default;
};

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// im2col for a stride-1, zero-padded, shape-preserving k x k convolution:
// row (ci * k + ki) * k + kj holds channel ci shifted by (ki - k/2, kj - k/2).
template <typename T>
RowMatrix<T> im2col(const FeatureMap<T>& x, int k);

// im2col into an existing buffer (resized only when the shape changes).
template <typename T>
void im2col_into(const FeatureMap<T>& x, int k, RowMatrix<T>& cols);

// Inverse scatter of im2col, accumulated into dx.
template <typename T>
void col2im_add(const RowMatrix<T>& cols, int k, FeatureMap<T>& dx);

// y (+)= W * cols + b, with W laid out [cout][cin][k][k]. `bias` may be empty.
template <typename T>
void conv_from_cols(const RowMatrix<T>& cols, std::span<const T> weight, std::span<const T> bias, int cout,
                    FeatureMap<T>& y, bool accumulate);

// Parameter gradients of conv_from_cols, accumulated. Returns W^T * dy
// (the cols-gradient) when want_cols is set.
template <typename T>
RowMatrix<T> conv_backward_from_cols(const RowMatrix<T>& cols, std::span<const T> weight, int cout,
                                     const FeatureMap<T>& dy, std::span<T> dweight, std::span<T> dbias,
                                     bool want_cols);

// Same as conv_backward_from_cols but writes (or adds) d cols into `dcols`.
template <typename T>
void conv_backward_into(const RowMatrix<T>& cols, std::span<const T> weight, int cout, const FeatureMap<T>& dy,
                        std::span<T> dweight, std::span<T> dbias, RowMatrix<T>& dcols, bool accumulate);

// Convenience single-call convolution.
template <typename T>
FeatureMap<T> conv2d(const FeatureMap<T>& x, std::span<const T> weight, std::span<const T> bias, int cout, int k);

// Gradients of conv2d given d loss / d y; all outputs accumulated.
template <typename T>
void conv2d_backward(const FeatureMap<T>& x, std::span<const T> weight, int cout, int k, const FeatureMap<T>& dy,
                     std::span<T> dweight, std::span<T> dbias, FeatureMap<T>* dx);

template <typename T>
inline T sigmoid(T v) {
    return T(1) / (T(1) + std::exp(-v));
}

}  // namespace riir
