#include "riir/tensor.hpp"

#include <cmath>
#include <stdexcept>

namespace riir {

template <typename T>
RowMatrix<T> im2col(const FeatureMap<T>& x, int k) {
    RowMatrix<T> cols;
    im2col_into(x, k, cols);
    return cols;
}

template <typename T>
void im2col_into(const FeatureMap<T>& x, int k, RowMatrix<T>& cols) {
    const int pad = k / 2;
    const int h = x.height;
    const int w = x.width;
    cols.resize(static_cast<Eigen::Index>(x.channels) * k * k, static_cast<Eigen::Index>(x.plane()));
    for (int ci = 0; ci < x.channels; ++ci) {
        const T* src = x.data.data() + ci * x.plane();
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                T* dst = cols.row((ci * k + ki) * k + kj).data();
                const int dr = ki - pad;
                const int dc = kj - pad;
                for (int r = 0; r < h; ++r) {
                    const int sr = r + dr;
                    T* out = dst + static_cast<std::size_t>(r) * w;
                    if (sr < 0 || sr >= h) {
                        std::fill(out, out + w, T{});
                        continue;
                    }
                    const T* in = src + static_cast<std::size_t>(sr) * w;
                    const int c0 = std::max(0, -dc);
                    const int c1 = std::min(w, w - dc);
                    for (int c = 0; c < c0; ++c) out[c] = T{};
                    for (int c = c0; c < c1; ++c) out[c] = in[c + dc];
                    for (int c = c1; c < w; ++c) out[c] = T{};
                }
            }
        }
    }
}

template <typename T>
void col2im_add(const RowMatrix<T>& cols, int k, FeatureMap<T>& dx) {
    const int pad = k / 2;
    const int h = dx.height;
    const int w = dx.width;
    for (int ci = 0; ci < dx.channels; ++ci) {
        T* dst = dx.data.data() + ci * dx.plane();
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const T* src = cols.row((ci * k + ki) * k + kj).data();
                const int dr = ki - pad;
                const int dc = kj - pad;
                for (int r = 0; r < h; ++r) {
                    const int sr = r + dr;
                    if (sr < 0 || sr >= h) continue;
                    const T* in = src + static_cast<std::size_t>(r) * w;
                    T* out = dst + static_cast<std::size_t>(sr) * w;
                    const int c0 = std::max(0, -dc);
                    const int c1 = std::min(w, w - dc);
                    for (int c = c0; c < c1; ++c) out[c + dc] += in[c];
                }
            }
        }
    }
}

template <typename T>
void conv_from_cols(const RowMatrix<T>& cols, std::span<const T> weight, std::span<const T> bias, int cout,
                    FeatureMap<T>& y, bool accumulate) {
    const Eigen::Index kdim = cols.rows();
    if (weight.size() != static_cast<std::size_t>(cout * kdim)) {
        throw std::invalid_argument("conv: weight size does not match channels");
    }
    Eigen::Map<const RowMatrix<T>> wm(weight.data(), cout, kdim);
    Eigen::Map<RowMatrix<T>> ym(y.data.data(), cout, cols.cols());
    if (accumulate) {
        ym.noalias() += wm * cols;
    } else {
        ym.noalias() = wm * cols;
    }
    if (!bias.empty()) {
        for (int co = 0; co < cout; ++co) ym.row(co).array() += bias[static_cast<std::size_t>(co)];
    }
}

template <typename T>
RowMatrix<T> conv_backward_from_cols(const RowMatrix<T>& cols, std::span<const T> weight, int cout,
                                     const FeatureMap<T>& dy, std::span<T> dweight, std::span<T> dbias,
                                     bool want_cols) {
    const Eigen::Index kdim = cols.rows();
    Eigen::Map<const RowMatrix<T>> dym(dy.data.data(), cout, cols.cols());
    if (!dweight.empty()) {
        Eigen::Map<RowMatrix<T>> dw(dweight.data(), cout, kdim);
        dw.noalias() += dym * cols.transpose();
    }
    if (!dbias.empty()) {
        const std::size_t plane = static_cast<std::size_t>(cols.cols());
        for (int co = 0; co < cout; ++co) {
            const T* row = dy.data.data() + static_cast<std::size_t>(co) * plane;
            T acc = T{};
            for (std::size_t i = 0; i < plane; ++i) acc += row[i];
            dbias[static_cast<std::size_t>(co)] += acc;
        }
    }
    if (!want_cols) return {};
    Eigen::Map<const RowMatrix<T>> wm(weight.data(), cout, kdim);
    RowMatrix<T> dcols = wm.transpose() * dym;
    return dcols;
}

template <typename T>
void conv_backward_into(const RowMatrix<T>& cols, std::span<const T> weight, int cout, const FeatureMap<T>& dy,
                        std::span<T> dweight, std::span<T> dbias, RowMatrix<T>& dcols, bool accumulate) {
    conv_backward_from_cols(cols, weight, cout, dy, dweight, dbias, false);
    const Eigen::Index kdim = cols.rows();
    Eigen::Map<const RowMatrix<T>> dym(dy.data.data(), cout, cols.cols());
    Eigen::Map<const RowMatrix<T>> wm(weight.data(), cout, kdim);
    if (accumulate) {
        dcols.noalias() += wm.transpose() * dym;
    } else {
        dcols.resize(kdim, cols.cols());
        dcols.noalias() = wm.transpose() * dym;
    }
}

template <typename T>
FeatureMap<T> conv2d(const FeatureMap<T>& x, std::span<const T> weight, std::span<const T> bias, int cout, int k) {
    FeatureMap<T> y(cout, x.height, x.width);
    conv_from_cols(im2col(x, k), weight, bias, cout, y, false);
    return y;
}

template <typename T>
void conv2d_backward(const FeatureMap<T>& x, std::span<const T> weight, int cout, int k, const FeatureMap<T>& dy,
                     std::span<T> dweight, std::span<T> dbias, FeatureMap<T>* dx) {
    const RowMatrix<T> cols = im2col(x, k);
    const RowMatrix<T> dcols = conv_backward_from_cols(cols, weight, cout, dy, dweight, dbias, dx != nullptr);
    if (dx) col2im_add(dcols, k, *dx);
}

#define RIIR_INSTANTIATE(T)                                                                                       \
    template RowMatrix<T> im2col<T>(const FeatureMap<T>&, int);                                                   \
    template void im2col_into<T>(const FeatureMap<T>&, int, RowMatrix<T>&);                                       \
    template void col2im_add<T>(const RowMatrix<T>&, int, FeatureMap<T>&);                                        \
    template void conv_from_cols<T>(const RowMatrix<T>&, std::span<const T>, std::span<const T>, int,             \
                                    FeatureMap<T>&, bool);                                                        \
    template RowMatrix<T> conv_backward_from_cols<T>(const RowMatrix<T>&, std::span<const T>, int,                \
                                                     const FeatureMap<T>&, std::span<T>, std::span<T>, bool);    \
    template void conv_backward_into<T>(const RowMatrix<T>&, std::span<const T>, int, const FeatureMap<T>&,       \
                                        std::span<T>, std::span<T>, RowMatrix<T>&, bool);                         \
    template FeatureMap<T> conv2d<T>(const FeatureMap<T>&, std::span<const T>, std::span<const T>, int, int);     \
    template void conv2d_backward<T>(const FeatureMap<T>&, std::span<const T>, int, int, const FeatureMap<T>&,    \
                                     std::span<T>, std::span<T>, FeatureMap<T>*);

RIIR_INSTANTIATE(float)
RIIR_INSTANTIATE(double)
#undef RIIR_INSTANTIATE

}  // namespace riir
