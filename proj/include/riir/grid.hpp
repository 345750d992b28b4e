#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "riir/errors.hpp"

namespace riir {

struct GridShape {
    int height = 0;
    int width = 0;

    std::size_t size() const { return static_cast<std::size_t>(height) * static_cast<std::size_t>(width); }
    bool operator==(const GridShape&) const = default;
};

// Throws std::invalid_argument unless height >= 2 and width >= 2.
void validate(const GridShape& shape);
std::string to_string(const GridShape& shape);
void require_same_shape(const GridShape& a, const GridShape& b, const char* what);

// Dense row-major 2D array of one scalar per pixel.
template <typename T>
class Plane {
public:
    using value_type = T;

    Plane() = default;
    explicit Plane(GridShape shape, T fill = T{}) : shape_(shape), values_(shape.size(), fill) { validate(shape); }
    Plane(GridShape shape, std::vector<T> values) : shape_(shape), values_(std::move(values)) {
        validate(shape);
        if (values_.size() != shape.size()) {
            throw ShapeError("plane value count does not match shape " + to_string(shape));
        }
    }

    const GridShape& shape() const { return shape_; }
    int height() const { return shape_.height; }
    int width() const { return shape_.width; }
    std::size_t size() const { return values_.size(); }

    T& operator()(int r, int c) { return values_[index(r, c)]; }
    const T& operator()(int r, int c) const { return values_[index(r, c)]; }
    T& operator[](std::size_t i) { return values_[i]; }
    const T& operator[](std::size_t i) const { return values_[i]; }

    std::vector<T>& values() { return values_; }
    const std::vector<T>& values() const { return values_; }

    bool operator==(const Plane&) const = default;

private:
    std::size_t index(int r, int c) const {
        return static_cast<std::size_t>(r) * static_cast<std::size_t>(shape_.width) + static_cast<std::size_t>(c);
    }

    GridShape shape_{};
    std::vector<T> values_;
};

using Image = Plane<double>;
using ScalarField = Plane<double>;
using LabelMap = Plane<std::uint16_t>;

// Two-component per-pixel vector, ordered (row, column). Used both for
// displacements u(x) in pixel units and for spatial gradients.
struct VectorField {
    Plane<double> row;
    Plane<double> col;

    VectorField() = default;
    explicit VectorField(GridShape shape) : row(shape), col(shape) {}
    VectorField(Plane<double> r, Plane<double> c) : row(std::move(r)), col(std::move(c)) {
        require_same_shape(row.shape(), col.shape(), "vector field components");
    }

    const GridShape& shape() const { return row.shape(); }
    std::size_t size() const { return row.size(); }
    bool operator==(const VectorField&) const = default;
};

using DisplacementField = VectorField;

bool all_finite(const Image& img);
bool all_finite(const VectorField& field);

}  // namespace riir
