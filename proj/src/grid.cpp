#include "riir/grid.hpp"

#include <cmath>

namespace riir {

void validate(const GridShape& shape) {
    if (shape.height < 2 || shape.width < 2) {
        throw std::invalid_argument("grid shape must be at least 2x2, got " + to_string(shape));
    }
}

std::string to_string(const GridShape& shape) {
    return std::to_string(shape.height) + "x" + std::to_string(shape.width);
}

void require_same_shape(const GridShape& a, const GridShape& b, const char* what) {
    if (!(a == b)) {
        throw ShapeError(std::string(what) + ": shape mismatch " + to_string(a) + " vs " + to_string(b));
    }
}

bool all_finite(const Image& img) {
    for (double v : img.values()) {
        if (!std::isfinite(v)) return false;
    }
    return true;
}

bool all_finite(const VectorField& field) { return all_finite(field.row) && all_finite(field.col); }

}  // namespace riir
