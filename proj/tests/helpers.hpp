#pragma once

#include <cmath>
#include <cstdint>

#include "riir/field.hpp"
#include "riir/grid.hpp"
#include "riir/random.hpp"
#include "riir/synth.hpp"

namespace riir::test {

inline Image random_image(GridShape shape, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
    Rng rng(seed);
    Image img(shape);
    for (auto& v : img.values()) v = rng.uniform(lo, hi);
    return img;
}

// Random field smoothed so values vary slowly, scaled to `amplitude`.
inline Image smooth_image(GridShape shape, std::uint64_t seed, double sigma = 2.0) {
    Image img = gaussian_smooth(random_image(shape, seed), sigma);
    double lo = img[0], hi = img[0];
    for (double v : img.values()) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    for (auto& v : img.values()) v = (v - lo) / (hi - lo);
    return img;
}

inline DisplacementField random_field(GridShape shape, std::uint64_t seed, double amplitude) {
    Rng rng(seed);
    DisplacementField u(shape);
    for (auto& v : u.row.values()) v = rng.uniform(-amplitude, amplitude);
    for (auto& v : u.col.values()) v = rng.uniform(-amplitude, amplitude);
    return u;
}

// Components in +-[0.1, 0.9]: sample positions stay away from the integer
// grid, where bilinear warping is not differentiable.
inline DisplacementField kink_free_field(GridShape shape, std::uint64_t seed) {
    Rng rng(seed);
    DisplacementField u(shape);
    for (auto* p : {&u.row, &u.col}) {
        for (auto& v : p->values()) v = (rng.uniform() < 0.5 ? -1.0 : 1.0) * rng.uniform(0.1, 0.9);
    }
    return u;
}

inline DisplacementField constant_field(GridShape shape, double dr, double dc) {
    return {Plane<double>(shape, dr), Plane<double>(shape, dc)};
}

inline double max_abs_diff(const Plane<double>& a, const Plane<double>& b) {
    double m = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

}  // namespace riir::test
