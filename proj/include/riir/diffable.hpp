#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace riir {

// Dense double-precision array used by the primitive registry.
struct Tensor {
    std::vector<int> shape;
    std::vector<double> data;

    static Tensor zeros(std::vector<int> shape);
    std::size_t size() const { return data.size(); }
};

class Rng;

// One differentiable building block: forward value and the vector-Jacobian
// product (gradient of a downstream scalar with respect to each input).
struct DifferentiablePrimitive {
    std::string name;
    int arity = 1;
    std::string forward_contract;
    std::string backward_contract;
    std::function<Tensor(std::span<const Tensor>)> forward;
    std::function<std::vector<Tensor>(std::span<const Tensor>, const Tensor&)> backward;
    // Random inputs inside the primitive's smooth domain.
    std::function<std::vector<Tensor>(Rng&)> sample_inputs;
};

std::vector<DifferentiablePrimitive> required_primitives();

struct GradientCheckReport {
    std::string name;
    double max_relative_error = 0.0;  // max_i |a_i - n_i| / max(1, |a_i|, |n_i|)
    double relative_l2_error = 0.0;   // ||a - n|| / max(||n||, 1e-300), over checked coordinates
    double tolerance = 0.0;
    std::size_t checked = 0;
    bool pass = false;
};

struct DifferentiableFunction {
    std::function<double(std::span<const double>)> value;
    std::function<std::vector<double>(std::span<const double>)> gradient;
};

// Central differences (f(x + h) - f(x - h)) / 2h against the analytic gradient.
// When max_coordinates > 0 and the input is larger, a seeded random subset of
// max(64, max_coordinates) coordinates is checked.
GradientCheckReport check_gradient(const std::string& name, const DifferentiableFunction& fn,
                                   std::span<const double> point, double step, double tolerance,
                                   std::size_t max_coordinates = 0, std::uint64_t seed = 0);

// Checks one primitive on random inputs through a random linear projection of
// its output.
GradientCheckReport check_primitive(const DifferentiablePrimitive& prim, std::uint64_t seed, double step = 1e-6,
                                    double tolerance = 1e-5);

}  // namespace riir
