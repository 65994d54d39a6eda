#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ito/autodiff.hpp"

namespace ito {

struct GradCheckReport {
    double max_rel_error = 0.0;
    std::size_t worst_input = 0;
    std::size_t worst_index = 0;
    double analytic = 0.0;
    double numeric = 0.0;
    std::size_t coordinates_checked = 0;
};

// Relative error used throughout: |g_ad - g_fd| / max(1, |g_fd|).
double relative_error(double analytic, double numeric);

using ScalarFn = std::function<Var(const std::vector<Var>& inputs)>;

// Compares reverse-mode gradients of f at `point` with central differences of step h.
// When max_coords > 0, at most that many coordinates per input are sampled (seeded).
GradCheckReport grad_check(const ScalarFn& f, const std::vector<Tensor>& point, double h,
                           std::size_t max_coords = 0, std::uint64_t seed = 0);

// Same check over existing leaves (e.g. model parameters) whose values are
// perturbed in place and restored. f must read the leaves' current values.
GradCheckReport grad_check_leaves(const std::function<Var()>& f, std::span<Var> leaves, double h,
                                  std::size_t max_coords = 0, std::uint64_t seed = 0);

// One primitive op applied to random inputs drawn uniformly from [lo, hi].
struct OpCase {
    std::string name;
    std::vector<Dims> input_dims;
    std::function<Var(const std::vector<Var>&)> op;
    double lo = -1.0, hi = 1.0;
};

// Covers every differentiable primitive, including broadcasting variants.
std::vector<OpCase> primitive_op_cases();
// Seeded random point, output contracted with seeded random weights, h = 1e-5.
GradCheckReport check_op_case(const OpCase& c, std::uint64_t trial);

}  // namespace ito
