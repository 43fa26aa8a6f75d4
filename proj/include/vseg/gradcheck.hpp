#pragma once

#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "vseg/tensor.hpp"

namespace vseg {

/// Central finite differences against an analytic gradient over the float
/// buffer `x`. `f` re-evaluates the scalar objective after `x` has been
/// perturbed in place; `x` is restored afterwards. The error is measured
///// relative to the gradient scale max(1, ||grad||inf): a per-element
/// denominator would blow up on (correctly) near-zero entries.
double max_fd_rel_err(std::span<float> x, std::span<const float> grad,
                      const std::function<double()>& f, double step = 1e-3);

/// Same, probing only the listed element indices (for large buffers).
double max_fd_rel_err_at(std::span<float> x, std::span<const float> grad,
                         const std::function<double()>& f,
                         std::span<const std::size_t> indices, double step = 1e-3);

struct GradCheckCase {
    std::string name;
    double tolerance;
    std::function<double()> run;  // returns the max relative error
};

struct GradCheckResult {
    std::string name;
    double max_rel_err = 0.0;
    double tolerance = 0.0;
    bool passed = false;
};

struct GradCheckReport {
    std::vector<GradCheckResult> results;
    bool all_passed() const;
};

/// Finite-difference suites for every layer primitive plus a whole-network
/// spot check (16x16 input, depth 2, base features 2, 20 random parameters).
std::vector<GradCheckCase> standard_gradcheck_cases(std::uint64_t seed = 20240);

GradCheckReport run_gradchecks(const std::vector<GradCheckCase>& cases);

/// Uniform random tensor in [lo, hi], all values drawn in index order.
Tensor4 uniform_tensor(Shape4 shape, std::mt19937_64& rng, float lo = -1.0f,
                       float hi = 1.0f);

}  // namespace vseg
