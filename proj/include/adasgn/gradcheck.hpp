#pragma once

#include <functional>
#include <span>
#include <vector>

#include "adasgn/tape.hpp"

namespace adasgn {

struct GradCheckReport {
    std::vector<double> rel_errors;
    double max_rel_error = 0.0;
    bool passed = false;
};

// Relative error is |analytic - numeric| / max(|analytic|, |numeric|, floor);
// the floor keeps near-zero gradients from reporting round-off as error.
inline constexpr double kGradCheckFloor = 1e-4;

// Compares the tape gradient of scalar f at x against central differences.
GradCheckReport finite_diff_check(const std::function<Var(Tape&, Var)>& f, const Tensor& x, double h = 1e-6,
                                  double tol = 1e-5);

// Same check against every element of the given parameters. Parameter
// gradients are zeroed first and left holding the analytic gradient.
GradCheckReport finite_diff_check_params(const std::function<Var(Tape&)>& f, std::span<Parameter* const> params,
                                         double h = 1e-6, double tol = 1e-5);

}  // namespace adasgn
