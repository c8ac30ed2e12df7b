#pragma once

#include <functional>
#include <span>
#include <vector>

#include "ddcal/autodiff.hpp"

namespace ddcal {

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every coordinate.
/// Throws NumericError if f is non-finite at any probe.
Tensor fd_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

/// A scalar criterion built from the synthetic tensor, e.g. a gradient-matching
/// distance or the endpoint error of an SGD unroll.
using MetaFunctional = std::function<Var(const Var& synthetic)>;

struct MetaGradResult {
    Tensor gradient;
    /// Set by the finite-difference path when a ReLU pre-activation came within
    /// h of zero, i.e. the probe may have straddled a kink.
    bool near_kink = false;
};

/// Exact dC/dS by differentiating through the gradient computations inside `criterion`.
MetaGradResult meta_grad(const MetaFunctional& criterion, const Tensor& synthetic);

/// Finite-difference reference for meta_grad.
MetaGradResult meta_grad_fd(const MetaFunctional& criterion, const Tensor& synthetic, double h = 1e-5);

/// Per-step loss of an unroll: (current parameters, step index) -> scalar.
using StepLoss = std::function<Var(std::span<const Var> params, int step)>;

/// `steps` plain SGD steps theta <- theta - lr * grad(loss), recorded so the
/// endpoint can be differentiated with respect to anything the loss reads.
/// Throws UsageError when steps < 1.
std::vector<Var> unroll_sgd(std::vector<Var> params, int steps, double lr, const StepLoss& loss);

}  // namespace ddcal
