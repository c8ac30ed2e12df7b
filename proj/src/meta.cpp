#include "ddcal/meta.hpp"

#include <cmath>

#include "ddcal/error.hpp"

namespace ddcal {

Tensor fd_grad(const std::function<double(const Tensor&)>& f, const Tensor& x, double h) {
    if (!(h > 0.0)) throw UsageError("fd_grad: step must be positive");
    Tensor g(x.shape());
    Tensor probe = x;
    for (std::size_t i = 0; i < x.size(); ++i) {
        probe[i] = x[i] + h;
        const double up = f(probe);
        probe[i] = x[i] - h;
        const double down = f(probe);
        probe[i] = x[i];
        if (!std::isfinite(up) || !std::isfinite(down))
            throw NumericError("fd_grad: non-finite function value at coordinate " + std::to_string(i));
        g[i] = (up - down) / (2.0 * h);
    }
    return g;
}

MetaGradResult meta_grad(const MetaFunctional& criterion, const Tensor& synthetic) {
    Var s = leaf(synthetic);
    Var c = criterion(s);
    const Var wrt[] = {s};
    return {grad_values(c, wrt)[0], false};
}

MetaGradResult meta_grad_fd(const MetaFunctional& criterion, const Tensor& synthetic, double h) {
    KinkMonitor monitor(h);
    Tensor g = fd_grad(
        [&](const Tensor& probe) {
            // Parameters inside the criterion are still tracked leaves, so keep
            // grad mode on: the criterion may itself call grad().
            Var s = constant(probe);
            return criterion(s).value().item();
        },
        synthetic, h);
    return {std::move(g), monitor.hit()};
}

std::vector<Var> unroll_sgd(std::vector<Var> params, int steps, double lr, const StepLoss& loss) {
    if (steps < 1) throw UsageError("unroll_sgd: need at least one step");
    for (int t = 0; t < steps; ++t) {
        Var l = loss(params, t);
        std::vector<Var> g = grad(l, params, true);
        for (std::size_t i = 0; i < params.size(); ++i) params[i] = ops::sub(params[i], ops::scale(g[i], lr));
    }
    return params;
}

}  // namespace ddcal
