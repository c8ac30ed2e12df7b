#include "ddcal/losses.hpp"

#include <memory>

#include "ddcal/error.hpp"

namespace ddcal {

namespace {

Var true_class_entries(const Var& m, std::span<const int> labels) {
    if (m.shape().size() != 2 || m.shape()[0] != labels.size())
        throw DimensionError("loss: logits " + shape_str(m.shape()) + " vs " + std::to_string(labels.size()) +
                             " labels");
    const std::size_t k = m.shape()[1];
    std::vector<std::int64_t> idx(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
            throw UsageError("loss: label " + std::to_string(labels[i]) + " outside [0, K)");
        idx[i] = static_cast<std::int64_t>(i * k) + labels[i];
    }
    return ops::gather(m, std::make_shared<const std::vector<std::int64_t>>(std::move(idx)), Shape{labels.size()});
}

}  // namespace

Var loss_ce(const Var& logits, std::span<const int> labels) {
    if (labels.empty()) throw UsageError("loss_ce: empty batch");
    return ops::neg(ops::mean(true_class_entries(ops::log_softmax(logits), labels)));
}

Var loss_soft_ce(const Var& logits, const Tensor& targets) {
    if (targets.shape() != logits.shape())
        throw DimensionError("loss_soft_ce: targets " + shape_str(targets.shape()) + " vs logits " +
                             shape_str(logits.shape()));
    if (logits.shape()[0] == 0) throw UsageError("loss_soft_ce: empty batch");
    return ops::scale(ops::sum(ops::mul(ops::log_softmax(logits), constant(targets))),
                      -1.0 / static_cast<double>(logits.shape()[0]));
}

Var focal_loss(const Var& logits, std::span<const int> labels, double gamma) {
    if (gamma < 0.0) throw UsageError("focal_loss: gamma must be non-negative");
    if (labels.empty()) throw UsageError("focal_loss: empty batch");
    Var logp = true_class_entries(ops::log_softmax(logits), labels);
    if (gamma == 0.0) return ops::neg(ops::mean(logp));
    Var one_minus_p = ops::add_scalar(ops::neg(ops::exp(logp)), 1.0);
    return ops::neg(ops::mean(ops::mul(ops::pow(one_minus_p, gamma), logp)));
}

}  // namespace ddcal
