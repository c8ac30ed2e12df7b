#pragma once

#include <span>

#include "ddcal/autodiff.hpp"

namespace ddcal {

/// Mean cross entropy of (B x K) logits against integer labels.
Var loss_ce(const Var& logits, std::span<const int> labels);

/// Mean cross entropy against a (B x K) matrix of soft targets.
Var loss_soft_ce(const Var& logits, const Tensor& targets);

/// Mean of -(1 - p)^gamma * log p, p the softmax probability of the true class.
Var focal_loss(const Var& logits, std::span<const int> labels, double gamma);

}  // namespace ddcal
