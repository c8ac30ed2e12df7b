#include "ddcal/mask.hpp"

#include <algorithm>
#include <cmath>

#include "ddcal/error.hpp"

namespace ddcal {

void MaskSpec::validate() const {
    if (mode == MaskMode::fixed) {
        if (!(ratio >= 0.0 && ratio <= 1.0)) throw UsageError("mask: ratio must be in [0, 1]");
    } else if (!(lo >= 0.0 && hi <= 1.0 && lo <= hi)) {
        throw UsageError("mask: dynamic range must satisfy 0 <= lo <= hi <= 1");
    }
}

std::string describe(const MaskSpec& m) {
    if (m.mode == MaskMode::fixed) return "fixed(" + std::to_string(m.ratio) + ")";
    return "dynamic(" + std::to_string(m.lo) + "," + std::to_string(m.hi) + ")";
}

std::size_t mask_zero_count(double r, std::size_t d) {
    // The epsilon absorbs representation error of decimal ratios (0.7 * 10 etc).
    return static_cast<std::size_t>(std::floor(r * static_cast<double>(d) + 1e-9));
}

Tensor make_mask(std::size_t d, const MaskSpec& spec, Rng& rng) {
    spec.validate();
    const double r = spec.mode == MaskMode::fixed ? spec.ratio : rng.uniform(spec.lo, spec.hi);
    const std::size_t zeros = std::min(mask_zero_count(r, d), d);
    Tensor m(Shape{d}, 1.0);
    // Partial Fisher-Yates: the first `zeros` slots of a random permutation.
    std::vector<std::size_t> pos(d);
    for (std::size_t i = 0; i < d; ++i) pos[i] = i;
    for (std::size_t i = 0; i < zeros; ++i) {
        std::swap(pos[i], pos[i + rng.index(d - i)]);
        m[pos[i]] = 0.0;
    }
    return m;
}

Tensor make_mask(std::size_t d, const MaskSpec& spec) {
    Rng rng(spec.seed);
    return make_mask(d, spec, rng);
}

Tensor make_masks(std::size_t rows, std::size_t d, const MaskSpec& spec, Rng& rng) {
    Tensor out(Shape{rows, d});
    for (std::size_t i = 0; i < rows; ++i) {
        const Tensor m = make_mask(d, spec, rng);
        std::copy(m.data().begin(), m.data().end(), out.data().begin() + i * d);
    }
    return out;
}

Tensor apply_mask(const Tensor& batch, const Tensor& masks) {
    if (batch.shape() != masks.shape())
        throw DimensionError("apply_mask: batch " + shape_str(batch.shape()) + " vs masks " + shape_str(masks.shape()));
    Tensor out(batch.shape());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = batch[i] * masks[i];
    return out;
}

Var apply_mask(const Var& batch, const Tensor& masks) {
    if (batch.shape() != masks.shape())
        throw DimensionError("apply_mask: batch " + shape_str(batch.shape()) + " vs masks " + shape_str(masks.shape()));
    return ops::mul(batch, constant(masks));
}

}  // namespace ddcal
