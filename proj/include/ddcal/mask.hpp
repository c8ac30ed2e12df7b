#pragma once

#include <cstdint>
#include <string>

#include "ddcal/autodiff.hpp"
#include "ddcal/rng.hpp"

namespace ddcal {

enum class MaskMode { fixed, dynamic_uniform };

/// Binary zero-mask configuration. A fixed mask with ratio r zeroes exactly
/// floor(r * D) coordinates per example; dynamic mode first draws r from
/// Uniform(lo, hi) for every mask.
struct MaskSpec {
    double ratio = 0.0;
    MaskMode mode = MaskMode::fixed;
    double lo = 0.0;
    double hi = 0.1;
    std::uint64_t seed = 0;

    static MaskSpec fixed(double r, std::uint64_t seed = 0) { return {r, MaskMode::fixed, 0.0, 0.1, seed}; }
    static MaskSpec dynamic(double lo, double hi, std::uint64_t seed = 0) {
        return {0.0, MaskMode::dynamic_uniform, lo, hi, seed};
    }

    /// True when masking cannot change anything (fixed mode, r = 0). Masked code
    /// paths skip the multiply entirely in that case.
    bool is_identity() const noexcept { return mode == MaskMode::fixed && ratio == 0.0; }
    void validate() const;
};

std::string describe(const MaskSpec& m);

/// Number of zeros a mask of length d with ratio r carries.
std::size_t mask_zero_count(double r, std::size_t d);

/// One mask of length D drawn from `rng`.
Tensor make_mask(std::size_t d, const MaskSpec& spec, Rng& rng);
/// Convenience: seeds a fresh generator from spec.seed.
Tensor make_mask(std::size_t d, const MaskSpec& spec);
/// (rows x D) matrix of independent masks.
Tensor make_masks(std::size_t rows, std::size_t d, const MaskSpec& spec, Rng& rng);

/// Elementwise product of a (B x D) batch with (B x D) masks.
Tensor apply_mask(const Tensor& batch, const Tensor& masks);
Var apply_mask(const Var& batch, const Tensor& masks);

}  // namespace ddcal
