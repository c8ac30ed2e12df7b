#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ddcal/tensor.hpp"

namespace ddcal {

/// Per-feature affine map applied by normalize_dataset, kept for test data.
struct Normalization {
    std::vector<double> mean;
    std::vector<double> std;
};

/// N examples (rows of an N x D matrix) with integer labels in [0, K).
struct LabeledDataset {
    std::string name;
    Tensor examples{Shape{0, 0}};
    std::vector<int> labels;
    int num_classes = 0;
    /// Logical per-example shape, e.g. {C, H, W}; product equals D.
    Shape example_shape;
    std::optional<Normalization> normalization;

    std::size_t size() const noexcept { return labels.size(); }
    std::size_t dims() const { return examples.rank() == 2 ? examples.dim(1) : 0; }
    std::vector<std::size_t> class_counts() const;
    std::vector<std::size_t> indices_of(int label) const;
    LabeledDataset subset(std::span<const std::size_t> idx) const;
    /// Throws UsageError on any broken invariant (label range, row count, shape product).
    void validate() const;
};

/// Appends the rows of `b` to `a`; both must agree on dims and class count.
LabeledDataset concat(const LabeledDataset& a, const LabeledDataset& b);

/// MNIST-style IDX pair: images (magic 0x00000803) and labels (0x00000801).
/// Pixels are scaled to [0, 1].
LabeledDataset load_idx(const std::filesystem::path& images, const std::filesystem::path& labels,
                        int num_classes = 10);
/// Writes an IDX pair from a dataset whose values lie in [0, 1] (rounded to bytes).
void save_idx(const LabeledDataset& ds, std::size_t rows, std::size_t cols,
              const std::filesystem::path& images, const std::filesystem::path& labels);

/// CIFAR-10 binary batch: 3073-byte records (label, 3x32x32 channel-major pixels).
LabeledDataset load_cifar10_bin(const std::filesystem::path& path);
void save_cifar10_bin(const LabeledDataset& ds, const std::filesystem::path& path);

struct BlobSpec {
    int classes = 3;
    std::size_t per_class = 100;
    std::size_t dims = 32;
    double spread = 1.0;
    /// Standard deviation of each center coordinate.
    double center_scale = 1.0;
    std::uint64_t seed = 0;
};

/// Isotropic Gaussian clusters around seeded centers placed at least 4 * spread
/// apart. Throws ConfigError if placement fails 1000 times.
LabeledDataset gen_blobs(const BlobSpec& spec);

/// Samples from the same class centers as `train` (same spec, different draw seed).
LabeledDataset gen_blobs_split(const BlobSpec& spec, std::uint64_t draw_seed);

struct SplitSpec {
    double fraction = 0.1;
    bool per_class = true;
    std::uint64_t seed = 0;
};

/// Returns (validation, remainder). Per-class mode takes ceil(fraction * n_c) of
/// every class. When no class has more than one example, both outputs are the
/// full set.
std::pair<LabeledDataset, LabeledDataset> split_per_class(const LabeledDataset& ds, const SplitSpec& spec);

/// Standardizes each feature (std floor 1e-8). Throws UsageError if already normalized.
LabeledDataset normalize_dataset(const LabeledDataset& ds);
/// Applies a stored normalization to another split (e.g. test data).
LabeledDataset apply_normalization(const LabeledDataset& ds, const Normalization& norm);

}  // namespace ddcal
