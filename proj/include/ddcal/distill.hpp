#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ddcal/autodiff.hpp"
#include "ddcal/data.hpp"
#include "ddcal/mask.hpp"
#include "ddcal/nets.hpp"

namespace ddcal {

/// Learnable distilled examples. Labels are fixed at construction: `ipc`
/// consecutive rows per class, in class order.
struct SyntheticSet {
    Tensor images;
    std::vector<int> labels;
    int num_classes = 0;
    std::size_t ipc = 0;
    std::size_t steps = 0;
    Shape example_shape;

    std::size_t rows_of_class(int c) const { return static_cast<std::size_t>(c) * ipc; }
    LabeledDataset as_dataset(std::string name = "synthetic") const;
};

/// Rows of each class initialized from `ipc` distinct real examples of that class.
SyntheticSet init_synthetic(const LabeledDataset& ds, std::size_t ipc, std::uint64_t seed);

/// Which batch the gradient-matching mask is applied to. The synthetic batch is
/// the default; `real` reproduces the alternative reading of the algorithm listing.
enum class MaskPlacement { synthetic, real };

/// || grad_theta l(theta; real) - grad_theta l(theta; masked synthetic) ||_2 over
/// all parameter gradients concatenated. `params` must be tracked leaves.
/// `masks`, when given, has the shape of the batch it applies to.
Var dc_loss(const NetSpec& spec, std::span<const Var> params, const Tensor& real, std::span<const int> real_labels,
            const Var& synthetic, std::span<const int> synthetic_labels, const Tensor* masks = nullptr,
            MaskPlacement placement = MaskPlacement::synthetic);

struct DcConfig {
    NetSpec net{};
    std::size_t ipc = 10;
    std::size_t steps = 200;
    double synthetic_lr = 0.1;
    std::size_t real_batch = 64;
    /// theta is re-drawn every this many outer steps.
    std::size_t reinit_every = 50;
    std::size_t net_steps = 1;
    double net_lr = 0.01;
    std::optional<MaskSpec> mask{};
    MaskPlacement placement = MaskPlacement::synthetic;
    std::uint64_t seed = 0;
};

/// Gradient-matching distillation, optionally with masked distillation training.
SyntheticSet distill_dc(const LabeledDataset& ds, const DcConfig& config);

/// Parameter snapshots of full-data training taken every `interval` SGD steps.
struct ExpertTrajectory {
    NetSpec spec{};
    std::vector<std::vector<Tensor>> snapshots;
    std::size_t interval = 1;
    std::uint64_t seed = 0;
};

ExpertTrajectory record_trajectory(const NetSpec& spec, const LabeledDataset& ds, std::size_t epochs,
                                   std::size_t interval, std::uint64_t seed, double lr = 0.05,
                                   std::size_t batch_size = 64);

/// ||theta_hat_N - theta*_{t+span}||^2 / ||theta*_t - theta*_{t+span}||^2 where
/// theta_hat starts at snapshot t and takes N full-batch SGD steps on the
/// (optionally masked) synthetic batch. `step_masks`, when non-empty, holds one
/// mask matrix per student step. Throws DegenerateError for a zero denominator.
Var mtt_loss(const NetSpec& spec, const Var& synthetic, std::span<const int> labels, const ExpertTrajectory& traj,
             std::size_t start, std::size_t span, int student_steps, double student_lr,
             std::span<const Tensor> step_masks = {});

struct MttConfig {
    std::size_t ipc = 10;
    std::size_t steps = 200;
    int student_steps = 3;
    /// Snapshots between the start and target of each window.
    std::size_t expert_span = 1;
    /// Start snapshots are drawn from [0, max_start].
    std::size_t max_start = 4;
    double student_lr = 0.05;
    double synthetic_lr = 10.0;
    std::optional<MaskSpec> mask{};
    std::uint64_t seed = 0;
};

SyntheticSet distill_mtt(const LabeledDataset& ds, std::span<const ExpertTrajectory> trajectories,
                         const MttConfig& config);

/// Named-tensor files with a JSON metadata header.
void save_synthetic(const std::filesystem::path& path, const SyntheticSet& s, const std::string& extra_meta = "{}");
SyntheticSet load_synthetic(const std::filesystem::path& path);
void save_trajectory(const std::filesystem::path& path, const ExpertTrajectory& t);
ExpertTrajectory load_trajectory(const std::filesystem::path& path);

}  // namespace ddcal
