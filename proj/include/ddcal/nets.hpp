#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "ddcal/autodiff.hpp"
#include "ddcal/data.hpp"
#include "ddcal/tensor_io.hpp"

namespace ddcal {

enum class Arch { mlp, convnet };

std::string to_string(Arch a);
Arch arch_from_string(const std::string& s);

/// Classifier architecture.
///
/// mlp: affine layers with ReLU between them; `hidden` lists the hidden widths
/// (empty means a single affine map).
/// convnet: `blocks` x (conv3x3 -> instance norm -> ReLU -> avgpool2x2) with
/// `width` channels, then an affine classifier.
struct NetSpec {
    Arch arch = Arch::mlp;
    std::size_t input_dim = 0;
    int num_classes = 0;
    std::vector<std::size_t> hidden;
    std::size_t in_channels = 1, height = 0, width_px = 0;
    std::size_t blocks = 2;
    std::size_t width = 16;

    static NetSpec mlp(std::size_t input_dim, std::vector<std::size_t> hidden, int num_classes);
    static NetSpec convnet(std::size_t channels, std::size_t height, std::size_t width_px, int num_classes,
                           std::size_t blocks = 2, std::size_t width = 16);

    /// Number of feature layers returned by layer_features (hidden layers or blocks).
    std::size_t feature_layers() const;
    /// Throws UsageError for inconsistent specs, including a convnet with zero blocks.
    void validate() const;
};

/// Trainable parameters in a fixed order, plus the architecture they belong to.
struct Params {
    NetSpec spec;
    std::vector<NamedTensor> tensors;
    std::uint64_t init_seed = 0;
    std::size_t steps_trained = 0;

    std::vector<Tensor> values() const;
    std::vector<Var> leaves() const;
    std::vector<Var> constants() const;
    /// Copy with tensor values replaced (same names and order).
    Params with_values(std::vector<Tensor> values) const;
};

/// Uniform He initialization, U(-sqrt(6/fan_in), +sqrt(6/fan_in)); biases zero.
Params init_params(const NetSpec& spec, std::uint64_t seed);

/// Raw logits (B x K); `params` in the order produced by init_params.
Var forward_logits(const NetSpec& spec, std::span<const Var> params, const Var& batch);
Tensor forward_logits(const Params& params, const Tensor& batch);

/// Post-activation output of every hidden layer / block (rows = examples).
std::vector<Tensor> layer_features(const Params& params, const Tensor& batch);

enum class LossKind { ce, focal, label_smoothing, mixup };

std::string to_string(LossKind k);
LossKind loss_kind_from_string(const std::string& s);

struct LossSpec {
    LossKind kind = LossKind::ce;
    double gamma = 1.0;    // focal
    double epsilon = 0.1;  // label smoothing
    double alpha = 1.0;    // mixup Beta(alpha, alpha)
};

struct TrainConfig {
    std::size_t epochs = 100;
    double lr = 0.05;
    std::size_t batch_size = 64;
    std::uint64_t seed = 0;
    LossSpec loss{};
};

struct EpochMetrics {
    double loss = 0.0;
    double accuracy = 0.0;
};

struct TrainResult {
    Params params;
    std::vector<EpochMetrics> history;
};

/// Called after every SGD update with the 1-based step count and current parameters.
using StepObserver = std::function<void(std::size_t step, std::span<const Tensor> params)>;

/// Plain minibatch SGD with per-epoch seeded shuffling. Throws NumericError
/// naming the epoch and step if the loss diverges.
TrainResult sgd_train(const Params& init, const LabeledDataset& ds, const TrainConfig& config,
                      const StepObserver& observer = {});

struct Evaluation {
    double accuracy = 0.0;
    Tensor logits;
};

Evaluation evaluate(const Params& params, const LabeledDataset& ds);

double accuracy_of(const Tensor& logits, std::span<const int> labels);
std::vector<int> argmax_rows(const Tensor& m);

/// Named-tensor file with the spec in the metadata header.
void save_params(const std::filesystem::path& path, const Params& params);
Params load_params(const std::filesystem::path& path);

}  // namespace ddcal
