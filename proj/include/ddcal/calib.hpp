#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "ddcal/data.hpp"
#include "ddcal/mask.hpp"
#include "ddcal/nets.hpp"
#include "ddcal/rng.hpp"

namespace ddcal {

/// One equal-width confidence bin, right-closed: (lo, hi].
struct Bin {
    double lo = 0.0;
    double hi = 0.0;
    std::size_t count = 0;
    double mean_confidence = 0.0;
    double accuracy = 0.0;
};

/// Assigns each confidence to the bin (m/M, (m+1)/M] containing it; a
/// confidence of exactly 0 goes to the first bin. Throws UsageError for
/// confidences outside [0, 1] or num_bins == 0.
std::vector<Bin> reliability_bins(std::span<const double> confidences, std::span<const char> correct,
                                  std::size_t num_bins = 15);

/// Sum over bins of (count / n) * |mean_confidence - accuracy|; 0 for n == 0.
double compute_ece(const std::vector<Bin>& bins, std::size_t n);

/// Mean negative log-likelihood of softmax(logits / T).
double nll(const Tensor& logits, std::span<const int> labels, double temperature);

/// Row-wise softmax(logits / T).
Tensor apply_temperature(const Tensor& logits, double temperature);

enum class FitMode { paper_faithful, converge };
enum class MaskTarget { inputs, logits };

std::string to_string(FitMode m);
FitMode fit_mode_from_string(const std::string& s);

struct TemperatureFitSpec {
    double init_temperature = 1.5;
    double lr = 0.02;
    /// Damped Newton steps taken in paper-faithful mode.
    int steps = 1;
    MaskSpec mask{};
    FitMode mode = FitMode::converge;
    MaskTarget target = MaskTarget::inputs;
    /// Masked copies of every validation example (inputs target only).
    std::size_t repeats = 1;
    double search_lo = 0.05;
    double search_hi = 20.0;
    double tolerance = 1e-4;
};

struct TemperatureModel {
    double temperature = 1.0;
    double initial_temperature = 1.0;
    int steps = 0;
    double final_nll = 0.0;
    MaskSpec mask{};
    std::vector<std::string> warnings;
};

/// Fits T on fixed logits. With target == logits and a non-identity mask, the
/// logits are masked first; with target == inputs the mask is ignored here.
TemperatureModel fit_temperature(const Tensor& logits, std::span<const int> labels, const TemperatureFitSpec& spec);

/// Masked temperature scaling: masks validation inputs (fresh mask per copy),
/// forward-passes them, and fits T on the resulting logits. A ratio of 0
/// reduces exactly to plain temperature scaling.
TemperatureModel fit_temperature(const Params& params, const LabeledDataset& validation,
                                 const TemperatureFitSpec& spec);

struct CalibrationReport {
    std::string method = "raw";
    double temperature = 1.0;
    double mask_ratio = 0.0;
    std::uint64_t seed = 0;
    std::vector<Bin> bins;
    std::size_t n = 0;
    double ece = 0.0;
    /// mean(confidence) - accuracy; negative means under-confident.
    double signed_gap = 0.0;
    double nll = 0.0;
    double accuracy = 0.0;

    bool over_calibrated(double tau = 0.01) const { return signed_gap < -tau; }
};

CalibrationReport calibration_report(const Tensor& logits, std::span<const int> labels, double temperature = 1.0,
                                     std::size_t num_bins = 15, std::string method = "raw");

/// Structured-text record: `key value` lines followed by one `bin ...` row per bin.
std::string to_text(const CalibrationReport& r);
CalibrationReport report_from_text(const std::string& text);

/// Targets with 1 - eps + eps/K on the true class and eps/K elsewhere.
Tensor smooth_labels(std::span<const int> labels, int num_classes, double eps);

/// Value of the focal loss (see losses.hpp for the differentiable form).
double focal_loss_value(const Tensor& logits, std::span<const int> labels, double gamma);

struct MixupResult {
    Tensor batch;
    Tensor targets;
    double lambda = 1.0;
};

/// lambda ~ Beta(alpha, alpha), partners from a seeded permutation.
MixupResult mixup_batch(const Tensor& batch, const Tensor& targets, double alpha, Rng& rng);
MixupResult mixup_batch(const Tensor& batch, const Tensor& targets, double alpha, std::uint64_t seed);
/// Mixes with a fixed lambda and partner permutation.
MixupResult mixup_with(const Tensor& batch, const Tensor& targets, double lambda,
                       std::span<const std::size_t> partner);

}  // namespace ddcal
