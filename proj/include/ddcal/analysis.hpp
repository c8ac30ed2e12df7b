#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ddcal/calib.hpp"
#include "ddcal/data.hpp"
#include "ddcal/nets.hpp"

namespace ddcal {

/// Descending singular values of a matrix.
std::vector<double> singular_values(const Tensor& m);

/// Numerical rank: singular values above max(N, D) * eps * sigma_max.
std::size_t numerical_rank(const std::vector<double>& sigma, std::size_t rows, std::size_t cols);

struct Truncation {
    Tensor matrix;
    std::size_t rank = 0;
    std::size_t dropped = 0;
    /// Sum of squares of the zeroed singular values.
    double dropped_energy = 0.0;
};

/// Zeroes the largest ceil(fraction * rank) singular values and reconstructs.
/// A fraction that drops nothing returns the input unchanged.
Truncation truncate_top_singular(const Tensor& m, double drop_fraction);

/// SVD over the whole N x D example matrix, or per channel (N x HW for each
/// channel of a C x H x W example shape).
enum class SvdLayout { dataset, per_channel };

LabeledDataset svd_truncate(const LabeledDataset& ds, double drop_fraction, SvdLayout layout = SvdLayout::dataset);

/// Entry i: sum of the i+1 largest singular values over the total.
/// Throws DegenerateError for an all-zero matrix.
std::vector<double> explained_ratio(const Tensor& m);
std::vector<double> explained_ratio(const LabeledDataset& ds);

struct SvdSweepResult {
    std::string tag;
    std::vector<double> fractions;
    std::vector<std::uint64_t> seeds;
    /// accuracy[f][s]: fraction f, seed s.
    std::vector<std::vector<double>> accuracy;

    double mean(std::size_t f) const;
    double sd(std::size_t f) const;
    /// Per-seed accuracy lost at fraction index f relative to fraction 0.
    std::vector<double> drops(std::size_t f) const;
};

/// Truncates, retrains from scratch and evaluates on `test` for every (fraction, seed).
/// `fractions` must be ascending and start at 0.
SvdSweepResult svd_accuracy_sweep(const LabeledDataset& train, const LabeledDataset& test,
                                  const std::vector<double>& fractions, const NetSpec& net, const TrainConfig& train_cfg,
                                  const std::vector<std::uint64_t>& seeds, std::string tag);

struct Histogram {
    std::vector<double> edges;
    std::vector<std::size_t> counts;
};

/// Equal-width histogram over [lo, hi]; the last bin is closed.
Histogram histogram(const std::vector<double>& values, std::size_t bins, double lo, double hi);

struct LogitStats {
    std::vector<double> max_logits;
    double mean = 0.0;
    /// Sample (N - 1) standard deviation.
    double sd = 0.0;
    Histogram hist;
};

/// Per-row maximum logit with summary statistics. Requires N >= 2.
LogitStats max_logit_stats(const Tensor& logits, std::size_t bins = 20);

double sample_sd(const std::vector<double>& v);
double mean_of(const std::vector<double>& v);

struct OodReport {
    double id_mean = 0.0;
    double ood_mean = 0.0;
    /// id_mean - ood_mean.
    double separation = 0.0;
    Histogram id_hist;
    Histogram ood_hist;
};

/// Mean max-softmax probability (after temperature) on in- and out-of-distribution sets.
OodReport ood_confidence_compare(const Params& params, const LabeledDataset& id_set, const LabeledDataset& ood_set,
                                 double temperature = 1.0, std::size_t bins = 10);

/// Uniform noise in [lo, hi] with the shape of `like` (labels all 0).
LabeledDataset uniform_noise_like(const LabeledDataset& like, std::size_t n, double lo, double hi, std::uint64_t seed);

std::string to_csv(const SvdSweepResult& r);
std::string to_csv(const LogitStats& s);

}  // namespace ddcal
