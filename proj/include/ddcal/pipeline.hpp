#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "ddcal/analysis.hpp"
#include "ddcal/calib.hpp"
#include "ddcal/distill.hpp"
#include "ddcal/serialize.hpp"

namespace ddcal {

inline constexpr const char* kToolVersion = "ddcal 0.1.0";

// Per-stage seed streams. A run seed s feeds stage k with derive_seed(s, k);
// new stages take new numbers so existing ones keep their randomness.
namespace stream {
inline constexpr std::uint64_t data = 100;
inline constexpr std::uint64_t test_data = 101;
inline constexpr std::uint64_t full_init = 102;
inline constexpr std::uint64_t full_train = 103;
inline constexpr std::uint64_t distill = 104;
inline constexpr std::uint64_t syn_init = 105;
inline constexpr std::uint64_t syn_train = 106;
inline constexpr std::uint64_t validation = 107;
inline constexpr std::uint64_t mts_mask = 108;
inline constexpr std::uint64_t experts = 110;
inline constexpr std::uint64_t svd = 111;
inline constexpr std::uint64_t ood = 112;
}  // namespace stream

struct DatasetConfig {
    /// blobs | idx | cifar10
    std::string kind = "blobs";
    BlobSpec blobs{};
    /// blobs only: derive the blob seed from the run seed instead of using blobs.seed.
    bool seed_from_run = true;
    std::size_t test_per_class = 200;
    std::filesystem::path train_images, train_labels, test_images, test_labels;
    /// cifar10: lists of batch files.
    std::vector<std::filesystem::path> train_files, test_files;
    /// Keep only the first n training examples (0 = all).
    std::size_t limit = 0;
    bool normalize = false;
};

struct BackboneConfig {
    /// none (calibrate the full-data network) | dc | mtt
    std::string kind = "dc";
    std::size_t ipc = 10;
    std::size_t steps = 200;
    double synthetic_lr = 0.1;
    std::size_t real_batch = 64;
    std::size_t reinit_every = 50;
    std::size_t net_steps = 1;
    double net_lr = 0.01;
    MaskPlacement placement = MaskPlacement::synthetic;
    // mtt
    std::size_t experts = 2;
    std::size_t expert_epochs = 4;
    std::size_t expert_interval = 10;
    double expert_lr = 0.05;
    int student_steps = 3;
    std::size_t expert_span = 1;
    std::size_t max_start = 4;
    double student_lr = 0.05;
};

/// One calibration method. Tags: ts, mts, ls, focal, mixup.
struct MethodConfig {
    std::string tag;
    double r = 0.0;
    double epsilon = 0.1;
    double gamma = 1.0;
    double alpha = 1.0;
    std::size_t repeats = 1;
    FitMode mode = FitMode::converge;
    MaskTarget target = MaskTarget::inputs;

    /// Name used in reports, e.g. "mts(r=0.3)".
    std::string label() const;
};

struct AnalysisConfig {
    /// Empty disables the SVD accuracy sweep.
    std::vector<double> svd_fractions;
    /// Also run the sweep on the full training set.
    bool svd_full = true;
    bool explained_ratio = false;
    bool logit_stats = true;
    bool ood = false;
    std::size_t ood_samples = 200;
};

struct SweepConfig {
    std::vector<double> r;
    std::vector<double> n;
    std::vector<std::size_t> ipc;
    /// Mask ratio used by the n and ipc sweeps.
    double mts_r = 0.5;
    std::size_t repeats = 1;
};

struct ExperimentConfig {
    DatasetConfig dataset{};
    NetSpec net{};
    BackboneConfig backbone{};
    std::optional<MaskSpec> mdt{};
    TrainConfig full_train{};
    TrainConfig syn_train{};
    std::vector<MethodConfig> methods;
    double validation_fraction = 0.1;
    std::size_t bins = 15;
    AnalysisConfig analysis{};
    SweepConfig sweeps{};
    std::vector<std::uint64_t> seeds;
    std::filesystem::path output_dir;

    /// Throws ConfigError for empty seeds, unknown tags, missing files or bad values.
    void validate() const;
};

json to_json_value(const ExperimentConfig& c);
ExperimentConfig config_from_json(const json& j);
ExperimentConfig load_config(const std::filesystem::path& path);

/// FNV-1a over the sorted-key serialization (output_dir excluded); independent
/// of key order in the source file.
std::string config_hash(const ExperimentConfig& c);

struct SweepPoint {
    double x = 0.0;
    double temperature = 1.0;
    double ece = 0.0;
    double signed_gap = 0.0;
    double accuracy = 0.0;
};

struct SeedRecord {
    std::uint64_t seed = 0;
    bool ok = false;
    std::string error;
    std::optional<double> full_accuracy;
    std::optional<double> model_accuracy;
    /// raw first, then one report per method, in config order.
    std::vector<CalibrationReport> reports;
    std::optional<LogitStats> full_logits, model_logits;
    /// SVD sweeps keyed by source ("full", "distilled"); accuracy per fraction.
    std::vector<std::pair<std::string, std::vector<double>>> svd;
    std::vector<std::pair<std::string, std::vector<double>>> explained;
    std::vector<SweepPoint> r_sweep, n_sweep;
    /// x = ipc; temperature/ece/gap of MTS, accuracy of the raw model.
    std::vector<SweepPoint> ipc_sweep;
    std::vector<double> ipc_raw_ece;
    std::optional<OodReport> ood;
};

struct Aggregate {
    std::string method;
    std::size_t count = 0;
    double ece_mean = 0, ece_sd = 0, gap_mean = 0, gap_sd = 0, acc_mean = 0, acc_sd = 0;
};

struct RunRecord {
    std::string config_hash;
    std::string tool_version = kToolVersion;
    json config;
    std::vector<SeedRecord> seeds;
    bool partial = false;
    double wall_clock_seconds = 0.0;

    std::vector<std::string> methods() const;
    /// Mean and sample sd over successful seeds, recomputed from the per-seed reports.
    std::vector<Aggregate> aggregates() const;
    std::vector<std::uint64_t> failed_seeds() const;
};

json to_json_value(const RunRecord& r);
RunRecord record_from_json(const json& j);
/// The record without wall-clock time or output location; equal payloads mean
/// identical results.
json payload(const RunRecord& r);

void save_record(const std::filesystem::path& path, const RunRecord& r);
RunRecord load_record(const std::filesystem::path& path);

/// Stage products for one seed; exposed for the CLI's single-stage commands.
struct LoadedData {
    LabeledDataset train, test;
};
LoadedData load_data(const DatasetConfig& c, std::uint64_t run_seed);
SyntheticSet distill_for_seed(const ExperimentConfig& c, const LabeledDataset& train, std::uint64_t run_seed,
                              std::optional<std::size_t> ipc_override = {});

/// Runs every requested stage for every seed. A failing seed is recorded and
/// the remaining seeds still run. When output_dir is set, writes record.json
/// there atomically.
RunRecord run_pipeline(const ExperimentConfig& config);

enum class ReportFormat { structured, csv };

/// Writes report.txt (structured) or report.csv into `dir`; returns the path.
std::filesystem::path emit_report(const RunRecord& record, ReportFormat format, const std::filesystem::path& dir);
std::string report_csv(const RunRecord& record);

/// Long-format CSV for one artifact: reliability, svd_sweep, explained_ratio,
/// max_logit_hist, r_sweep, n_sweep, ipc_sweep. Throws UsageError naming a
/// missing artifact.
std::string curve_csv(const RunRecord& record, const std::string& which);
/// Writes <which>.csv and, if requested, <which>.svg into `dir`.
std::vector<std::filesystem::path> emit_curves(const RunRecord& record, const std::vector<std::string>& which,
                                               const std::filesystem::path& dir, bool svg = false);

}  // namespace ddcal
