// Command-line front end for the calibration pipeline.
#include <cstdlib>
#include <iostream>
#include <optional>

#include "CLI11.hpp"

#include "ddcal/error.hpp"
#include "ddcal/pipeline.hpp"
#include "ddcal/tensor_io.hpp"

using namespace ddcal;
namespace fs = std::filesystem;

namespace {

struct Overrides {
    std::string config;
    std::vector<std::uint64_t> seeds;
    std::optional<std::size_t> ipc, steps;
    std::optional<std::string> backbone;
    std::optional<double> mdt_ratio, validation_fraction;
    std::optional<std::size_t> bins;
    std::string out;

    void add_to(CLI::App* app, bool need_config = true) {
        auto* c = app->add_option("-c,--config", config, "experiment config (JSON)");
        if (need_config) c->required()->check(CLI::ExistingFile);
        app->add_option("--seeds", seeds, "override the seed list");
        app->add_option("--ipc", ipc, "examples per class in the distilled set");
        app->add_option("--steps", steps, "distillation steps");
        app->add_option("--backbone", backbone, "none | dc | mtt")->check(CLI::IsMember({"none", "dc", "mtt"}));
        app->add_option("--mdt-ratio", mdt_ratio, "masked distillation training ratio")->check(CLI::Range(0.0, 1.0));
        app->add_option("--validation-fraction", validation_fraction, "per-class validation fraction");
        app->add_option("--bins", bins, "calibration bins");
        app->add_option("-o,--out", out, "output directory (relative paths resolve under $DDCAL_OUT_ROOT)");
    }

    ExperimentConfig load() const {
        ExperimentConfig c = load_config(config);
        if (!seeds.empty()) c.seeds = seeds;
        if (ipc) c.backbone.ipc = *ipc;
        if (steps) c.backbone.steps = *steps;
        if (backbone) c.backbone.kind = *backbone;
        if (mdt_ratio) c.mdt = MaskSpec::fixed(*mdt_ratio, c.mdt ? c.mdt->seed : 0);
        if (validation_fraction) c.validation_fraction = *validation_fraction;
        if (bins) c.bins = *bins;
        if (!out.empty()) c.output_dir = out;
        if (c.output_dir.empty()) c.output_dir = "run-" + config_hash(c);
        c.output_dir = resolve_out(c.output_dir);
        c.validate();
        return c;
    }

    static fs::path resolve_out(const fs::path& p) {
        if (p.is_absolute()) return p;
        if (const char* root = std::getenv("DDCAL_OUT_ROOT"); root && *root) return fs::path(root) / p;
        return p;
    }
};

int finish(const std::vector<std::string>& failures) {
    for (const auto& f : failures) std::cerr << "ddcal: " << f << "\n";
    return failures.empty() ? 0 : 1;
}

NetSpec net_for(const ExperimentConfig& c, const LabeledDataset& train) {
    NetSpec net = c.net;
    if (net.input_dim == 0) net.input_dim = train.dims();
    if (net.num_classes == 0) net.num_classes = train.num_classes;
    net.validate();
    return net;
}

int cmd_distill(const Overrides& o) {
    const ExperimentConfig c = o.load();
    if (c.backbone.kind == "none") throw UsageError("distill needs a dc or mtt backbone");
    std::vector<std::string> failures;
    for (std::uint64_t s : c.seeds) {
        try {
            const LoadedData d = load_data(c.dataset, s);
            const SyntheticSet syn = distill_for_seed(c, d.train, s);
            const fs::path path = c.output_dir / ("synthetic_seed" + std::to_string(s) + ".ddt");
            fs::create_directories(c.output_dir);
            save_synthetic(path, syn, json{{"backbone", c.backbone.kind}, {"seed", s}, {"config_hash", config_hash(c)}}.dump());
            std::cout << path.string() << "\n";
        } catch (const std::exception& e) {
            failures.push_back("seed " + std::to_string(s) + ": " + e.what());
        }
    }
    return finish(failures);
}

int cmd_train(const Overrides& o, const std::string& synthetic) {
    const ExperimentConfig c = o.load();
    std::vector<std::string> failures;
    for (std::uint64_t s : c.seeds) {
        try {
            const LoadedData d = load_data(c.dataset, s);
            const bool syn = !synthetic.empty();
            const LabeledDataset train = syn ? load_synthetic(synthetic).as_dataset() : d.train;
            TrainConfig tc = syn ? c.syn_train : c.full_train;
            tc.seed = derive_seed(s, syn ? stream::syn_train : stream::full_train);
            const NetSpec net = net_for(c, d.train);
            const Params p =
                sgd_train(init_params(net, derive_seed(s, syn ? stream::syn_init : stream::full_init)), train, tc).params;
            fs::create_directories(c.output_dir);
            const fs::path path = c.output_dir / ("params_seed" + std::to_string(s) + ".ddt");
            save_params(path, p);
            std::cout << path.string() << " test_accuracy " << evaluate(p, d.test).accuracy << "\n";
        } catch (const std::exception& e) {
            failures.push_back("seed " + std::to_string(s) + ": " + e.what());
        }
    }
    return finish(failures);
}

int cmd_calibrate(const Overrides& o, const std::string& params_path, const std::string& synthetic,
                  const std::string& method, double r, std::size_t repeats, const std::string& mode) {
    const ExperimentConfig c = o.load();
    const Params p = load_params(params_path);
    std::vector<std::string> failures;
    for (std::uint64_t s : c.seeds) {
        try {
            const LoadedData d = load_data(c.dataset, s);
            const LabeledDataset source = synthetic.empty() ? d.train : load_synthetic(synthetic).as_dataset();
            const LabeledDataset val =
                split_per_class(source, SplitSpec{c.validation_fraction, true, derive_seed(s, stream::validation)}).first;
            TemperatureFitSpec fs;
            fs.mode = fit_mode_from_string(mode);
            fs.repeats = repeats;
            const double ratio = method == "ts" ? 0.0 : r;
            fs.mask = MaskSpec::fixed(ratio, derive_seed(s, stream::mts_mask));
            const TemperatureModel tm = fit_temperature(p, val, fs);
            for (const auto& w : tm.warnings) std::cerr << "warning: " << w << "\n";
            const Tensor logits = forward_logits(p, d.test.examples);
            MethodConfig mc;
            mc.tag = method;
            mc.r = ratio;
            CalibrationReport rep = calibration_report(logits, d.test.labels, tm.temperature, c.bins, mc.label());
            rep.mask_ratio = ratio;
            rep.seed = s;
            fs::create_directories(c.output_dir);
            const fs::path path = c.output_dir / ("calibration_" + method + "_seed" + std::to_string(s) + ".txt");
            write_file_atomic(path, to_text(rep));
            std::cout << path.string() << " T " << tm.temperature << " ece " << rep.ece << " signed_gap "
                      << rep.signed_gap << "\n";
        } catch (const std::exception& e) {
            failures.push_back("seed " + std::to_string(s) + ": " + e.what());
        }
    }
    return finish(failures);
}

int cmd_analyze(const Overrides& o, const std::string& what, const std::string& synthetic,
                const std::string& params_path) {
    const ExperimentConfig c = o.load();
    std::vector<std::string> failures;
    for (std::uint64_t s : c.seeds) {
        try {
            const LoadedData d = load_data(c.dataset, s);
            const LabeledDataset source = synthetic.empty() ? d.train : load_synthetic(synthetic).as_dataset();
            const std::string tag = synthetic.empty() ? "full" : "distilled";
            std::string csv;
            if (what == "svd") {
                std::vector<double> fr = c.analysis.svd_fractions;
                if (fr.empty()) fr = {0.0, 0.05, 0.1, 0.15, 0.2};
                const TrainConfig& tc = synthetic.empty() ? c.full_train : c.syn_train;
                csv = to_csv(svd_accuracy_sweep(source, d.test, fr, net_for(c, d.train), tc,
                                                {derive_seed(s, stream::svd)}, tag));
            } else if (what == "explained") {
                std::ostringstream out;
                out << std::setprecision(17) << "source,k,ratio\n";
                const auto ratio = explained_ratio(source);
                for (std::size_t k = 0; k < ratio.size(); ++k) out << tag << "," << k + 1 << "," << ratio[k] << "\n";
                csv = out.str();
            } else {
                if (params_path.empty()) throw UsageError("analyze logits needs --params");
                csv = to_csv(max_logit_stats(forward_logits(load_params(params_path), d.test.examples)));
            }
            fs::create_directories(c.output_dir);
            const fs::path path = c.output_dir / (what + "_" + tag + "_seed" + std::to_string(s) + ".csv");
            write_file_atomic(path, csv);
            std::cout << path.string() << "\n";
        } catch (const std::exception& e) {
            failures.push_back("seed " + std::to_string(s) + ": " + e.what());
        }
    }
    return finish(failures);
}

const std::vector<std::string> kCurves{"reliability", "svd_sweep",  "explained_ratio", "max_logit_hist",
                                       "r_sweep",     "n_sweep",    "ipc_sweep"};

void write_outputs(const RunRecord& rec, const fs::path& dir, const std::vector<std::string>& curves, bool svg,
                   bool only_present) {
    emit_report(rec, ReportFormat::structured, dir);
    emit_report(rec, ReportFormat::csv, dir);
    for (const auto& w : curves) {
        try {
            for (const auto& p : emit_curves(rec, {w}, dir / "curves", svg)) std::cout << p.string() << "\n";
        } catch (const UsageError&) {
            if (!only_present) throw;
        }
    }
}

int cmd_report(const std::string& record_path, std::string out, const std::string& format,
               const std::vector<std::string>& curves, bool svg) {
    const RunRecord rec = load_record(record_path);
    const fs::path dir = out.empty() ? fs::path(record_path).parent_path() : Overrides::resolve_out(out);
    if (format == "structured" || format == "both")
        std::cout << emit_report(rec, ReportFormat::structured, dir).string() << "\n";
    if (format == "csv" || format == "both") std::cout << emit_report(rec, ReportFormat::csv, dir).string() << "\n";
    for (const auto& p : emit_curves(rec, curves, dir / "curves", svg)) std::cout << p.string() << "\n";
    return rec.partial ? 1 : 0;
}

int cmd_sweep(const Overrides& o, bool svg) {
    const ExperimentConfig c = o.load();
    const RunRecord rec = run_pipeline(c);
    write_outputs(rec, c.output_dir, kCurves, svg, true);
    std::cout << (c.output_dir / "record.json").string() << "\n";
    for (const Aggregate& a : rec.aggregates())
        std::cout << a.method << " ece " << a.ece_mean << " +- " << a.ece_sd << " signed_gap " << a.gap_mean
                  << " accuracy " << a.acc_mean << "\n";
    std::vector<std::string> failures;
    for (const auto& s : rec.seeds)
        if (!s.ok) failures.push_back("seed " + std::to_string(s.seed) + ": " + s.error);
    return finish(failures);
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Dataset distillation calibration toolkit"};
    app.require_subcommand(1);

    Overrides od, ot, oc, oa, os;
    auto* distill = app.add_subcommand("distill", "distill a synthetic set per seed");
    od.add_to(distill);

    auto* train = app.add_subcommand("train", "train a network on full data or a synthetic set");
    ot.add_to(train);
    std::string train_syn;
    train->add_option("--synthetic", train_syn, "train on this synthetic set")->check(CLI::ExistingFile);

    auto* calibrate = app.add_subcommand("calibrate", "fit temperature scaling (optionally masked) and report");
    oc.add_to(calibrate);
    std::string cal_params, cal_syn, cal_method = "mts", cal_mode = "converge";
    double cal_r = 0.1;
    std::size_t cal_repeats = 1;
    calibrate->add_option("--params", cal_params, "trained network")->required()->check(CLI::ExistingFile);
    calibrate->add_option("--synthetic", cal_syn, "draw validation from this synthetic set")->check(CLI::ExistingFile);
    calibrate->add_option("--method", cal_method, "ts | mts")->check(CLI::IsMember({"ts", "mts"}));
    calibrate->add_option("-r,--ratio", cal_r, "mask ratio")->check(CLI::Range(0.0, 1.0));
    calibrate->add_option("--repeats", cal_repeats, "masked copies per validation example");
    calibrate->add_option("--mode", cal_mode, "converge | paper_faithful")
        ->check(CLI::IsMember({"converge", "paper_faithful"}));

    auto* analyze = app.add_subcommand("analyze", "SVD, explained-ratio or max-logit analysis");
    oa.add_to(analyze);
    std::string an_what = "svd", an_syn, an_params;
    analyze->add_option("--what", an_what, "svd | explained | logits")
        ->check(CLI::IsMember({"svd", "explained", "logits"}));
    analyze->add_option("--synthetic", an_syn, "analyze this synthetic set")->check(CLI::ExistingFile);
    analyze->add_option("--params", an_params, "network for logit statistics")->check(CLI::ExistingFile);

    auto* report = app.add_subcommand("report", "render reports and curves from a run record");
    std::string rep_record, rep_out, rep_format = "both";
    std::vector<std::string> rep_curves;
    bool rep_svg = false;
    report->add_option("record", rep_record, "record.json")->required()->check(CLI::ExistingFile);
    report->add_option("-o,--out", rep_out, "output directory");
    report->add_option("--format", rep_format, "structured | csv | both")
        ->check(CLI::IsMember({"structured", "csv", "both"}));
    report->add_option("--curves", rep_curves, "curves to emit")->delimiter(',')->check(CLI::IsMember(kCurves));
    report->add_flag("--svg", rep_svg, "also write SVG charts");

    auto* sweep = app.add_subcommand("sweep", "run the full pipeline with ablation sweeps over all seeds");
    os.add_to(sweep);
    bool sweep_svg = false;
    sweep->add_flag("--svg", sweep_svg, "also write SVG charts");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*distill) return cmd_distill(od);
        if (*train) return cmd_train(ot, train_syn);
        if (*calibrate) return cmd_calibrate(oc, cal_params, cal_syn, cal_method, cal_r, cal_repeats, cal_mode);
        if (*analyze) return cmd_analyze(oa, an_what, an_syn, an_params);
        if (*report) return cmd_report(rep_record, rep_out, rep_format, rep_curves, rep_svg);
        if (*sweep) return cmd_sweep(os, sweep_svg);
    } catch (const Error& e) {
        std::cerr << "ddcal: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "ddcal: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
