#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ddcal/analysis.hpp"
#include "ddcal/error.hpp"
#include "ddcal/pipeline.hpp"
#include "ddcal/rng.hpp"

using namespace ddcal;
namespace fs = std::filesystem;

namespace {

fs::path tmp(const std::string& name) {
    const fs::path p = fs::path(DDCAL_TEST_TMP) / "pipeline" / name;
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

ExperimentConfig small_config() {
    ExperimentConfig c;
    c.dataset.blobs = BlobSpec{3, 20, 6, 1.0, 1.5, 0};
    c.dataset.test_per_class = 30;
    c.net = NetSpec::mlp(6, {8}, 3);
    c.backbone.ipc = 2;
    c.backbone.steps = 10;
    c.backbone.real_batch = 16;
    c.full_train.epochs = 5;
    c.syn_train.epochs = 30;
    MethodConfig ts;
    ts.tag = "ts";
    MethodConfig mts;
    mts.tag = "mts";
    mts.r = 0.3;
    c.methods = {ts, mts};
    c.seeds = {1, 2};
    return c;
}

std::vector<std::vector<std::string>> parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> rows;
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        std::vector<std::string> cells;
        std::stringstream ls(line);
        std::string cell;
        while (std::getline(ls, cell, ',')) cells.push_back(cell);
        if (!line.empty() && line.back() == ',') cells.emplace_back();
        rows.push_back(cells);
    }
    return rows;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

}  // namespace

TEST(Config, JsonRoundTrip) {
    ExperimentConfig c = small_config();
    c.mdt = MaskSpec::dynamic(0.0, 0.1, 4);
    c.analysis.svd_fractions = {0.0, 0.1};
    c.sweeps.r = {0.2, 0.4};
    c.methods[1].mode = FitMode::paper_faithful;
    c.methods[1].target = MaskTarget::logits;
    const ExperimentConfig back = config_from_json(to_json_value(c));
    EXPECT_EQ(to_json_value(back).dump(), to_json_value(c).dump());
    EXPECT_EQ(config_hash(back), config_hash(c));
}

TEST(Config, HashIgnoresKeyOrderAndOutputDir) {
    const json a = json::parse(R"({"seeds":[1],"bins":10,"net":{"arch":"mlp","input_dim":6,"num_classes":3,"hidden":[4]}})");
    const json b = json::parse(R"({"net":{"hidden":[4],"num_classes":3,"arch":"mlp","input_dim":6},"bins":10,"seeds":[1]})");
    EXPECT_EQ(config_hash(config_from_json(a)), config_hash(config_from_json(b)));
    ExperimentConfig c = small_config();
    const std::string h = config_hash(c);
    c.output_dir = "elsewhere";
    EXPECT_EQ(config_hash(c), h);
    c.bins = 10;
    EXPECT_NE(config_hash(c), h);
}

TEST(Config, ValidationErrors) {
    ExperimentConfig c = small_config();
    c.seeds.clear();
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.methods[0].tag = "platt";
    EXPECT_THROW(c.validate(), ConfigError);
    c = small_config();
    c.dataset.kind = "idx";
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("train_images"), std::string::npos);
    }
    c.dataset.train_images = "/nonexistent/images.idx";
    try {
        c.validate();
        FAIL();
    } catch (const ConfigError& e) {
        EXPECT_NE(std::string(e.what()).find("/nonexistent/images.idx"), std::string::npos);
    }
    c = small_config();
    c.analysis.svd_fractions = {0.1, 0.2};
    EXPECT_THROW(c.validate(), ConfigError);
    EXPECT_THROW(config_from_json(json::parse(R"({"mdt":{"mode":"sometimes"}})")), ConfigError);
}

TEST(Config, LoadResolvesRelativePaths) {
    const fs::path dir = tmp("load");
    std::ofstream(dir / "c.json") << R"({"dataset":{"kind":"idx","train_images":"a.idx"},"seeds":[0]})";
    const ExperimentConfig c = load_config(dir / "c.json");
    EXPECT_EQ(c.dataset.train_images, dir / "a.idx");
    std::ofstream(dir / "bad.json") << "{ not json";
    EXPECT_THROW(load_config(dir / "bad.json"), ConfigError);
}

TEST(Pipeline, NoMethodsGivesAccuracyOnlyRecord) {
    ExperimentConfig c = small_config();
    c.methods.clear();
    c.seeds = {4};
    const RunRecord r = run_pipeline(c);
    ASSERT_EQ(r.seeds.size(), 1u);
    EXPECT_TRUE(r.seeds[0].ok) << r.seeds[0].error;
    EXPECT_TRUE(r.seeds[0].model_accuracy.has_value());
    ASSERT_EQ(r.seeds[0].reports.size(), 1u);
    EXPECT_EQ(r.seeds[0].reports[0].method, "raw");
    EXPECT_EQ(r.methods(), (std::vector<std::string>{"raw"}));
}

TEST(Pipeline, AggregatesAreRecomputable) {
    ExperimentConfig c = small_config();
    c.seeds = {0, 1, 2, 3, 4};
    const RunRecord r = run_pipeline(c);
    ASSERT_FALSE(r.partial);
    for (const Aggregate& a : r.aggregates()) {
        std::vector<double> ece;
        for (const auto& s : r.seeds)
            for (const auto& rep : s.reports)
                if (rep.method == a.method) ece.push_back(rep.ece);
        ASSERT_EQ(ece.size(), 5u);
        EXPECT_EQ(a.count, 5u);
        EXPECT_DOUBLE_EQ(a.ece_mean, mean_of(ece));
        EXPECT_DOUBLE_EQ(a.ece_sd, sample_sd(ece));
    }
    EXPECT_EQ(r.methods(), (std::vector<std::string>{"raw", "ts", "mts(r=0.3)"}));
}

TEST(Pipeline, FailingSeedGivesPartialRecord) {
    // Tight blobs: center placement fails for some data seeds only.
    ExperimentConfig c = small_config();
    c.dataset.blobs = BlobSpec{6, 20, 2, 1.0, 1.6, 0};
    c.net = NetSpec::mlp(2, {8}, 6);
    std::optional<std::uint64_t> bad, good;
    for (std::uint64_t s = 0; s < 200 && !(bad && good); ++s) {
        BlobSpec b = c.dataset.blobs;
        b.seed = derive_seed(s, stream::data);
        try {
            gen_blobs(b);
            if (!good) good = s;
        } catch (const ConfigError&) {
            if (!bad) bad = s;
        }
    }
    ASSERT_TRUE(bad && good);
    c.seeds = {*good, *bad};
    c.output_dir = tmp("partial");
    const RunRecord r = run_pipeline(c);
    EXPECT_TRUE(r.partial);
    EXPECT_EQ(r.failed_seeds(), (std::vector<std::uint64_t>{*bad}));
    EXPECT_FALSE(r.seeds[1].error.empty());
    EXPECT_TRUE(fs::exists(c.output_dir / "record.json"));
    const auto rows = parse_csv(report_csv(r));
    ASSERT_EQ(rows.size(), 4u);
    EXPECT_NE(r.seeds[1].error.find("gen_blobs"), std::string::npos);
    for (std::size_t i = 1; i < rows.size(); ++i) {
        EXPECT_EQ(rows[i][1], "1");
        EXPECT_EQ(rows[i][2], std::to_string(*bad));
    }
    const std::string text = slurp(emit_report(r, ReportFormat::structured, c.output_dir));
    EXPECT_NE(text.find("partial 1\n"), std::string::npos);
}

TEST(Report, CsvReparsesExactly) {
    ExperimentConfig c = small_config();
    c.sweeps.r = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    c.sweeps.n = {0.1, 0.2, 0.3, 0.4, 0.5};
    c.analysis.svd_fractions = {0.0, 0.2};
    c.output_dir = tmp("csv");
    const RunRecord r = run_pipeline(c);
    ASSERT_FALSE(r.partial);

    const auto rows = parse_csv(report_csv(r));
    ASSERT_EQ(rows[0][0], "method");
    const auto aggs = r.aggregates();
    ASSERT_EQ(rows.size(), aggs.size() + 1);
    for (std::size_t i = 0; i < aggs.size(); ++i) {
        EXPECT_EQ(rows[i + 1][0], aggs[i].method);
        EXPECT_EQ(std::stod(rows[i + 1][5]), aggs[i].ece_mean);
        EXPECT_EQ(std::stod(rows[i + 1][6]), aggs[i].ece_sd);
        EXPECT_EQ(std::stod(rows[i + 1][7]), aggs[i].gap_mean);
        EXPECT_EQ(std::stod(rows[i + 1][9]), aggs[i].acc_mean);
    }

    const auto rel = parse_csv(curve_csv(r, "reliability"));
    EXPECT_EQ(rel.size(), 1 + aggs.size() * c.bins);
    // Sweep curves hold one row per swept value, aggregated over seeds.
    EXPECT_EQ(parse_csv(curve_csv(r, "r_sweep")).size(), 1u + 9u);
    EXPECT_EQ(parse_csv(curve_csv(r, "n_sweep")).size(), 1u + 5u);
    try {
        curve_csv(r, "ipc_sweep");
        FAIL();
    } catch (const UsageError& e) {
        EXPECT_NE(std::string(e.what()).find("ipc_sweep"), std::string::npos);
    }
    EXPECT_THROW(curve_csv(r, "explained_ratio"), UsageError);

    const auto files = emit_curves(r, {"reliability", "r_sweep"}, c.output_dir, true);
    EXPECT_EQ(files.size(), 4u);
    for (const auto& f : files) EXPECT_TRUE(fs::exists(f)) << f;
    EXPECT_NE(slurp(c.output_dir / "r_sweep.svg").find("<svg"), std::string::npos);
}

TEST(Record, SaveLoadAndDeterminism) {
    ExperimentConfig c = small_config();
    c.output_dir = tmp("det") / "a";
    const RunRecord a = run_pipeline(c);
    c.output_dir = tmp("det2") / "b";
    const RunRecord b = run_pipeline(c);
    EXPECT_EQ(payload(a).dump(), payload(b).dump());
    EXPECT_EQ(a.config_hash, b.config_hash);
    const RunRecord loaded = load_record(fs::path(DDCAL_TEST_TMP) / "pipeline" / "det" / "a" / "record.json");
    EXPECT_EQ(payload(loaded).dump(), payload(a).dump());
    for (const auto& entry : fs::directory_iterator(c.output_dir))
        EXPECT_EQ(entry.path().extension(), ".json") << entry.path();
    EXPECT_THROW(load_record(c.output_dir / "missing.json"), IoError);
}

TEST(Record, SeedChangesResults) {
    ExperimentConfig c = small_config();
    c.seeds = {1};
    const RunRecord a = run_pipeline(c);
    c.seeds = {7};
    const RunRecord b = run_pipeline(c);
    EXPECT_NE(a.seeds[0].reports[0].ece, b.seeds[0].reports[0].ece);
}

#ifdef DDCAL_CLI_PATH
TEST(Cli, SweepAndReport) {
    const fs::path dir = tmp("cli");
    ExperimentConfig c = small_config();
    c.seeds = {1};
    json j = to_json_value(c);
    std::ofstream(dir / "c.json") << j.dump(2);
    const std::string env = "DDCAL_OUT_ROOT=" + dir.string() + " ";
    const std::string cli = std::string(DDCAL_CLI_PATH);
    ASSERT_EQ(std::system((env + cli + " sweep -c " + (dir / "c.json").string() + " -o run > /dev/null").c_str()), 0);
    EXPECT_TRUE(fs::exists(dir / "run" / "record.json"));
    EXPECT_TRUE(fs::exists(dir / "run" / "report.csv"));
    ASSERT_EQ(std::system((cli + " report " + (dir / "run" / "record.json").string() + " --format csv -o " +
                           (dir / "again").string() + " > /dev/null")
                              .c_str()),
              0);
    EXPECT_EQ(slurp(dir / "again" / "report.csv"), slurp(dir / "run" / "report.csv"));
    EXPECT_NE(std::system((cli + " sweep -c " + (dir / "missing.json").string() + " > /dev/null 2>&1").c_str()), 0);
}
#endif
