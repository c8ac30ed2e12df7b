#include "ddcal/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

#include "ddcal/error.hpp"
#include "ddcal/tensor_io.hpp"

namespace ddcal {

namespace {

const std::set<std::string> kMethodTags{"ts", "mts", "ls", "focal", "mixup"};

std::string placement_str(MaskPlacement p) { return p == MaskPlacement::synthetic ? "synthetic" : "real"; }

MaskPlacement placement_from(const std::string& s) {
    if (s == "synthetic") return MaskPlacement::synthetic;
    if (s == "real") return MaskPlacement::real;
    throw ConfigError("unknown mask placement '" + s + "'");
}

std::string target_str(MaskTarget t) { return t == MaskTarget::inputs ? "inputs" : "logits"; }

MaskTarget target_from(const std::string& s) {
    if (s == "inputs") return MaskTarget::inputs;
    if (s == "logits") return MaskTarget::logits;
    throw ConfigError("unknown mask target '" + s + "'");
}

std::vector<std::string> paths_to_strings(const std::vector<std::filesystem::path>& v) {
    std::vector<std::string> out;
    for (const auto& p : v) out.push_back(p.string());
    return out;
}

std::vector<std::filesystem::path> strings_to_paths(const std::vector<std::string>& v) {
    return {v.begin(), v.end()};
}

}  // namespace

std::string MethodConfig::label() const {
    char buf[64];
    if (tag == "mts") {
        std::snprintf(buf, sizeof buf, "mts(r=%g)", r);
        return buf;
    }
    if (tag == "ls") {
        std::snprintf(buf, sizeof buf, "ls(eps=%g)", epsilon);
        return buf;
    }
    if (tag == "focal") {
        std::snprintf(buf, sizeof buf, "focal(gamma=%g)", gamma);
        return buf;
    }
    if (tag == "mixup") {
        std::snprintf(buf, sizeof buf, "mixup(alpha=%g)", alpha);
        return buf;
    }
    return tag;
}

// ---------------------------------------------------------------- config json

json to_json_value(const ExperimentConfig& c) {
    json d{{"kind", c.dataset.kind},
           {"blobs", c.dataset.blobs},
           {"seed_from_run", c.dataset.seed_from_run},
           {"test_per_class", c.dataset.test_per_class},
           {"train_images", c.dataset.train_images.string()},
           {"train_labels", c.dataset.train_labels.string()},
           {"test_images", c.dataset.test_images.string()},
           {"test_labels", c.dataset.test_labels.string()},
           {"train_files", paths_to_strings(c.dataset.train_files)},
           {"test_files", paths_to_strings(c.dataset.test_files)},
           {"limit", c.dataset.limit},
           {"normalize", c.dataset.normalize}};
    const BackboneConfig& b = c.backbone;
    json bb{{"kind", b.kind},
            {"ipc", b.ipc},
            {"steps", b.steps},
            {"synthetic_lr", b.synthetic_lr},
            {"real_batch", b.real_batch},
            {"reinit_every", b.reinit_every},
            {"net_steps", b.net_steps},
            {"net_lr", b.net_lr},
            {"placement", placement_str(b.placement)},
            {"experts", b.experts},
            {"expert_epochs", b.expert_epochs},
            {"expert_interval", b.expert_interval},
            {"expert_lr", b.expert_lr},
            {"student_steps", b.student_steps},
            {"expert_span", b.expert_span},
            {"max_start", b.max_start},
            {"student_lr", b.student_lr}};
    json methods = json::array();
    for (const auto& m : c.methods)
        methods.push_back(json{{"tag", m.tag},
                               {"r", m.r},
                               {"epsilon", m.epsilon},
                               {"gamma", m.gamma},
                               {"alpha", m.alpha},
                               {"repeats", m.repeats},
                               {"mode", to_string(m.mode)},
                               {"target", target_str(m.target)}});
    json a{{"svd_fractions", c.analysis.svd_fractions},
           {"svd_full", c.analysis.svd_full},
           {"explained_ratio", c.analysis.explained_ratio},
           {"logit_stats", c.analysis.logit_stats},
           {"ood", c.analysis.ood},
           {"ood_samples", c.analysis.ood_samples}};
    json s{{"r", c.sweeps.r}, {"n", c.sweeps.n}, {"ipc", c.sweeps.ipc}, {"mts_r", c.sweeps.mts_r},
           {"repeats", c.sweeps.repeats}};
    json j{{"dataset", d},
           {"net", c.net},
           {"backbone", bb},
           {"mdt", c.mdt ? json(*c.mdt) : json(nullptr)},
           {"full_train", c.full_train},
           {"syn_train", c.syn_train},
           {"methods", methods},
           {"validation_fraction", c.validation_fraction},
           {"bins", c.bins},
           {"analysis", a},
           {"sweeps", s},
           {"seeds", c.seeds},
           {"output_dir", c.output_dir.string()}};
    return j;
}

ExperimentConfig config_from_json(const json& j) {
    ExperimentConfig c;
    try {
        if (j.contains("dataset")) {
            const json& d = j.at("dataset");
            c.dataset.kind = d.value("kind", c.dataset.kind);
            if (d.contains("blobs")) c.dataset.blobs = d.at("blobs").get<BlobSpec>();
            c.dataset.seed_from_run = d.value("seed_from_run", c.dataset.seed_from_run);
            c.dataset.test_per_class = d.value("test_per_class", c.dataset.test_per_class);
            c.dataset.train_images = d.value("train_images", std::string{});
            c.dataset.train_labels = d.value("train_labels", std::string{});
            c.dataset.test_images = d.value("test_images", std::string{});
            c.dataset.test_labels = d.value("test_labels", std::string{});
            c.dataset.train_files = strings_to_paths(d.value("train_files", std::vector<std::string>{}));
            c.dataset.test_files = strings_to_paths(d.value("test_files", std::vector<std::string>{}));
            c.dataset.limit = d.value("limit", c.dataset.limit);
            c.dataset.normalize = d.value("normalize", c.dataset.normalize);
        }
        if (j.contains("net")) c.net = j.at("net").get<NetSpec>();
        if (j.contains("backbone")) {
            const json& b = j.at("backbone");
            BackboneConfig& o = c.backbone;
            o.kind = b.value("kind", o.kind);
            o.ipc = b.value("ipc", o.ipc);
            o.steps = b.value("steps", o.steps);
            o.synthetic_lr = b.value("synthetic_lr", o.synthetic_lr);
            o.real_batch = b.value("real_batch", o.real_batch);
            o.reinit_every = b.value("reinit_every", o.reinit_every);
            o.net_steps = b.value("net_steps", o.net_steps);
            o.net_lr = b.value("net_lr", o.net_lr);
            o.placement = placement_from(b.value("placement", std::string("synthetic")));
            o.experts = b.value("experts", o.experts);
            o.expert_epochs = b.value("expert_epochs", o.expert_epochs);
            o.expert_interval = b.value("expert_interval", o.expert_interval);
            o.expert_lr = b.value("expert_lr", o.expert_lr);
            o.student_steps = b.value("student_steps", o.student_steps);
            o.expert_span = b.value("expert_span", o.expert_span);
            o.max_start = b.value("max_start", o.max_start);
            o.student_lr = b.value("student_lr", o.student_lr);
        }
        if (j.contains("mdt") && !j.at("mdt").is_null()) c.mdt = j.at("mdt").get<MaskSpec>();
        if (j.contains("full_train")) c.full_train = j.at("full_train").get<TrainConfig>();
        if (j.contains("syn_train")) c.syn_train = j.at("syn_train").get<TrainConfig>();
        for (const json& m : j.value("methods", json::array())) {
            MethodConfig mc;
            mc.tag = m.at("tag").get<std::string>();
            mc.r = m.value("r", mc.r);
            mc.epsilon = m.value("epsilon", mc.epsilon);
            mc.gamma = m.value("gamma", mc.gamma);
            mc.alpha = m.value("alpha", mc.alpha);
            mc.repeats = m.value("repeats", mc.repeats);
            mc.mode = fit_mode_from_string(m.value("mode", std::string("converge")));
            mc.target = target_from(m.value("target", std::string("inputs")));
            c.methods.push_back(mc);
        }
        c.validation_fraction = j.value("validation_fraction", c.validation_fraction);
        c.bins = j.value("bins", c.bins);
        if (j.contains("analysis")) {
            const json& a = j.at("analysis");
            c.analysis.svd_fractions = a.value("svd_fractions", c.analysis.svd_fractions);
            c.analysis.svd_full = a.value("svd_full", c.analysis.svd_full);
            c.analysis.explained_ratio = a.value("explained_ratio", c.analysis.explained_ratio);
            c.analysis.logit_stats = a.value("logit_stats", c.analysis.logit_stats);
            c.analysis.ood = a.value("ood", c.analysis.ood);
            c.analysis.ood_samples = a.value("ood_samples", c.analysis.ood_samples);
        }
        if (j.contains("sweeps")) {
            const json& s = j.at("sweeps");
            c.sweeps.r = s.value("r", c.sweeps.r);
            c.sweeps.n = s.value("n", c.sweeps.n);
            c.sweeps.ipc = s.value("ipc", c.sweeps.ipc);
            c.sweeps.mts_r = s.value("mts_r", c.sweeps.mts_r);
            c.sweeps.repeats = s.value("repeats", c.sweeps.repeats);
        }
        c.seeds = j.value("seeds", std::vector<std::uint64_t>{});
        c.output_dir = j.value("output_dir", std::string{});
    } catch (const json::exception& e) {
        throw ConfigError(std::string("config: ") + e.what());
    } catch (const UsageError& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return c;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
    json j;
    try {
        j = json::parse(read_file(path));
    } catch (const json::parse_error& e) {
        throw ConfigError("config " + path.string() + ": " + e.what());
    }
    ExperimentConfig c = config_from_json(j);
    // Relative data paths are taken relative to the config file.
    const auto base = path.parent_path();
    auto fix = [&](std::filesystem::path& p) {
        if (!p.empty() && p.is_relative()) p = base / p;
    };
    fix(c.dataset.train_images);
    fix(c.dataset.train_labels);
    fix(c.dataset.test_images);
    fix(c.dataset.test_labels);
    for (auto& p : c.dataset.train_files) fix(p);
    for (auto& p : c.dataset.test_files) fix(p);
    return c;
}

void ExperimentConfig::validate() const {
    if (seeds.empty()) throw ConfigError("config: seeds must be nonempty");
    for (const auto& m : methods) {
        if (!kMethodTags.count(m.tag)) throw ConfigError("config: unknown method tag '" + m.tag + "'");
        if (m.tag == "mts" && !(m.r >= 0.0 && m.r <= 1.0)) throw ConfigError("config: mts ratio must be in [0, 1]");
        if (m.repeats == 0) throw ConfigError("config: repeats must be >= 1");
    }
    auto need = [](const std::filesystem::path& p, const char* what) {
        if (p.empty()) throw ConfigError(std::string("config: dataset.") + what + " is required");
        if (!std::filesystem::exists(p)) throw ConfigError("config: file not found: " + p.string());
    };
    if (dataset.kind == "idx") {
        need(dataset.train_images, "train_images");
        need(dataset.train_labels, "train_labels");
        need(dataset.test_images, "test_images");
        need(dataset.test_labels, "test_labels");
    } else if (dataset.kind == "cifar10") {
        if (dataset.train_files.empty() || dataset.test_files.empty())
            throw ConfigError("config: cifar10 needs train_files and test_files");
        for (const auto& p : dataset.train_files) need(p, "train_files");
        for (const auto& p : dataset.test_files) need(p, "test_files");
    } else if (dataset.kind != "blobs") {
        throw ConfigError("config: unknown dataset kind '" + dataset.kind + "'");
    }
    if (backbone.kind != "none" && backbone.kind != "dc" && backbone.kind != "mtt")
        throw ConfigError("config: unknown backbone '" + backbone.kind + "'");
    if (backbone.kind != "none" && backbone.ipc == 0) throw ConfigError("config: ipc must be >= 1");
    if (!(validation_fraction > 0.0 && validation_fraction <= 1.0))
        throw ConfigError("config: validation_fraction must be in (0, 1]");
    if (bins == 0) throw ConfigError("config: bins must be >= 1");
    if (mdt) mdt->validate();
    for (double f : sweeps.n)
        if (!(f > 0.0 && f <= 1.0)) throw ConfigError("config: n sweep values must be in (0, 1]");
    for (double r : sweeps.r)
        if (!(r >= 0.0 && r <= 1.0)) throw ConfigError("config: r sweep values must be in [0, 1]");
    if (!analysis.svd_fractions.empty() &&
        (analysis.svd_fractions.front() != 0.0 ||
         !std::is_sorted(analysis.svd_fractions.begin(), analysis.svd_fractions.end())))
        throw ConfigError("config: svd_fractions must be ascending and start at 0");
}

std::string config_hash(const ExperimentConfig& c) {
    // nlohmann::json objects keep keys sorted, so dump() is canonical. The
    // output location does not affect results and is left out.
    json j = to_json_value(c);
    j.erase("output_dir");
    const std::string s = j.dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : s) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

// ---------------------------------------------------------------- record json

namespace {

json hist_json(const Histogram& h) { return json{{"edges", h.edges}, {"counts", h.counts}}; }

Histogram hist_from(const json& j) {
    Histogram h;
    h.edges = j.at("edges").get<std::vector<double>>();
    h.counts = j.at("counts").get<std::vector<std::size_t>>();
    return h;
}

json report_json(const CalibrationReport& r) {
    json bins = json::array();
    for (const Bin& b : r.bins)
        bins.push_back(json::array({b.lo, b.hi, b.count, b.mean_confidence, b.accuracy}));
    return json{{"method", r.method}, {"temperature", r.temperature}, {"mask_ratio", r.mask_ratio},
                {"seed", r.seed},     {"n", r.n},                     {"ece", r.ece},
                {"signed_gap", r.signed_gap}, {"nll", r.nll},         {"accuracy", r.accuracy},
                {"bins", bins}};
}

CalibrationReport report_from(const json& j) {
    CalibrationReport r;
    r.method = j.at("method").get<std::string>();
    r.temperature = j.at("temperature").get<double>();
    r.mask_ratio = j.at("mask_ratio").get<double>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.n = j.at("n").get<std::size_t>();
    r.ece = j.at("ece").get<double>();
    r.signed_gap = j.at("signed_gap").get<double>();
    r.nll = j.at("nll").get<double>();
    r.accuracy = j.at("accuracy").get<double>();
    for (const json& b : j.at("bins"))
        r.bins.push_back(Bin{b[0].get<double>(), b[1].get<double>(), b[2].get<std::size_t>(), b[3].get<double>(),
                             b[4].get<double>()});
    return r;
}

json stats_json(const LogitStats& s) { return json{{"mean", s.mean}, {"sd", s.sd}, {"hist", hist_json(s.hist)}}; }

LogitStats stats_from(const json& j) {
    LogitStats s;
    s.mean = j.at("mean").get<double>();
    s.sd = j.at("sd").get<double>();
    s.hist = hist_from(j.at("hist"));
    return s;
}

json points_json(const std::vector<SweepPoint>& v) {
    json a = json::array();
    for (const auto& p : v)
        a.push_back(json{{"x", p.x}, {"temperature", p.temperature}, {"ece", p.ece}, {"signed_gap", p.signed_gap},
                         {"accuracy", p.accuracy}});
    return a;
}

std::vector<SweepPoint> points_from(const json& a) {
    std::vector<SweepPoint> v;
    for (const json& p : a)
        v.push_back(SweepPoint{p.at("x").get<double>(), p.at("temperature").get<double>(), p.at("ece").get<double>(),
                               p.at("signed_gap").get<double>(), p.at("accuracy").get<double>()});
    return v;
}

json series_json(const std::vector<std::pair<std::string, std::vector<double>>>& v) {
    json a = json::array();
    for (const auto& [k, vals] : v) a.push_back(json{{"source", k}, {"values", vals}});
    return a;
}

std::vector<std::pair<std::string, std::vector<double>>> series_from(const json& a) {
    std::vector<std::pair<std::string, std::vector<double>>> v;
    for (const json& e : a) v.emplace_back(e.at("source").get<std::string>(), e.at("values").get<std::vector<double>>());
    return v;
}

template <class T>
json opt_json(const std::optional<T>& o) {
    return o ? json(*o) : json(nullptr);
}

}  // namespace

json to_json_value(const RunRecord& r) {
    json seeds = json::array();
    for (const SeedRecord& s : r.seeds) {
        json reports = json::array();
        for (const auto& rep : s.reports) reports.push_back(report_json(rep));
        json o{{"seed", s.seed},
               {"ok", s.ok},
               {"error", s.error},
               {"full_accuracy", opt_json(s.full_accuracy)},
               {"model_accuracy", opt_json(s.model_accuracy)},
               {"reports", reports},
               {"full_logits", s.full_logits ? stats_json(*s.full_logits) : json(nullptr)},
               {"model_logits", s.model_logits ? stats_json(*s.model_logits) : json(nullptr)},
               {"svd", series_json(s.svd)},
               {"explained", series_json(s.explained)},
               {"r_sweep", points_json(s.r_sweep)},
               {"n_sweep", points_json(s.n_sweep)},
               {"ipc_sweep", points_json(s.ipc_sweep)},
               {"ipc_raw_ece", s.ipc_raw_ece}};
        if (s.ood)
            o["ood"] = json{{"id_mean", s.ood->id_mean},
                            {"ood_mean", s.ood->ood_mean},
                            {"separation", s.ood->separation},
                            {"id_hist", hist_json(s.ood->id_hist)},
                            {"ood_hist", hist_json(s.ood->ood_hist)}};
        else
            o["ood"] = nullptr;
        seeds.push_back(o);
    }
    return json{{"config_hash", r.config_hash}, {"tool_version", r.tool_version}, {"config", r.config},
                {"seeds", seeds},               {"partial", r.partial},           {"wall_clock_seconds", r.wall_clock_seconds}};
}

RunRecord record_from_json(const json& j) {
    RunRecord r;
    try {
        r.config_hash = j.at("config_hash").get<std::string>();
        r.tool_version = j.at("tool_version").get<std::string>();
        r.config = j.at("config");
        r.partial = j.at("partial").get<bool>();
        r.wall_clock_seconds = j.value("wall_clock_seconds", 0.0);
        for (const json& o : j.at("seeds")) {
            SeedRecord s;
            s.seed = o.at("seed").get<std::uint64_t>();
            s.ok = o.at("ok").get<bool>();
            s.error = o.value("error", std::string{});
            if (!o.at("full_accuracy").is_null()) s.full_accuracy = o.at("full_accuracy").get<double>();
            if (!o.at("model_accuracy").is_null()) s.model_accuracy = o.at("model_accuracy").get<double>();
            for (const json& rep : o.at("reports")) s.reports.push_back(report_from(rep));
            if (!o.at("full_logits").is_null()) s.full_logits = stats_from(o.at("full_logits"));
            if (!o.at("model_logits").is_null()) s.model_logits = stats_from(o.at("model_logits"));
            s.svd = series_from(o.at("svd"));
            s.explained = series_from(o.at("explained"));
            s.r_sweep = points_from(o.at("r_sweep"));
            s.n_sweep = points_from(o.at("n_sweep"));
            s.ipc_sweep = points_from(o.at("ipc_sweep"));
            s.ipc_raw_ece = o.at("ipc_raw_ece").get<std::vector<double>>();
            if (!o.at("ood").is_null()) {
                const json& d = o.at("ood");
                OodReport od;
                od.id_mean = d.at("id_mean").get<double>();
                od.ood_mean = d.at("ood_mean").get<double>();
                od.separation = d.at("separation").get<double>();
                od.id_hist = hist_from(d.at("id_hist"));
                od.ood_hist = hist_from(d.at("ood_hist"));
                s.ood = od;
            }
            r.seeds.push_back(std::move(s));
        }
    } catch (const json::exception& e) {
        throw FormatError(std::string("run record: ") + e.what());
    }
    return r;
}

json payload(const RunRecord& r) {
    json j = to_json_value(r);
    j.erase("wall_clock_seconds");
    j["config"].erase("output_dir");
    return j;
}

void save_record(const std::filesystem::path& path, const RunRecord& r) {
    write_file_atomic(path, to_json_value(r).dump(1) + "\n");
}

RunRecord load_record(const std::filesystem::path& path) {
    try {
        return record_from_json(json::parse(read_file(path)));
    } catch (const json::parse_error& e) {
        throw FormatError("run record " + path.string() + ": " + e.what());
    }
}

std::vector<std::string> RunRecord::methods() const {
    std::vector<std::string> out;
    for (const SeedRecord& s : seeds)
        for (const auto& rep : s.reports)
            if (std::find(out.begin(), out.end(), rep.method) == out.end()) out.push_back(rep.method);
    return out;
}

std::vector<Aggregate> RunRecord::aggregates() const {
    std::vector<Aggregate> out;
    for (const std::string& m : methods()) {
        std::vector<double> ece, gap, acc;
        for (const SeedRecord& s : seeds) {
            if (!s.ok) continue;
            for (const auto& rep : s.reports)
                if (rep.method == m) {
                    ece.push_back(rep.ece);
                    gap.push_back(rep.signed_gap);
                    acc.push_back(rep.accuracy);
                }
        }
        Aggregate a;
        a.method = m;
        a.count = ece.size();
        if (!ece.empty()) {
            a.ece_mean = mean_of(ece);
            a.gap_mean = mean_of(gap);
            a.acc_mean = mean_of(acc);
        }
        if (ece.size() >= 2) {
            a.ece_sd = sample_sd(ece);
            a.gap_sd = sample_sd(gap);
            a.acc_sd = sample_sd(acc);
        }
        out.push_back(a);
    }
    return out;
}

std::vector<std::uint64_t> RunRecord::failed_seeds() const {
    std::vector<std::uint64_t> out;
    for (const SeedRecord& s : seeds)
        if (!s.ok) out.push_back(s.seed);
    return out;
}

// ---------------------------------------------------------------- stages

LoadedData load_data(const DatasetConfig& c, std::uint64_t run_seed) {
    LoadedData d;
    if (c.kind == "blobs") {
        BlobSpec spec = c.blobs;
        if (c.seed_from_run) spec.seed = derive_seed(run_seed, stream::data);
        d.train = gen_blobs(spec);
        BlobSpec test_spec = spec;
        test_spec.per_class = c.test_per_class;
        d.test = gen_blobs_split(test_spec, derive_seed(run_seed, stream::test_data));
        d.test.name = "blobs-test";
    } else if (c.kind == "idx") {
        d.train = load_idx(c.train_images, c.train_labels);
        d.test = load_idx(c.test_images, c.test_labels);
    } else if (c.kind == "cifar10") {
        for (std::size_t i = 0; i < c.train_files.size(); ++i) {
            auto part = load_cifar10_bin(c.train_files[i]);
            d.train = i == 0 ? part : concat(d.train, part);
        }
        for (std::size_t i = 0; i < c.test_files.size(); ++i) {
            auto part = load_cifar10_bin(c.test_files[i]);
            d.test = i == 0 ? part : concat(d.test, part);
        }
    } else {
        throw ConfigError("unknown dataset kind '" + c.kind + "'");
    }
    if (c.limit > 0 && c.limit < d.train.size()) {
        std::vector<std::size_t> idx(c.limit);
        for (std::size_t i = 0; i < c.limit; ++i) idx[i] = i;
        d.train = d.train.subset(idx);
    }
    if (c.normalize) {
        d.train = normalize_dataset(d.train);
        d.test = apply_normalization(d.test, *d.train.normalization);
    }
    return d;
}

namespace {

NetSpec resolve_net(NetSpec net, const LabeledDataset& train) {
    if (net.input_dim == 0) net.input_dim = train.dims();
    if (net.num_classes == 0) net.num_classes = train.num_classes;
    if (net.input_dim != train.dims())
        throw ConfigError("net input_dim " + std::to_string(net.input_dim) + " does not match data dims " +
                          std::to_string(train.dims()));
    if (net.num_classes != train.num_classes) throw ConfigError("net num_classes does not match the dataset");
    net.validate();
    return net;
}

}  // namespace

SyntheticSet distill_for_seed(const ExperimentConfig& c, const LabeledDataset& train, std::uint64_t run_seed,
                              std::optional<std::size_t> ipc_override) {
    const NetSpec net = resolve_net(c.net, train);
    const BackboneConfig& b = c.backbone;
    const std::uint64_t seed = derive_seed(run_seed, stream::distill);
    const std::size_t ipc = ipc_override.value_or(b.ipc);
    if (b.kind == "dc") {
        DcConfig dc;
        dc.net = net;
        dc.ipc = ipc;
        dc.steps = b.steps;
        dc.synthetic_lr = b.synthetic_lr;
        dc.real_batch = b.real_batch;
        dc.reinit_every = b.reinit_every;
        dc.net_steps = b.net_steps;
        dc.net_lr = b.net_lr;
        dc.mask = c.mdt;
        dc.placement = b.placement;
        dc.seed = seed;
        return distill_dc(train, dc);
    }
    if (b.kind == "mtt") {
        std::vector<ExpertTrajectory> experts;
        for (std::size_t e = 0; e < b.experts; ++e)
            experts.push_back(record_trajectory(net, train, b.expert_epochs, b.expert_interval,
                                                derive_seed(derive_seed(run_seed, stream::experts), e), b.expert_lr));
        MttConfig mc;
        mc.ipc = ipc;
        mc.steps = b.steps;
        mc.student_steps = b.student_steps;
        mc.expert_span = b.expert_span;
        mc.max_start = b.max_start;
        mc.student_lr = b.student_lr;
        mc.synthetic_lr = b.synthetic_lr;
        mc.mask = c.mdt;
        mc.seed = seed;
        return distill_mtt(train, experts, mc);
    }
    throw ConfigError("backbone '" + b.kind + "' does not distill");
}

namespace {

struct Model {
    Params params;
    LabeledDataset train;
    TrainConfig train_cfg;
    std::uint64_t init_seed = 0;
};

Model train_model(const NetSpec& net, const LabeledDataset& train, TrainConfig cfg, std::uint64_t run_seed,
                  std::uint64_t init_stream, std::uint64_t train_stream) {
    cfg.seed = derive_seed(run_seed, train_stream);
    const std::uint64_t init_seed = derive_seed(run_seed, init_stream);
    Params p = sgd_train(init_params(net, init_seed), train, cfg).params;
    return Model{std::move(p), train, cfg, init_seed};
}

TemperatureModel fit_mts(const Params& p, const LabeledDataset& val, double r, std::size_t repeats, FitMode mode,
                         MaskTarget target, std::uint64_t run_seed) {
    TemperatureFitSpec fs;
    fs.mode = mode;
    fs.target = target;
    fs.repeats = repeats;
    fs.mask = MaskSpec::fixed(r, derive_seed(run_seed, stream::mts_mask));
    return fit_temperature(p, val, fs);
}

LabeledDataset validation_split(const LabeledDataset& train, double fraction, std::uint64_t run_seed) {
    return split_per_class(train, SplitSpec{fraction, true, derive_seed(run_seed, stream::validation)}).first;
}

SweepPoint sweep_point(double x, const TemperatureModel& tm, const Tensor& logits, std::span<const int> labels,
                       std::size_t bins) {
    const CalibrationReport rep = calibration_report(logits, labels, tm.temperature, bins);
    return SweepPoint{x, tm.temperature, rep.ece, rep.signed_gap, rep.accuracy};
}

void run_seed(const ExperimentConfig& c, SeedRecord& rec) {
    const std::uint64_t s = rec.seed;
    const LoadedData data = load_data(c.dataset, s);
    const NetSpec net = resolve_net(c.net, data.train);
    const bool distilled = c.backbone.kind != "none";
    const std::vector<double>& fr = c.analysis.svd_fractions;

    std::optional<Model> full;
    if (!distilled || c.analysis.logit_stats)
        full = train_model(net, data.train, c.full_train, s, stream::full_init, stream::full_train);

    std::optional<Model> model;
    if (distilled) {
        const SyntheticSet syn = distill_for_seed(c, data.train, s);
        model = train_model(net, syn.as_dataset(), c.syn_train, s, stream::syn_init, stream::syn_train);
    } else {
        model = full;
    }

    const Tensor logits = forward_logits(model->params, data.test.examples);
    const auto& labels = data.test.labels;
    rec.model_accuracy = accuracy_of(logits, labels);
    if (full) rec.full_accuracy = evaluate(full->params, data.test).accuracy;

    CalibrationReport raw = calibration_report(logits, labels, 1.0, c.bins, "raw");
    raw.seed = s;
    rec.reports.push_back(raw);

    const LabeledDataset val = validation_split(model->train, c.validation_fraction, s);
    for (const MethodConfig& m : c.methods) {
        CalibrationReport rep;
        if (m.tag == "ts" || m.tag == "mts") {
            const double r = m.tag == "ts" ? 0.0 : m.r;
            const TemperatureModel tm = fit_mts(model->params, val, r, m.repeats, m.mode, m.target, s);
            rep = calibration_report(logits, labels, tm.temperature, c.bins, m.label());
            rep.mask_ratio = r;
        } else {
            TrainConfig tc = model->train_cfg;
            tc.loss = LossSpec{};
            tc.loss.kind = m.tag == "ls"      ? LossKind::label_smoothing
                           : m.tag == "focal" ? LossKind::focal
                                              : LossKind::mixup;
            tc.loss.epsilon = m.epsilon;
            tc.loss.gamma = m.gamma;
            tc.loss.alpha = m.alpha;
            const Params p = sgd_train(init_params(net, model->init_seed), model->train, tc).params;
            rep = calibration_report(forward_logits(p, data.test.examples), labels, 1.0, c.bins, m.label());
        }
        rep.seed = s;
        rec.reports.push_back(rep);
    }

    if (c.analysis.logit_stats && data.test.size() >= 2) {
        if (full) rec.full_logits = max_logit_stats(forward_logits(full->params, data.test.examples));
        rec.model_logits = max_logit_stats(logits);
    }

    if (!fr.empty()) {
        const std::vector<std::uint64_t> sweep_seed{derive_seed(s, stream::svd)};
        auto first_column = [](const SvdSweepResult& r) {
            std::vector<double> v;
            for (const auto& row : r.accuracy) v.push_back(row.front());
            return v;
        };
        if (c.analysis.svd_full || !distilled)
            rec.svd.emplace_back("full", first_column(svd_accuracy_sweep(data.train, data.test, fr, net, c.full_train,
                                                                         sweep_seed, "full")));
        if (distilled)
            rec.svd.emplace_back("distilled", first_column(svd_accuracy_sweep(model->train, data.test, fr, net,
                                                                              c.syn_train, sweep_seed, "distilled")));
    }
    if (c.analysis.explained_ratio) {
        rec.explained.emplace_back("full", explained_ratio(data.train));
        if (distilled) rec.explained.emplace_back("distilled", explained_ratio(model->train));
    }

    for (double r : c.sweeps.r) {
        const auto tm = fit_mts(model->params, val, r, c.sweeps.repeats, FitMode::converge, MaskTarget::inputs, s);
        rec.r_sweep.push_back(sweep_point(r, tm, logits, labels, c.bins));
    }
    for (double n : c.sweeps.n) {
        const LabeledDataset val_n = validation_split(model->train, n, s);
        const auto tm =
            fit_mts(model->params, val_n, c.sweeps.mts_r, c.sweeps.repeats, FitMode::converge, MaskTarget::inputs, s);
        rec.n_sweep.push_back(sweep_point(n, tm, logits, labels, c.bins));
    }
    for (std::size_t ipc : c.sweeps.ipc) {
        if (!distilled) throw ConfigError("ipc sweep needs a distillation backbone");
        const SyntheticSet syn = distill_for_seed(c, data.train, s, ipc);
        const Model m = train_model(net, syn.as_dataset(), c.syn_train, s, stream::syn_init, stream::syn_train);
        const Tensor lg = forward_logits(m.params, data.test.examples);
        const auto tm = fit_mts(m.params, validation_split(m.train, c.validation_fraction, s), c.sweeps.mts_r,
                                c.sweeps.repeats, FitMode::converge, MaskTarget::inputs, s);
        SweepPoint p = sweep_point(static_cast<double>(ipc), tm, lg, labels, c.bins);
        rec.ipc_sweep.push_back(p);
        rec.ipc_raw_ece.push_back(calibration_report(lg, labels, 1.0, c.bins).ece);
    }

    if (c.analysis.ood) {
        double lo = data.train.examples.data()[0], hi = lo;
        for (double v : data.train.examples.data()) {
            lo = std::min(lo, v);
            hi = std::max(hi, v);
        }
        const LabeledDataset noise =
            uniform_noise_like(data.test, c.analysis.ood_samples, lo, hi, derive_seed(s, stream::ood));
        rec.ood = ood_confidence_compare(model->params, data.test, noise);
    }
}

}  // namespace

RunRecord run_pipeline(const ExperimentConfig& config) {
    config.validate();
    const auto t0 = std::chrono::steady_clock::now();
    RunRecord record;
    record.config = to_json_value(config);
    record.config_hash = config_hash(config);
    for (std::uint64_t seed : config.seeds) {
        SeedRecord rec;
        rec.seed = seed;
        try {
            run_seed(config, rec);
            rec.ok = true;
        } catch (const std::exception& e) {
            // Keep the seed with whatever stages finished; later seeds still run.
            rec.ok = false;
            rec.error = e.what();
            record.partial = true;
        }
        record.seeds.push_back(std::move(rec));
    }
    record.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    if (!config.output_dir.empty()) {
        std::error_code ec;
        std::filesystem::create_directories(config.output_dir, ec);
        if (ec) throw IoError("cannot create output directory " + config.output_dir.string() + ": " + ec.message());
        save_record(config.output_dir / "record.json", record);
    }
    return record;
}

}  // namespace ddcal
