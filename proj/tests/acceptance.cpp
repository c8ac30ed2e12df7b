// Acceptance suite: one PASS/FAIL line per criterion; exit status 1 if any fail.
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <functional>
#include <sstream>
#include <string>
#include <vector>

#include "ddcal/analysis.hpp"
#include "ddcal/autodiff.hpp"
#include "ddcal/calib.hpp"
#include "ddcal/distill.hpp"
#include "ddcal/error.hpp"
#include "ddcal/losses.hpp"
#include "ddcal/meta.hpp"
#include "ddcal/pipeline.hpp"

using namespace ddcal;

namespace {

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char* f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

Tensor random_tensor(Rng& rng, Shape shape, double lo = -2.0, double hi = 2.0, double avoid_zero = 0.0) {
    Tensor t(std::move(shape));
    for (double& v : t.data()) {
        do v = rng.uniform(lo, hi);
        while (std::abs(v) < avoid_zero);
    }
    return t;
}

// ---------------------------------------------------------------- 1

double unary_error(const std::function<Var(const Var&)>& op, const Tensor& x, const Tensor& w) {
    Var xv = leaf(x);
    const Var wrt[] = {xv};
    const Tensor analytic = grad_values(ops::sum(ops::mul(op(xv), constant(w))), wrt)[0];
    const Tensor numeric = fd_grad(
        [&](const Tensor& p) { return ops::sum(ops::mul(op(constant(p)), constant(w))).value().item(); }, x, 1e-5);
    return relative_error(analytic, numeric);
}

Outcome criterion1() {
    double worst = 0.0;
    std::size_t checks = 0;
    auto note = [&](double e) {
        worst = std::max(worst, e);
        ++checks;
    };
    for (int inst = 0; inst < 100; ++inst) {
        Rng rng(derive_seed(9001, static_cast<std::uint64_t>(inst)));
        const Tensor a = random_tensor(rng, {3, 4}), b = random_tensor(rng, {4, 2}), w = random_tensor(rng, {3, 2});
        note(unary_error([&](const Var& v) { return ops::matmul(v, constant(b)); }, a, w));
        note(unary_error([&](const Var& v) { return ops::matmul(constant(a), v); }, b, w));
        const Tensor x = random_tensor(rng, {6}), y = random_tensor(rng, {6}), w6 = random_tensor(rng, {6});
        note(unary_error([&](const Var& v) { return ops::add(v, constant(y)); }, x, w6));
        note(unary_error([&](const Var& v) { return ops::sub(constant(y), v); }, x, w6));
        note(unary_error([&](const Var& v) { return ops::mul(v, constant(y)); }, x, w6));
        note(unary_error([&](const Var& v) { return ops::exp(v); }, x, w6));
        note(unary_error([&](const Var& v) { return ops::relu(v); }, random_tensor(rng, {6}, -2, 2, 1e-3), w6));
        note(unary_error([&](const Var& v) { return ops::log(v); }, random_tensor(rng, {6}, 0.2, 2.0), w6));
        note(unary_error([&](const Var& v) { return ops::pow(v, -0.5); }, random_tensor(rng, {6}, 0.2, 2.0), w6));
        const Tensor m = random_tensor(rng, {3, 4}), wm = random_tensor(rng, {3, 4});
        note(unary_error([](const Var& v) { return ops::log_softmax(v); }, m, wm));
        note(unary_error([](const Var& v) { return ops::transpose(v); }, m, random_tensor(rng, {4, 3})));
        note(unary_error([](const Var& v) { return ops::reshape(ops::mean(v), Shape{1}); }, m, Tensor::vector({0.9})));
        note(unary_error([](const Var& v) { return ops::reshape(ops::l2_norm(v), Shape{1}); }, m, Tensor::vector({0.7})));
        note(unary_error([&](const Var& v) { return ops::add_row_bias(constant(m), v); }, random_tensor(rng, {4}), wm));
        const Tensor img = random_tensor(rng, {2, 32}), k = random_tensor(rng, {18, 3});
        note(unary_error([&](const Var& v) { return ops::conv3x3(v, constant(k), 2, 4, 4); }, img,
                         random_tensor(rng, {2, 48})));
        note(unary_error([&](const Var& v) { return ops::conv3x3(constant(img), v, 2, 4, 4); }, k,
                         random_tensor(rng, {2, 48})));
        note(unary_error([](const Var& v) { return ops::avg_pool2x2(v, 2, 4, 4); }, img, random_tensor(rng, {2, 8})));
        note(unary_error([](const Var& v) { return ops::instance_norm(v, 2, 16); }, img, random_tensor(rng, {2, 32})));
    }
    const bool prim_ok = worst <= 1e-4;

    // Meta-gradients of the two distillation criteria.
    double meta_worst = 0.0;
    std::size_t meta_checked = 0, kinks = 0;
    const NetSpec spec = NetSpec::mlp(3, {4}, 2);
    LabeledDataset tiny;
    {
        Rng rng(5);
        tiny.examples = random_tensor(rng, {8, 3});
        tiny.labels = {0, 1, 0, 1, 0, 1, 0, 1};
        tiny.num_classes = 2;
        tiny.example_shape = {3};
    }
    for (int inst = 0; inst < 20; ++inst) {
        Rng rng(derive_seed(4242, static_cast<std::uint64_t>(inst)));
        const Tensor real = random_tensor(rng, {4, 3});
        const Tensor syn = random_tensor(rng, {2, 3});
        const std::vector<int> real_y{0, 1, 0, 1}, syn_y{0, 1};
        const auto params = init_params(spec, static_cast<std::uint64_t>(inst)).leaves();
        auto dc = [&](const Var& s) { return dc_loss(spec, params, real, real_y, s, syn_y); };
        const auto exact = meta_grad(dc, syn);
        const auto fd = meta_grad_fd(dc, syn);
        if (fd.near_kink) {
            ++kinks;
        } else {
            meta_worst = std::max(meta_worst, relative_error(exact.gradient, fd.gradient));
            ++meta_checked;
        }

        const ExpertTrajectory traj = record_trajectory(spec, tiny, 3, 1, static_cast<std::uint64_t>(inst), 0.1, 4);
        const int n = 1 + inst % 3;
        auto mtt = [&](const Var& s) { return mtt_loss(spec, s, syn_y, traj, 0, 2, n, 0.1); };
        const auto exact_m = meta_grad(mtt, syn);
        const auto fd_m = meta_grad_fd(mtt, syn);
        if (fd_m.near_kink) {
            ++kinks;
        } else {
            meta_worst = std::max(meta_worst, relative_error(exact_m.gradient, fd_m.gradient));
            ++meta_checked;
        }
    }
    const bool meta_ok = meta_worst <= 1e-3 && meta_checked >= 30;
    return {prim_ok && meta_ok,
            fmt("primitives: %zu checks, worst rel err %.2e (<=1e-4); meta: %zu checked, %zu near a ReLU kink, worst "
                "rel err %.2e (<=1e-3)",
                checks, worst, meta_checked, kinks, meta_worst)};
}

// ---------------------------------------------------------------- 2

Outcome criterion2() {
    bool ok = true;
    std::vector<std::string> notes;

    // MTS(r=0) vs plain TS, both fit modes, several seeds.
    BlobSpec b{4, 30, 12, 1.0, 1.5, 3};
    const LabeledDataset ds = gen_blobs(b);
    const NetSpec net = NetSpec::mlp(12, {16}, 4);
    TrainConfig tc;
    tc.epochs = 20;
    tc.seed = 1;
    const Params p = sgd_train(init_params(net, 2), ds, tc).params;
    for (FitMode mode : {FitMode::converge, FitMode::paper_faithful}) {
        for (std::uint64_t seed : {0ULL, 7ULL, 123ULL}) {
            TemperatureFitSpec plain;
            plain.mode = mode;
            TemperatureFitSpec masked = plain;
            masked.mask = MaskSpec::fixed(0.0, seed);
            masked.repeats = 3;
            const double t0 = fit_temperature(p, ds, plain).temperature;
            const double t1 = fit_temperature(p, ds, masked).temperature;
            if (t0 != t1) {
                ok = false;
                notes.push_back(fmt("MTS(r=0) T %.17g != TS T %.17g", t1, t0));
            }
        }
    }

    // Masked distillation criteria with r = 0.
    Rng rng(11);
    const auto params = init_params(net, 5).leaves();
    const Tensor real = ds.examples.rows(0, 16);
    const std::vector<int> real_y(ds.labels.begin(), ds.labels.begin() + 16);
    const Tensor syn = ds.examples.rows(40, 48);
    const std::vector<int> syn_y(ds.labels.begin() + 40, ds.labels.begin() + 48);
    const Tensor ones = make_masks(8, 12, MaskSpec::fixed(0.0, 1), rng);
    const double dc_plain = dc_loss(net, params, real, real_y, constant(syn), syn_y).value().item();
    const double dc_masked = dc_loss(net, params, real, real_y, constant(syn), syn_y, &ones).value().item();
    if (dc_plain != dc_masked) {
        ok = false;
        notes.push_back("dc_loss(r=0) differs from unmasked");
    }
    const ExpertTrajectory traj = record_trajectory(net, ds, 2, 2, 9);
    const std::vector<Tensor> step_masks(2, ones);
    const double mtt_plain = mtt_loss(net, constant(syn), syn_y, traj, 0, 2, 2, 0.05).value().item();
    const double mtt_masked = mtt_loss(net, constant(syn), syn_y, traj, 0, 2, 2, 0.05, step_masks).value().item();
    if (mtt_plain != mtt_masked) {
        ok = false;
        notes.push_back("mtt_loss(r=0) differs from unmasked");
    }
    DcConfig dc;
    dc.net = net;
    dc.ipc = 2;
    dc.steps = 10;
    dc.seed = 4;
    const SyntheticSet s_plain = distill_dc(ds, dc);
    dc.mask = MaskSpec::fixed(0.0, 99);
    const SyntheticSet s_masked = distill_dc(ds, dc);
    if (!(s_plain.images == s_masked.images)) {
        ok = false;
        notes.push_back("distill_dc with r=0 differs from unmasked");
    }

    // Cardinality oracle in integer arithmetic: floor(i * D / 10).
    std::size_t masks_checked = 0;
    for (std::size_t d : {1u, 7u, 10u, 32u, 64u, 100u, 784u, 3072u}) {
        for (std::size_t i = 0; i <= 9; ++i) {
            const double r = static_cast<double>(i) / 10.0;
            const std::size_t expect = i * d / 10;
            Rng mr(derive_seed(d, i));
            const Tensor m = make_masks(5, d, MaskSpec::fixed(r, i), mr);
            for (std::size_t row = 0; row < 5; ++row) {
                const auto v = m.row(row);
                const auto zeros = static_cast<std::size_t>(std::count(v.begin(), v.end(), 0.0));
                const auto ones_n = static_cast<std::size_t>(std::count(v.begin(), v.end(), 1.0));
                if (zeros != expect || zeros + ones_n != d) {
                    ok = false;
                    notes.push_back(fmt("mask d=%zu r=%.1f has %zu zeros, expected %zu", d, r, zeros, expect));
                }
                ++masks_checked;
            }
        }
    }
    std::string detail = fmt("MTS(r=0)==TS bitwise over 6 fits; dc/mtt/distill r=0 identical; %zu masks exact",
                             masks_checked);
    for (const auto& n : notes) detail += "; " + n;
    return {ok, detail};
}

// ---------------------------------------------------------------- 3

double oracle_ece(const std::vector<double>& conf, const std::vector<char>& correct, std::size_t m) {
    const double M = static_cast<double>(m);
    double ece = 0.0;
    for (std::size_t b = 0; b < m; ++b) {
        const double lo = static_cast<double>(b) / M, hi = static_cast<double>(b + 1) / M;
        std::size_t count = 0, hits = 0;
        double sum = 0.0;
        for (std::size_t i = 0; i < conf.size(); ++i) {
            const bool in = (conf[i] > lo && conf[i] <= hi) || (b == 0 && conf[i] == 0.0);
            if (!in) continue;
            ++count;
            sum += conf[i];
            hits += correct[i] ? 1 : 0;
        }
        if (count == 0) continue;
        const double n = static_cast<double>(count);
        ece += (n / static_cast<double>(conf.size())) * std::abs(sum / n - static_cast<double>(hits) / n);
    }
    return ece;
}

Outcome criterion3() {
    std::size_t mismatches = 0;
    double worst = 0.0;
    for (int t = 0; t < 1000; ++t) {
        Rng rng(derive_seed(333, static_cast<std::uint64_t>(t)));
        const std::size_t n = 1 + rng.index(200);
        const std::size_t bins = t % 3 == 0 ? 15 : 1 + rng.index(30);
        std::vector<double> conf(n);
        std::vector<char> correct(n);
        for (std::size_t i = 0; i < n; ++i) {
            // Every fourth value sits exactly on a bin edge.
            conf[i] = i % 4 == 0 ? static_cast<double>(rng.index(bins + 1)) / static_cast<double>(bins) : rng.uniform();
            correct[i] = rng.uniform() < conf[i] ? 1 : 0;
        }
        const double got = compute_ece(reliability_bins(conf, correct, bins), n);
        const double want = oracle_ece(conf, correct, bins);
        if (got != want) ++mismatches;
        worst = std::max(worst, std::abs(got - want));
    }
    const std::vector<double> conf{0.9, 0.9, 0.6, 0.6};
    const std::vector<char> correct{1, 0, 1, 1};
    const double hand = compute_ece(reliability_bins(conf, correct, 15), 4);
    const bool ok = mismatches == 0 && std::abs(hand - 0.4) <= 1e-12;
    return {ok, fmt("1000 random sets: %zu mismatches (max |diff| %.1e); 4-sample case ECE = %.15f", mismatches,
                    worst, hand)};
}

// ---------------------------------------------------------------- 4

Outcome criterion4() {
    // Labels drawn from softmax(z) make z calibrated; c * z needs T = c.
    const std::size_t n = 20000, k = 5;
    Rng rng(44);
    Tensor z(Shape{n, k});
    std::vector<int> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
        double mx = -1e300;
        for (std::size_t j = 0; j < k; ++j) {
            z.at(i, j) = rng.normal(0.0, 2.0);
            mx = std::max(mx, z.at(i, j));
        }
        std::vector<double> p(k);
        double s = 0.0;
        for (std::size_t j = 0; j < k; ++j) s += p[j] = std::exp(z.at(i, j) - mx);
        double u = rng.uniform() * s;
        std::size_t y = 0;
        while (y + 1 < k && u > p[y]) u -= p[y++];
        labels[i] = static_cast<int>(y);
    }
    bool ok = true;
    std::string detail;
    for (double c : {2.0, 3.0, 5.0}) {
        Tensor scaled = z;
        for (double& v : scaled.data()) v *= c;
        TemperatureFitSpec fs;
        const double t = fit_temperature(scaled, labels, fs).temperature;
        double best_t = 0.0, best = 1e300;
        for (int g = 0; g <= 3000; ++g) {
            const double tg = c - 1.5 + 1e-3 * g;
            const double v = nll(scaled, labels, tg);
            if (v < best) {
                best = v;
                best_t = tg;
            }
        }
        const bool this_ok = std::abs(t - c) <= 0.1 && std::abs(t - best_t) <= 1e-3 + 1e-9;
        ok = ok && this_ok;
        detail += fmt("c=%g: T=%.4f grid=%.3f%s ", c, t, best_t, this_ok ? "" : " (FAIL)");
    }
    return {ok, detail};
}

// ---------------------------------------------------------------- pipeline configs

ExperimentConfig blobs_config() {
    ExperimentConfig c;
    c.dataset.kind = "blobs";
    c.dataset.blobs = BlobSpec{10, 200, 64, 1.0, 0.4, 0};
    c.dataset.test_per_class = 200;
    c.net = NetSpec::mlp(64, {64}, 10);
    c.backbone.kind = "dc";
    c.backbone.ipc = 10;
    c.backbone.steps = 200;
    c.backbone.synthetic_lr = 0.3;
    c.full_train.epochs = 30;
    c.full_train.lr = 0.05;
    c.full_train.batch_size = 64;
    c.syn_train.epochs = 1000;
    c.syn_train.lr = 0.1;
    c.syn_train.batch_size = 256;
    MethodConfig ts;
    ts.tag = "ts";
    MethodConfig ls;
    ls.tag = "ls";
    ls.epsilon = 0.1;
    c.methods = {ts, ls};
    c.analysis.svd_fractions = {0.0, 0.1, 0.15, 0.2};
    c.analysis.svd_full = true;
    c.analysis.logit_stats = true;
    c.sweeps.r = {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9};
    c.sweeps.n = {0.1, 0.2, 0.3, 0.4, 0.5};
    c.sweeps.mts_r = 0.5;
    c.seeds = {0, 1, 2};
    return c;
}

const CalibrationReport* report_of(const SeedRecord& s, const std::string& m) {
    for (const auto& r : s.reports)
        if (r.method == m) return &r;
    return nullptr;
}

std::string seed_errors(const RunRecord& r) {
    std::string s;
    for (const auto& sr : r.seeds)
        if (!sr.ok) s += fmt(" [seed %llu failed: %s]", static_cast<unsigned long long>(sr.seed), sr.error.c_str());
    return s;
}

double svd_value(const SeedRecord& s, const std::string& source, std::size_t i) {
    for (const auto& [k, v] : s.svd)
        if (k == source) return v.at(i);
    throw UsageError("no svd series " + source);
}

// ---------------------------------------------------------------- 5 - 9

Outcome criterion5(const RunRecord& rec) {
    int good = 0;
    std::string detail;
    for (const auto& s : rec.seeds) {
        if (!s.ok) continue;
        const double gap = report_of(s, "raw")->signed_gap;
        const double sd_dd = s.model_logits->sd, sd_fd = s.full_logits->sd;
        const bool ok = gap > 0.0 && sd_dd < sd_fd;
        good += ok;
        detail += fmt("seed %llu: gap %+.4f, max-logit sd DD %.3f vs FD %.3f; ", static_cast<unsigned long long>(s.seed),
                      gap, sd_dd, sd_fd);
    }
    return {good >= 2, fmt("%d/3 seeds. ", good) + detail + seed_errors(rec)};
}

Outcome criterion6(const RunRecord& rec) {
    int mts_good = 0, ls_good = 0;
    std::string detail;
    for (const auto& s : rec.seeds) {
        if (!s.ok) continue;
        const CalibrationReport* ts = report_of(s, "ts");
        const CalibrationReport* ls = report_of(s, "ls(eps=0.1)");
        const SweepPoint* best = nullptr;
        for (const auto& p : s.r_sweep)
            if (p.x <= 0.5 + 1e-12 && (!best || p.ece < best->ece)) best = &p;
        const bool m_ok = best->ece <= ts->ece && best->signed_gap >= -0.02;
        const bool l_ok = ls->signed_gap < best->signed_gap;
        mts_good += m_ok;
        ls_good += l_ok;
        detail += fmt("seed %llu: TS ece %.4f; best MTS r=%.1f ece %.4f gap %+.4f; LS gap %+.4f; ",
                      static_cast<unsigned long long>(s.seed), ts->ece, best->x, best->ece, best->signed_gap,
                      ls->signed_gap);
    }
    return {mts_good >= 2 && ls_good >= 2, fmt("MTS %d/3, LS %d/3. ", mts_good, ls_good) + detail};
}

Outcome criterion7(const RunRecord& rec) {
    int good = 0;
    std::string detail;
    for (const auto& s : rec.seeds) {
        if (!s.ok) continue;
        const double full_drop = svd_value(s, "full", 0) - svd_value(s, "full", 3);
        const double dd_drop = svd_value(s, "distilled", 0) - svd_value(s, "distilled", 3);
        good += dd_drop > full_drop;
        detail += fmt("seed %llu: drop@20%% distilled %.3f vs full %.3f; ", static_cast<unsigned long long>(s.seed),
                      dd_drop, full_drop);
    }
    // Eckart-Young on a random matrix and on blob data.
    double worst = 0.0;
    Rng rng(77);
    const Tensor a = random_tensor(rng, {30, 20});
    const Tensor blobs = gen_blobs(BlobSpec{5, 20, 16, 1.0, 1.0, 3}).examples;
    for (const Tensor* m : {&a, &blobs}) {
        for (double f : {0.1, 0.2, 0.5}) {
            const Truncation t = truncate_top_singular(*m, f);
            double err = 0.0;
            for (std::size_t i = 0; i < m->size(); ++i) err += std::pow((*m)[i] - t.matrix[i], 2);
            worst = std::max(worst, std::abs(std::sqrt(err) - std::sqrt(t.dropped_energy)));
        }
    }
    const bool ey = worst <= 1e-8;
    return {good >= 2 && ey, fmt("%d/3 seeds with larger distilled drop. ", good) + detail +
                                 fmt("Eckart-Young max deviation %.2e", worst)};
}

Outcome criterion8(const RunRecord& plain, const RunRecord& mdt) {
    int good = 0;
    std::vector<double> acc_plain, acc_mdt;
    std::string detail;
    for (std::size_t i = 0; i < plain.seeds.size() && i < mdt.seeds.size(); ++i) {
        const auto& p = plain.seeds[i];
        const auto& m = mdt.seeds[i];
        if (!p.ok || !m.ok) continue;
        acc_plain.push_back(*p.model_accuracy);
        acc_mdt.push_back(*m.model_accuracy);
        auto sweep_drop = [](const SeedRecord& s) {
            double d = 0.0;
            for (std::size_t f = 1; f <= 3; ++f) d += svd_value(s, "distilled", 0) - svd_value(s, "distilled", f);
            return d / 3.0;
        };
        const double dp = sweep_drop(p), dm = sweep_drop(m);
        good += dm <= dp;
        detail += fmt("seed %llu: acc plain %.3f MDT %.3f, mean drop 10-20%% plain %.3f MDT %.3f; ",
                      static_cast<unsigned long long>(p.seed), *p.model_accuracy, *m.model_accuracy, dp, dm);
    }
    const double diff = acc_plain.empty() ? 1.0 : std::abs(mean_of(acc_plain) - mean_of(acc_mdt));
    return {diff <= 0.02 && good >= 2,
            fmt("mean accuracy gap %.4f (<=0.02); %d/3 seeds with MDT drop <= plain. ", diff, good) + detail +
                seed_errors(mdt)};
}

std::size_t csv_rows(const std::string& csv) {
    return static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')) - 1;
}

Outcome criterion9(const RunRecord& rec) {
    const std::string r_csv = curve_csv(rec, "r_sweep");
    const std::string n_csv = curve_csv(rec, "n_sweep");
    const std::size_t r_rows = csv_rows(r_csv), n_rows = csv_rows(n_csv);
    std::vector<double> means, sds;
    for (std::size_t i = 0; i < 5; ++i) {
        std::vector<double> e;
        for (const auto& s : rec.seeds)
            if (s.ok) e.push_back(s.n_sweep.at(i).ece);
        means.push_back(mean_of(e));
        sds.push_back(sample_sd(e));
    }
    const double variation = *std::max_element(means.begin(), means.end()) - *std::min_element(means.begin(), means.end());
    const double seed_sd = mean_of(sds);
    const bool ok = r_rows == 9 && n_rows == 5 && variation <= 2.0 * seed_sd;
    return {ok, fmt("r_sweep rows %zu, n_sweep rows %zu; MTS ECE range over N %.4f vs 2 x seed sd %.4f", r_rows,
                    n_rows, variation, 2.0 * seed_sd)};
}

// ---------------------------------------------------------------- 10, 11

Outcome criterion10() {
    ExperimentConfig c = blobs_config();
    c.backbone.ipc = 1;
    c.backbone.steps = 100;
    c.syn_train.epochs = 300;
    MethodConfig ts, mts;
    ts.tag = "ts";
    mts.tag = "mts";
    mts.r = 0.5;
    c.methods = {ts, mts};
    c.analysis = AnalysisConfig{};
    c.analysis.logit_stats = false;
    c.sweeps = SweepConfig{};
    const RunRecord rec = run_pipeline(c);
    bool ok = !rec.partial;
    std::string detail;
    for (const auto& s : rec.seeds) {
        if (!s.ok) continue;
        const CalibrationReport* r = report_of(s, "mts(r=0.5)");
        ok = ok && r && std::isfinite(r->ece) && std::isfinite(r->temperature) && std::isfinite(r->signed_gap);
        detail += fmt("seed %llu: T %.3f ece %.4f; ", static_cast<unsigned long long>(s.seed), r->temperature, r->ece);
    }
    // The validation rule itself: IPC=1 gives validation = whole synthetic set.
    const LoadedData d = load_data(c.dataset, 0);
    const LabeledDataset syn = distill_for_seed(c, d.train, 0).as_dataset();
    const auto [val, rest] = split_per_class(syn, SplitSpec{0.1, true, 1});
    ok = ok && val.size() == syn.size() && rest.size() == syn.size();
    return {ok, detail + fmt("validation %zu of %zu synthetic examples", val.size(), syn.size()) + seed_errors(rec)};
}

Outcome criterion11() {
    ExperimentConfig c;
    c.dataset.blobs = BlobSpec{3, 60, 16, 1.0, 1.0, 0};
    c.dataset.test_per_class = 50;
    c.net = NetSpec::mlp(16, {16}, 3);
    c.backbone.kind = "dc";
    c.backbone.ipc = 3;
    c.backbone.steps = 30;
    c.mdt = MaskSpec::fixed(0.2, 5);
    c.full_train.epochs = 10;
    c.syn_train.epochs = 50;
    for (const char* tag : {"ts", "mts", "ls", "focal", "mixup"}) {
        MethodConfig m;
        m.tag = tag;
        m.r = 0.3;
        c.methods.push_back(m);
    }
    c.analysis.svd_fractions = {0.0, 0.2};
    c.analysis.explained_ratio = true;
    c.analysis.ood = true;
    c.sweeps.r = {0.1, 0.5};
    c.sweeps.n = {0.2, 0.4};
    c.sweeps.ipc = {1, 2};
    c.seeds = {3, 8};
    const std::filesystem::path dir = std::filesystem::temp_directory_path() / "ddcal_acceptance_c11";
    c.output_dir = dir / "first";
    const RunRecord first = run_pipeline(c);
    // Re-execute from the configuration stored inside the persisted record.
    const RunRecord loaded = load_record(dir / "first" / "record.json");
    ExperimentConfig again = config_from_json(loaded.config);
    again.output_dir = dir / "second";
    const RunRecord second = run_pipeline(again);
    const bool same = payload(first).dump() == payload(second).dump() && payload(loaded).dump() == payload(first).dump();
    std::filesystem::remove_all(dir);
    return {same && !first.partial,
            fmt("config hash %s; payloads %s", first.config_hash.c_str(), same ? "identical" : "DIFFER") +
                seed_errors(first)};
}

}  // namespace

int main(int argc, char** argv) {
    // Optional arguments select criteria by number; default runs all.
    std::vector<int> only;
    for (int i = 1; i < argc; ++i) only.push_back(std::atoi(argv[i]));
    int failures = 0;
    auto report = [&](int id, const std::function<Outcome()>& fn) {
        if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) return;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = fn();
        } catch (const std::exception& e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        std::printf("criterion %2d: %s (%.1fs) %s\n", id, o.pass ? "PASS" : "FAIL", secs, o.detail.c_str());
        std::fflush(stdout);
        failures += o.pass ? 0 : 1;
    };

    report(1, criterion1);
    report(2, criterion2);
    report(3, criterion3);
    report(4, criterion4);

    RunRecord plain, mdt;
    bool have_plain = false;
    auto get_plain = [&]() -> const RunRecord& {
        if (!have_plain) {
            plain = run_pipeline(blobs_config());
            have_plain = true;
        }
        return plain;
    };
    report(5, [&] { return criterion5(get_plain()); });
    report(6, [&] { return criterion6(get_plain()); });
    report(7, [&] { return criterion7(get_plain()); });
    report(8, [&] {
        ExperimentConfig c = blobs_config();
        c.mdt = MaskSpec::fixed(0.1, 0);
        c.methods.clear();
        c.analysis.svd_full = false;
        c.analysis.logit_stats = false;
        c.sweeps = SweepConfig{};
        mdt = run_pipeline(c);
        return criterion8(get_plain(), mdt);
    });
    report(9, [&] { return criterion9(get_plain()); });
    report(10, criterion10);
    report(11, criterion11);

    std::printf("%d criteria failed\n", failures);
    return failures == 0 ? 0 : 1;
}
