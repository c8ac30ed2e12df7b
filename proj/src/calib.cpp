#include "ddcal/calib.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>

#include "ddcal/error.hpp"

namespace ddcal {

std::vector<Bin> reliability_bins(std::span<const double> confidences, std::span<const char> correct,
                                  std::size_t num_bins) {
    if (num_bins == 0) throw UsageError("reliability_bins: need at least one bin");
    if (confidences.size() != correct.size()) throw DimensionError("reliability_bins: length mismatch");
    const auto m = static_cast<double>(num_bins);
    auto edge = [m](std::size_t i) { return static_cast<double>(i) / m; };

    std::vector<Bin> bins(num_bins);
    std::vector<double> conf_sum(num_bins, 0.0);
    std::vector<std::size_t> hits(num_bins, 0);
    for (std::size_t b = 0; b < num_bins; ++b) {
        bins[b].lo = edge(b);
        bins[b].hi = edge(b + 1);
    }
    for (std::size_t i = 0; i < confidences.size(); ++i) {
        const double c = confidences[i];
        if (!(c >= 0.0 && c <= 1.0))
            throw UsageError("reliability_bins: confidence " + std::to_string(c) + " outside [0, 1]");
        // Initial guess, then snap to the exact edges so (lo, hi] holds by comparison.
        auto b = static_cast<std::size_t>(std::clamp(std::ceil(c * m) - 1.0, 0.0, m - 1.0));
        while (b > 0 && c <= edge(b)) --b;
        while (b + 1 < num_bins && c > edge(b + 1)) ++b;
        ++bins[b].count;
        conf_sum[b] += c;
        hits[b] += correct[i] ? 1 : 0;
    }
    for (std::size_t b = 0; b < num_bins; ++b) {
        if (bins[b].count == 0) continue;
        const auto n = static_cast<double>(bins[b].count);
        bins[b].mean_confidence = conf_sum[b] / n;
        bins[b].accuracy = static_cast<double>(hits[b]) / n;
    }
    return bins;
}

double compute_ece(const std::vector<Bin>& bins, std::size_t n) {
    if (n == 0) return 0.0;
    double ece = 0.0;
    for (const Bin& b : bins) {
        if (b.count == 0) continue;
        ece += (static_cast<double>(b.count) / static_cast<double>(n)) * std::abs(b.mean_confidence - b.accuracy);
    }
    return ece;
}

namespace {

void check_logits(const Tensor& logits, std::span<const int> labels, const char* who) {
    if (logits.rank() != 2 || logits.dim(0) != labels.size())
        throw DimensionError(std::string(who) + ": logits " + shape_str(logits.shape()) + " vs " +
                             std::to_string(labels.size()) + " labels");
    for (int l : labels)
        if (l < 0 || static_cast<std::size_t>(l) >= logits.dim(1))
            throw UsageError(std::string(who) + ": label out of range");
}

/// Mean NLL of softmax(beta * z) and its first two derivatives in beta.
struct NllTerms {
    double value = 0, d_beta = 0, d2_beta = 0;
};

NllTerms nll_terms(const Tensor& logits, std::span<const int> labels, double beta) {
    const std::size_t n = logits.dim(0), k = logits.dim(1);
    NllTerms t;
    std::vector<double> p(k);
    for (std::size_t i = 0; i < n; ++i) {
        auto z = logits.row(i);
        double mx = -INFINITY;
        for (double v : z) mx = std::max(mx, beta * v);
        double s = 0;
        for (std::size_t j = 0; j < k; ++j) s += (p[j] = std::exp(beta * z[j] - mx));
        double ez = 0, ez2 = 0;
        for (std::size_t j = 0; j < k; ++j) {
            p[j] /= s;
            ez += p[j] * z[j];
            ez2 += p[j] * z[j] * z[j];
        }
        const double y = z[static_cast<std::size_t>(labels[i])];
        t.value += mx + std::log(s) - beta * y;
        t.d_beta += ez - y;
        t.d2_beta += ez2 - ez * ez;
    }
    const auto dn = static_cast<double>(n);
    t.value /= dn;
    t.d_beta /= dn;
    t.d2_beta /= dn;
    return t;
}

}  // namespace

double nll(const Tensor& logits, std::span<const int> labels, double temperature) {
    if (!(temperature > 0.0)) throw UsageError("nll: temperature must be positive");
    check_logits(logits, labels, "nll");
    if (labels.empty()) return 0.0;
    return nll_terms(logits, labels, 1.0 / temperature).value;
}

Tensor apply_temperature(const Tensor& logits, double temperature) {
    if (!(temperature > 0.0)) throw UsageError("apply_temperature: temperature must be positive");
    if (logits.rank() != 2) throw DimensionError("apply_temperature: logits must be N x K");
    Tensor p(logits.shape());
    const std::size_t k = logits.dim(1);
    for (std::size_t i = 0; i < logits.dim(0); ++i) {
        auto z = logits.row(i);
        auto out = p.row(i);
        const double mx = *std::max_element(z.begin(), z.end()) / temperature;
        double s = 0;
        for (std::size_t j = 0; j < k; ++j) s += (out[j] = std::exp(z[j] / temperature - mx));
        for (double& v : out) v /= s;
    }
    return p;
}

std::string to_string(FitMode m) { return m == FitMode::converge ? "converge" : "paper_faithful"; }

FitMode fit_mode_from_string(const std::string& s) {
    if (s == "converge") return FitMode::converge;
    if (s == "paper_faithful" || s == "paper-faithful") return FitMode::paper_faithful;
    throw ConfigError("unknown fit mode '" + s + "'");
}

TemperatureModel fit_temperature(const Tensor& logits_in, std::span<const int> labels,
                                 const TemperatureFitSpec& spec) {
    check_logits(logits_in, labels, "fit_temperature");
    if (labels.empty()) throw UsageError("fit_temperature: empty validation set");
    spec.mask.validate();

    Tensor masked;
    const Tensor* logits = &logits_in;
    if (spec.target == MaskTarget::logits && !spec.mask.is_identity()) {
        Rng rng(derive_seed(spec.mask.seed, 4));
        masked = apply_mask(logits_in, make_masks(logits_in.dim(0), logits_in.dim(1), spec.mask, rng));
        logits = &masked;
    }

    TemperatureModel model;
    model.mask = spec.mask;
    constexpr double kMinT = 1e-2, kMaxT = 100.0;
    if (spec.mode == FitMode::converge) {
        if (!(spec.search_lo > 0.0 && spec.search_lo < spec.search_hi))
            throw UsageError("fit_temperature: bad search interval");
        auto f = [&](double t) { return nll_terms(*logits, labels, 1.0 / t).value; };
        const double invphi = (std::sqrt(5.0) - 1.0) / 2.0;
        double a = spec.search_lo, b = spec.search_hi;
        double c = b - invphi * (b - a), d = a + invphi * (b - a);
        double fc = f(c), fd = f(d);
        int iters = 0;
        while (b - a > spec.tolerance) {
            if (fc < fd) {
                b = d;
                d = c;
                fd = fc;
                c = b - invphi * (b - a);
                fc = f(c);
            } else {
                a = c;
                c = d;
                fc = fd;
                d = a + invphi * (b - a);
                fd = f(d);
            }
            ++iters;
        }
        model.initial_temperature = spec.search_lo;
        model.temperature = (a + b) / 2.0;
        model.steps = iters;
    } else {
        double t = spec.init_temperature;
        if (!(t > 0.0)) throw UsageError("fit_temperature: initial temperature must be positive");
        model.initial_temperature = t;
        for (int s = 0; s < spec.steps; ++s) {
            const auto terms = nll_terms(*logits, labels, 1.0 / t);
            const double d1 = -terms.d_beta / (t * t);
            const double d2 = terms.d2_beta / (t * t * t * t) + 2.0 * terms.d_beta / (t * t * t);
            const double step = d2 > 0.0 ? d1 / d2 : d1;
            t -= spec.lr * step;
            if (!(t > 0.0) || t > kMaxT || !std::isfinite(t)) {
                const double clamped = std::isfinite(t) ? std::clamp(t, kMinT, kMaxT) : kMaxT;
                model.warnings.push_back("step " + std::to_string(s) + ": temperature " + std::to_string(t) +
                                         " clamped to " + std::to_string(clamped));
                t = clamped;
            }
            ++model.steps;
        }
        model.temperature = t;
    }
    model.final_nll = nll_terms(*logits, labels, 1.0 / model.temperature).value;
    return model;
}

TemperatureModel fit_temperature(const Params& params, const LabeledDataset& validation,
                                 const TemperatureFitSpec& spec) {
    if (validation.size() == 0) throw UsageError("fit_temperature: empty validation set");
    spec.mask.validate();
    if (spec.target == MaskTarget::logits || spec.mask.is_identity()) {
        const Tensor logits = forward_logits(params, validation.examples);
        return fit_temperature(logits, validation.labels, spec);
    }
    const std::size_t reps = std::max<std::size_t>(spec.repeats, 1);
    const std::size_t n = validation.size(), d = validation.dims();
    Rng rng(derive_seed(spec.mask.seed, 5));
    Tensor inputs(Shape{n * reps, d});
    std::vector<int> labels;
    labels.reserve(n * reps);
    for (std::size_t r = 0; r < reps; ++r) {
        const Tensor masks = make_masks(n, d, spec.mask, rng);
        const Tensor masked = apply_mask(validation.examples, masks);
        std::copy(masked.data().begin(), masked.data().end(), inputs.data().begin() + r * n * d);
        labels.insert(labels.end(), validation.labels.begin(), validation.labels.end());
    }
    const Tensor logits = forward_logits(params, inputs);
    return fit_temperature(logits, labels, spec);
}

CalibrationReport calibration_report(const Tensor& logits, std::span<const int> labels, double temperature,
                                     std::size_t num_bins, std::string method) {
    check_logits(logits, labels, "calibration_report");
    CalibrationReport r;
    r.method = std::move(method);
    r.temperature = temperature;
    r.n = labels.size();
    const Tensor probs = apply_temperature(logits, temperature);
    std::vector<double> conf(r.n);
    std::vector<char> correct(r.n);
    const auto pred = argmax_rows(logits);
    double conf_sum = 0;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < r.n; ++i) {
        auto row = probs.row(i);
        conf[i] = std::clamp(*std::max_element(row.begin(), row.end()), 0.0, 1.0);
        correct[i] = pred[i] == labels[i];
        conf_sum += conf[i];
        hits += correct[i];
    }
    r.bins = reliability_bins(conf, correct, num_bins);
    r.ece = compute_ece(r.bins, r.n);
    if (r.n) {
        r.accuracy = static_cast<double>(hits) / static_cast<double>(r.n);
        r.signed_gap = conf_sum / static_cast<double>(r.n) - r.accuracy;
        r.nll = nll(logits, labels, temperature);
    }
    return r;
}

std::string to_text(const CalibrationReport& r) {
    std::ostringstream o;
    o << std::setprecision(17);
    o << "method " << r.method << "\n"
      << "temperature " << r.temperature << "\n"
      << "mask_ratio " << r.mask_ratio << "\n"
      << "seed " << r.seed << "\n"
      << "n " << r.n << "\n"
      << "ece " << r.ece << "\n"
      << "signed_gap " << r.signed_gap << "\n"
      << "nll " << r.nll << "\n"
      << "accuracy " << r.accuracy << "\n"
      << "bins " << r.bins.size() << "\n";
    for (const Bin& b : r.bins)
        o << "bin " << b.lo << " " << b.hi << " " << b.count << " " << b.mean_confidence << " " << b.accuracy << "\n";
    return o.str();
}

CalibrationReport report_from_text(const std::string& text) {
    CalibrationReport r;
    std::istringstream in(text);
    std::string key;
    std::size_t line = 0;
    while (in >> key) {
        ++line;
        if (key == "method") in >> r.method;
        else if (key == "temperature") in >> r.temperature;
        else if (key == "mask_ratio") in >> r.mask_ratio;
        else if (key == "seed") in >> r.seed;
        else if (key == "n") in >> r.n;
        else if (key == "ece") in >> r.ece;
        else if (key == "signed_gap") in >> r.signed_gap;
        else if (key == "nll") in >> r.nll;
        else if (key == "accuracy") in >> r.accuracy;
        else if (key == "bins") { std::size_t m; in >> m; r.bins.reserve(m); }
        else if (key == "bin") {
            Bin b;
            in >> b.lo >> b.hi >> b.count >> b.mean_confidence >> b.accuracy;
            r.bins.push_back(b);
        } else {
            throw FormatError("calibration report: unknown key '" + key + "' on line " + std::to_string(line));
        }
        if (!in) throw FormatError("calibration report: bad value on line " + std::to_string(line));
    }
    return r;
}

Tensor smooth_labels(std::span<const int> labels, int num_classes, double eps) {
    if (!(eps >= 0.0 && eps < 1.0)) throw UsageError("smooth_labels: epsilon must be in [0, 1)");
    if (num_classes < 1) throw UsageError("smooth_labels: need at least one class");
    const auto k = static_cast<std::size_t>(num_classes);
    const double off = eps / static_cast<double>(k);
    Tensor t(Shape{labels.size(), k}, off);
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes) throw UsageError("smooth_labels: label out of range");
        t.at(i, static_cast<std::size_t>(labels[i])) = 1.0 - eps + off;
    }
    return t;
}

double focal_loss_value(const Tensor& logits, std::span<const int> labels, double gamma) {
    if (gamma < 0.0) throw UsageError("focal_loss: gamma must be non-negative");
    check_logits(logits, labels, "focal_loss");
    if (labels.empty()) throw UsageError("focal_loss: empty batch");
    double total = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        auto z = logits.row(i);
        const double mx = *std::max_element(z.begin(), z.end());
        double s = 0;
        for (double v : z) s += std::exp(v - mx);
        const double logp = z[static_cast<std::size_t>(labels[i])] - mx - std::log(s);
        const double p = std::exp(logp);
        total += -(gamma == 0.0 ? 1.0 : std::pow(1.0 - p, gamma)) * logp;
    }
    return total / static_cast<double>(labels.size());
}

MixupResult mixup_with(const Tensor& batch, const Tensor& targets, double lambda,
                       std::span<const std::size_t> partner) {
    if (batch.rank() != 2 || targets.rank() != 2 || batch.dim(0) != targets.dim(0) || partner.size() != batch.dim(0))
        throw DimensionError("mixup: batch, targets and partners disagree");
    MixupResult out{Tensor(batch.shape()), Tensor(targets.shape()), lambda};
    for (std::size_t i = 0; i < batch.dim(0); ++i) {
        const std::size_t j = partner[i];
        for (std::size_t c = 0; c < batch.dim(1); ++c)
            out.batch.at(i, c) = lambda * batch.at(i, c) + (1.0 - lambda) * batch.at(j, c);
        for (std::size_t c = 0; c < targets.dim(1); ++c)
            out.targets.at(i, c) = lambda * targets.at(i, c) + (1.0 - lambda) * targets.at(j, c);
    }
    return out;
}

MixupResult mixup_batch(const Tensor& batch, const Tensor& targets, double alpha, Rng& rng) {
    if (!(alpha > 0.0)) throw UsageError("mixup: alpha must be positive");
    if (batch.rank() != 2 || batch.dim(0) < 2) throw UsageError("mixup: need a batch of at least 2");
    const double lambda = rng.beta(alpha, alpha);
    const auto perm = rng.permutation(batch.dim(0));
    return mixup_with(batch, targets, lambda, perm);
}

MixupResult mixup_batch(const Tensor& batch, const Tensor& targets, double alpha, std::uint64_t seed) {
    Rng rng(seed);
    return mixup_batch(batch, targets, alpha, rng);
}

}  // namespace ddcal
