#include "ddcal/analysis.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "ddcal/error.hpp"
#include "ddcal/rng.hpp"

namespace ddcal {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

RowMat to_eigen(const Tensor& m) {
    if (m.rank() != 2) throw DimensionError("svd: expected a matrix, got " + shape_str(m.shape()));
    return Eigen::Map<const RowMat>(m.data().data(), static_cast<Eigen::Index>(m.dim(0)),
                                    static_cast<Eigen::Index>(m.dim(1)));
}

}  // namespace

std::vector<double> singular_values(const Tensor& m) {
    const RowMat a = to_eigen(m);
    if (a.size() == 0) return {};
    Eigen::BDCSVD<RowMat> svd(a);
    if (svd.info() != Eigen::Success) throw NumericError("svd: decomposition did not converge");
    const auto& s = svd.singularValues();
    return {s.data(), s.data() + s.size()};
}

std::size_t numerical_rank(const std::vector<double>& sigma, std::size_t rows, std::size_t cols) {
    if (sigma.empty() || sigma.front() == 0.0) return 0;
    const double tol = static_cast<double>(std::max(rows, cols)) * std::numeric_limits<double>::epsilon() * sigma.front();
    return static_cast<std::size_t>(std::count_if(sigma.begin(), sigma.end(), [tol](double s) { return s > tol; }));
}

Truncation truncate_top_singular(const Tensor& m, double drop_fraction) {
    if (!(drop_fraction >= 0.0 && drop_fraction < 1.0))
        throw UsageError("svd_truncate: drop fraction must be in [0, 1)");
    const RowMat a = to_eigen(m);
    Truncation t;
    t.matrix = m;
    if (a.size() == 0) return t;
    Eigen::BDCSVD<RowMat> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
    if (svd.info() != Eigen::Success) throw NumericError("svd: decomposition did not converge");
    Eigen::VectorXd s = svd.singularValues();
    const std::vector<double> sigma(s.data(), s.data() + s.size());
    t.rank = numerical_rank(sigma, m.dim(0), m.dim(1));
    t.dropped = static_cast<std::size_t>(std::ceil(drop_fraction * static_cast<double>(t.rank) - 1e-12));
    if (t.dropped == 0) return t;
    for (std::size_t i = 0; i < t.dropped; ++i) {
        t.dropped_energy += s[static_cast<Eigen::Index>(i)] * s[static_cast<Eigen::Index>(i)];
        s[static_cast<Eigen::Index>(i)] = 0.0;
    }
    const RowMat rec = svd.matrixU() * s.asDiagonal() * svd.matrixV().transpose();
    std::copy(rec.data(), rec.data() + rec.size(), t.matrix.data().begin());
    return t;
}

LabeledDataset svd_truncate(const LabeledDataset& ds, double drop_fraction, SvdLayout layout) {
    LabeledDataset out = ds;
    if (layout == SvdLayout::dataset) {
        out.examples = truncate_top_singular(ds.examples, drop_fraction).matrix;
        return out;
    }
    if (ds.example_shape.size() != 3) throw UsageError("svd_truncate: per-channel layout needs a C x H x W shape");
    const std::size_t c = ds.example_shape[0], hw = ds.example_shape[1] * ds.example_shape[2], n = ds.size();
    for (std::size_t ch = 0; ch < c; ++ch) {
        Tensor m(Shape{n, hw});
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < hw; ++j) m.at(i, j) = ds.examples.at(i, ch * hw + j);
        const Tensor r = truncate_top_singular(m, drop_fraction).matrix;
        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < hw; ++j) out.examples.at(i, ch * hw + j) = r.at(i, j);
    }
    return out;
}

std::vector<double> explained_ratio(const Tensor& m) {
    if (m.size() == 0) throw UsageError("explained_ratio: empty matrix");
    const auto sigma = singular_values(m);
    const double total = std::accumulate(sigma.begin(), sigma.end(), 0.0);
    if (total == 0.0) throw DegenerateError("explained_ratio: all-zero matrix");
    std::vector<double> curve(sigma.size());
    double run = 0.0;
    for (std::size_t i = 0; i < sigma.size(); ++i) {
        run += sigma[i];
        curve[i] = std::min(run / total, 1.0);
    }
    curve.back() = 1.0;
    return curve;
}

std::vector<double> explained_ratio(const LabeledDataset& ds) { return explained_ratio(ds.examples); }

double mean_of(const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
}

double sample_sd(const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
}

double SvdSweepResult::mean(std::size_t f) const { return mean_of(accuracy.at(f)); }
double SvdSweepResult::sd(std::size_t f) const { return sample_sd(accuracy.at(f)); }

std::vector<double> SvdSweepResult::drops(std::size_t f) const {
    std::vector<double> d(seeds.size());
    for (std::size_t s = 0; s < seeds.size(); ++s) d[s] = accuracy.at(0).at(s) - accuracy.at(f).at(s);
    return d;
}

SvdSweepResult svd_accuracy_sweep(const LabeledDataset& train, const LabeledDataset& test,
                                  const std::vector<double>& fractions, const NetSpec& net, const TrainConfig& train_cfg,
                                  const std::vector<std::uint64_t>& seeds, std::string tag) {
    if (fractions.empty() || fractions.front() != 0.0)
        throw UsageError("svd_accuracy_sweep: fractions must start at 0");
    if (!std::is_sorted(fractions.begin(), fractions.end()))
        throw UsageError("svd_accuracy_sweep: fractions must be ascending");
    if (seeds.empty()) throw UsageError("svd_accuracy_sweep: no seeds");
    SvdSweepResult r;
    r.tag = std::move(tag);
    r.fractions = fractions;
    r.seeds = seeds;
    for (double f : fractions) {
        const LabeledDataset truncated = svd_truncate(train, f);
        std::vector<double> accs;
        for (std::uint64_t seed : seeds) {
            TrainConfig tc = train_cfg;
            tc.seed = derive_seed(seed, 40);
            const Params trained = sgd_train(init_params(net, derive_seed(seed, 41)), truncated, tc).params;
            accs.push_back(evaluate(trained, test).accuracy);
        }
        r.accuracy.push_back(std::move(accs));
    }
    return r;
}

Histogram histogram(const std::vector<double>& values, std::size_t bins, double lo, double hi) {
    if (bins == 0) throw UsageError("histogram: need at least one bin");
    if (!(hi > lo)) {
        lo -= 0.5;
        hi += 0.5;
    }
    Histogram h;
    h.counts.assign(bins, 0);
    for (std::size_t i = 0; i <= bins; ++i) h.edges.push_back(lo + (hi - lo) * static_cast<double>(i) / static_cast<double>(bins));
    for (double v : values) {
        auto b = static_cast<std::ptrdiff_t>(std::floor((v - lo) / (hi - lo) * static_cast<double>(bins)));
        b = std::clamp<std::ptrdiff_t>(b, 0, static_cast<std::ptrdiff_t>(bins) - 1);
        ++h.counts[static_cast<std::size_t>(b)];
    }
    return h;
}

LogitStats max_logit_stats(const Tensor& logits, std::size_t bins) {
    if (logits.rank() != 2 || logits.dim(0) < 2) throw UsageError("max_logit_stats: need at least 2 rows");
    LogitStats s;
    for (std::size_t i = 0; i < logits.dim(0); ++i) {
        auto r = logits.row(i);
        s.max_logits.push_back(*std::max_element(r.begin(), r.end()));
    }
    s.mean = mean_of(s.max_logits);
    s.sd = sample_sd(s.max_logits);
    const auto [lo, hi] = std::minmax_element(s.max_logits.begin(), s.max_logits.end());
    s.hist = histogram(s.max_logits, bins, *lo, *hi);
    return s;
}

namespace {

std::vector<double> max_probs(const Params& params, const LabeledDataset& ds, double temperature) {
    const Tensor p = apply_temperature(forward_logits(params, ds.examples), temperature);
    std::vector<double> out;
    for (std::size_t i = 0; i < p.dim(0); ++i) {
        auto r = p.row(i);
        out.push_back(*std::max_element(r.begin(), r.end()));
    }
    return out;
}

}  // namespace

OodReport ood_confidence_compare(const Params& params, const LabeledDataset& id_set, const LabeledDataset& ood_set,
                                 double temperature, std::size_t bins) {
    if (id_set.size() == 0 || ood_set.size() == 0) throw UsageError("ood_confidence_compare: empty set");
    if (id_set.dims() != params.spec.input_dim || ood_set.dims() != params.spec.input_dim)
        throw UsageError("ood_confidence_compare: set dimensions do not match the network input");
    const auto id = max_probs(params, id_set, temperature);
    const auto ood = max_probs(params, ood_set, temperature);
    OodReport r;
    r.id_mean = mean_of(id);
    r.ood_mean = mean_of(ood);
    r.separation = r.id_mean - r.ood_mean;
    r.id_hist = histogram(id, bins, 0.0, 1.0);
    r.ood_hist = histogram(ood, bins, 0.0, 1.0);
    return r;
}

LabeledDataset uniform_noise_like(const LabeledDataset& like, std::size_t n, double lo, double hi, std::uint64_t seed) {
    Rng rng(seed);
    LabeledDataset ds;
    ds.name = "uniform-noise";
    ds.num_classes = like.num_classes;
    ds.example_shape = like.example_shape;
    ds.examples = Tensor(Shape{n, like.dims()});
    for (double& v : ds.examples.data()) v = rng.uniform(lo, hi);
    ds.labels.assign(n, 0);
    return ds;
}

std::string to_csv(const SvdSweepResult& r) {
    std::ostringstream o;
    o << std::setprecision(17) << "tag,fraction,mean_accuracy,sd_accuracy";
    for (std::uint64_t s : r.seeds) o << ",seed_" << s;
    o << "\n";
    for (std::size_t f = 0; f < r.fractions.size(); ++f) {
        o << r.tag << "," << r.fractions[f] << "," << r.mean(f) << "," << r.sd(f);
        for (double a : r.accuracy[f]) o << "," << a;
        o << "\n";
    }
    return o.str();
}

std::string to_csv(const LogitStats& s) {
    std::ostringstream o;
    o << std::setprecision(17) << "bin_lo,bin_hi,count\n";
    for (std::size_t i = 0; i < s.hist.counts.size(); ++i)
        o << s.hist.edges[i] << "," << s.hist.edges[i + 1] << "," << s.hist.counts[i] << "\n";
    return o.str();
}

}  // namespace ddcal
