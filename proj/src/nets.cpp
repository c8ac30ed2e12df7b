#include "ddcal/nets.hpp"

#include <algorithm>
#include <cmath>

#include "ddcal/calib.hpp"
#include "ddcal/error.hpp"
#include "ddcal/losses.hpp"
#include "ddcal/rng.hpp"
#include "ddcal/serialize.hpp"

namespace ddcal {

std::string to_string(Arch a) { return a == Arch::mlp ? "mlp" : "convnet"; }

Arch arch_from_string(const std::string& s) {
    if (s == "mlp") return Arch::mlp;
    if (s == "convnet") return Arch::convnet;
    throw ConfigError("unknown architecture '" + s + "'");
}

NetSpec NetSpec::mlp(std::size_t input_dim, std::vector<std::size_t> hidden, int num_classes) {
    NetSpec s;
    s.arch = Arch::mlp;
    s.input_dim = input_dim;
    s.hidden = std::move(hidden);
    s.num_classes = num_classes;
    return s;
}

NetSpec NetSpec::convnet(std::size_t channels, std::size_t height, std::size_t width_px, int num_classes,
                         std::size_t blocks, std::size_t width) {
    NetSpec s;
    s.arch = Arch::convnet;
    s.in_channels = channels;
    s.height = height;
    s.width_px = width_px;
    s.input_dim = channels * height * width_px;
    s.num_classes = num_classes;
    s.blocks = blocks;
    s.width = width;
    return s;
}

std::size_t NetSpec::feature_layers() const { return arch == Arch::mlp ? hidden.size() : blocks; }

void NetSpec::validate() const {
    if (num_classes < 1) throw UsageError("net spec: num_classes must be positive");
    if (input_dim == 0) throw UsageError("net spec: zero input dimension");
    if (arch == Arch::mlp) {
        if (std::find(hidden.begin(), hidden.end(), std::size_t{0}) != hidden.end())
            throw UsageError("net spec: zero-width hidden layer");
        return;
    }
    if (blocks == 0) throw UsageError("net spec: convnet needs at least one block");
    if (width == 0 || in_channels == 0) throw UsageError("net spec: zero channel count");
    if (input_dim != in_channels * height * width_px)
        throw UsageError("net spec: input_dim != C*H*W");
    const std::size_t f = std::size_t{1} << blocks;
    if (height % f || width_px % f)
        throw UsageError("net spec: H and W must be divisible by 2^blocks");
}

std::vector<Tensor> Params::values() const {
    std::vector<Tensor> v;
    for (const auto& t : tensors) v.push_back(t.value);
    return v;
}

std::vector<Var> Params::leaves() const {
    std::vector<Var> v;
    for (const auto& t : tensors) v.push_back(leaf(t.value));
    return v;
}

std::vector<Var> Params::constants() const {
    std::vector<Var> v;
    for (const auto& t : tensors) v.push_back(constant(t.value));
    return v;
}

Params Params::with_values(std::vector<Tensor> values) const {
    if (values.size() != tensors.size()) throw DimensionError("params: wrong tensor count");
    Params p = *this;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (values[i].shape() != tensors[i].value.shape())
            throw DimensionError("params: shape mismatch for " + tensors[i].name);
        p.tensors[i].value = std::move(values[i]);
    }
    return p;
}

Params init_params(const NetSpec& spec, std::uint64_t seed) {
    spec.validate();
    Params p;
    p.spec = spec;
    p.init_seed = seed;
    Rng rng(derive_seed(seed, 3));
    auto weight = [&](const std::string& name, std::size_t fan_in, std::size_t fan_out) {
        const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
        Tensor w(Shape{fan_in, fan_out});
        for (double& x : w.data()) x = rng.uniform(-bound, bound);
        p.tensors.push_back({name, std::move(w)});
    };
    const auto k = static_cast<std::size_t>(spec.num_classes);
    if (spec.arch == Arch::mlp) {
        std::size_t in = spec.input_dim;
        for (std::size_t i = 0; i <= spec.hidden.size(); ++i) {
            const std::size_t out = i < spec.hidden.size() ? spec.hidden[i] : k;
            const std::string prefix = "fc" + std::to_string(i);
            weight(prefix + ".weight", in, out);
            p.tensors.push_back({prefix + ".bias", Tensor(Shape{out})});
            in = out;
        }
    } else {
        std::size_t c = spec.in_channels;
        for (std::size_t b = 0; b < spec.blocks; ++b) {
            weight("conv" + std::to_string(b) + ".weight", c * 9, spec.width);
            c = spec.width;
        }
        const std::size_t f = std::size_t{1} << spec.blocks;
        weight("classifier.weight", c * (spec.height / f) * (spec.width_px / f), k);
        p.tensors.push_back({"classifier.bias", Tensor(Shape{k})});
    }
    return p;
}

namespace {

Var check_batch(const NetSpec& spec, const Var& batch) {
    if (batch.shape().size() != 2 || batch.shape()[1] != spec.input_dim)
        throw DimensionError("forward_logits: batch " + shape_str(batch.shape()) + " does not match input dim " +
                             std::to_string(spec.input_dim));
    return batch;
}

/// Shared by forward_logits and layer_features.
Var run_net(const NetSpec& spec, std::span<const Var> params, const Var& batch, std::vector<Var>* features) {
    Var x = check_batch(spec, batch);
    if (spec.arch == Arch::mlp) {
        const std::size_t layers = spec.hidden.size() + 1;
        if (params.size() != 2 * layers) throw DimensionError("forward_logits: wrong parameter count");
        for (std::size_t i = 0; i < layers; ++i) {
            x = ops::add_row_bias(ops::matmul(x, params[2 * i]), params[2 * i + 1]);
            if (i + 1 < layers) {
                x = ops::relu(x);
                if (features) features->push_back(x);
            }
        }
        return x;
    }
    if (params.size() != spec.blocks + 2) throw DimensionError("forward_logits: wrong parameter count");
    std::size_t c = spec.in_channels, h = spec.height, w = spec.width_px;
    for (std::size_t b = 0; b < spec.blocks; ++b) {
        x = ops::conv3x3(x, params[b], c, h, w);
        c = spec.width;
        x = ops::instance_norm(x, c, h * w);
        x = ops::relu(x);
        x = ops::avg_pool2x2(x, c, h, w);
        h /= 2;
        w /= 2;
        if (features) features->push_back(x);
    }
    return ops::add_row_bias(ops::matmul(x, params[spec.blocks]), params[spec.blocks + 1]);
}

}  // namespace

Var forward_logits(const NetSpec& spec, std::span<const Var> params, const Var& batch) {
    return run_net(spec, params, batch, nullptr);
}

Tensor forward_logits(const Params& params, const Tensor& batch) {
    NoGradGuard guard;
    const auto p = params.constants();
    return run_net(params.spec, p, constant(batch), nullptr).value();
}

std::vector<Tensor> layer_features(const Params& params, const Tensor& batch) {
    NoGradGuard guard;
    const auto p = params.constants();
    std::vector<Var> feats;
    run_net(params.spec, p, constant(batch), &feats);
    std::vector<Tensor> out;
    for (const auto& f : feats) out.push_back(f.value());
    return out;
}

std::string to_string(LossKind k) {
    switch (k) {
        case LossKind::ce: return "ce";
        case LossKind::focal: return "focal";
        case LossKind::label_smoothing: return "label_smoothing";
        case LossKind::mixup: return "mixup";
    }
    return "?";
}

LossKind loss_kind_from_string(const std::string& s) {
    if (s == "ce") return LossKind::ce;
    if (s == "focal") return LossKind::focal;
    if (s == "label_smoothing" || s == "ls") return LossKind::label_smoothing;
    if (s == "mixup" || s == "mx") return LossKind::mixup;
    throw ConfigError("unknown loss '" + s + "'");
}

std::vector<int> argmax_rows(const Tensor& m) {
    std::vector<int> out(m.dim(0));
    for (std::size_t i = 0; i < m.dim(0); ++i) {
        auto r = m.row(i);
        out[i] = static_cast<int>(std::max_element(r.begin(), r.end()) - r.begin());
    }
    return out;
}

double accuracy_of(const Tensor& logits, std::span<const int> labels) {
    if (labels.empty()) return 0.0;
    const auto pred = argmax_rows(logits);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += pred[i] == labels[i];
    return static_cast<double>(hit) / static_cast<double>(labels.size());
}

TrainResult sgd_train(const Params& init, const LabeledDataset& ds, const TrainConfig& config,
                      const StepObserver& observer) {
    if (config.lr < 0.0) throw UsageError("sgd_train: negative learning rate");
    if (config.batch_size == 0) throw UsageError("sgd_train: zero batch size");
    if (ds.size() == 0) throw UsageError("sgd_train: empty dataset");
    if (ds.dims() != init.spec.input_dim) throw DimensionError("sgd_train: dataset dims do not match net input");
    const auto k = static_cast<std::size_t>(init.spec.num_classes);

    TrainResult result{init, {}};
    std::vector<Tensor> theta = init.values();
    std::size_t steps = init.steps_trained;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng shuffle(derive_seed(config.seed, 2 * epoch));
        Rng mix_rng(derive_seed(config.seed, 2 * epoch + 1));
        const auto perm = shuffle.permutation(ds.size());
        double loss_sum = 0.0;
        std::size_t correct = 0;
        std::size_t step_in_epoch = 0;
        for (std::size_t start = 0; start < ds.size(); start += config.batch_size, ++step_in_epoch) {
            const std::size_t end = std::min(ds.size(), start + config.batch_size);
            const std::span<const std::size_t> idx(perm.data() + start, end - start);
            Tensor x = gather_rows(ds.examples, idx);
            std::vector<int> y(idx.size());
            for (std::size_t i = 0; i < idx.size(); ++i) y[i] = ds.labels[idx[i]];

            std::vector<Var> leaves;
            for (const auto& t : theta) leaves.push_back(leaf(t));
            try {
                Var loss;
                Var logits;
                switch (config.loss.kind) {
                    case LossKind::ce:
                        logits = forward_logits(init.spec, leaves, constant(x));
                        loss = loss_ce(logits, y);
                        break;
                    case LossKind::focal:
                        logits = forward_logits(init.spec, leaves, constant(x));
                        loss = focal_loss(logits, y, config.loss.gamma);
                        break;
                    case LossKind::label_smoothing:
                        logits = forward_logits(init.spec, leaves, constant(x));
                        loss = loss_soft_ce(logits, smooth_labels(y, static_cast<int>(k), config.loss.epsilon));
                        break;
                    case LossKind::mixup: {
                        if (idx.size() < 2) {
                            logits = forward_logits(init.spec, leaves, constant(x));
                            loss = loss_ce(logits, y);
                            break;
                        }
                        const auto mixed = mixup_batch(x, smooth_labels(y, static_cast<int>(k), 0.0),
                                                       config.loss.alpha, mix_rng);
                        logits = forward_logits(init.spec, leaves, constant(mixed.batch));
                        loss = loss_soft_ce(logits, mixed.targets);
                        break;
                    }
                }
                const auto g = grad_values(loss, leaves);
                for (std::size_t i = 0; i < theta.size(); ++i)
                    for (std::size_t j = 0; j < theta[i].size(); ++j) theta[i][j] -= config.lr * g[i][j];
                loss_sum += loss.value().item() * static_cast<double>(idx.size());
                if (config.loss.kind != LossKind::mixup || idx.size() < 2)
                    correct += static_cast<std::size_t>(std::lround(accuracy_of(logits.value(), y) * idx.size()));
                ++steps;
            } catch (const NumericError& e) {
                throw NumericError("sgd_train diverged at epoch " + std::to_string(epoch) + ", step " +
                                   std::to_string(step_in_epoch) + ": " + e.what());
            }
            for (const auto& t : theta)
                if (!t.all_finite())
                    throw NumericError("sgd_train diverged at epoch " + std::to_string(epoch) + ", step " +
                                       std::to_string(step_in_epoch) + ": non-finite parameters");
            if (observer) observer(steps - init.steps_trained, theta);
        }
        result.history.push_back({loss_sum / static_cast<double>(ds.size()),
                                  static_cast<double>(correct) / static_cast<double>(ds.size())});
    }
    result.params = init.with_values(std::move(theta));
    result.params.steps_trained = steps;
    return result;
}

Evaluation evaluate(const Params& params, const LabeledDataset& ds) {
    if (ds.size() == 0) throw UsageError("evaluate: empty dataset");
    Evaluation e;
    e.logits = forward_logits(params, ds.examples);
    e.accuracy = accuracy_of(e.logits, ds.labels);
    return e;
}

void save_params(const std::filesystem::path& path, const Params& params) {
    json meta{{"kind", "params"},
              {"spec", params.spec},
              {"init_seed", params.init_seed},
              {"steps_trained", params.steps_trained}};
    save_named_tensors(path, params.tensors, meta.dump());
}

Params load_params(const std::filesystem::path& path) {
    auto file = load_named_tensors(path);
    const json meta = json::parse(file.header);
    Params p;
    p.spec = meta.at("spec").get<NetSpec>();
    p.init_seed = meta.value("init_seed", std::uint64_t{0});
    p.steps_trained = meta.value("steps_trained", std::size_t{0});
    p.tensors = std::move(file.tensors);
    const Params expected = init_params(p.spec, 0);
    if (expected.tensors.size() != p.tensors.size()) throw FormatError(path.string() + ": tensor count mismatch");
    for (std::size_t i = 0; i < p.tensors.size(); ++i)
        if (expected.tensors[i].name != p.tensors[i].name ||
            expected.tensors[i].value.shape() != p.tensors[i].value.shape())
            throw FormatError(path.string() + ": tensor '" + p.tensors[i].name + "' does not match spec");
    return p;
}

}  // namespace ddcal
