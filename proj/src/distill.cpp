#include "ddcal/distill.hpp"

#include <algorithm>

#include "ddcal/error.hpp"
#include "ddcal/losses.hpp"
#include "ddcal/meta.hpp"
#include "ddcal/rng.hpp"
#include "ddcal/serialize.hpp"
#include "ddcal/tensor_io.hpp"

namespace ddcal {

LabeledDataset SyntheticSet::as_dataset(std::string name) const {
    LabeledDataset ds;
    ds.name = std::move(name);
    ds.examples = images;
    ds.labels = labels;
    ds.num_classes = num_classes;
    ds.example_shape = example_shape;
    return ds;
}

SyntheticSet init_synthetic(const LabeledDataset& ds, std::size_t ipc, std::uint64_t seed) {
    ds.validate();
    if (ipc == 0) throw UsageError("init_synthetic: ipc must be positive");
    Rng rng(seed);
    SyntheticSet s;
    s.num_classes = ds.num_classes;
    s.ipc = ipc;
    s.example_shape = ds.example_shape;
    std::vector<std::size_t> rows;
    for (int c = 0; c < ds.num_classes; ++c) {
        const auto idx = ds.indices_of(c);
        if (idx.size() < ipc)
            throw UsageError("init_synthetic: class " + std::to_string(c) + " has " + std::to_string(idx.size()) +
                             " examples, need " + std::to_string(ipc));
        const auto perm = rng.permutation(idx.size());
        for (std::size_t i = 0; i < ipc; ++i) {
            rows.push_back(idx[perm[i]]);
            s.labels.push_back(c);
        }
    }
    s.images = gather_rows(ds.examples, rows);
    return s;
}

Var dc_loss(const NetSpec& spec, std::span<const Var> params, const Tensor& real, std::span<const int> real_labels,
            const Var& synthetic, std::span<const int> synthetic_labels, const Tensor* masks,
            MaskPlacement placement) {
    if (real.rank() != 2 || real.dim(0) == 0 || synthetic.shape().size() != 2 || synthetic.shape()[0] == 0)
        throw UsageError("dc_loss: empty batch");
    Tensor real_in = real;
    Var synthetic_in = synthetic;
    if (masks) {
        if (placement == MaskPlacement::synthetic)
            synthetic_in = apply_mask(synthetic, *masks);
        else
            real_in = apply_mask(real, *masks);
    }
    const std::vector<Var> g_real =
        grad(loss_ce(forward_logits(spec, params, constant(real_in)), real_labels), params, false);
    const std::vector<Var> g_syn =
        grad(loss_ce(forward_logits(spec, params, synthetic_in), synthetic_labels), params, true);
    std::vector<Var> diffs;
    for (std::size_t i = 0; i < params.size(); ++i) diffs.push_back(ops::sub(g_real[i], g_syn[i]));
    return ops::l2_norm(ops::concat_flat(diffs));
}

namespace {

void check_finite_images(const Tensor& images, const char* who, std::size_t step) {
    if (!images.all_finite())
        throw NumericError(std::string(who) + ": non-finite synthetic images at step " + std::to_string(step));
}

void write_rows(Tensor& dst, std::size_t first_row, const Tensor& rows) {
    const std::size_t d = dst.dim(1);
    std::copy(rows.data().begin(), rows.data().end(), dst.data().begin() + first_row * d);
}

}  // namespace

SyntheticSet distill_dc(const LabeledDataset& ds, const DcConfig& cfg) {
    ds.validate();
    cfg.net.validate();
    if (ds.dims() != cfg.net.input_dim) throw DimensionError("distill_dc: dataset dims do not match net input");
    if (ds.num_classes != cfg.net.num_classes) throw UsageError("distill_dc: class count mismatch");
    if (cfg.mask) cfg.mask->validate();
    const bool masked = cfg.mask && !cfg.mask->is_identity();

    SyntheticSet s = init_synthetic(ds, cfg.ipc, derive_seed(cfg.seed, 10));
    Rng batch_rng(derive_seed(cfg.seed, 11));
    Rng mask_rng(derive_seed(cfg.mask ? cfg.mask->seed : 0, derive_seed(cfg.seed, 12)));
    const std::size_t reinit = std::max<std::size_t>(cfg.reinit_every, 1);

    std::vector<std::vector<std::size_t>> by_class;
    for (int c = 0; c < ds.num_classes; ++c) by_class.push_back(ds.indices_of(c));

    std::vector<Tensor> theta;
    for (std::size_t t = 0; t < cfg.steps; ++t) {
        if (t % reinit == 0) theta = init_params(cfg.net, derive_seed(cfg.seed, 1000 + t / reinit)).values();
        for (int c = 0; c < ds.num_classes; ++c) {
            const auto& pool = by_class[static_cast<std::size_t>(c)];
            const auto perm = batch_rng.permutation(pool.size());
            std::vector<std::size_t> pick;
            for (std::size_t i = 0; i < std::min(cfg.real_batch, pool.size()); ++i) pick.push_back(pool[perm[i]]);
            const Tensor real = gather_rows(ds.examples, pick);
            const std::vector<int> real_labels(pick.size(), c);
            const std::vector<int> syn_labels(cfg.ipc, c);
            const std::size_t first = s.rows_of_class(c);
            const Tensor syn = s.images.rows(first, first + cfg.ipc);

            std::optional<Tensor> masks;
            if (masked) {
                const std::size_t rows = cfg.placement == MaskPlacement::synthetic ? cfg.ipc : pick.size();
                masks = make_masks(rows, ds.dims(), *cfg.mask, mask_rng);
            }
            std::vector<Var> params;
            for (const auto& p : theta) params.push_back(leaf(p));
            const auto g = meta_grad(
                [&](const Var& sv) {
                    return dc_loss(cfg.net, params, real, real_labels, sv, syn_labels, masks ? &*masks : nullptr,
                                   cfg.placement);
                },
                syn);
            Tensor updated = syn;
            for (std::size_t i = 0; i < updated.size(); ++i) updated[i] -= cfg.synthetic_lr * g.gradient[i];
            check_finite_images(updated, "distill_dc", t);
            write_rows(s.images, first, updated);
        }
        for (std::size_t k = 0; k < cfg.net_steps; ++k) {
            const auto perm = batch_rng.permutation(ds.size());
            const std::span<const std::size_t> pick(perm.data(), std::min(cfg.real_batch, ds.size()));
            std::vector<int> y;
            for (std::size_t i : pick) y.push_back(ds.labels[i]);
            std::vector<Var> params;
            for (const auto& p : theta) params.push_back(leaf(p));
            const auto g = grad_values(
                loss_ce(forward_logits(cfg.net, params, constant(gather_rows(ds.examples, pick))), y), params);
            for (std::size_t i = 0; i < theta.size(); ++i)
                for (std::size_t j = 0; j < theta[i].size(); ++j) theta[i][j] -= cfg.net_lr * g[i][j];
        }
    }
    s.steps = cfg.steps;
    return s;
}

ExpertTrajectory record_trajectory(const NetSpec& spec, const LabeledDataset& ds, std::size_t epochs,
                                   std::size_t interval, std::uint64_t seed, double lr, std::size_t batch_size) {
    if (interval == 0) throw UsageError("record_trajectory: interval must be positive");
    if (batch_size == 0) throw UsageError("record_trajectory: zero batch size");
    const std::size_t per_epoch = (ds.size() + batch_size - 1) / batch_size;
    if (epochs * per_epoch < interval)
        throw UsageError("record_trajectory: " + std::to_string(epochs * per_epoch) +
                         " total steps is shorter than the interval " + std::to_string(interval));
    ExpertTrajectory traj;
    traj.spec = spec;
    traj.interval = interval;
    traj.seed = seed;
    const Params init = init_params(spec, seed);
    traj.snapshots.push_back(init.values());
    TrainConfig tc;
    tc.epochs = epochs;
    tc.lr = lr;
    tc.batch_size = batch_size;
    tc.seed = derive_seed(seed, 30);
    sgd_train(init, ds, tc, [&](std::size_t step, std::span<const Tensor> params) {
        if (step % interval == 0) traj.snapshots.emplace_back(params.begin(), params.end());
    });
    return traj;
}

Var mtt_loss(const NetSpec& spec, const Var& synthetic, std::span<const int> labels, const ExpertTrajectory& traj,
             std::size_t start, std::size_t span, int student_steps, double student_lr,
             std::span<const Tensor> step_masks) {
    if (student_steps < 1) throw UsageError("mtt_loss: need at least one student step");
    if (span == 0 || start + span >= traj.snapshots.size())
        throw UsageError("mtt_loss: trajectory has no snapshot pair (" + std::to_string(start) + ", " +
                         std::to_string(start + span) + ")");
    if (!step_masks.empty() && step_masks.size() != static_cast<std::size_t>(student_steps))
        throw UsageError("mtt_loss: need one mask matrix per student step");
    const auto& from = traj.snapshots[start];
    const auto& to = traj.snapshots[start + span];

    double denom = 0.0;
    for (std::size_t i = 0; i < from.size(); ++i) {
        double s = 0.0;
        for (std::size_t j = 0; j < from[i].size(); ++j) s += (from[i][j] - to[i][j]) * (from[i][j] - to[i][j]);
        denom = i == 0 ? s : denom + s;
    }
    if (denom == 0.0)
        throw DegenerateError("mtt_loss: snapshots " + std::to_string(start) + " and " + std::to_string(start + span) +
                              " coincide");

    std::vector<Var> theta;
    for (const auto& p : from) theta.push_back(leaf(p));
    theta = unroll_sgd(std::move(theta), student_steps, student_lr, [&](std::span<const Var> params, int step) {
        const Var x = step_masks.empty() ? synthetic : apply_mask(synthetic, step_masks[static_cast<std::size_t>(step)]);
        return loss_ce(forward_logits(spec, params, x), labels);
    });
    Var num;
    for (std::size_t i = 0; i < theta.size(); ++i) {
        const Var d = ops::sub(theta[i], constant(to[i]));
        const Var s = ops::sum(ops::mul(d, d));
        num = i == 0 ? s : ops::add(num, s);
    }
    return ops::div_scalar(num, denom);
}

SyntheticSet distill_mtt(const LabeledDataset& ds, std::span<const ExpertTrajectory> trajectories,
                         const MttConfig& cfg) {
    ds.validate();
    if (trajectories.empty()) throw UsageError("distill_mtt: no expert trajectories");
    const NetSpec& spec = trajectories.front().spec;
    if (ds.dims() != spec.input_dim) throw DimensionError("distill_mtt: dataset dims do not match net input");
    for (const auto& t : trajectories)
        if (t.snapshots.size() < cfg.expert_span + 1)
            throw UsageError("distill_mtt: trajectory too short for expert span " + std::to_string(cfg.expert_span));
    if (cfg.mask) cfg.mask->validate();
    const bool masked = cfg.mask && !cfg.mask->is_identity();

    SyntheticSet s = init_synthetic(ds, cfg.ipc, derive_seed(cfg.seed, 20));
    Rng window_rng(derive_seed(cfg.seed, 21));
    Rng mask_rng(derive_seed(cfg.mask ? cfg.mask->seed : 0, derive_seed(cfg.seed, 22)));
    for (std::size_t it = 0; it < cfg.steps; ++it) {
        const auto& traj = trajectories[window_rng.index(trajectories.size())];
        const std::size_t last_start = std::min(cfg.max_start, traj.snapshots.size() - 1 - cfg.expert_span);
        const std::size_t start = window_rng.index(last_start + 1);
        std::vector<Tensor> masks;
        if (masked)
            for (int k = 0; k < cfg.student_steps; ++k)
                masks.push_back(make_masks(s.images.dim(0), s.images.dim(1), *cfg.mask, mask_rng));
        const auto g = meta_grad(
            [&](const Var& sv) {
                return mtt_loss(spec, sv, s.labels, traj, start, cfg.expert_span, cfg.student_steps, cfg.student_lr,
                                masks);
            },
            s.images);
        for (std::size_t i = 0; i < s.images.size(); ++i) s.images[i] -= cfg.synthetic_lr * g.gradient[i];
        check_finite_images(s.images, "distill_mtt", it);
    }
    s.steps = cfg.steps;
    return s;
}

void save_synthetic(const std::filesystem::path& path, const SyntheticSet& s, const std::string& extra_meta) {
    json meta{{"kind", "synthetic"},
              {"ipc", s.ipc},
              {"steps", s.steps},
              {"num_classes", s.num_classes},
              {"example_shape", s.example_shape},
              {"meta", json::parse(extra_meta)}};
    std::vector<double> labels(s.labels.begin(), s.labels.end());
    save_named_tensors(path, {{"images", s.images}, {"labels", Tensor::vector(std::move(labels))}}, meta.dump());
}

SyntheticSet load_synthetic(const std::filesystem::path& path) {
    auto file = load_named_tensors(path);
    const json meta = json::parse(file.header);
    if (meta.value("kind", "") != "synthetic" || file.tensors.size() != 2)
        throw FormatError(path.string() + ": not a synthetic-set file");
    SyntheticSet s;
    s.ipc = meta.at("ipc").get<std::size_t>();
    s.steps = meta.at("steps").get<std::size_t>();
    s.num_classes = meta.at("num_classes").get<int>();
    s.example_shape = meta.at("example_shape").get<Shape>();
    s.images = std::move(file.tensors[0].value);
    for (double v : file.tensors[1].value.data()) s.labels.push_back(static_cast<int>(v));
    return s;
}

void save_trajectory(const std::filesystem::path& path, const ExpertTrajectory& t) {
    const Params names = init_params(t.spec, 0);
    std::vector<NamedTensor> out;
    for (std::size_t k = 0; k < t.snapshots.size(); ++k)
        for (std::size_t i = 0; i < t.snapshots[k].size(); ++i)
            out.push_back({"snapshot" + std::to_string(k) + "." + names.tensors[i].name, t.snapshots[k][i]});
    json meta{{"kind", "trajectory"},
              {"spec", t.spec},
              {"interval", t.interval},
              {"seed", t.seed},
              {"count", t.snapshots.size()}};
    save_named_tensors(path, out, meta.dump());
}

ExpertTrajectory load_trajectory(const std::filesystem::path& path) {
    auto file = load_named_tensors(path);
    const json meta = json::parse(file.header);
    if (meta.value("kind", "") != "trajectory") throw FormatError(path.string() + ": not a trajectory file");
    ExpertTrajectory t;
    t.spec = meta.at("spec").get<NetSpec>();
    t.interval = meta.at("interval").get<std::size_t>();
    t.seed = meta.at("seed").get<std::uint64_t>();
    const auto count = meta.at("count").get<std::size_t>();
    const std::size_t per = init_params(t.spec, 0).tensors.size();
    if (file.tensors.size() != count * per) throw FormatError(path.string() + ": snapshot tensor count mismatch");
    for (std::size_t k = 0; k < count; ++k) {
        std::vector<Tensor> snap;
        for (std::size_t i = 0; i < per; ++i) snap.push_back(std::move(file.tensors[k * per + i].value));
        t.snapshots.push_back(std::move(snap));
    }
    return t;
}

}  // namespace ddcal
