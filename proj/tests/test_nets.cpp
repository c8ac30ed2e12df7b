#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "ddcal/error.hpp"
#include "ddcal/losses.hpp"
#include "ddcal/meta.hpp"
#include "ddcal/nets.hpp"
#include "ddcal/rng.hpp"

using namespace ddcal;

namespace {

LabeledDataset two_points_per_class() {
    LabeledDataset ds;
    ds.num_classes = 3;
    ds.examples = Tensor::matrix(6, 2, {0, 0, 0.1, 0, 3, 3, 3, 3.2, -3, 3, -3.1, 3});
    ds.labels = {0, 0, 1, 1, 2, 2};
    ds.example_shape = {2};
    return ds;
}

}  // namespace

TEST(Init, DeterministicAndBounded) {
    const NetSpec spec = NetSpec::mlp(2, {}, 3);
    const Params a = init_params(spec, 4), b = init_params(spec, 4);
    EXPECT_EQ(a.values()[0], b.values()[0]);
    const double bound = std::sqrt(2.0 / 2.0) * std::sqrt(3.0);
    double biggest = 0.0;
    for (double v : a.tensors[0].value.data()) {
        EXPECT_LE(std::abs(v), bound);
        biggest = std::max(biggest, std::abs(v));
    }
    EXPECT_GT(biggest, 0.0);
    for (double v : a.tensors[1].value.data()) EXPECT_EQ(v, 0.0);
    EXPECT_FALSE(init_params(spec, 5).values()[0] == a.values()[0]);
}

TEST(Init, NamesAndShapes) {
    const Params mlp = init_params(NetSpec::mlp(4, {5, 6}, 3), 0);
    ASSERT_EQ(mlp.tensors.size(), 6u);
    EXPECT_EQ(mlp.tensors[0].name, "fc0.weight");
    EXPECT_EQ(mlp.tensors[0].value.shape(), (Shape{4, 5}));
    EXPECT_EQ(mlp.tensors[5].name, "fc2.bias");
    const Params conv = init_params(NetSpec::convnet(1, 8, 8, 10, 2, 4), 0);
    ASSERT_EQ(conv.tensors.size(), 4u);
    EXPECT_EQ(conv.tensors[1].value.shape(), (Shape{36, 4}));
    EXPECT_EQ(conv.tensors[2].value.shape(), (Shape{16, 10}));
}

TEST(Init, InvalidSpecsAreUsageErrors) {
    EXPECT_THROW(init_params(NetSpec::convnet(1, 8, 8, 10, 0, 4), 0), UsageError);
    EXPECT_THROW(init_params(NetSpec::mlp(4, {0}, 3), 0), UsageError);
    EXPECT_THROW(init_params(NetSpec::convnet(1, 6, 6, 10, 2, 4), 0), UsageError);
}

TEST(Forward, ZeroWeightsGiveZeroLogits) {
    Params p = init_params(NetSpec::mlp(3, {4}, 2), 1);
    std::vector<Tensor> zeros;
    for (const auto& t : p.tensors) zeros.emplace_back(t.value.shape(), 0.0);
    p = p.with_values(zeros);
    const Tensor out = forward_logits(p, Tensor::matrix({{1, 2, 3}, {-4, 5, 0.5}}));
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
}

TEST(Forward, IdentityNetCopiesOneHot) {
    Params p = init_params(NetSpec::mlp(3, {}, 3), 1);
    p = p.with_values({Tensor::matrix({{1, 0, 0}, {0, 1, 0}, {0, 0, 1}}), Tensor(Shape{3}, 0.0)});
    const Tensor x = Tensor::matrix({{0, 1, 0}, {0, 0, 1}});
    EXPECT_EQ(forward_logits(p, x), x);
}

TEST(Forward, ShapeMismatchIsDimensionError) {
    const Params p = init_params(NetSpec::mlp(3, {4}, 2), 1);
    EXPECT_THROW(forward_logits(p, Tensor(Shape{2, 5}, 0.0)), DimensionError);
}

TEST(Forward, InputGradientMatchesFd) {
    for (const NetSpec& spec : {NetSpec::mlp(5, {7, 4}, 3), NetSpec::convnet(2, 4, 4, 3, 1, 3)}) {
        const Params p = init_params(spec, 8);
        Rng rng(3);
        Tensor x(Shape{2, spec.input_dim});
        for (double& v : x.data()) v = rng.uniform(-1, 1);
        const auto theta = p.constants();
        Var xv = leaf(x);
        const Var wrt[] = {xv};
        const Tensor g = grad_values(ops::sum(forward_logits(spec, theta, xv)), wrt)[0];
        const Tensor fd = fd_grad(
            [&](const Tensor& t) { return ops::sum(forward_logits(spec, theta, constant(t))).value().item(); }, x);
        EXPECT_LE(relative_error(g, fd), 1e-4) << to_string(spec.arch);
    }
}

TEST(LossCe, HandValues) {
    const std::vector<int> labels10(4, 3);
    EXPECT_NEAR(loss_ce(constant(Tensor(Shape{4, 10}, 0.7)), labels10).value().item(), std::log(10.0), 1e-12);
    const std::vector<int> zero{0};
    EXPECT_NEAR(loss_ce(constant(Tensor::matrix({{1e6, 0, 0}})), zero).value().item(), 0.0, 1e-12);
    EXPECT_NEAR(loss_ce(constant(Tensor::matrix({{1, 0}})), zero).value().item(), std::log1p(std::exp(-1.0)), 1e-12);
    EXPECT_NEAR(std::log1p(std::exp(-1.0)), 0.3133, 1e-4);
}

TEST(LossCe, FocalWithZeroGammaIsCe) {
    const Tensor z = Tensor::matrix({{0.3, -1.2, 2.0}, {1.0, 1.0, 0.0}});
    const std::vector<int> y{2, 0};
    EXPECT_EQ(focal_loss(constant(z), y, 0.0).value().item(), loss_ce(constant(z), y).value().item());
}

TEST(Train, ZeroLearningRateLeavesParams) {
    const LabeledDataset ds = two_points_per_class();
    const Params init = init_params(NetSpec::mlp(2, {4}, 3), 2);
    TrainConfig tc;
    tc.lr = 0.0;
    tc.epochs = 3;
    const Params out = sgd_train(init, ds, tc).params;
    for (std::size_t i = 0; i < init.tensors.size(); ++i) EXPECT_EQ(out.tensors[i].value, init.tensors[i].value);
    tc.lr = -0.1;
    EXPECT_THROW(sgd_train(init, ds, tc), UsageError);
}

TEST(Train, SeparableBlobsReachFullAccuracy) {
    const LabeledDataset ds = gen_blobs(BlobSpec{2, 100, 4, 1.0, 3.0, 12});
    TrainConfig tc;
    tc.epochs = 50;
    tc.batch_size = 32;
    tc.seed = 1;
    const TrainResult r = sgd_train(init_params(NetSpec::mlp(4, {8}, 2), 0), ds, tc);
    EXPECT_GE(evaluate(r.params, ds).accuracy, 0.99);
    EXPECT_EQ(r.history.size(), 50u);
}

TEST(Train, BitwiseReproducible) {
    const LabeledDataset ds = gen_blobs(BlobSpec{3, 30, 4, 1.0, 2.0, 1});
    for (LossKind k : {LossKind::ce, LossKind::focal, LossKind::label_smoothing, LossKind::mixup}) {
        TrainConfig tc;
        tc.epochs = 5;
        tc.batch_size = 16;
        tc.seed = 9;
        tc.loss.kind = k;
        const Params init = init_params(NetSpec::mlp(4, {6}, 3), 3);
        const Params a = sgd_train(init, ds, tc).params, b = sgd_train(init, ds, tc).params;
        for (std::size_t i = 0; i < a.tensors.size(); ++i) EXPECT_EQ(a.tensors[i].value, b.tensors[i].value);
        EXPECT_EQ(a.steps_trained, 30u);
    }
}

TEST(Train, DivergenceNamesEpochAndStep) {
    const LabeledDataset ds = gen_blobs(BlobSpec{2, 20, 4, 1.0, 50.0, 1});
    TrainConfig tc;
    tc.lr = 1e6;
    tc.epochs = 50;
    try {
        sgd_train(init_params(NetSpec::mlp(4, {16}, 2), 0), ds, tc);
        FAIL() << "expected divergence";
    } catch (const NumericError& e) {
        EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
        EXPECT_NE(std::string(e.what()).find("step"), std::string::npos);
    }
}

TEST(Train, ObserverSeesEveryStep) {
    const LabeledDataset ds = two_points_per_class();
    TrainConfig tc;
    tc.epochs = 4;
    tc.batch_size = 4;
    std::vector<std::size_t> steps;
    sgd_train(init_params(NetSpec::mlp(2, {}, 3), 0), ds, tc,
              [&](std::size_t s, std::span<const Tensor>) { steps.push_back(s); });
    EXPECT_EQ(steps, (std::vector<std::size_t>{1, 2, 3, 4, 5, 6, 7, 8}));
}

TEST(Evaluate, MemorizesTinySet) {
    const LabeledDataset ds = two_points_per_class();
    TrainConfig tc;
    tc.epochs = 300;
    tc.lr = 0.1;
    tc.batch_size = 6;
    const Params p = sgd_train(init_params(NetSpec::mlp(2, {16}, 3), 1), ds, tc).params;
    const Evaluation e = evaluate(p, ds);
    EXPECT_EQ(e.accuracy, 1.0);
    EXPECT_EQ(e.logits.dim(0), 6u);
}

TEST(Evaluate, RandomNetNearChance) {
    const std::size_t n = 5000;
    LabeledDataset ds;
    ds.num_classes = 10;
    ds.examples = Tensor(Shape{n, 8});
    Rng rng(4);
    for (double& v : ds.examples.data()) v = rng.normal();
    for (std::size_t i = 0; i < n; ++i) ds.labels.push_back(static_cast<int>(rng.index(10)));
    ds.example_shape = {8};
    const double acc = evaluate(init_params(NetSpec::mlp(8, {16}, 10), 2), ds).accuracy;
    const double sigma = std::sqrt(0.1 * 0.9 / static_cast<double>(n));
    EXPECT_NEAR(acc, 0.1, 3 * sigma);
    LabeledDataset empty = ds.subset(std::vector<std::size_t>{});
    EXPECT_THROW(evaluate(init_params(NetSpec::mlp(8, {16}, 10), 2), empty), UsageError);
}

TEST(LayerFeatures, CountsAndBiasPropagation) {
    const NetSpec spec = NetSpec::mlp(2, {3, 2}, 2);
    Params p = init_params(spec, 0);
    auto v = p.values();
    v[1] = Tensor::vector({0.5, -1.0, 2.0});  // fc0.bias
    v[2] = Tensor::matrix({{1, 0}, {1, 1}, {0, 2}});
    v[3] = Tensor::vector({-0.25, 0.1});  // fc1.bias
    p = p.with_values(v);
    const auto feats = layer_features(p, Tensor(Shape{1, 2}, 0.0));
    ASSERT_EQ(feats.size(), spec.feature_layers());
    EXPECT_EQ(feats[0], Tensor::matrix({{0.5, 0.0, 2.0}}));
    // relu([0.5, 0, 2] W1 + b1) = relu([0.25, 4.1])
    EXPECT_EQ(feats[1].dim(1), 2u);
    EXPECT_NEAR(feats[1].at(0, 0), 0.25, 1e-15);
    EXPECT_NEAR(feats[1].at(0, 1), 4.1, 1e-15);
    const auto conv = layer_features(init_params(NetSpec::convnet(1, 8, 8, 3, 2, 4), 0), Tensor(Shape{2, 64}, 0.3));
    ASSERT_EQ(conv.size(), 2u);
    EXPECT_EQ(conv[1].dim(1), 4u * 2 * 2);
}

TEST(Params, SaveLoadRoundTrip) {
    const std::filesystem::path dir = std::filesystem::path(DDCAL_TEST_TMP) / "nets";
    std::filesystem::create_directories(dir);
    Params p = init_params(NetSpec::convnet(1, 4, 4, 3, 1, 2), 77);
    p.steps_trained = 12;
    save_params(dir / "p.ddt", p);
    const Params q = load_params(dir / "p.ddt");
    EXPECT_EQ(q.spec.arch, Arch::convnet);
    EXPECT_EQ(q.init_seed, 77u);
    EXPECT_EQ(q.steps_trained, 12u);
    for (std::size_t i = 0; i < p.tensors.size(); ++i) {
        EXPECT_EQ(q.tensors[i].name, p.tensors[i].name);
        EXPECT_EQ(q.tensors[i].value, p.tensors[i].value);
    }
}
