#include "ddcal/serialize.hpp"

#include "ddcal/error.hpp"

namespace ddcal {

void to_json(json& j, const NetSpec& s) {
    j = json{{"arch", to_string(s.arch)}, {"input_dim", s.input_dim}, {"num_classes", s.num_classes}};
    if (s.arch == Arch::mlp) {
        j["hidden"] = s.hidden;
    } else {
        j["in_channels"] = s.in_channels;
        j["height"] = s.height;
        j["width_px"] = s.width_px;
        j["blocks"] = s.blocks;
        j["width"] = s.width;
    }
}

void from_json(const json& j, NetSpec& s) {
    s = NetSpec{};
    s.arch = arch_from_string(j.value("arch", std::string("mlp")));
    s.num_classes = j.at("num_classes").get<int>();
    if (s.arch == Arch::mlp) {
        s.input_dim = j.at("input_dim").get<std::size_t>();
        s.hidden = j.value("hidden", std::vector<std::size_t>{});
    } else {
        s.in_channels = j.at("in_channels").get<std::size_t>();
        s.height = j.at("height").get<std::size_t>();
        s.width_px = j.at("width_px").get<std::size_t>();
        s.blocks = j.value("blocks", std::size_t{2});
        s.width = j.value("width", std::size_t{16});
        s.input_dim = s.in_channels * s.height * s.width_px;
    }
}

void to_json(json& j, const LossSpec& s) {
    j = json{{"kind", to_string(s.kind)}, {"gamma", s.gamma}, {"epsilon", s.epsilon}, {"alpha", s.alpha}};
}

void from_json(const json& j, LossSpec& s) {
    s = LossSpec{};
    s.kind = loss_kind_from_string(j.value("kind", std::string("ce")));
    s.gamma = j.value("gamma", s.gamma);
    s.epsilon = j.value("epsilon", s.epsilon);
    s.alpha = j.value("alpha", s.alpha);
}

void to_json(json& j, const TrainConfig& c) {
    j = json{{"epochs", c.epochs}, {"lr", c.lr}, {"batch_size", c.batch_size}, {"seed", c.seed}, {"loss", c.loss}};
}

void from_json(const json& j, TrainConfig& c) {
    c = TrainConfig{};
    c.epochs = j.value("epochs", c.epochs);
    c.lr = j.value("lr", c.lr);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.seed = j.value("seed", c.seed);
    if (j.contains("loss")) c.loss = j.at("loss").get<LossSpec>();
}

void to_json(json& j, const BlobSpec& s) {
    j = json{{"classes", s.classes}, {"per_class", s.per_class}, {"dims", s.dims},
             {"spread", s.spread},   {"center_scale", s.center_scale}, {"seed", s.seed}};
}

void from_json(const json& j, BlobSpec& s) {
    s = BlobSpec{};
    s.classes = j.value("classes", s.classes);
    s.per_class = j.value("per_class", s.per_class);
    s.dims = j.value("dims", s.dims);
    s.spread = j.value("spread", s.spread);
    s.center_scale = j.value("center_scale", s.center_scale);
    s.seed = j.value("seed", s.seed);
}

void to_json(json& j, const MaskSpec& m) {
    if (m.mode == MaskMode::fixed)
        j = json{{"mode", "fixed"}, {"ratio", m.ratio}, {"seed", m.seed}};
    else
        j = json{{"mode", "dynamic"}, {"lo", m.lo}, {"hi", m.hi}, {"seed", m.seed}};
}

void from_json(const json& j, MaskSpec& m) {
    const std::string mode = j.value("mode", std::string("fixed"));
    if (mode == "fixed")
        m = MaskSpec::fixed(j.value("ratio", 0.0), j.value("seed", std::uint64_t{0}));
    else if (mode == "dynamic")
        m = MaskSpec::dynamic(j.value("lo", 0.0), j.value("hi", 0.1), j.value("seed", std::uint64_t{0}));
    else
        throw ConfigError("unknown mask mode '" + mode + "'");
    m.validate();
}

}  // namespace ddcal
