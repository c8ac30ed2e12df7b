#include "ddcal/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <optional>
#include <unordered_map>

#include "ddcal/error.hpp"

namespace ddcal {

namespace {

thread_local bool t_grad_enabled = true;
thread_local std::uint64_t t_next_id = 0;
thread_local double t_kink_threshold = 0.0;
thread_local bool t_kink_hit = false;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

void require_same_shape(const char* op, const Var& a, const Var& b) {
    if (a.shape() != b.shape())
        throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                             " vs " + shape_str(b.shape()));
}

void require_rank(const char* op, const Var& a, std::size_t rank) {
    if (a.shape().size() != rank)
        throw DimensionError(std::string(op) + ": expected rank " + std::to_string(rank) +
                             ", got " + shape_str(a.shape()));
}

template <class F>
Tensor map_values(const Tensor& in, F f) {
    Tensor out(in.shape());
    for (std::size_t i = 0; i < in.size(); ++i) out[i] = f(in[i]);
    return out;
}

IndexMap make_index(std::vector<std::int64_t> v) {
    return std::make_shared<const std::vector<std::int64_t>>(std::move(v));
}

Var broadcast_scalar(const Var& s, const Shape& shape) {
    return ops::gather(s, make_index(std::vector<std::int64_t>(shape_numel(shape), 0)), shape);
}

}  // namespace

Var make_op_result(Tensor value, const char* op, std::vector<Var> parents,
                   std::function<std::vector<Var>(const Var&, const Var&)> backward) {
    Var out;
    out.node_ = std::make_shared<detail::Node>();
    auto& n = *out.node_;
    n.id = t_next_id++;
    n.op = op;
    if (!value.all_finite())
        throw NumericError(std::string("non-finite value produced by '") + op + "' at node #" +
                           std::to_string(n.id));
    n.value = std::move(value);
    const bool tracked = t_grad_enabled && std::any_of(parents.begin(), parents.end(),
                                                       [](const Var& p) { return p.requires_grad(); });
    if (tracked) {
        n.requires_grad = true;
        n.parents = std::move(parents);
        n.backward = std::move(backward);
    }
    return out;
}

Var::Var(Tensor value, bool requires_grad) : node_(std::make_shared<detail::Node>()) {
    node_->id = t_next_id++;
    if (!value.all_finite())
        throw NumericError("non-finite value in input tensor at node #" + std::to_string(node_->id));
    node_->value = std::move(value);
    node_->requires_grad = requires_grad;
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_mode_enabled() noexcept { return t_grad_enabled; }

KinkMonitor::KinkMonitor(double threshold)
    : previous_threshold_(t_kink_threshold), previous_hit_(t_kink_hit) {
    t_kink_threshold = threshold;
    t_kink_hit = false;
}
KinkMonitor::~KinkMonitor() {
    t_kink_threshold = previous_threshold_;
    t_kink_hit = previous_hit_ || t_kink_hit;
}
bool KinkMonitor::hit() const noexcept { return t_kink_hit; }

namespace ops {

Var add(const Var& a, const Var& b) {
    require_same_shape("add", a, b);
    Tensor v(a.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] + b.value()[i];
    return make_op_result(std::move(v), "add", {a, b},
                          [](const Var&, const Var& g) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
    require_same_shape("sub", a, b);
    Tensor v(a.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] - b.value()[i];
    return make_op_result(std::move(v), "sub", {a, b}, [b](const Var&, const Var& g) {
        return std::vector<Var>{g, b.requires_grad() ? neg(g) : Var()};
    });
}

Var mul(const Var& a, const Var& b) {
    require_same_shape("mul", a, b);
    Tensor v(a.shape());
    for (std::size_t i = 0; i < v.size(); ++i) v[i] = a.value()[i] * b.value()[i];
    return make_op_result(std::move(v), "mul", {a, b}, [a, b](const Var&, const Var& g) {
        return std::vector<Var>{a.requires_grad() ? mul(g, b) : Var(),
                                b.requires_grad() ? mul(g, a) : Var()};
    });
}

Var scale(const Var& a, double c) {
    return make_op_result(map_values(a.value(), [c](double x) { return c * x; }), "scale", {a},
                          [c](const Var&, const Var& g) { return std::vector<Var>{scale(g, c)}; });
}

Var add_scalar(const Var& a, double c) {
    return make_op_result(map_values(a.value(), [c](double x) { return x + c; }), "add_scalar", {a},
                          [](const Var&, const Var& g) { return std::vector<Var>{g}; });
}

Var div_scalar(const Var& a, double c) {
    return make_op_result(map_values(a.value(), [c](double x) { return x / c; }), "div_scalar", {a},
                          [c](const Var&, const Var& g) { return std::vector<Var>{div_scalar(g, c)}; });
}

Var concat_flat(std::span<const Var> parts) {
    if (parts.empty()) throw DimensionError("concat_flat: nothing to concatenate");
    std::size_t total = 0;
    for (const Var& p : parts) total += p.size();
    Var out;
    std::size_t offset = 0;
    for (const Var& p : parts) {
        std::vector<std::int64_t> idx(p.size());
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(offset + i);
        offset += p.size();
        Var placed = scatter_add(p, make_index(std::move(idx)), Shape{total});
        out = out.defined() ? add(out, placed) : placed;
    }
    return out;
}

Var neg(const Var& a) { return scale(a, -1.0); }

Var exp(const Var& a) {
    return make_op_result(map_values(a.value(), [](double x) { return std::exp(x); }), "exp", {a},
                          [](const Var& out, const Var& g) { return std::vector<Var>{mul(g, out)}; });
}

Var log(const Var& a) {
    return make_op_result(map_values(a.value(), [](double x) { return std::log(x); }), "log", {a},
                          [a](const Var&, const Var& g) { return std::vector<Var>{mul(g, pow(a, -1.0))}; });
}

Var pow(const Var& a, double p) {
    return make_op_result(map_values(a.value(), [p](double x) { return std::pow(x, p); }), "pow", {a},
                          [a, p](const Var&, const Var& g) {
                              if (p == 1.0) return std::vector<Var>{g};
                              return std::vector<Var>{mul(g, scale(pow(a, p - 1.0), p))};
                          });
}

Var relu(const Var& a) {
    if (t_kink_threshold > 0.0) {
        for (double x : a.value().data())
            if (std::abs(x) < t_kink_threshold) t_kink_hit = true;
    }
    return make_op_result(map_values(a.value(), [](double x) { return x > 0.0 ? x : 0.0; }), "relu", {a},
                          [a](const Var&, const Var& g) {
                              Var step = constant(map_values(a.value(), [](double x) { return x > 0.0 ? 1.0 : 0.0; }));
                              return std::vector<Var>{mul(g, step)};
                          });
}

Var sum(const Var& a) {
    double s = 0.0;
    for (double x : a.value().data()) s += x;
    return make_op_result(Tensor::scalar(s), "sum", {a}, [a](const Var&, const Var& g) {
        return std::vector<Var>{broadcast_scalar(g, a.shape())};
    });
}

Var mean(const Var& a) {
    if (a.size() == 0) throw DimensionError("mean: empty tensor");
    return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var reshape(const Var& a, Shape shape) {
    Shape original = a.shape();
    return make_op_result(a.value().reshaped(std::move(shape)), "reshape", {a},
                          [original](const Var&, const Var& g) { return std::vector<Var>{reshape(g, original)}; });
}

Var transpose(const Var& a) {
    require_rank("transpose", a, 2);
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    Tensor v(Shape{c, r});
    for (std::size_t i = 0; i < r; ++i)
        for (std::size_t j = 0; j < c; ++j) v[j * r + i] = a.value()[i * c + j];
    return make_op_result(std::move(v), "transpose", {a},
                          [](const Var&, const Var& g) { return std::vector<Var>{transpose(g)}; });
}

Var matmul(const Var& a, const Var& b) {
    require_rank("matmul", a, 2);
    require_rank("matmul", b, 2);
    const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
    if (b.shape()[0] != k)
        throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " x " +
                             shape_str(b.shape()));
    Tensor v(Shape{m, n});
    if (m && n && k) {
        Eigen::Map<const RowMat> am(a.value().data().data(), m, k);
        Eigen::Map<const RowMat> bm(b.value().data().data(), k, n);
        Eigen::Map<RowMat> vm(v.data().data(), m, n);
        vm.noalias() = am * bm;
    }
    return make_op_result(std::move(v), "matmul", {a, b}, [a, b](const Var&, const Var& g) {
        return std::vector<Var>{a.requires_grad() ? matmul(g, transpose(b)) : Var(),
                                b.requires_grad() ? matmul(transpose(a), g) : Var()};
    });
}

Var gather(const Var& a, IndexMap idx, Shape out_shape) {
    if (idx->size() != shape_numel(out_shape))
        throw DimensionError("gather: index map size does not match output shape " + shape_str(out_shape));
    Tensor v(out_shape);
    const auto n = static_cast<std::int64_t>(a.size());
    for (std::size_t i = 0; i < idx->size(); ++i) {
        const std::int64_t j = (*idx)[i];
        if (j >= n) throw DimensionError("gather: index out of range");
        if (j >= 0) v[i] = a.value()[static_cast<std::size_t>(j)];
    }
    Shape in_shape = a.shape();
    return make_op_result(std::move(v), "gather", {a}, [idx, in_shape](const Var&, const Var& g) {
        return std::vector<Var>{scatter_add(g, idx, in_shape)};
    });
}

Var scatter_add(const Var& a, IndexMap idx, Shape out_shape) {
    if (idx->size() != a.size())
        throw DimensionError("scatter_add: index map size does not match input " + shape_str(a.shape()));
    Tensor v(out_shape);
    const auto n = static_cast<std::int64_t>(v.size());
    for (std::size_t i = 0; i < idx->size(); ++i) {
        const std::int64_t j = (*idx)[i];
        if (j >= n) throw DimensionError("scatter_add: index out of range");
        if (j >= 0) v[static_cast<std::size_t>(j)] += a.value()[i];
    }
    Shape in_shape = a.shape();
    return make_op_result(std::move(v), "scatter_add", {a}, [idx, in_shape](const Var&, const Var& g) {
        return std::vector<Var>{gather(g, idx, in_shape)};
    });
}

Var row_sum(const Var& a) {
    require_rank("row_sum", a, 2);
    const std::size_t r = a.shape()[0], c = a.shape()[1];
    std::vector<std::int64_t> idx(r * c);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i / c);
    return scatter_add(a, make_index(std::move(idx)), Shape{r});
}

Var expand_rows(const Var& v, std::size_t cols) {
    require_rank("expand_rows", v, 1);
    const std::size_t r = v.shape()[0];
    std::vector<std::int64_t> idx(r * cols);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i / cols);
    return gather(v, make_index(std::move(idx)), Shape{r, cols});
}

Var expand_cols(const Var& v, std::size_t rows) {
    require_rank("expand_cols", v, 1);
    const std::size_t c = v.shape()[0];
    std::vector<std::int64_t> idx(rows * c);
    for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = static_cast<std::int64_t>(i % c);
    return gather(v, make_index(std::move(idx)), Shape{rows, c});
}

Var add_row_bias(const Var& x, const Var& b) {
    require_rank("add_row_bias", x, 2);
    require_rank("add_row_bias", b, 1);
    if (x.shape()[1] != b.shape()[0])
        throw DimensionError("add_row_bias: bias " + shape_str(b.shape()) + " vs input " + shape_str(x.shape()));
    return add(x, expand_cols(b, x.shape()[0]));
}

Var l2_norm(const Var& a) {
    double s = 0.0;
    for (double x : a.value().data()) s += x * x;
    return make_op_result(Tensor::scalar(std::sqrt(s)), "l2_norm", {a}, [a](const Var& out, const Var& g) {
        if (out.value()[0] == 0.0) return std::vector<Var>{constant(Tensor(a.shape()))};
        return std::vector<Var>{mul(broadcast_scalar(mul(g, pow(out, -1.0)), a.shape()), a)};
    });
}

Var log_softmax(const Var& logits) {
    require_rank("log_softmax", logits, 2);
    const std::size_t r = logits.shape()[0], k = logits.shape()[1];
    if (k == 0) throw DimensionError("log_softmax: zero classes");
    Tensor shift(logits.shape());
    for (std::size_t i = 0; i < r; ++i) {
        auto row = logits.value().row(i);
        const double m = *std::max_element(row.begin(), row.end());
        std::fill_n(shift.data().begin() + i * k, k, m);
    }
    Var shifted = sub(logits, constant(std::move(shift)));
    Var lse = log(row_sum(exp(shifted)));
    return sub(shifted, expand_rows(lse, k));
}

Var conv3x3(const Var& x, const Var& w, std::size_t channels, std::size_t height, std::size_t width) {
    require_rank("conv3x3", x, 2);
    require_rank("conv3x3", w, 2);
    const std::size_t hw = height * width;
    if (x.shape()[1] != channels * hw)
        throw DimensionError("conv3x3: input " + shape_str(x.shape()) + " is not C*H*W = " +
                             std::to_string(channels * hw));
    if (w.shape()[0] != channels * 9)
        throw DimensionError("conv3x3: weight " + shape_str(w.shape()) + " is not (C_in*9, C_out)");
    const std::size_t batch = x.shape()[0], out_ch = w.shape()[1];
    std::vector<std::int64_t> cols(batch * hw * channels * 9, -1);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t py = 0; py < height; ++py)
            for (std::size_t px = 0; px < width; ++px) {
                const std::size_t r = b * hw + py * width + px;
                for (std::size_t c = 0; c < channels; ++c)
                    for (int ky = 0; ky < 3; ++ky)
                        for (int kx = 0; kx < 3; ++kx) {
                            const auto sy = static_cast<std::int64_t>(py) + ky - 1;
                            const auto sx = static_cast<std::int64_t>(px) + kx - 1;
                            if (sy < 0 || sx < 0 || sy >= static_cast<std::int64_t>(height) ||
                                sx >= static_cast<std::int64_t>(width))
                                continue;
                            cols[r * channels * 9 + c * 9 + static_cast<std::size_t>(ky * 3 + kx)] =
                                static_cast<std::int64_t>(b * channels * hw + c * hw) +
                                sy * static_cast<std::int64_t>(width) + sx;
                        }
            }
    Var patches = gather(x, make_index(std::move(cols)), Shape{batch * hw, channels * 9});
    Var y = matmul(patches, w);
    std::vector<std::int64_t> perm(batch * out_ch * hw);
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t co = 0; co < out_ch; ++co)
            for (std::size_t p = 0; p < hw; ++p)
                perm[b * out_ch * hw + co * hw + p] = static_cast<std::int64_t>((b * hw + p) * out_ch + co);
    return gather(y, make_index(std::move(perm)), Shape{batch, out_ch * hw});
}

Var avg_pool2x2(const Var& x, std::size_t channels, std::size_t height, std::size_t width) {
    require_rank("avg_pool2x2", x, 2);
    if (height % 2 || width % 2) throw DimensionError("avg_pool2x2: spatial extents must be even");
    if (x.shape()[1] != channels * height * width)
        throw DimensionError("avg_pool2x2: input " + shape_str(x.shape()) + " is not C*H*W");
    const std::size_t batch = x.shape()[0], h2 = height / 2, w2 = width / 2;
    std::vector<std::int64_t> idx(x.size());
    for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t c = 0; c < channels; ++c)
            for (std::size_t py = 0; py < height; ++py)
                for (std::size_t px = 0; px < width; ++px)
                    idx[((b * channels + c) * height + py) * width + px] =
                        static_cast<std::int64_t>(((b * channels + c) * h2 + py / 2) * w2 + px / 2);
    return scale(scatter_add(x, make_index(std::move(idx)), Shape{batch, channels * h2 * w2}), 0.25);
}

Var instance_norm(const Var& x, std::size_t channels, std::size_t spatial, double eps) {
    require_rank("instance_norm", x, 2);
    if (x.shape()[1] != channels * spatial || spatial == 0)
        throw DimensionError("instance_norm: input " + shape_str(x.shape()) + " is not C*HW");
    const std::size_t rows = x.shape()[0] * channels;
    const double inv_n = 1.0 / static_cast<double>(spatial);
    Var flat = reshape(x, Shape{rows, spatial});
    Var centered = sub(flat, expand_rows(scale(row_sum(flat), inv_n), spatial));
    Var var = scale(row_sum(mul(centered, centered)), inv_n);
    Var inv_std = pow(add_scalar(var, eps), -0.5);
    return reshape(mul(centered, expand_rows(inv_std, spatial)), x.shape());
}

}  // namespace ops

std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph) {
    if (!output.defined() || output.size() != 1)
        throw UsageError("grad: output must be a scalar");
    for (const Var& w : wrt)
        if (!w.defined() || !w.requires_grad())
            throw UsageError("grad: requested gradient of an untracked tensor");

    std::optional<NoGradGuard> guard;
    if (!create_graph) guard.emplace();

    std::unordered_map<const detail::Node*, Var> grads;
    if (output.requires_grad()) {
        // Post-order DFS gives a topological order; walk it backwards.
        std::vector<Var> order;
        std::unordered_map<const detail::Node*, bool> seen;
        std::vector<std::pair<Var, std::size_t>> stack{{output, 0}};
        seen[output.node()] = true;
        while (!stack.empty()) {
            auto& [v, next] = stack.back();
            const auto& parents = v.node()->parents;
            if (next < parents.size()) {
                const Var p = parents[next++];
                if (p.requires_grad() && !seen[p.node()]) {
                    seen[p.node()] = true;
                    stack.emplace_back(p, 0);
                }
            } else {
                order.push_back(v);
                stack.pop_back();
            }
        }
        grads[output.node()] = constant(Tensor(output.shape(), 1.0));
        for (auto it = order.rbegin(); it != order.rend(); ++it) {
            const detail::Node* n = it->node();
            if (!n->backward) continue;
            auto found = grads.find(n);
            if (found == grads.end()) continue;
            const Var g = found->second;
            const std::vector<Var> pg = n->backward(*it, g);
            for (std::size_t i = 0; i < n->parents.size(); ++i) {
                const Var& p = n->parents[i];
                if (!p.requires_grad() || !pg[i].defined()) continue;
                auto [slot, inserted] = grads.try_emplace(p.node(), pg[i]);
                if (!inserted) slot->second = ops::add(slot->second, pg[i]);
            }
        }
    }

    std::vector<Var> out;
    out.reserve(wrt.size());
    for (const Var& w : wrt) {
        auto found = grads.find(w.node());
        if (found == grads.end())
            out.push_back(constant(Tensor(w.shape())));
        else
            out.push_back(create_graph ? found->second : found->second.detach());
    }
    return out;
}

std::vector<Tensor> grad_values(const Var& output, std::span<const Var> wrt) {
    std::vector<Tensor> out;
    for (const Var& g : grad(output, wrt, false)) out.push_back(g.value());
    return out;
}

}  // namespace ddcal
