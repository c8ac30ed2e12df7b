#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "ddcal/tensor.hpp"

namespace ddcal {

class Var;

namespace detail {

struct Node {
    Tensor value;
    bool requires_grad = false;
    std::uint64_t id = 0;
    const char* op = "leaf";
    std::vector<Var> parents;
    /// Maps the upstream gradient to one gradient per parent. Built from Var
    /// operations, so the backward pass is itself differentiable.
    std::function<std::vector<Var>(const Var& out, const Var& grad)> backward;
};

}  // namespace detail

/// Handle to a value in the recorded differentiation graph.
///
/// Leaves created with `requires_grad` are the tracked inputs. Every op whose
/// operands include a tracked value records its parents and a backward rule
/// unless a NoGradGuard is active on the current thread.
class Var {
public:
    Var() = default;
    explicit Var(Tensor value, bool requires_grad = false);

    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_ && node_->requires_grad; }
    bool is_leaf() const { return node_ && node_->parents.empty(); }
    std::uint64_t id() const { return node_->id; }
    const char* op() const { return node_->op; }
    bool defined() const noexcept { return static_cast<bool>(node_); }

    /// Same value, cut out of the graph.
    Var detach() const { return Var(node_->value, false); }

    detail::Node* node() const noexcept { return node_.get(); }

private:
    friend Var make_op_result(Tensor, const char*, std::vector<Var>,
                              std::function<std::vector<Var>(const Var&, const Var&)>);
    std::shared_ptr<detail::Node> node_;
};

inline Var leaf(Tensor t) { return Var(std::move(t), true); }
inline Var constant(Tensor t) { return Var(std::move(t), false); }

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_mode_enabled() noexcept;

/// While alive, ReLU records whether any pre-activation falls within
/// `threshold` of the kink. Used by the finite-difference meta-gradient path.
class KinkMonitor {
public:
    explicit KinkMonitor(double threshold);
    ~KinkMonitor();
    KinkMonitor(const KinkMonitor&) = delete;
    KinkMonitor& operator=(const KinkMonitor&) = delete;
    bool hit() const noexcept;

private:
    double previous_threshold_;
    bool previous_hit_;
};

/// Index map shared by gather/scatter; -1 entries read as zero.
using IndexMap = std::shared_ptr<const std::vector<std::int64_t>>;

namespace ops {

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double c);
Var add_scalar(const Var& a, double c);
/// a / c, computed as a true division so that x / x == 1 exactly.
Var div_scalar(const Var& a, double c);
Var neg(const Var& a);
Var exp(const Var& a);
Var log(const Var& a);
/// Elementwise power with constant exponent; inputs must be positive unless p is integral.
Var pow(const Var& a, double p);
/// max(x, 0); derivative at 0 is 0.
Var relu(const Var& a);
Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);
Var matmul(const Var& a, const Var& b);

/// out[i] = in[idx[i]] (0 where idx[i] < 0).
Var gather(const Var& a, IndexMap idx, Shape out_shape);
/// out[idx[i]] += in[i]; adjoint of gather.
Var scatter_add(const Var& a, IndexMap idx, Shape out_shape);

/// (R x C) -> (R): per-row sums.
Var row_sum(const Var& a);
/// (R) -> (R x C): repeat each entry across a row.
Var expand_rows(const Var& v, std::size_t cols);
/// (C) -> (R x C): repeat the vector on every row.
Var expand_cols(const Var& v, std::size_t rows);
/// X (R x C) + b (C) on every row.
Var add_row_bias(const Var& x, const Var& b);

/// All entries of `parts`, flattened and concatenated in order.
Var concat_flat(std::span<const Var> parts);

/// Euclidean norm of all entries; gradient at the origin is taken as zero.
Var l2_norm(const Var& a);
/// Row-wise log-softmax of an (R x K) matrix.
Var log_softmax(const Var& logits);

/// 3x3 convolution, stride 1, zero padding 1. x is (B, C_in*H*W) in channel-major
/// layout, w is (C_in*9, C_out). Result is (B, C_out*H*W).
Var conv3x3(const Var& x, const Var& w, std::size_t channels, std::size_t height, std::size_t width);
/// Non-overlapping 2x2 average pooling on (B, C*H*W); H and W must be even.
Var avg_pool2x2(const Var& x, std::size_t channels, std::size_t height, std::size_t width);
/// Per-example, per-channel normalization to zero mean and unit variance.
Var instance_norm(const Var& x, std::size_t channels, std::size_t spatial, double eps = 1e-5);

}  // namespace ops

inline Var operator+(const Var& a, const Var& b) { return ops::add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return ops::sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return ops::mul(a, b); }
inline Var operator*(const Var& a, double c) { return ops::scale(a, c); }
inline Var operator*(double c, const Var& a) { return ops::scale(a, c); }
inline Var operator-(const Var& a) { return ops::neg(a); }

/// Reverse-mode gradients of scalar `output` with respect to `wrt`.
///
/// Entries of `wrt` that do not influence `output` get zero tensors. With
/// `create_graph` the returned gradients are themselves recorded, so they can
/// be differentiated again. Throws UsageError for untracked `wrt` entries or a
/// non-scalar output.
std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph = false);

/// Convenience: gradient values only.
std::vector<Tensor> grad_values(const Var& output, std::span<const Var> wrt);

}  // namespace ddcal
