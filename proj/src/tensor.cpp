#include "ddcal/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "ddcal/error.hpp"
#include "ddcal/rng.hpp"

namespace ddcal {

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

std::string shape_str(const Shape& shape) {
    std::string s = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

Tensor::Tensor(Shape shape, double fill)
    : shape_(std::move(shape)), values_(shape_numel(shape_), fill) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), values_(std::move(values)) {
    if (values_.size() != shape_numel(shape_))
        throw DimensionError("tensor: " + std::to_string(values_.size()) +
                             " values do not fill shape " + shape_str(shape_));
}

Tensor Tensor::vector(std::vector<double> values) {
    const std::size_t n = values.size();
    return Tensor(Shape{n}, std::move(values));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> values) {
    return Tensor(Shape{rows, cols}, std::move(values));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
    const std::size_t r = rows.size();
    const std::size_t c = r ? rows.begin()->size() : 0;
    std::vector<double> v;
    v.reserve(r * c);
    for (const auto& row : rows) {
        if (row.size() != c) throw DimensionError("tensor: ragged matrix literal");
        v.insert(v.end(), row.begin(), row.end());
    }
    return Tensor(Shape{r, c}, std::move(v));
}

double Tensor::item() const {
    if (values_.size() != 1)
        throw DimensionError("tensor: item() on shape " + shape_str(shape_));
    return values_[0];
}

Tensor Tensor::reshaped(Shape shape) const {
    if (shape_numel(shape) != values_.size())
        throw DimensionError("reshape: " + shape_str(shape_) + " -> " + shape_str(shape));
    return Tensor(std::move(shape), values_);
}

Tensor Tensor::rows(std::size_t begin, std::size_t end) const {
    if (shape_.empty() || begin > end || end > shape_[0])
        throw DimensionError("rows: range out of bounds for " + shape_str(shape_));
    const std::size_t stride = shape_[0] ? values_.size() / shape_[0] : 0;
    Shape s = shape_;
    s[0] = end - begin;
    return Tensor(std::move(s), std::vector<double>(values_.begin() + begin * stride,
                                                    values_.begin() + end * stride));
}

std::span<const double> Tensor::row(std::size_t r) const {
    const std::size_t stride = values_.size() / shape_[0];
    return {values_.data() + r * stride, stride};
}

std::span<double> Tensor::row(std::size_t r) {
    const std::size_t stride = values_.size() / shape_[0];
    return {values_.data() + r * stride, stride};
}

bool Tensor::all_finite() const noexcept {
    return std::all_of(values_.begin(), values_.end(), [](double v) { return std::isfinite(v); });
}

Tensor gather_rows(const Tensor& m, std::span<const std::size_t> idx) {
    if (m.rank() < 1) throw DimensionError("gather_rows: rank-0 tensor");
    Shape s = m.shape();
    s[0] = idx.size();
    Tensor out(s);
    const std::size_t stride = m.dim(0) ? m.size() / m.dim(0) : shape_numel(Shape(s.begin() + 1, s.end()));
    for (std::size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] >= m.dim(0)) throw DimensionError("gather_rows: index out of range");
        std::copy_n(m.data().begin() + idx[i] * stride, stride, out.data().begin() + i * stride);
    }
    return out;
}

double relative_error(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw DimensionError("relative_error: size mismatch");
    double diff = 0, na = 0, nb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        diff += (a[i] - b[i]) * (a[i] - b[i]);
        na += a[i] * a[i];
        nb += b[i] * b[i];
    }
    const double denom = std::sqrt(std::max(na, nb));
    return denom == 0.0 ? 0.0 : std::sqrt(diff) / denom;
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
    if (a.size() != b.size()) throw DimensionError("max_abs_diff: size mismatch");
    double m = 0;
    for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
    return m;
}

std::vector<std::size_t> Rng::permutation(std::size_t n) {
    std::vector<std::size_t> p(n);
    std::iota(p.begin(), p.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(p[i - 1], p[index(i)]);
    return p;
}

}  // namespace ddcal
