#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>

#include "metacritic/tensor.hpp"

namespace metacritic {
namespace ops {

// ---------------------------------------------------------------------------
// Recording
// ---------------------------------------------------------------------------

inline Tensor record(Op op, AttrMap attrs, std::vector<Tensor> inputs,
                     Shape out_shape, std::vector<double> out_values) {
  auto data = std::make_shared<std::vector<double>>(std::move(out_values));
  bool any_node = false;
  for (const Tensor& in : inputs) any_node = any_node || in.has_node();
  if (grad_enabled() && any_node) {
    auto node = std::make_shared<GraphNode>(op, std::move(attrs),
                                            std::move(inputs), out_shape, data);
    return Tensor(std::move(out_shape), std::move(data), std::move(node));
  }
  return Tensor(std::move(out_shape), std::move(data));
}

// ---------------------------------------------------------------------------
// Broadcasting helpers (numpy alignment rules, right-aligned)
// ---------------------------------------------------------------------------

namespace detail {

inline Shape broadcast_shape(Op op, const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank, 1);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::size_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::size_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw OpError(std::string(op_name(op)) + ": shapes " + shape_str(a) +
                    " and " + shape_str(b) + " are not broadcastable");
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

// Element strides of `in` viewed through `out` (0 where broadcast).
inline std::vector<std::size_t> strides_for(const Shape& in, const Shape& out) {
  std::vector<std::size_t> strides(out.size(), 0);
  std::size_t stride = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t dim = in.size() - 1 - i;
    const std::size_t out_dim = out.size() - 1 - i;
    if (in[dim] != 1) strides[out_dim] = stride;
    stride *= in[dim];
  }
  return strides;
}

template <typename F>
void for_each_broadcast(const Shape& out, const std::vector<std::size_t>& sa,
                        const std::vector<std::size_t>& sb, F&& body) {
  const std::size_t rank = out.size();
  const std::size_t n = numel_of(out);
  std::vector<std::size_t> counter(rank, 0);
  std::size_t ia = 0, ib = 0;
  for (std::size_t flat = 0; flat < n; ++flat) {
    body(flat, ia, ib);
    for (std::size_t d = rank; d-- > 0;) {
      ia += sa[d];
      ib += sb[d];
      if (++counter[d] < out[d]) break;
      ia -= sa[d] * out[d];
      ib -= sb[d] * out[d];
      counter[d] = 0;
    }
  }
}

inline void check_same_shape(Op op, const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw OpError(std::string(op_name(op)) + ": shapes " +
                  shape_str(a.shape()) + " and " + shape_str(b.shape()) +
                  " differ");
  }
}

template <typename F>
Tensor binary_broadcast(Op op, const Tensor& a, const Tensor& b, F&& f) {
  if (a.shape() == b.shape()) {
    std::vector<double> out(a.numel());
    const auto& va = a.values();
    const auto& vb = b.values();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(va[i], vb[i]);
    return record(op, {}, {a, b}, a.shape(), std::move(out));
  }
  const Shape shape = broadcast_shape(op, a.shape(), b.shape());
  const auto sa = strides_for(a.shape(), shape);
  const auto sb = strides_for(b.shape(), shape);
  std::vector<double> out(numel_of(shape));
  const auto& va = a.values();
  const auto& vb = b.values();
  for_each_broadcast(shape, sa, sb,
                     [&](std::size_t flat, std::size_t ia, std::size_t ib) {
                       out[flat] = f(va[ia], vb[ib]);
                     });
  return record(op, {}, {a, b}, shape, std::move(out));
}

template <typename F>
Tensor unary(Op op, const Tensor& x, F&& f, AttrMap attrs = {}) {
  std::vector<double> out(x.numel());
  const auto& vx = x.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(vx[i]);
  return record(op, std::move(attrs), {x}, x.shape(), std::move(out));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise primitives
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  return detail::binary_broadcast(Op::Add, a, b,
                                  [](double x, double y) { return x + y; });
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  return detail::binary_broadcast(Op::Sub, a, b,
                                  [](double x, double y) { return x - y; });
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  return detail::binary_broadcast(Op::Mul, a, b,
                                  [](double x, double y) { return x * y; });
}

inline Tensor neg(const Tensor& x) {
  return detail::unary(Op::Neg, x, [](double v) { return -v; });
}

inline Tensor scale(const Tensor& x, double c) {
  return detail::unary(Op::Scale, x, [c](double v) { return c * v; },
                       AttrMap{}.set("factor", c));
}

inline Tensor add_scalar(const Tensor& x, double c) {
  return detail::unary(Op::AddScalar, x, [c](double v) { return v + c; },
                       AttrMap{}.set("offset", c));
}

inline Tensor reciprocal(const Tensor& x) {
  return detail::unary(Op::Reciprocal, x, [](double v) { return 1.0 / v; });
}

inline Tensor exp(const Tensor& x) {
  return detail::unary(Op::Exp, x, [](double v) { return std::exp(v); });
}

inline Tensor log(const Tensor& x) {
  return detail::unary(Op::Log, x, [](double v) { return std::log(v); });
}

inline Tensor sqrt(const Tensor& x) {
  return detail::unary(Op::Sqrt, x, [](double v) { return std::sqrt(v); });
}

inline Tensor relu(const Tensor& x) {
  return detail::unary(Op::Relu, x,
                       [](double v) { return v > 0.0 ? v : 0.0; });
}

/// Indicator of positive entries. Not differentiated through (its
/// derivative vanishes almost everywhere).
inline Tensor relu_mask(const Tensor& x) {
  return detail::unary(Op::ReluMask, x,
                       [](double v) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor sigmoid(const Tensor& x) {
  return detail::unary(Op::Sigmoid, x,
                       [](double v) { return 1.0 / (1.0 + std::exp(-v)); });
}

// ---------------------------------------------------------------------------
// Linear algebra
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2) {
    throw OpError("matmul: expects rank-2 operands, got " +
                  shape_str(a.shape()) + " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1];
  const std::size_t k2 = b.shape()[0], n = b.shape()[1];
  if (k != k2) {
    throw OpError("matmul: inner dimensions differ, " + shape_str(a.shape()) +
                  " vs " + shape_str(b.shape()));
  }
  std::vector<double> out(m * n, 0.0);
  const double* va = a.values().data();
  const double* vb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    double* out_row = out.data() + i * n;
    const double* a_row = va + i * k;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = a_row[kk];
      if (aik == 0.0) continue;
      const double* b_row = vb + kk * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aik * b_row[j];
    }
  }
  return record(Op::Matmul, {}, {a, b}, {m, n}, std::move(out));
}

/// A @ B^T without materializing the transpose: (m,k) x (n,k) -> (m,n).
inline Tensor matmul_bt(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[1] != b.shape()[1]) {
    throw OpError("matmul_bt: incompatible shapes " + shape_str(a.shape()) +
                  " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[0];
  std::vector<double> out(m * n);
  const double* va = a.values().data();
  const double* vb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = va + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* b_row = vb + j * k;
      double acc = 0.0;
      for (std::size_t kk = 0; kk < k; ++kk) acc += a_row[kk] * b_row[kk];
      out[i * n + j] = acc;
    }
  }
  return record(Op::MatmulBt, {}, {a, b}, {m, n}, std::move(out));
}

/// A^T @ B without materializing the transpose: (m,k) x (m,n) -> (k,n).
inline Tensor matmul_ta(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.shape()[0] != b.shape()[0]) {
    throw OpError("matmul_ta: incompatible shapes " + shape_str(a.shape()) +
                  " and " + shape_str(b.shape()));
  }
  const std::size_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  std::vector<double> out(k * n, 0.0);
  const double* va = a.values().data();
  const double* vb = b.values().data();
  for (std::size_t i = 0; i < m; ++i) {
    const double* a_row = va + i * k;
    const double* b_row = vb + i * n;
    for (std::size_t kk = 0; kk < k; ++kk) {
      const double aik = a_row[kk];
      if (aik == 0.0) continue;
      double* out_row = out.data() + kk * n;
      for (std::size_t j = 0; j < n; ++j) out_row[j] += aik * b_row[j];
    }
  }
  return record(Op::MatmulTa, {}, {a, b}, {k, n}, std::move(out));
}

inline Tensor transpose(const Tensor& x) {
  if (x.ndim() != 2) {
    throw OpError("transpose: expects rank-2 operand, got " +
                  shape_str(x.shape()));
  }
  const std::size_t m = x.shape()[0], n = x.shape()[1];
  std::vector<double> out(m * n);
  const auto& vx = x.values();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j * m + i] = vx[i * n + j];
  return record(Op::Transpose, {}, {x}, {n, m}, std::move(out));
}

// ---------------------------------------------------------------------------
// Softmax family (always over the last axis)
// ---------------------------------------------------------------------------

namespace detail {

inline std::pair<std::size_t, std::size_t> rows_cols(Op op, const Tensor& x) {
  if (x.ndim() == 0 || x.shape().back() == 0) {
    throw OpError(std::string(op_name(op)) + ": bad shape " +
                  shape_str(x.shape()));
  }
  const std::size_t cols = x.shape().back();
  return {x.numel() / cols, cols};
}

}  // namespace detail

inline Tensor softmax(const Tensor& x) {
  const auto [rows, cols] = detail::rows_cols(Op::Softmax, x);
  std::vector<double> out(x.numel());
  const auto& vx = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = vx.data() + r * cols;
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      out[r * cols + j] = std::exp(row[j] - mx);
      z += out[r * cols + j];
    }
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] /= z;
  }
  return record(Op::Softmax, {}, {x}, x.shape(), std::move(out));
}

/// Log-softmax with max subtraction.
inline Tensor log_softmax(const Tensor& x) {
  const auto [rows, cols] = detail::rows_cols(Op::LogSoftmax, x);
  std::vector<double> out(x.numel());
  const auto& vx = x.values();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = vx.data() + r * cols;
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) z += std::exp(row[j] - mx);
    const double logz = mx + std::log(z);
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = row[j] - logz;
  }
  return record(Op::LogSoftmax, {}, {x}, x.shape(), std::move(out));
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean negative log-likelihood of integer labels under the logits.
inline Tensor nll_loss(const Tensor& logits,
                       const std::vector<std::int64_t>& labels) {
  if (logits.ndim() != 2) {
    throw OpError("nll_loss: logits must be rank 2, got " +
                  shape_str(logits.shape()));
  }
  const std::size_t n = logits.shape()[0], c = logits.shape()[1];
  if (labels.size() != n) {
    throw OpError("nll_loss: have " + std::to_string(labels.size()) +
                  " labels for " + std::to_string(n) + " rows");
  }
  const auto& vx = logits.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const std::int64_t y = labels[i];
    if (y < 0 || static_cast<std::size_t>(y) >= c) {
      throw OpError("nll_loss: label " + std::to_string(y) + " at row " +
                    std::to_string(i) + " outside [0," + std::to_string(c) +
                    ")");
    }
    const double* row = vx.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    loss -= row[y] - (mx + std::log(z));
  }
  loss /= static_cast<double>(n);
  return record(Op::NllLoss, AttrMap{}.set("labels", labels), {logits}, {1},
                {loss});
}

inline Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  detail::check_same_shape(Op::MseLoss, pred, target);
  const auto& vp = pred.values();
  const auto& vt = target.values();
  double loss = 0.0;
  for (std::size_t i = 0; i < vp.size(); ++i) {
    const double d = vp[i] - vt[i];
    loss += d * d;
  }
  loss /= static_cast<double>(vp.size());
  return record(Op::MseLoss, {}, {pred, target}, {1}, {loss});
}

// ---------------------------------------------------------------------------
// Reductions, shape manipulation
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& x) {
  double total = 0.0;
  for (const double v : x.values()) total += v;
  return record(Op::Sum, {}, {x}, {1}, {total});
}

inline Tensor mean(const Tensor& x) {
  return scale(sum(x), 1.0 / static_cast<double>(x.numel()));
}

inline Tensor sum_axis(const Tensor& x, std::size_t axis, bool keepdims) {
  if (axis >= x.ndim()) {
    throw OpError("sum_axis: axis " + std::to_string(axis) +
                  " out of range for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = 1;
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < x.ndim(); ++d) inner *= x.shape()[d];
  const std::size_t extent = x.shape()[axis];
  const std::size_t outer = x.numel() / (inner * extent);
  std::vector<double> out(outer * inner, 0.0);
  const auto& vx = x.values();
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t e = 0; e < extent; ++e) {
      const double* src = vx.data() + (o * extent + e) * inner;
      double* dst = out.data() + o * inner;
      for (std::size_t i = 0; i < inner; ++i) dst[i] += src[i];
    }
  if (!keepdims) out_shape.erase(out_shape.begin() + axis);
  return record(Op::SumAxis,
                AttrMap{}
                    .set("axis", static_cast<std::int64_t>(axis))
                    .set("keepdims", static_cast<std::int64_t>(keepdims)),
                {x}, std::move(out_shape), std::move(out));
}

inline Tensor broadcast_to(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const Shape check = detail::broadcast_shape(Op::BroadcastTo, x.shape(), shape);
  if (check != shape) {
    throw OpError("broadcast_to: cannot broadcast " + shape_str(x.shape()) +
                  " to " + shape_str(shape));
  }
  const auto sx = detail::strides_for(x.shape(), shape);
  const std::vector<std::size_t> zero(shape.size(), 0);
  std::vector<double> out(numel_of(shape));
  const auto& vx = x.values();
  detail::for_each_broadcast(shape, sx, zero,
                             [&](std::size_t flat, std::size_t ix, std::size_t) {
                               out[flat] = vx[ix];
                             });
  std::vector<std::int64_t> shape_attr(shape.begin(), shape.end());
  return record(Op::BroadcastTo, AttrMap{}.set("shape", shape_attr), {x}, shape,
                std::move(out));
}

/// Adjoint of broadcast_to: sums over the axes it would expand.
inline Tensor sum_to_shape(const Tensor& x, const Shape& shape) {
  if (x.shape() == shape) return x;
  const Shape check = detail::broadcast_shape(Op::SumToShape, shape, x.shape());
  if (check != x.shape()) {
    throw OpError("sum_to_shape: " + shape_str(shape) +
                  " does not broadcast to " + shape_str(x.shape()));
  }
  const auto starget = detail::strides_for(shape, x.shape());
  const std::vector<std::size_t> zero(x.shape().size(), 0);
  std::vector<double> out(numel_of(shape), 0.0);
  const auto& vx = x.values();
  detail::for_each_broadcast(x.shape(), starget, zero,
                             [&](std::size_t flat, std::size_t it, std::size_t) {
                               out[it] += vx[flat];
                             });
  std::vector<std::int64_t> shape_attr(shape.begin(), shape.end());
  return record(Op::SumToShape, AttrMap{}.set("shape", shape_attr), {x}, shape,
                std::move(out));
}

inline Tensor reshape(const Tensor& x, Shape shape) {
  if (numel_of(shape) != x.numel()) {
    throw OpError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                  shape_str(shape));
  }
  std::vector<std::int64_t> shape_attr(shape.begin(), shape.end());
  return record(Op::Reshape, AttrMap{}.set("shape", shape_attr), {x}, shape,
                std::vector<double>(x.values()));
}

inline Tensor flatten_rows(const Tensor& x) {
  if (x.ndim() == 0) throw OpError("flatten_rows: scalar input");
  return reshape(x, {x.shape()[0], x.numel() / x.shape()[0]});
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw OpError("concat: no inputs");
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) {
    throw OpError("concat: axis " + std::to_string(axis) +
                  " out of range for " + shape_str(first));
  }
  Shape out_shape = first;
  std::size_t total = first[axis];
  for (std::size_t p = 1; p < parts.size(); ++p) {
    const Shape& s = parts[p].shape();
    if (s.size() != first.size()) {
      throw OpError("concat: rank mismatch between inputs");
    }
    for (std::size_t d = 0; d < s.size(); ++d) {
      if (d != axis && s[d] != first[d]) {
        throw OpError("concat: input " + std::to_string(p) + " shape " +
                      shape_str(s) + " incompatible with " + shape_str(first) +
                      " on axis " + std::to_string(d));
      }
    }
    total += s[axis];
  }
  out_shape[axis] = total;

  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];

  std::vector<double> out(numel_of(out_shape));
  std::size_t offset = 0;
  for (const Tensor& part : parts) {
    const std::size_t extent = part.shape()[axis];
    const auto& vp = part.values();
    for (std::size_t o = 0; o < outer; ++o) {
      const double* src = vp.data() + o * extent * inner;
      double* dst = out.data() + (o * total + offset) * inner;
      std::copy(src, src + extent * inner, dst);
    }
    offset += extent;
  }
  return record(Op::Concat, AttrMap{}.set("axis", static_cast<std::int64_t>(axis)),
                parts, std::move(out_shape), std::move(out));
}

inline Tensor slice_axis(const Tensor& x, std::size_t axis, std::size_t start,
                         std::size_t len) {
  if (axis >= x.ndim() || start + len > x.shape()[axis]) {
    throw OpError("slice_axis: range [" + std::to_string(start) + "," +
                  std::to_string(start + len) + ") on axis " +
                  std::to_string(axis) + " outside " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] = len;
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < x.ndim(); ++d) inner *= x.shape()[d];
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.shape()[d];
  const std::size_t extent = x.shape()[axis];
  std::vector<double> out(numel_of(out_shape));
  const auto& vx = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = vx.data() + (o * extent + start) * inner;
    std::copy(src, src + len * inner, out.data() + o * len * inner);
  }
  return record(Op::SliceAxis,
                AttrMap{}
                    .set("axis", static_cast<std::int64_t>(axis))
                    .set("start", static_cast<std::int64_t>(start))
                    .set("len", static_cast<std::int64_t>(len)),
                {x}, std::move(out_shape), std::move(out));
}

inline Tensor pad_axis(const Tensor& x, std::size_t axis, std::size_t before,
                       std::size_t after) {
  if (axis >= x.ndim()) {
    throw OpError("pad_axis: axis " + std::to_string(axis) +
                  " out of range for " + shape_str(x.shape()));
  }
  Shape out_shape = x.shape();
  out_shape[axis] += before + after;
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < x.ndim(); ++d) inner *= x.shape()[d];
  std::size_t outer = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= x.shape()[d];
  const std::size_t extent = x.shape()[axis];
  std::vector<double> out(numel_of(out_shape), 0.0);
  const auto& vx = x.values();
  for (std::size_t o = 0; o < outer; ++o) {
    const double* src = vx.data() + o * extent * inner;
    double* dst = out.data() + (o * out_shape[axis] + before) * inner;
    std::copy(src, src + extent * inner, dst);
  }
  return record(Op::PadAxis,
                AttrMap{}
                    .set("axis", static_cast<std::int64_t>(axis))
                    .set("before", static_cast<std::int64_t>(before))
                    .set("after", static_cast<std::int64_t>(after)),
                {x}, std::move(out_shape), std::move(out));
}

// ---------------------------------------------------------------------------
// Gather / scatter: mutually adjoint linear maps over a fixed index table.
// idx[i] is the flat source index for output element i, or -1 for zero.
// ---------------------------------------------------------------------------

inline Tensor gather_pad(const Tensor& x, std::vector<std::int64_t> idx,
                         Shape out_shape) {
  if (idx.size() != numel_of(out_shape)) {
    throw OpError("gather_pad: index table size " + std::to_string(idx.size()) +
                  " does not match " + shape_str(out_shape));
  }
  std::vector<double> out(idx.size());
  const auto& vx = x.values();
  const std::int64_t limit = static_cast<std::int64_t>(vx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::int64_t j = idx[i];
    if (j >= limit) throw OpError("gather_pad: index out of range");
    out[i] = j < 0 ? 0.0 : vx[j];
  }
  return record(Op::GatherPad, AttrMap{}.set("idx", std::move(idx)), {x},
                std::move(out_shape), std::move(out));
}

/// out[idx[i]] += x[i]; entries with idx -1 are dropped.
inline Tensor scatter_pad(const Tensor& x, std::vector<std::int64_t> idx,
                          Shape out_shape) {
  if (idx.size() != x.numel()) {
    throw OpError("scatter_pad: index table size " + std::to_string(idx.size()) +
                  " does not match input " + shape_str(x.shape()));
  }
  std::vector<double> out(numel_of(out_shape), 0.0);
  const auto& vx = x.values();
  const std::int64_t limit = static_cast<std::int64_t>(out.size());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    const std::int64_t j = idx[i];
    if (j >= limit) throw OpError("scatter_pad: index out of range");
    if (j >= 0) out[j] += vx[i];
  }
  return record(Op::ScatterPad, AttrMap{}.set("idx", std::move(idx)), {x},
                std::move(out_shape), std::move(out));
}

// ---------------------------------------------------------------------------
// Convolutions (lowered to gather + matmul, so all derivatives reduce to
// the primitives above)
// ---------------------------------------------------------------------------

struct Conv1dOpts {
  std::size_t stride = 1;
  std::size_t dilation = 1;
  std::size_t pad_left = 0;
  std::size_t pad_right = 0;
};

inline Tensor conv1d(const Tensor& x, const Tensor& w,
                     const std::optional<Tensor>& bias, const Conv1dOpts& opts) {
  if (x.ndim() != 3 || w.ndim() != 3) {
    throw OpError("conv1d: expects input (batch,channels,length) and kernel "
                  "(out,in,k), got " +
                  shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const std::size_t batch = x.shape()[0], cin = x.shape()[1], len = x.shape()[2];
  const std::size_t cout = w.shape()[0], k = w.shape()[2];
  if (w.shape()[1] != cin) {
    throw OpError("conv1d: kernel expects " + std::to_string(w.shape()[1]) +
                  " input channels, input has " + std::to_string(cin));
  }
  const std::size_t span = opts.dilation * (k - 1) + 1;
  const std::size_t padded = len + opts.pad_left + opts.pad_right;
  if (padded < span) {
    throw OpError("conv1d: padded length " + std::to_string(padded) +
                  " shorter than dilated kernel span " + std::to_string(span));
  }
  const std::size_t out_len = (padded - span) / opts.stride + 1;

  // Columns laid out (cin*k, batch*out_len) so one matmul covers the batch.
  std::vector<std::int64_t> col_idx(cin * k * batch * out_len);
  std::size_t p = 0;
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t kk = 0; kk < k; ++kk)
      for (std::size_t b = 0; b < batch; ++b)
        for (std::size_t t = 0; t < out_len; ++t) {
          const std::int64_t pos = static_cast<std::int64_t>(t * opts.stride +
                                                             kk * opts.dilation) -
                                   static_cast<std::int64_t>(opts.pad_left);
          col_idx[p++] =
              (pos < 0 || pos >= static_cast<std::int64_t>(len))
                  ? -1
                  : static_cast<std::int64_t>((b * cin + c) * len) + pos;
        }
  Tensor cols = gather_pad(x, std::move(col_idx), {cin * k, batch * out_len});
  Tensor w2 = reshape(w, {cout, cin * k});
  Tensor y2 = matmul(w2, cols);  // (cout, batch*out_len)

  std::vector<std::int64_t> perm(batch * cout * out_len);
  p = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t t = 0; t < out_len; ++t)
        perm[p++] = static_cast<std::int64_t>(o * batch * out_len + b * out_len + t);
  Tensor y = gather_pad(y2, std::move(perm), {batch, cout, out_len});
  if (bias) {
    if (bias->shape() != Shape{cout}) {
      throw OpError("conv1d: bias shape " + shape_str(bias->shape()) +
                    " does not match " + std::to_string(cout) + " kernels");
    }
    y = add(y, reshape(*bias, {1, cout, 1}));
  }
  return y;
}

struct Conv2dOpts {
  std::size_t stride = 1;
  std::size_t pad = 0;
};

inline Tensor conv2d(const Tensor& x, const Tensor& w,
                     const std::optional<Tensor>& bias, const Conv2dOpts& opts) {
  if (x.ndim() != 4 || w.ndim() != 4) {
    throw OpError("conv2d: expects input (batch,channels,h,w) and kernel "
                  "(out,in,kh,kw), got " +
                  shape_str(x.shape()) + " and " + shape_str(w.shape()));
  }
  const std::size_t batch = x.shape()[0], cin = x.shape()[1];
  const std::size_t h = x.shape()[2], wid = x.shape()[3];
  const std::size_t cout = w.shape()[0], kh = w.shape()[2], kw = w.shape()[3];
  if (w.shape()[1] != cin) {
    throw OpError("conv2d: kernel expects " + std::to_string(w.shape()[1]) +
                  " input channels, input has " + std::to_string(cin));
  }
  if (h + 2 * opts.pad < kh || wid + 2 * opts.pad < kw) {
    throw OpError("conv2d: kernel larger than padded input");
  }
  const std::size_t ho = (h + 2 * opts.pad - kh) / opts.stride + 1;
  const std::size_t wo = (wid + 2 * opts.pad - kw) / opts.stride + 1;

  std::vector<std::int64_t> col_idx(cin * kh * kw * batch * ho * wo);
  std::size_t p = 0;
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t ki = 0; ki < kh; ++ki)
      for (std::size_t kj = 0; kj < kw; ++kj)
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < ho; ++i)
            for (std::size_t j = 0; j < wo; ++j) {
              const std::int64_t ii =
                  static_cast<std::int64_t>(i * opts.stride + ki) -
                  static_cast<std::int64_t>(opts.pad);
              const std::int64_t jj =
                  static_cast<std::int64_t>(j * opts.stride + kj) -
                  static_cast<std::int64_t>(opts.pad);
              col_idx[p++] =
                  (ii < 0 || jj < 0 || ii >= static_cast<std::int64_t>(h) ||
                   jj >= static_cast<std::int64_t>(wid))
                      ? -1
                      : static_cast<std::int64_t>(((b * cin + c) * h + ii) * wid) +
                            jj;
            }
  Tensor cols =
      gather_pad(x, std::move(col_idx), {cin * kh * kw, batch * ho * wo});
  Tensor w2 = reshape(w, {cout, cin * kh * kw});
  Tensor y2 = matmul(w2, cols);

  std::vector<std::int64_t> perm(batch * cout * ho * wo);
  p = 0;
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t o = 0; o < cout; ++o)
      for (std::size_t q = 0; q < ho * wo; ++q)
        perm[p++] =
            static_cast<std::int64_t>(o * batch * ho * wo + b * ho * wo + q);
  Tensor y = gather_pad(y2, std::move(perm), {batch, cout, ho, wo});
  if (bias) {
    if (bias->shape() != Shape{cout}) {
      throw OpError("conv2d: bias shape " + shape_str(bias->shape()) +
                    " does not match " + std::to_string(cout) + " kernels");
    }
    y = add(y, reshape(*bias, {1, cout, 1, 1}));
  }
  return y;
}

// ---------------------------------------------------------------------------
// Pooling
// ---------------------------------------------------------------------------

inline Tensor max_pool2d(const Tensor& x, std::size_t k = 2,
                         std::size_t stride = 2) {
  if (x.ndim() != 4) {
    throw OpError("max_pool2d: expects (batch,channels,h,w), got " +
                  shape_str(x.shape()));
  }
  const std::size_t batch = x.shape()[0], c = x.shape()[1];
  const std::size_t h = x.shape()[2], w = x.shape()[3];
  if (h < k || w < k) throw OpError("max_pool2d: window larger than input");
  const std::size_t ho = (h - k) / stride + 1;
  const std::size_t wo = (w - k) / stride + 1;
  std::vector<std::int64_t> idx(batch * c * ho * wo);
  const auto& vx = x.values();
  std::size_t p = 0;
  for (std::size_t bc = 0; bc < batch * c; ++bc)
    for (std::size_t i = 0; i < ho; ++i)
      for (std::size_t j = 0; j < wo; ++j) {
        std::size_t best = (bc * h + i * stride) * w + j * stride;
        for (std::size_t ki = 0; ki < k; ++ki)
          for (std::size_t kj = 0; kj < k; ++kj) {
            const std::size_t cand =
                (bc * h + i * stride + ki) * w + j * stride + kj;
            if (vx[cand] > vx[best]) best = cand;
          }
        idx[p++] = static_cast<std::int64_t>(best);
      }
  return gather_pad(x, std::move(idx), {batch, c, ho, wo});
}

inline Tensor avg_pool2d(const Tensor& x, std::size_t k = 2,
                         std::size_t stride = 2) {
  if (x.ndim() != 4) {
    throw OpError("avg_pool2d: expects (batch,channels,h,w), got " +
                  shape_str(x.shape()));
  }
  const std::size_t batch = x.shape()[0], c = x.shape()[1];
  const std::size_t h = x.shape()[2], w = x.shape()[3];
  if (h < k || w < k) throw OpError("avg_pool2d: window larger than input");
  const std::size_t ho = (h - k) / stride + 1;
  const std::size_t wo = (w - k) / stride + 1;
  Tensor acc;
  for (std::size_t ki = 0; ki < k; ++ki)
    for (std::size_t kj = 0; kj < k; ++kj) {
      std::vector<std::int64_t> idx(batch * c * ho * wo);
      std::size_t p = 0;
      for (std::size_t bc = 0; bc < batch * c; ++bc)
        for (std::size_t i = 0; i < ho; ++i)
          for (std::size_t j = 0; j < wo; ++j)
            idx[p++] = static_cast<std::int64_t>(
                (bc * h + i * stride + ki) * w + j * stride + kj);
      Tensor part = gather_pad(x, std::move(idx), {batch, c, ho, wo});
      acc = acc.defined() ? add(acc, part) : part;
    }
  return scale(acc, 1.0 / static_cast<double>(k * k));
}

/// Mean over all trailing spatial axes: (batch, channels, ...) -> (batch, channels).
inline Tensor global_avg_pool(const Tensor& x) {
  if (x.ndim() < 3) {
    throw OpError("global_avg_pool: expects rank >= 3, got " +
                  shape_str(x.shape()));
  }
  const double spatial =
      static_cast<double>(x.numel() / (x.shape()[0] * x.shape()[1]));
  Tensor y = x;
  while (y.ndim() > 2) y = sum_axis(y, y.ndim() - 1, false);
  return scale(y, 1.0 / spatial);
}

// ---------------------------------------------------------------------------
// Normalization (running-statistics mode only; the statistics are constants
// under differentiation)
// ---------------------------------------------------------------------------

inline Tensor batch_norm_running(const Tensor& x, const Tensor& gamma,
                                 const Tensor& beta, const Tensor& running_mean,
                                 const Tensor& running_var, double eps = 1e-5) {
  if (x.ndim() < 2) {
    throw OpError("batch_norm_running: expects rank >= 2, got " +
                  shape_str(x.shape()));
  }
  const std::size_t channels = x.shape()[1];
  for (const Tensor* t : {&gamma, &beta, &running_mean, &running_var}) {
    if (t->numel() != channels) {
      throw OpError("batch_norm_running: per-channel tensor " +
                    shape_str(t->shape()) + " does not match " +
                    std::to_string(channels) + " channels");
    }
  }
  Shape bshape(x.ndim(), 1);
  bshape[1] = channels;
  std::vector<double> inv(channels);
  for (std::size_t i = 0; i < channels; ++i)
    inv[i] = 1.0 / std::sqrt(running_var.values()[i] + eps);
  const Tensor inv_std = Tensor::from_values(bshape, std::move(inv));
  const Tensor mean_c =
      Tensor::from_values(bshape, std::vector<double>(running_mean.values()));
  Tensor y = mul(sub(x, mean_c), inv_std);
  return add(mul(y, reshape(gamma, bshape)), reshape(beta, bshape));
}

// ---------------------------------------------------------------------------
// Generic entry point: apply an operation by id with an attribute map.
// ---------------------------------------------------------------------------

inline Tensor apply(Op op, const std::vector<Tensor>& inputs,
                    const AttrMap& attrs = {}) {
  const auto arity = [&](std::size_t n) {
    if (inputs.size() != n) {
      throw OpError(std::string(op_name(op)) + ": expected " +
                    std::to_string(n) + " inputs, got " +
                    std::to_string(inputs.size()));
    }
  };
  const auto shape_of = [](const std::vector<std::int64_t>& v) {
    return Shape(v.begin(), v.end());
  };
  switch (op) {
    case Op::Leaf:
      throw OpError("apply: leaf is not an applicable operation");
    case Op::Add: arity(2); return add(inputs[0], inputs[1]);
    case Op::Sub: arity(2); return sub(inputs[0], inputs[1]);
    case Op::Mul: arity(2); return mul(inputs[0], inputs[1]);
    case Op::Neg: arity(1); return neg(inputs[0]);
    case Op::Scale: arity(1); return scale(inputs[0], attrs.get_double("factor"));
    case Op::AddScalar:
      arity(1);
      return add_scalar(inputs[0], attrs.get_double("offset"));
    case Op::Reciprocal: arity(1); return reciprocal(inputs[0]);
    case Op::Exp: arity(1); return exp(inputs[0]);
    case Op::Log: arity(1); return log(inputs[0]);
    case Op::Sqrt: arity(1); return sqrt(inputs[0]);
    case Op::Matmul: arity(2); return matmul(inputs[0], inputs[1]);
    case Op::MatmulBt: arity(2); return matmul_bt(inputs[0], inputs[1]);
    case Op::MatmulTa: arity(2); return matmul_ta(inputs[0], inputs[1]);
    case Op::Transpose: arity(1); return transpose(inputs[0]);
    case Op::Relu: arity(1); return relu(inputs[0]);
    case Op::ReluMask: arity(1); return relu_mask(inputs[0]);
    case Op::Sigmoid: arity(1); return sigmoid(inputs[0]);
    case Op::Softmax: arity(1); return softmax(inputs[0]);
    case Op::LogSoftmax: arity(1); return log_softmax(inputs[0]);
    case Op::NllLoss: arity(1); return nll_loss(inputs[0], attrs.get_ints("labels"));
    case Op::MseLoss: arity(2); return mse_loss(inputs[0], inputs[1]);
    case Op::Sum: arity(1); return sum(inputs[0]);
    case Op::Mean: arity(1); return mean(inputs[0]);
    case Op::SumAxis:
      arity(1);
      return sum_axis(inputs[0],
                      static_cast<std::size_t>(attrs.get_int("axis")),
                      attrs.get_int("keepdims", 0) != 0);
    case Op::BroadcastTo:
      arity(1);
      return broadcast_to(inputs[0], shape_of(attrs.get_ints("shape")));
    case Op::SumToShape:
      arity(1);
      return sum_to_shape(inputs[0], shape_of(attrs.get_ints("shape")));
    case Op::Reshape:
      arity(1);
      return reshape(inputs[0], shape_of(attrs.get_ints("shape")));
    case Op::Concat:
      return concat(inputs, static_cast<std::size_t>(attrs.get_int("axis")));
    case Op::SliceAxis:
      arity(1);
      return slice_axis(inputs[0],
                        static_cast<std::size_t>(attrs.get_int("axis")),
                        static_cast<std::size_t>(attrs.get_int("start")),
                        static_cast<std::size_t>(attrs.get_int("len")));
    case Op::PadAxis:
      arity(1);
      return pad_axis(inputs[0],
                      static_cast<std::size_t>(attrs.get_int("axis")),
                      static_cast<std::size_t>(attrs.get_int("before")),
                      static_cast<std::size_t>(attrs.get_int("after")));
    case Op::GatherPad:
      arity(1);
      return gather_pad(inputs[0], attrs.get_ints("idx"),
                        shape_of(attrs.get_ints("shape")));
    case Op::ScatterPad:
      arity(1);
      return scatter_pad(inputs[0], attrs.get_ints("idx"),
                         shape_of(attrs.get_ints("shape")));
    case Op::Conv1d: {
      Conv1dOpts opts;
      opts.stride = static_cast<std::size_t>(attrs.get_int("stride", 1));
      opts.dilation = static_cast<std::size_t>(attrs.get_int("dilation", 1));
      opts.pad_left = static_cast<std::size_t>(attrs.get_int("pad_left", 0));
      opts.pad_right = static_cast<std::size_t>(attrs.get_int("pad_right", 0));
      if (inputs.size() == 2) return conv1d(inputs[0], inputs[1], std::nullopt, opts);
      arity(3);
      return conv1d(inputs[0], inputs[1], inputs[2], opts);
    }
    case Op::Conv2d: {
      Conv2dOpts opts;
      opts.stride = static_cast<std::size_t>(attrs.get_int("stride", 1));
      opts.pad = static_cast<std::size_t>(attrs.get_int("pad", 0));
      if (inputs.size() == 2) return conv2d(inputs[0], inputs[1], std::nullopt, opts);
      arity(3);
      return conv2d(inputs[0], inputs[1], inputs[2], opts);
    }
    case Op::MaxPool2d:
      arity(1);
      return max_pool2d(inputs[0],
                        static_cast<std::size_t>(attrs.get_int("k", 2)),
                        static_cast<std::size_t>(attrs.get_int("stride", 2)));
    case Op::AvgPool2d:
      arity(1);
      return avg_pool2d(inputs[0],
                        static_cast<std::size_t>(attrs.get_int("k", 2)),
                        static_cast<std::size_t>(attrs.get_int("stride", 2)));
    case Op::GlobalAvgPool: arity(1); return global_avg_pool(inputs[0]);
    case Op::BatchNormRunning:
      arity(5);
      return batch_norm_running(inputs[0], inputs[1], inputs[2], inputs[3],
                                inputs[4], attrs.get_double("eps", 1e-5));
  }
  throw OpError("apply: unknown operation");
}

// ---------------------------------------------------------------------------
// Backward rules. Each rule is written with the operations above, so with
// recording enabled the returned gradients are differentiable again.
// An undefined Tensor means "no gradient for this input". `need[i]` tells a
// rule whether input i's gradient will be consumed; rules with an expensive
// per-input term skip the unneeded side.
// ---------------------------------------------------------------------------

inline std::vector<Tensor> backward_rule(GraphNode& node, const Tensor& g,
                                         const std::vector<char>& need) {
  switch (node.op()) {
    case Op::Leaf:
      return {};
    case Op::Add: {
      const Tensor& a = node.input(0);
      const Tensor& b = node.input(1);
      return {need[0] ? sum_to_shape(g, a.shape()) : Tensor{},
              need[1] ? sum_to_shape(g, b.shape()) : Tensor{}};
    }
    case Op::Sub: {
      const Tensor& a = node.input(0);
      const Tensor& b = node.input(1);
      return {need[0] ? sum_to_shape(g, a.shape()) : Tensor{},
              need[1] ? neg(sum_to_shape(g, b.shape())) : Tensor{}};
    }
    case Op::Mul: {
      const Tensor& a = node.input(0);
      const Tensor& b = node.input(1);
      return {need[0] ? sum_to_shape(mul(g, b), a.shape()) : Tensor{},
              need[1] ? sum_to_shape(mul(g, a), b.shape()) : Tensor{}};
    }
    case Op::Neg:
      return {neg(g)};
    case Op::Scale:
      return {scale(g, node.attrs().get_double("factor"))};
    case Op::AddScalar:
      return {g};
    case Op::Reciprocal: {
      Tensor out = node.output();
      return {neg(mul(g, mul(out, out)))};
    }
    case Op::Exp:
      return {mul(g, node.output())};
    case Op::Log:
      return {mul(g, reciprocal(node.input(0)))};
    case Op::Sqrt:
      return {scale(mul(g, reciprocal(node.output())), 0.5)};
    case Op::Matmul: {
      const Tensor& a = node.input(0);
      const Tensor& b = node.input(1);
      return {need[0] ? matmul_bt(g, b) : Tensor{},
              need[1] ? matmul_ta(a, g) : Tensor{}};
    }
    case Op::MatmulBt: {
      const Tensor& a = node.input(0);
      const Tensor& b = node.input(1);
      return {need[0] ? matmul(g, b) : Tensor{},
              need[1] ? matmul_ta(g, a) : Tensor{}};
    }
    case Op::MatmulTa: {
      const Tensor& a = node.input(0);
      const Tensor& b = node.input(1);
      return {need[0] ? matmul_bt(b, g) : Tensor{},
              need[1] ? matmul(a, g) : Tensor{}};
    }
    case Op::Transpose:
      return {transpose(g)};
    case Op::Relu:
      return {mul(g, relu_mask(node.input(0)))};
    case Op::ReluMask:
      return {Tensor{}};
    case Op::Sigmoid: {
      Tensor s = node.output();
      return {mul(g, mul(s, add_scalar(neg(s), 1.0)))};
    }
    case Op::Softmax: {
      Tensor s = node.output();
      Tensor gs = mul(g, s);
      return {mul(s, sub(g, sum_axis(gs, s.ndim() - 1, true)))};
    }
    case Op::LogSoftmax: {
      Tensor out = node.output();
      return {sub(g, mul(exp(out), sum_axis(g, out.ndim() - 1, true)))};
    }
    case Op::NllLoss: {
      const Tensor& logits = node.input(0);
      const auto& labels = node.attrs().get_ints("labels");
      const std::size_t n = logits.shape()[0], c = logits.shape()[1];
      std::vector<double> onehot(n * c, 0.0);
      for (std::size_t i = 0; i < n; ++i)
        onehot[i * c + static_cast<std::size_t>(labels[i])] = 1.0;
      Tensor target = Tensor::from_values({n, c}, std::move(onehot));
      Tensor d = scale(sub(softmax(logits), target), 1.0 / static_cast<double>(n));
      return {mul(d, g)};
    }
    case Op::MseLoss: {
      const Tensor& a = node.input(0);
      const Tensor& b = node.input(1);
      Tensor d = mul(scale(sub(a, b), 2.0 / static_cast<double>(a.numel())), g);
      return {need[0] ? d : Tensor{}, need[1] ? neg(d) : Tensor{}};
    }
    case Op::Sum:
      return {broadcast_to(g, node.input(0).shape())};
    case Op::SumAxis: {
      const Tensor& x = node.input(0);
      Shape keep = x.shape();
      keep[static_cast<std::size_t>(node.attrs().get_int("axis"))] = 1;
      Tensor gk = node.attrs().get_int("keepdims", 0) ? g : reshape(g, keep);
      return {broadcast_to(gk, x.shape())};
    }
    case Op::BroadcastTo:
      return {sum_to_shape(g, node.input(0).shape())};
    case Op::SumToShape:
      return {broadcast_to(g, node.input(0).shape())};
    case Op::Reshape:
      return {reshape(g, node.input(0).shape())};
    case Op::Concat: {
      const std::size_t axis =
          static_cast<std::size_t>(node.attrs().get_int("axis"));
      std::vector<Tensor> grads;
      grads.reserve(node.inputs().size());
      std::size_t offset = 0;
      for (std::size_t i = 0; i < node.inputs().size(); ++i) {
        const std::size_t extent = node.input(i).shape()[axis];
        grads.push_back(need[i] ? slice_axis(g, axis, offset, extent)
                                : Tensor{});
        offset += extent;
      }
      return grads;
    }
    case Op::SliceAxis: {
      const Tensor& x = node.input(0);
      const std::size_t axis =
          static_cast<std::size_t>(node.attrs().get_int("axis"));
      const std::size_t start =
          static_cast<std::size_t>(node.attrs().get_int("start"));
      const std::size_t len =
          static_cast<std::size_t>(node.attrs().get_int("len"));
      return {pad_axis(g, axis, start, x.shape()[axis] - start - len)};
    }
    case Op::PadAxis: {
      const Tensor& x = node.input(0);
      const std::size_t axis =
          static_cast<std::size_t>(node.attrs().get_int("axis"));
      const std::size_t before =
          static_cast<std::size_t>(node.attrs().get_int("before"));
      return {slice_axis(g, axis, before, x.shape()[axis])};
    }
    case Op::GatherPad:
      return {scatter_pad(g, node.attrs().get_ints("idx"),
                          node.input(0).shape())};
    case Op::ScatterPad:
      return {gather_pad(g, node.attrs().get_ints("idx"),
                         node.input(0).shape())};
    default:
      // Composite ids never appear on recorded nodes.
      throw OpError(std::string("backward: no rule for ") + op_name(node.op()));
  }
}

/// y = x W^T + b for a linear layer with W of shape (out, in).
inline Tensor linear(const Tensor& x, const Tensor& w, const Tensor& b) {
  return add(matmul_bt(x, w), b);
}

}  // namespace ops
}  // namespace metacritic
