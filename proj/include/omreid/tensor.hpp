#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <numbers>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "omreid/common.hpp"

namespace omreid {

namespace detail {

struct TensorImpl {
  std::vector<std::size_t> shape;
  std::vector<double> data;
  std::vector<double> grad;  // allocated iff requires_grad
  bool requires_grad = false;
};

inline std::size_t shape_numel(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
  os << "]";
  return os.str();
}

}  // namespace detail

// Dense row-major tensor of 64-bit floats. Copying a Tensor copies the
// handle; two copies alias the same storage and gradient buffer.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(std::vector<std::size_t> shape, bool requires_grad = false) {
    for (std::size_t d : shape)
      if (d == 0) throw dim_error("tensor dimension must be positive, got shape " + detail::shape_str(shape));
    impl_ = std::make_shared<detail::TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data.assign(detail::shape_numel(impl_->shape), 0.0);
    set_requires_grad(requires_grad);
  }

  Tensor(std::vector<std::size_t> shape, std::vector<double> data, bool requires_grad = false)
      : Tensor(std::move(shape), requires_grad) {
    if (data.size() != impl_->data.size())
      throw dim_error("data length " + std::to_string(data.size()) + " does not match shape " +
                      detail::shape_str(impl_->shape));
    impl_->data = std::move(data);
  }

  static Tensor scalar(double v, bool requires_grad = false) {
    return Tensor({1}, {v}, requires_grad);
  }

  static Tensor full(std::vector<std::size_t> shape, double v, bool requires_grad = false) {
    Tensor t(std::move(shape), requires_grad);
    std::fill(t.impl_->data.begin(), t.impl_->data.end(), v);
    return t;
  }

  bool defined() const { return impl_ != nullptr; }
  const std::vector<std::size_t>& shape() const { return impl_->shape; }
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t dim(std::size_t i) const { return impl_->shape[i]; }
  std::size_t size() const { return impl_->data.size(); }

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  std::vector<double>& vec() { return impl_->data; }
  const std::vector<double>& vec() const { return impl_->data; }

  double& at(std::size_t i) { return impl_->data[i]; }
  double at(std::size_t i) const { return impl_->data[i]; }
  double& at(std::size_t i, std::size_t j) { return impl_->data[i * impl_->shape[1] + j]; }
  double at(std::size_t i, std::size_t j) const { return impl_->data[i * impl_->shape[1] + j]; }
  double item() const {
    if (size() != 1) throw dim_error("item() requires a scalar tensor, got " + detail::shape_str(shape()));
    return impl_->data[0];
  }

  bool requires_grad() const { return impl_ && impl_->requires_grad; }
  void set_requires_grad(bool b) {
    impl_->requires_grad = b;
    if (b && impl_->grad.size() != impl_->data.size()) impl_->grad.assign(impl_->data.size(), 0.0);
  }

  // NaN/Inf detection is explicit and queryable, never silent.
  bool has_nonfinite() const {
    for (double v : impl_->data)
      if (!std::isfinite(v)) return true;
    return false;
  }

  std::vector<double>& grad_ref() { return impl_->grad; }
  const std::vector<double>& grad_ref() const { return impl_->grad; }
  Tensor grad() const {
    Tensor g(impl_->shape);
    if (!impl_->grad.empty()) g.impl_->data = impl_->grad;
    return g;
  }
  void zero_grad() {
    if (impl_->requires_grad) std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
  }

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }

  Tensor clone() const {
    Tensor t(impl_->shape);
    t.impl_->data = impl_->data;
    return t;
  }

 private:
  std::shared_ptr<detail::TensorImpl> impl_;
};

// Reverse-mode tape. Ops are recorded in execution order, which is a
// topological order of the graph; backward() replays the closures once
// each, in reverse.
class Tape {
 public:
  void record(std::function<void()> fn) { nodes_.push_back(std::move(fn)); }
  std::size_t node_count() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }

  void backward(Tensor loss) {
    if (consumed_) throw numeric_error("tape already consumed by a previous backward pass");
    if (loss.size() != 1) throw dim_error("backward requires a scalar loss, got " + detail::shape_str(loss.shape()));
    if (!loss.requires_grad())
      throw numeric_error("loss does not require grad; nothing was recorded for it");
    loss.grad_ref()[0] = 1.0;
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) (*it)();
    consumed_ = true;
  }

 private:
  std::vector<std::function<void()>> nodes_;
  bool consumed_ = false;
};

namespace detail {
inline Tape*& tape_slot() {
  thread_local Tape* t = nullptr;
  return t;
}
}  // namespace detail

inline Tape* active_tape() { return detail::tape_slot(); }

// RAII activation of a tape on the current thread.
class TapeScope {
 public:
  explicit TapeScope(Tape& t) : prev_(detail::tape_slot()) { detail::tape_slot() = &t; }
  ~TapeScope() { detail::tape_slot() = prev_; }
  TapeScope(const TapeScope&) = delete;
  TapeScope& operator=(const TapeScope&) = delete;

 private:
  Tape* prev_;
};

namespace detail {

inline bool track(const Tensor& a) { return a.requires_grad() && active_tape(); }

inline void mark_out(Tensor& out) { out.set_requires_grad(true); }

inline void check_rank2(const Tensor& t, const char* op) {
  if (t.rank() != 2) throw dim_error(std::string(op) + " requires a rank-2 tensor, got " + shape_str(t.shape()));
}

inline void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw dim_error(std::string(op) + " shape mismatch: " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
}

}  // namespace detail

inline constexpr double kLogFloor = 1e-8;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

inline Tensor add(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "add");
  Tensor out(a.shape());
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
  if (detail::track(a) || detail::track(b)) {
    detail::mark_out(out);
    Tensor ca = a, cb = b, co = out;
    active_tape()->record([ca, cb, co]() mutable {
      const auto& g = co.grad_ref();
      if (ca.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) ca.grad_ref()[i] += g[i];
      if (cb.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) cb.grad_ref()[i] += g[i];
    });
  }
  return out;
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "sub");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) - b.at(i);
  if (detail::track(a) || detail::track(b)) {
    detail::mark_out(out);
    Tensor ca = a, cb = b, co = out;
    active_tape()->record([ca, cb, co]() mutable {
      const auto& g = co.grad_ref();
      if (ca.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) ca.grad_ref()[i] += g[i];
      if (cb.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) cb.grad_ref()[i] -= g[i];
    });
  }
  return out;
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  detail::check_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) * b.at(i);
  if (detail::track(a) || detail::track(b)) {
    detail::mark_out(out);
    Tensor ca = a, cb = b, co = out;
    active_tape()->record([ca, cb, co]() mutable {
      const auto& g = co.grad_ref();
      if (ca.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) ca.grad_ref()[i] += g[i] * cb.at(i);
      if (cb.requires_grad())
        for (std::size_t i = 0; i < g.size(); ++i) cb.grad_ref()[i] += g[i] * ca.at(i);
    });
  }
  return out;
}

inline Tensor scale(const Tensor& a, double c) {
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out.at(i) = a.at(i) * c;
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ca = a, co = out;
    active_tape()->record([ca, co, c]() mutable {
      const auto& g = co.grad_ref();
      for (std::size_t i = 0; i < g.size(); ++i) ca.grad_ref()[i] += g[i] * c;
    });
  }
  return out;
}

inline Tensor gelu(const Tensor& a) {
  Tensor out(a.shape());
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (std::size_t i = 0; i < out.size(); ++i) {
    double x = a.at(i);
    out.at(i) = 0.5 * x * (1.0 + std::erf(x * inv_sqrt2));
  }
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ca = a, co = out;
    active_tape()->record([ca, co]() mutable {
      const auto& g = co.grad_ref();
      constexpr double is2 = 0.7071067811865475244;
      const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
      for (std::size_t i = 0; i < g.size(); ++i) {
        double x = ca.at(i);
        double cdf = 0.5 * (1.0 + std::erf(x * is2));
        double pdf = inv_sqrt_2pi * std::exp(-0.5 * x * x);
        ca.grad_ref()[i] += g[i] * (cdf + x * pdf);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// matrix ops
// ---------------------------------------------------------------------------

inline Tensor matmul(const Tensor& a, const Tensor& b) {
  detail::check_rank2(a, "matmul");
  detail::check_rank2(b, "matmul");
  const std::size_t m = a.dim(0), k = a.dim(1), k2 = b.dim(0), n = b.dim(1);
  if (k != k2)
    throw dim_error("matmul inner dimension mismatch: " + detail::shape_str(a.shape()) + " x " +
                    detail::shape_str(b.shape()));
  Tensor out({m, n});
  const double* pa = a.data();
  const double* pb = b.data();
  double* po = out.data();
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = pa[i * k + p];
      const double* brow = pb + p * n;
      double* orow = po + i * n;
      for (std::size_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
  if (detail::track(a) || detail::track(b)) {
    detail::mark_out(out);
    Tensor ca = a, cb = b, co = out;
    active_tape()->record([ca, cb, co, m, k, n]() mutable {
      const double* g = co.grad_ref().data();
      if (ca.requires_grad()) {
        double* ga = ca.grad_ref().data();
        const double* pb2 = cb.data();
        // dA = G * B^T
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) {
            const double gv = g[i * n + j];
            for (std::size_t p = 0; p < k; ++p) ga[i * k + p] += gv * pb2[p * n + j];
          }
      }
      if (cb.requires_grad()) {
        double* gb = cb.grad_ref().data();
        const double* pa2 = ca.data();
        // dB = A^T * G
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t p = 0; p < k; ++p) {
            const double av = pa2[i * k + p];
            for (std::size_t j = 0; j < n; ++j) gb[p * n + j] += av * g[i * n + j];
          }
      }
    });
  }
  return out;
}

inline Tensor transpose(const Tensor& a) {
  detail::check_rank2(a, "transpose");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.at(i, j);
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ca = a, co = out;
    active_tape()->record([ca, co, m, n]() mutable {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) ca.grad_ref()[i * n + j] += co.grad_ref()[j * m + i];
    });
  }
  return out;
}

// rows of a [m x n] plus a length-n bias
inline Tensor add_rowwise(const Tensor& a, const Tensor& bias) {
  detail::check_rank2(a, "add_rowwise");
  if (bias.rank() != 1 || bias.dim(0) != a.dim(1))
    throw dim_error("add_rowwise bias " + detail::shape_str(bias.shape()) + " does not match columns of " +
                    detail::shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) + bias.at(j);
  if (detail::track(a) || detail::track(bias)) {
    detail::mark_out(out);
    Tensor ca = a, cb = bias, co = out;
    active_tape()->record([ca, cb, co, m, n]() mutable {
      const auto& g = co.grad_ref();
      if (ca.requires_grad())
        for (std::size_t i = 0; i < m * n; ++i) ca.grad_ref()[i] += g[i];
      if (cb.requires_grad())
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) cb.grad_ref()[j] += g[i * n + j];
    });
  }
  return out;
}

// rows of a [m x n] times a length-n gain
inline Tensor mul_rowwise(const Tensor& a, const Tensor& gain) {
  detail::check_rank2(a, "mul_rowwise");
  if (gain.rank() != 1 || gain.dim(0) != a.dim(1))
    throw dim_error("mul_rowwise gain " + detail::shape_str(gain.shape()) + " does not match columns of " +
                    detail::shape_str(a.shape()));
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({m, n});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) * gain.at(j);
  if (detail::track(a) || detail::track(gain)) {
    detail::mark_out(out);
    Tensor ca = a, cg = gain, co = out;
    active_tape()->record([ca, cg, co, m, n]() mutable {
      const auto& g = co.grad_ref();
      if (ca.requires_grad())
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) ca.grad_ref()[i * n + j] += g[i * n + j] * cg.at(j);
      if (cg.requires_grad())
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < n; ++j) cg.grad_ref()[j] += g[i * n + j] * ca.at(i, j);
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

inline Tensor reshape(const Tensor& a, std::vector<std::size_t> shape) {
  if (detail::shape_numel(shape) != a.size())
    throw dim_error("reshape to " + detail::shape_str(shape) + " incompatible with " +
                    detail::shape_str(a.shape()));
  Tensor out(std::move(shape));
  out.vec() = a.vec();
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ca = a, co = out;
    active_tape()->record([ca, co]() mutable {
      for (std::size_t i = 0; i < ca.size(); ++i) ca.grad_ref()[i] += co.grad_ref()[i];
    });
  }
  return out;
}

inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t start, std::size_t len) {
  detail::check_rank2(a, "slice");
  if (axis > 1) throw dim_error("slice axis out of range for rank-2 tensor");
  const std::size_t m = a.dim(0), n = a.dim(1);
  const std::size_t bound = (axis == 0) ? m : n;
  if (len == 0 || start + len > bound)
    throw dim_error("slice [" + std::to_string(start) + ", " + std::to_string(start + len) + ") out of range " +
                    std::to_string(bound));
  Tensor out(axis == 0 ? std::vector<std::size_t>{len, n} : std::vector<std::size_t>{m, len});
  if (axis == 0) {
    for (std::size_t i = 0; i < len; ++i)
      for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a.at(start + i, j);
  } else {
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < len; ++j) out.at(i, j) = a.at(i, start + j);
  }
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ca = a, co = out;
    active_tape()->record([ca, co, axis, start, len, m, n]() mutable {
      if (axis == 0) {
        for (std::size_t i = 0; i < len; ++i)
          for (std::size_t j = 0; j < n; ++j) ca.grad_ref()[(start + i) * n + j] += co.grad_ref()[i * n + j];
      } else {
        for (std::size_t i = 0; i < m; ++i)
          for (std::size_t j = 0; j < len; ++j) ca.grad_ref()[i * n + start + j] += co.grad_ref()[i * len + j];
      }
    });
  }
  return out;
}

inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw dim_error("concat of zero tensors");
  if (axis > 1) throw dim_error("concat axis out of range for rank-2 tensors");
  for (const Tensor& p : parts) detail::check_rank2(p, "concat");
  const std::size_t fixed = (axis == 0) ? parts[0].dim(1) : parts[0].dim(0);
  std::size_t total = 0;
  for (const Tensor& p : parts) {
    const std::size_t f = (axis == 0) ? p.dim(1) : p.dim(0);
    if (f != fixed)
      throw dim_error("concat non-matching dimension: " + detail::shape_str(p.shape()) + " vs " +
                      detail::shape_str(parts[0].shape()));
    total += (axis == 0) ? p.dim(0) : p.dim(1);
  }
  Tensor out(axis == 0 ? std::vector<std::size_t>{total, fixed} : std::vector<std::size_t>{fixed, total});
  std::size_t off = 0;
  for (const Tensor& p : parts) {
    if (axis == 0) {
      for (std::size_t i = 0; i < p.dim(0); ++i)
        for (std::size_t j = 0; j < fixed; ++j) out.at(off + i, j) = p.at(i, j);
      off += p.dim(0);
    } else {
      for (std::size_t i = 0; i < fixed; ++i)
        for (std::size_t j = 0; j < p.dim(1); ++j) out.at(i, off + j) = p.at(i, j);
      off += p.dim(1);
    }
  }
  bool any = false;
  for (const Tensor& p : parts) any = any || detail::track(p);
  if (any) {
    detail::mark_out(out);
    std::vector<Tensor> cp = parts;
    Tensor co = out;
    active_tape()->record([cp, co, axis, fixed]() mutable {
      std::size_t off2 = 0;
      for (Tensor& p : cp) {
        const std::size_t mlen = (axis == 0) ? p.dim(0) : p.dim(1);
        if (p.requires_grad()) {
          if (axis == 0) {
            for (std::size_t i = 0; i < mlen; ++i)
              for (std::size_t j = 0; j < fixed; ++j)
                p.grad_ref()[i * fixed + j] += co.grad_ref()[(off2 + i) * fixed + j];
          } else {
            const std::size_t total = co.dim(1);
            for (std::size_t i = 0; i < fixed; ++i)
              for (std::size_t j = 0; j < mlen; ++j)
                p.grad_ref()[i * mlen + j] += co.grad_ref()[i * total + off2 + j];
          }
        }
        off2 += mlen;
      }
    });
  }
  return out;
}

// stack rank-1 vectors of equal length into a [N x D] matrix
inline Tensor stack_rows(const std::vector<Tensor>& rows) {
  if (rows.empty()) throw dim_error("stack_rows of zero tensors");
  const std::size_t d = rows[0].size();
  for (const Tensor& r : rows)
    if (r.rank() != 1 || r.size() != d) throw dim_error("stack_rows requires equal-length rank-1 tensors");
  Tensor out({rows.size(), d});
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = rows[i].at(j);
  bool any = false;
  for (const Tensor& r : rows) any = any || detail::track(r);
  if (any) {
    detail::mark_out(out);
    std::vector<Tensor> cr = rows;
    Tensor co = out;
    active_tape()->record([cr, co, d]() mutable {
      for (std::size_t i = 0; i < cr.size(); ++i)
        if (cr[i].requires_grad())
          for (std::size_t j = 0; j < d; ++j) cr[i].grad_ref()[j] += co.grad_ref()[i * d + j];
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// reductions and normalizations
// ---------------------------------------------------------------------------

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a.at(i);
  Tensor out = Tensor::scalar(s);
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ca = a, co = out;
    active_tape()->record([ca, co]() mutable {
      const double g = co.grad_ref()[0];
      for (std::size_t i = 0; i < ca.size(); ++i) ca.grad_ref()[i] += g;
    });
  }
  return out;
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

// mean over one axis of a rank-2 tensor; axis 0 pools rows (token axis)
inline Tensor mean_pool(const Tensor& a, std::size_t axis) {
  detail::check_rank2(a, "mean_pool");
  if (axis > 1) throw dim_error("mean_pool axis out of range for rank-2 tensor");
  const std::size_t m = a.dim(0), n = a.dim(1);
  const std::size_t keep = (axis == 0) ? n : m;
  const std::size_t pooled = (axis == 0) ? m : n;
  if (pooled == 0) throw dim_error("mean_pool over an empty axis");
  Tensor out({keep});
  const double inv = 1.0 / static_cast<double>(pooled);
  if (axis == 0) {
    for (std::size_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::size_t i = 0; i < m; ++i) s += a.at(i, j);
      out.at(j) = s * inv;
    }
  } else {
    for (std::size_t i = 0; i < m; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < n; ++j) s += a.at(i, j);
      out.at(i) = s * inv;
    }
  }
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ca = a, co = out;
    active_tape()->record([ca, co, axis, m, n, inv]() mutable {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j)
          ca.grad_ref()[i * n + j] += co.grad_ref()[axis == 0 ? j : i] * inv;
    });
  }
  return out;
}

// Pre-affine layer normalization over the last axis: each length-n slice is
// shifted to mean 0 and scaled to unit variance (biased), with eps inside the
// square root. Rank-1 input is treated as a single slice.
inline Tensor layer_norm(const Tensor& a, double eps = 1e-5) {
  std::size_t m = 1, n = 0;
  if (a.rank() == 1) {
    n = a.dim(0);
  } else if (a.rank() == 2) {
    m = a.dim(0);
    n = a.dim(1);
  } else {
    throw dim_error("layer_norm supports rank-1/2 tensors, got " + detail::shape_str(a.shape()));
  }
  if (n < 2) throw dim_error("layer_norm over a single element is degenerate");
  Tensor out(a.shape());
  std::vector<double> inv_sigma(m);
  const double invn = 1.0 / static_cast<double>(n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = a.data() + i * n;
    double mu = 0.0;
    for (std::size_t j = 0; j < n; ++j) mu += row[j];
    mu *= invn;
    double var = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double d = row[j] - mu;
      var += d * d;
    }
    var *= invn;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_sigma[i] = is;
    for (std::size_t j = 0; j < n; ++j) out.data()[i * n + j] = (row[j] - mu) * is;
  }
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ca = a, co = out;
    active_tape()->record([ca, co, m, n, inv_sigma, invn]() mutable {
      for (std::size_t i = 0; i < m; ++i) {
        const double* g = co.grad_ref().data() + i * n;
        const double* y = co.data() + i * n;
        double gmean = 0.0, gymean = 0.0;
        for (std::size_t j = 0; j < n; ++j) {
          gmean += g[j];
          gymean += g[j] * y[j];
        }
        gmean *= invn;
        gymean *= invn;
        double* ga = ca.grad_ref().data() + i * n;
        for (std::size_t j = 0; j < n; ++j) ga[j] += inv_sigma[i] * (g[j] - gmean - y[j] * gymean);
      }
    });
  }
  return out;
}

// softmax along an axis of a rank-1/2 tensor (rank-1: axis 0)
inline Tensor softmax(const Tensor& a, std::size_t axis) {
  std::size_t m = 1, n = 0;
  bool row_major_axis = true;
  if (a.rank() == 1) {
    if (axis != 0) throw dim_error("softmax axis out of range for rank-1 tensor");
    n = a.dim(0);
  } else if (a.rank() == 2) {
    if (axis > 1) throw dim_error("softmax axis out of range for rank-2 tensor");
    row_major_axis = (axis == 1);
    m = row_major_axis ? a.dim(0) : a.dim(1);
    n = row_major_axis ? a.dim(1) : a.dim(0);
  } else {
    throw dim_error("softmax supports rank-1/2 tensors, got " + detail::shape_str(a.shape()));
  }
  if (n == 0) throw dim_error("softmax over an empty axis");
  Tensor out(a.shape());
  const bool rank1 = (a.rank() == 1);
  auto idx = [rank1, row_major_axis, m, n](std::size_t i, std::size_t j) {
    if (rank1) return j;
    return row_major_axis ? i * n + j : j * m + i;
  };
  for (std::size_t i = 0; i < m; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < n; ++j) mx = std::max(mx, a.at(idx(i, j)));
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) {
      const double e = std::exp(a.at(idx(i, j)) - mx);
      out.at(idx(i, j)) = e;
      z += e;
    }
    const double inv = 1.0 / z;
    for (std::size_t j = 0; j < n; ++j) out.at(idx(i, j)) *= inv;
  }
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ca = a, co = out;
    active_tape()->record([ca, co, m, n, idx]() mutable {
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += co.grad_ref()[idx(i, j)] * co.at(idx(i, j));
        for (std::size_t j = 0; j < n; ++j) {
          const std::size_t p = idx(i, j);
          ca.grad_ref()[p] += co.at(p) * (co.grad_ref()[p] - dot);
        }
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// lookup and losses
// ---------------------------------------------------------------------------

inline Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids) {
  detail::check_rank2(table, "embedding_lookup");
  const std::size_t v = table.dim(0), d = table.dim(1);
  if (ids.empty()) throw dim_error("embedding_lookup with empty id list");
  for (std::size_t id : ids)
    if (id >= v) throw data_error("token id " + std::to_string(id) + " out of vocabulary of size " + std::to_string(v));
  Tensor out({ids.size(), d});
  for (std::size_t i = 0; i < ids.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out.at(i, j) = table.at(ids[i], j);
  if (detail::track(table)) {
    detail::mark_out(out);
    Tensor ct = table, co = out;
    active_tape()->record([ct, co, ids, d]() mutable {
      for (std::size_t i = 0; i < ids.size(); ++i)
        for (std::size_t j = 0; j < d; ++j) ct.grad_ref()[ids[i] * d + j] += co.grad_ref()[i * d + j];
    });
  }
  return out;
}

// Mean cross-entropy over rows of logits [N x C] (rank-1 treated as one row),
// computed via log-sum-exp.
inline Tensor cross_entropy(const Tensor& logits, const std::vector<std::size_t>& labels) {
  std::size_t m = 1, c = 0;
  if (logits.rank() == 1) {
    c = logits.dim(0);
  } else if (logits.rank() == 2) {
    m = logits.dim(0);
    c = logits.dim(1);
  } else {
    throw dim_error("cross_entropy supports rank-1/2 logits");
  }
  if (labels.size() != m) throw dim_error("cross_entropy label count does not match rows");
  for (std::size_t l : labels)
    if (l >= c) throw data_error("label " + std::to_string(l) + " out of range for " + std::to_string(c) + " classes");
  double total = 0.0;
  std::vector<double> probs(m * c);
  for (std::size_t i = 0; i < m; ++i) {
    const double* row = logits.data() + i * c;
    double mx = row[0];
    for (std::size_t j = 1; j < c; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < c; ++j) z += std::exp(row[j] - mx);
    const double lse = mx + std::log(z);
    total += lse - row[labels[i]];
    for (std::size_t j = 0; j < c; ++j) probs[i * c + j] = std::exp(row[j] - lse);
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(m));
  if (detail::track(logits)) {
    detail::mark_out(out);
    Tensor cl = logits, co = out;
    active_tape()->record([cl, co, probs, labels, m, c]() mutable {
      const double g = co.grad_ref()[0] / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < c; ++j)
          cl.grad_ref()[i * c + j] += g * (probs[i * c + j] - (labels[i] == j ? 1.0 : 0.0));
    });
  }
  return out;
}

// Row-mean KL divergence sum_j p_ij (log p_ij - log q_ij) with both log
// arguments floored at kLogFloor. Rank-1 inputs are treated as one row.
inline Tensor kl_div(const Tensor& p, const Tensor& q) {
  detail::check_same_shape(p, q, "kl_div");
  std::size_t m = 1;
  if (p.rank() == 2) m = p.dim(0);
  else if (p.rank() != 1) throw dim_error("kl_div supports rank-1/2 tensors");
  const std::size_t n = p.size() / m;
  if (n == 0) throw dim_error("kl_div over an empty axis");
  double total = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pv = p.at(i);
    total += pv * (std::log(std::max(pv, kLogFloor)) - std::log(std::max(q.at(i), kLogFloor)));
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(m));
  if (detail::track(p) || detail::track(q)) {
    detail::mark_out(out);
    Tensor cp = p, cq = q, co = out;
    active_tape()->record([cp, cq, co, m]() mutable {
      const double g = co.grad_ref()[0] / static_cast<double>(m);
      if (cp.requires_grad()) {
        for (std::size_t i = 0; i < cp.size(); ++i) {
          const double pv = std::max(cp.at(i), kLogFloor);
          const double qv = std::max(cq.at(i), kLogFloor);
          const double dp = std::log(pv) - std::log(qv) + (cp.at(i) > kLogFloor ? 1.0 : 0.0);
          cp.grad_ref()[i] += g * dp;
        }
      }
      if (cq.requires_grad()) {
        for (std::size_t i = 0; i < cq.size(); ++i) {
          if (cq.at(i) > kLogFloor) cq.grad_ref()[i] -= g * cp.at(i) / cq.at(i);
        }
      }
    });
  }
  return out;
}

// Row-mean KL(target || softmax(scores)) computed through log-sum-exp, so
// gradients never saturate through a probability floor. Zero target entries
// contribute nothing (0 log 0 = 0). Rank-1 inputs are treated as one row.
inline Tensor kl_vs_softmax(const Tensor& target, const Tensor& scores) {
  detail::check_same_shape(target, scores, "kl_vs_softmax");
  std::size_t m = 1;
  if (scores.rank() == 2) m = scores.dim(0);
  else if (scores.rank() != 1) throw dim_error("kl_vs_softmax supports rank-1/2 tensors");
  const std::size_t n = scores.size() / m;
  if (n == 0) throw dim_error("kl_vs_softmax over an empty axis");
  double total = 0.0;
  std::vector<double> probs(m * n);
  for (std::size_t i = 0; i < m; ++i) {
    const double* s = scores.data() + i * n;
    const double* q = target.data() + i * n;
    double mx = s[0];
    for (std::size_t j = 1; j < n; ++j) mx = std::max(mx, s[j]);
    double z = 0.0;
    for (std::size_t j = 0; j < n; ++j) z += std::exp(s[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < n; ++j) {
      probs[i * n + j] = std::exp(s[j] - lse);
      if (q[j] > 0.0) total += q[j] * (std::log(q[j]) - (s[j] - lse));
    }
  }
  Tensor out = Tensor::scalar(total / static_cast<double>(m));
  if (detail::track(scores)) {
    detail::mark_out(out);
    Tensor cq = target, cs = scores, co = out;
    active_tape()->record([cq, cs, co, probs, m, n]() mutable {
      const double g = co.grad_ref()[0] / static_cast<double>(m);
      for (std::size_t i = 0; i < m; ++i) {
        double qsum = 0.0;
        for (std::size_t j = 0; j < n; ++j) qsum += cq.at(i * n + j);
        for (std::size_t j = 0; j < n; ++j)
          cs.grad_ref()[i * n + j] += g * (qsum * probs[i * n + j] - cq.at(i * n + j));
      }
    });
  }
  return out;
}

// Rows scaled to unit L2 norm; errors on a zero row (cosine undefined).
inline Tensor l2_normalize_rows(const Tensor& a) {
  detail::check_rank2(a, "l2_normalize_rows");
  const std::size_t m = a.dim(0), n = a.dim(1);
  Tensor out({m, n});
  std::vector<double> inv_norm(m);
  for (std::size_t i = 0; i < m; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < n; ++j) s += a.at(i, j) * a.at(i, j);
    const double norm = std::sqrt(s);
    if (norm < 1e-12) throw numeric_error("l2_normalize_rows: zero-norm row " + std::to_string(i));
    inv_norm[i] = 1.0 / norm;
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) = a.at(i, j) * inv_norm[i];
  }
  if (detail::track(a)) {
    detail::mark_out(out);
    Tensor ca = a, co = out;
    active_tape()->record([ca, co, m, n, inv_norm]() mutable {
      for (std::size_t i = 0; i < m; ++i) {
        double dot = 0.0;
        for (std::size_t j = 0; j < n; ++j) dot += co.grad_ref()[i * n + j] * co.at(i, j);
        for (std::size_t j = 0; j < n; ++j)
          ca.grad_ref()[i * n + j] += inv_norm[i] * (co.grad_ref()[i * n + j] - co.at(i, j) * dot);
      }
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// gradient checking
// ---------------------------------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::vector<std::size_t> nonfinite_elements;

  bool passed(double tol) const { return nonfinite_elements.empty() && max_rel_err <= tol; }
};

// Compares the tape gradient of a scalar-valued function against central
// finite differences, element by element. Relative error uses an absolute
// floor so that near-zero gradient pairs are compared on an absolute scale.
inline GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                                  double step = 1e-5, double rel_floor = 1e-4) {
  GradCheckReport report;
  x.set_requires_grad(true);
  x.zero_grad();
  std::vector<double> analytic;
  {
    Tape tape;
    TapeScope scope(tape);
    Tensor y = f(x);
    if (y.size() != 1) throw dim_error("grad_check requires a scalar-valued function");
    if (y.has_nonfinite()) report.nonfinite_elements.push_back(static_cast<std::size_t>(-1));
    tape.backward(y);
    analytic = x.grad_ref();
  }
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double saved = x.at(i);
    x.at(i) = saved + step;
    const double fp = f(x).item();
    x.at(i) = saved - step;
    const double fm = f(x).item();
    x.at(i) = saved;
    if (!std::isfinite(fp) || !std::isfinite(fm) || !std::isfinite(analytic[i])) {
      report.nonfinite_elements.push_back(i);
      continue;
    }
    const double numeric = (fp - fm) / (2.0 * step);
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), rel_floor});
    const double rel = std::abs(analytic[i] - numeric) / denom;
    if (rel > report.max_rel_err) {
      report.max_rel_err = rel;
      report.worst_index = i;
      report.worst_analytic = analytic[i];
      report.worst_numeric = numeric;
    }
  }
  return report;
}

}  // namespace omreid
