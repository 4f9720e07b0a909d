#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "zico/error.hpp"
#include "zico/tensor.hpp"

namespace zico {

using VarId = std::size_t;

enum class OpKind { conv2d, relu, global_avg_pool, dense, residual_add, cross_entropy_loss, sum };

inline const char* to_string(OpKind k) {
  switch (k) {
    case OpKind::conv2d: return "conv2d";
    case OpKind::relu: return "relu";
    case OpKind::global_avg_pool: return "global_avg_pool";
    case OpKind::dense: return "dense";
    case OpKind::residual_add: return "residual_add";
    case OpKind::cross_entropy_loss: return "cross_entropy_loss";
    case OpKind::sum: return "sum";
  }
  return "?";
}

struct Conv2dAttrs {
  std::size_t stride = 1;
  std::size_t padding = 0;
  std::size_t groups = 1;
};

/// floor((H + 2*pad - K) / stride) + 1, or 0 when the kernel does not fit.
constexpr std::size_t conv_out_extent(std::size_t in, std::size_t kernel, std::size_t stride, std::size_t pad) {
  if (in + 2 * pad < kernel) return 0;
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Records primitive ops as they execute and replays them in reverse to
/// produce parameter gradients. Parameters are referenced, not copied: they
/// must outlive the tape and are never written to.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  VarId constant(Tensor value) {
    nodes_.push_back({std::move(value), nullptr, false});
    return nodes_.size() - 1;
  }

  VarId parameter(const Tensor& value) {
    nodes_.push_back({std::nullopt, &value, true});
    params_.push_back(nodes_.size() - 1);
    return nodes_.size() - 1;
  }

  const Tensor& value(VarId id) const {
    const auto& n = nodes_.at(id);
    return n.ref ? *n.ref : *n.owned;
  }

  std::span<const VarId> parameters() const noexcept { return params_; }
  std::size_t op_count() const noexcept { return ops_.size(); }
  std::vector<OpKind> op_kinds() const {
    std::vector<OpKind> out;
    for (const auto& op : ops_) out.push_back(op.kind);
    return out;
  }

  VarId conv2d(VarId x, VarId w, Conv2dAttrs a) {
    const Tensor& X = value(x);
    const Tensor& W = value(w);
    if (X.rank() != 4 || W.rank() != 4)
      throw ShapeError("conv2d: expected 4-D input and weight, got " + to_string(X.shape()) + " and " +
                       to_string(W.shape()));
    if (a.groups == 0 || a.stride == 0) throw ShapeError("conv2d: groups and stride must be positive");
    const std::size_t cin = X.dim(1), cout = W.dim(0);
    if (cin % a.groups != 0 || cout % a.groups != 0)
      throw ShapeError("conv2d: channels (in " + std::to_string(cin) + ", out " + std::to_string(cout) +
                       ") not divisible by groups " + std::to_string(a.groups));
    if (W.dim(1) != cin / a.groups)
      throw ShapeError("conv2d: weight expects " + std::to_string(W.dim(1)) + " input channels per group, input has " +
                       std::to_string(cin / a.groups));
    const std::size_t ho = conv_out_extent(X.dim(2), W.dim(2), a.stride, a.padding);
    const std::size_t wo = conv_out_extent(X.dim(3), W.dim(3), a.stride, a.padding);
    if (ho == 0 || wo == 0)
      throw ShapeError("conv2d: kernel " + to_string(W.shape()) + " does not fit input " + to_string(X.shape()));

    Tensor Y({X.dim(0), cout, ho, wo});
    double* y = Y.data().data();
    const double* xp = X.data().data();
    const std::size_t st = a.stride;
    conv_kernel(X, W, a, [&](std::size_t yi, std::size_t xi, std::size_t len, std::size_t, double wv) {
      for (std::size_t t = 0; t < len; ++t) y[yi + t] += wv * xp[xi + t * st];
    });
    return record(OpKind::conv2d, {x, w}, std::move(Y), a);
  }

  VarId relu(VarId x) {
    Tensor Y = value(x);
    for (auto& v : Y.data()) v = v > 0.0 ? v : 0.0;
    return record(OpKind::relu, {x}, std::move(Y));
  }

  VarId global_avg_pool(VarId x) {
    const Tensor& X = value(x);
    if (X.rank() != 4) throw ShapeError("global_avg_pool: expected 4-D input, got " + to_string(X.shape()));
    const std::size_t n = X.dim(0), c = X.dim(1), hw = X.dim(2) * X.dim(3);
    Tensor Y({n, c});
    for (std::size_t i = 0; i < n * c; ++i) {
      double s = 0.0;
      for (std::size_t j = 0; j < hw; ++j) s += X[i * hw + j];
      Y[i] = s / static_cast<double>(hw);
    }
    return record(OpKind::global_avg_pool, {x}, std::move(Y));
  }

  /// y = x w^T + b with x (N, F), w (K, F), b (K).
  VarId dense(VarId x, VarId w, std::optional<VarId> b = std::nullopt) {
    const Tensor& X = value(x);
    const Tensor& W = value(w);
    if (X.rank() != 2 || W.rank() != 2 || X.dim(1) != W.dim(1))
      throw ShapeError("dense: input " + to_string(X.shape()) + " does not conform to weight " + to_string(W.shape()));
    const std::size_t n = X.dim(0), f = X.dim(1), k = W.dim(0);
    if (b && (value(*b).rank() != 1 || value(*b).dim(0) != k))
      throw ShapeError("dense: bias " + to_string(value(*b).shape()) + " does not match " + std::to_string(k) +
                       " outputs");
    Tensor Y({n, k});
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t o = 0; o < k; ++o) {
        double s = b ? value(*b)[o] : 0.0;
        for (std::size_t j = 0; j < f; ++j) s += X[i * f + j] * W[o * f + j];
        Y[i * k + o] = s;
      }
    if (b) return record(OpKind::dense, {x, w, *b}, std::move(Y));
    return record(OpKind::dense, {x, w}, std::move(Y));
  }

  VarId residual_add(VarId a, VarId b) {
    const Tensor& A = value(a);
    const Tensor& B = value(b);
    if (A.shape() != B.shape())
      throw ShapeError("residual_add: operand shapes differ, " + to_string(A.shape()) + " vs " + to_string(B.shape()));
    Tensor Y = A;
    for (std::size_t i = 0; i < Y.size(); ++i) Y[i] += B[i];
    return record(OpKind::residual_add, {a, b}, std::move(Y));
  }

  /// Mean softmax cross-entropy over the batch. logits (N, K); labels in [0, K).
  VarId cross_entropy_loss(VarId logits, std::span<const int> labels) {
    const Tensor& L = value(logits);
    if (L.rank() != 2) throw ShapeError("cross_entropy_loss: logits must be N x K, got " + to_string(L.shape()));
    const std::size_t n = L.dim(0), k = L.dim(1);
    if (labels.size() != n)
      throw ShapeError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                       std::to_string(n));
    double total = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
        throw ShapeError("cross_entropy_loss: label " + std::to_string(labels[i]) + " outside [0, " +
                         std::to_string(k) + ")");
      total += log_sum_exp(L, i) - L[i * k + static_cast<std::size_t>(labels[i])];
    }
    VarId id = record(OpKind::cross_entropy_loss, {logits}, Tensor::scalar(total / static_cast<double>(n)));
    ops_.back().labels.assign(labels.begin(), labels.end());
    return id;
  }

  /// Sum of all elements, as a scalar.
  VarId sum(VarId x) {
    double s = 0.0;
    for (double v : value(x).data()) s += v;
    return record(OpKind::sum, {x}, Tensor::scalar(s));
  }

  /// Reverse sweep from a scalar loss. Returns one gradient per registered
  /// parameter, in registration order; unreachable parameters get zeros.
  std::vector<Tensor> backward(VarId loss) const {
    if (ops_.empty()) throw Error("backward: tape is empty");
    if (value(loss).size() != 1)
      throw ShapeError("backward: loss must be scalar, got shape " + to_string(value(loss).shape()));

    std::vector<std::optional<Tensor>> grad(nodes_.size());
    grad[loss] = Tensor(value(loss).shape(), {1.0});

    for (auto it = ops_.rbegin(); it != ops_.rend(); ++it) {
      const OpRecord& op = *it;
      if (!grad[op.out]) continue;
      const Tensor& g = *grad[op.out];
      auto slot = [&](std::size_t k) -> Tensor& {
        VarId id = op.in[k];
        if (!grad[id]) grad[id] = Tensor(value(id).shape());
        return *grad[id];
      };
      switch (op.kind) {
        case OpKind::conv2d: {
          const Tensor& X = value(op.in[0]);
          const Tensor& W = value(op.in[1]);
          Tensor& dX = slot(0);
          Tensor& dW = slot(1);
          double* dx = dX.data().data();
          const double* xp = X.data().data();
          const double* gp = g.data().data();
          const std::size_t st = op.conv.stride;
          conv_kernel(X, W, op.conv, [&](std::size_t yi, std::size_t xi, std::size_t len, std::size_t wi, double wv) {
            double acc = 0.0;
            for (std::size_t t = 0; t < len; ++t) {
              dx[xi + t * st] += wv * gp[yi + t];
              acc += xp[xi + t * st] * gp[yi + t];
            }
            dW[wi] += acc;
          });
          break;
        }
        case OpKind::relu: {
          const Tensor& X = value(op.in[0]);
          Tensor& dX = slot(0);
          for (std::size_t i = 0; i < X.size(); ++i)
            if (X[i] > 0.0) dX[i] += g[i];
          break;
        }
        case OpKind::global_avg_pool: {
          const Tensor& X = value(op.in[0]);
          Tensor& dX = slot(0);
          const std::size_t hw = X.dim(2) * X.dim(3);
          for (std::size_t i = 0; i < g.size(); ++i)
            for (std::size_t j = 0; j < hw; ++j) dX[i * hw + j] += g[i] / static_cast<double>(hw);
          break;
        }
        case OpKind::dense: {
          const Tensor& X = value(op.in[0]);
          const Tensor& W = value(op.in[1]);
          const std::size_t n = X.dim(0), f = X.dim(1), k = W.dim(0);
          Tensor& dX = slot(0);
          Tensor& dW = slot(1);
          for (std::size_t i = 0; i < n; ++i)
            for (std::size_t o = 0; o < k; ++o) {
              const double go = g[i * k + o];
              for (std::size_t j = 0; j < f; ++j) {
                dX[i * f + j] += go * W[o * f + j];
                dW[o * f + j] += go * X[i * f + j];
              }
            }
          if (op.arity == 3) {
            Tensor& dB = slot(2);
            for (std::size_t i = 0; i < n; ++i)
              for (std::size_t o = 0; o < k; ++o) dB[o] += g[i * k + o];
          }
          break;
        }
        case OpKind::residual_add: {
          for (std::size_t k = 0; k < 2; ++k) {
            Tensor& d = slot(k);
            for (std::size_t i = 0; i < g.size(); ++i) d[i] += g[i];
          }
          break;
        }
        case OpKind::cross_entropy_loss: {
          const Tensor& L = value(op.in[0]);
          Tensor& dL = slot(0);
          const std::size_t n = L.dim(0), k = L.dim(1);
          const double scale = g[0] / static_cast<double>(n);
          for (std::size_t i = 0; i < n; ++i) {
            const double lse = log_sum_exp(L, i);
            for (std::size_t j = 0; j < k; ++j) {
              double p = std::exp(L[i * k + j] - lse);
              if (static_cast<int>(j) == op.labels[i]) p -= 1.0;
              dL[i * k + j] += scale * p;
            }
          }
          break;
        }
        case OpKind::sum: {
          Tensor& dX = slot(0);
          for (auto& v : dX.data()) v += g[0];
          break;
        }
      }
      // Activation gradients are transient; parameter slots are kept.
      if (!is_param(op.out)) grad[op.out].reset();
    }

    std::vector<Tensor> out;
    out.reserve(params_.size());
    for (VarId p : params_) out.push_back(grad[p] ? std::move(*grad[p]) : Tensor(value(p).shape()));
    return out;
  }

 private:
  struct Node {
    std::optional<Tensor> owned;
    const Tensor* ref;
    bool param;
  };

  struct OpRecord {
    OpKind kind;
    std::array<VarId, 3> in{};
    std::size_t arity = 0;
    VarId out = 0;
    Conv2dAttrs conv{};
    std::vector<int> labels;
  };

  bool is_param(VarId id) const { return nodes_[id].param; }

  VarId record(OpKind kind, std::initializer_list<VarId> inputs, Tensor out, Conv2dAttrs conv = {}) {
    OpRecord op;
    op.kind = kind;
    for (VarId v : inputs) op.in[op.arity++] = v;
    op.conv = conv;
    nodes_.push_back({std::move(out), nullptr, false});
    op.out = nodes_.size() - 1;
    ops_.push_back(std::move(op));
    return ops_.back().out;
  }

  static double log_sum_exp(const Tensor& L, std::size_t row) {
    const std::size_t k = L.dim(1);
    double m = L[row * k];
    for (std::size_t j = 1; j < k; ++j) m = std::max(m, L[row * k + j]);
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) s += std::exp(L[row * k + j] - m);
    return m + std::log(s);
  }

  // Visits a grouped conv as contiguous output-row runs. For each weight tap
  // and output row, fn(y, x, len, widx, wv) covers outputs y .. y + len - 1,
  // which read inputs x, x + stride, ...
  template <class Fn>
  static void conv_kernel(const Tensor& X, const Tensor& W, Conv2dAttrs a, Fn&& fn) {
    const std::size_t n = X.dim(0), cin = X.dim(1), hi = X.dim(2), wi = X.dim(3);
    const std::size_t cout = W.dim(0), cin_g = W.dim(1), kh = W.dim(2), kw = W.dim(3);
    const std::size_t ho = conv_out_extent(hi, kh, a.stride, a.padding);
    const std::size_t wo = conv_out_extent(wi, kw, a.stride, a.padding);
    const std::size_t cout_g = cout / a.groups;
    const auto st = static_cast<std::ptrdiff_t>(a.stride), pad = static_cast<std::ptrdiff_t>(a.padding);
    // Valid output range [lo, hi) along one axis for kernel offset k.
    auto range = [&](std::size_t k, std::size_t in, std::size_t out) {
      const std::ptrdiff_t off = static_cast<std::ptrdiff_t>(k) - pad;
      std::ptrdiff_t lo = off >= 0 ? 0 : (-off + st - 1) / st;
      std::ptrdiff_t up = (static_cast<std::ptrdiff_t>(in) - 1 - off);
      up = up < 0 ? 0 : up / st + 1;
      up = std::min(up, static_cast<std::ptrdiff_t>(out));
      return std::pair<std::size_t, std::size_t>(static_cast<std::size_t>(lo), static_cast<std::size_t>(std::max(lo, up)));
    };
    for (std::size_t b = 0; b < n; ++b)
      for (std::size_t oc = 0; oc < cout; ++oc) {
        const std::size_t group = oc / cout_g;
        for (std::size_t icg = 0; icg < cin_g; ++icg) {
          const std::size_t ic = group * cin_g + icg;
          for (std::size_t r = 0; r < kh; ++r) {
            const auto [oh0, oh1] = range(r, hi, ho);
            for (std::size_t s = 0; s < kw; ++s) {
              const auto [ow0, ow1] = range(s, wi, wo);
              if (ow0 >= ow1) continue;
              const std::size_t widx = ((oc * cin_g + icg) * kh + r) * kw + s;
              const double wv = W[widx];
              for (std::size_t oh = oh0; oh < oh1; ++oh) {
                const std::size_t ih = oh * a.stride + r - a.padding;
                const std::size_t iw = ow0 * a.stride + s - a.padding;
                fn(((b * cout + oc) * ho + oh) * wo + ow0, ((b * cin + ic) * hi + ih) * wi + iw, ow1 - ow0, widx, wv);
              }
            }
          }
        }
      }
  }

  std::vector<Node> nodes_;
  std::vector<VarId> params_;
  std::vector<OpRecord> ops_;
};

}  // namespace zico
