#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"
#include "zico/autodiff.hpp"
#include "zico/error.hpp"
#include "zico/genome.hpp"
#include "zico/network.hpp"
#include "zico/tensor.hpp"

namespace zico {

/// Added to the gradient standard deviation; also the floor for a layer's
/// inner sum before taking its log.
inline constexpr double kEpsilon = 1e-12;

enum class LossKind { cross_entropy, output_sum };

/// Numerator of the per-parameter ratio: E[|g|] (default) or signed E[g].
enum class Numerator { absolute, signed_mean };

inline const char* to_string(LossKind k) { return k == LossKind::cross_entropy ? "cross_entropy" : "output_sum"; }
inline const char* to_string(Numerator n) { return n == Numerator::absolute ? "absolute" : "signed"; }

inline Numerator parse_numerator(const std::string& s) {
  if (s == "absolute") return Numerator::absolute;
  if (s == "signed") return Numerator::signed_mean;
  throw ValueError("numerator: expected 'absolute' or 'signed', got '" + s + "'");
}

struct Batch {
  Tensor images;
  std::vector<int> labels;
};

/// `count` batches of standard-Gaussian images and uniform labels in
/// [0, num_classes). Batch i is seeded from derive_seed(seed, i).
inline std::vector<Batch> make_batches(const LayerGraph& g, std::size_t num_classes, std::size_t batch_size,
                                       std::size_t count, std::uint64_t seed) {
  if (!batch_size || !num_classes) throw ValueError("make_batches: batch_size and num_classes must be positive");
  std::vector<Batch> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    const std::uint64_t s = derive_seed(seed, i);
    Batch b;
    b.images = seeded_fill({batch_size, g.input_channels, g.input_h, g.input_w}, init::Gaussian{0.0, 1.0},
                           derive_seed(s, 0));
    const Tensor labels = seeded_fill({batch_size}, init::UniformInt{0, static_cast<std::int64_t>(num_classes)},
                                      derive_seed(s, 1));
    for (double v : labels.data()) b.labels.push_back(static_cast<int>(v));
    out.push_back(std::move(b));
  }
  return out;
}

/// Per-parameter gradient statistics of one layer across batches. Weight
/// entries come first, then bias entries.
struct LayerGradStats {
  std::size_t layer = 0;  // 1-based
  std::vector<double> mean_abs_grad;
  std::vector<double> mean_grad;
  std::vector<double> var_grad;  // unbiased, B - 1 denominator
};

struct GradientStats {
  std::vector<LayerGradStats> layers;
  std::size_t batch_count = 0;
};

/// Single forward+backward on one batch; returns per-layer flattened
/// gradients (weight then bias). Weights are only read.
inline std::vector<std::vector<double>> layer_gradients(const LayerGraph& g, const Batch& batch, LossKind loss) {
  Tape tape;
  const ForwardPass fp = forward(g, tape, batch.images);
  VarId l = 0;
  if (loss == LossKind::cross_entropy) {
    if (batch.labels.size() != batch.images.dim(0))
      throw ShapeError("gather_gradient_stats: " + std::to_string(batch.labels.size()) + " labels for batch of " +
                       std::to_string(batch.images.dim(0)));
    l = tape.cross_entropy_loss(fp.output, batch.labels);
  } else {
    l = tape.sum(fp.output);
  }
  const std::vector<Tensor> grads = tape.backward(l);
  std::vector<std::vector<double>> out(g.layers.size());
  for (std::size_t i = 0; i < g.layers.size(); ++i) {
    const auto& [w, b] = fp.param_slots[i];
    out[i].assign(grads[w].data().begin(), grads[w].data().end());
    if (b) out[i].insert(out[i].end(), grads[*b].data().begin(), grads[*b].data().end());
  }
  return out;
}

/// Mean and variance of every parameter gradient over the given batches.
/// No parameter is updated between batches.
inline GradientStats gather_gradient_stats(const LayerGraph& g, std::span<const Batch> batches,
                                           LossKind loss = LossKind::cross_entropy) {
  if (batches.size() < 2)
    throw ValueError("gather_gradient_stats: need at least 2 batches for an unbiased variance, got " +
                     std::to_string(batches.size()));
  for (const auto& b : batches)
    if (b.images.rank() != 4 || b.images.dim(1) != g.input_channels || b.images.dim(2) != g.input_h ||
        b.images.dim(3) != g.input_w)
      throw ShapeError("gather_gradient_stats: batch shape " + to_string(b.images.shape()) +
                       " does not match graph input (N," + std::to_string(g.input_channels) + "," +
                       std::to_string(g.input_h) + "," + std::to_string(g.input_w) + ")");

  GradientStats stats;
  stats.batch_count = batches.size();
  std::vector<std::vector<double>> m2(g.layers.size());
  for (const auto& l : g.layers) {
    const std::size_t n = l.param_count();
    stats.layers.push_back({l.index, std::vector<double>(n), std::vector<double>(n), std::vector<double>(n)});
  }

  // Welford M2 for the variance. Means come from compensated sums so a
  // near-cancelling signed mean keeps its relative accuracy.
  std::vector<std::vector<double>> sum(g.layers.size()), sum_c(g.layers.size());
  std::vector<std::vector<double>> asum(g.layers.size()), asum_c(g.layers.size());
  const auto neumaier = [](double& s, double& c, double x) {
    const double t = s + x;
    c += std::abs(s) >= std::abs(x) ? (s - t) + x : (x - t) + s;
    s = t;
  };
  std::size_t seen = 0;
  for (const auto& batch : batches) {
    const auto grads = layer_gradients(g, batch, loss);
    ++seen;
    const double inv = 1.0 / static_cast<double>(seen);
    for (std::size_t i = 0; i < grads.size(); ++i) {
      auto& ls = stats.layers[i];
      if (m2[i].empty()) {
        for (auto* v : {&m2[i], &sum[i], &sum_c[i], &asum[i], &asum_c[i]}) v->assign(grads[i].size(), 0.0);
      }
      for (std::size_t p = 0; p < grads[i].size(); ++p) {
        const double x = grads[i][p];
        const double d = x - ls.mean_grad[p];
        ls.mean_grad[p] += d * inv;
        m2[i][p] += d * (x - ls.mean_grad[p]);
        neumaier(sum[i][p], sum_c[i][p], x);
        neumaier(asum[i][p], asum_c[i][p], std::abs(x));
      }
    }
  }
  const double n = static_cast<double>(seen);
  const double denom = static_cast<double>(seen - 1);
  for (std::size_t i = 0; i < stats.layers.size(); ++i)
    for (std::size_t p = 0; p < m2[i].size(); ++p) {
      auto& ls = stats.layers[i];
      ls.mean_grad[p] = (sum[i][p] + sum_c[i][p]) / n;
      ls.mean_abs_grad[p] = (asum[i][p] + asum_c[i][p]) / n;
      ls.var_grad[p] = std::max(0.0, m2[i][p] / denom);
    }
  return stats;
}

/// log of sum over the layer's parameters of E[g] / (sqrt(Var g) + eps);
/// sums at or below eps are clamped to log(eps).
inline double layer_score_term(const LayerGradStats& ls, Numerator num = Numerator::absolute) {
  const auto& numer = num == Numerator::absolute ? ls.mean_abs_grad : ls.mean_grad;
  double inner = 0.0;
  for (std::size_t p = 0; p < numer.size(); ++p) inner += numer[p] / (std::sqrt(ls.var_grad[p]) + kEpsilon);
  return inner > kEpsilon ? std::log(inner) : std::log(kEpsilon);
}

inline double zico_score(const GradientStats& stats, Numerator num = Numerator::absolute) {
  if (stats.layers.empty()) throw ValueError("zico_score: empty graph (no parameterized layers)");
  double s = 0.0;
  for (const auto& ls : stats.layers) s += layer_score_term(ls, num);
  return s;
}

/// log(H * W / sqrt(C)) on the layer's output feature map.
inline double layer_penalty_term(const ParamLayer& l) {
  return std::log(static_cast<double>(l.out_h) * static_cast<double>(l.out_w) /
                  std::sqrt(static_cast<double>(l.out_channels)));
}

inline double depth_width_penalty(const LayerGraph& g) {
  double s = 0.0;
  for (const auto& l : g.layers) s += layer_penalty_term(l);
  return s;
}

struct LayerTerms {
  std::size_t layer = 0;
  double score = 0.0;
  double penalty = 0.0;
};

struct ProxyScore {
  double zico = 0.0;
  double penalty = 0.0;
  double beta = 0.0;
  double zico_bc = 0.0;
  std::vector<LayerTerms> per_layer;
};

/// Bias-corrected score: zico - beta * penalty.
inline ProxyScore zico_bc_score(const GradientStats& stats, const LayerGraph& g, double beta,
                                Numerator num = Numerator::absolute) {
  if (!(beta >= 0.0) || !std::isfinite(beta))
    throw ValueError("beta: must be a finite non-negative number, got " + std::to_string(beta));
  if (stats.layers.size() != g.layers.size())
    throw ShapeError("zico_bc_score: statistics cover " + std::to_string(stats.layers.size()) + " layers, graph has " +
                     std::to_string(g.layers.size()));
  ProxyScore s;
  s.beta = beta;
  s.zico = zico_score(stats, num);
  s.penalty = depth_width_penalty(g);
  s.zico_bc = s.zico - beta * s.penalty;
  for (std::size_t i = 0; i < g.layers.size(); ++i)
    s.per_layer.push_back({g.layers[i].index, layer_score_term(stats.layers[i], num), layer_penalty_term(g.layers[i])});
  return s;
}

inline nlohmann::ordered_json to_json(const ProxyScore& s) {
  nlohmann::ordered_json per = nlohmann::ordered_json::array();
  for (const auto& t : s.per_layer) per.push_back({{"layer", t.layer}, {"score_term", t.score}, {"penalty_term", t.penalty}});
  return {{"zico", s.zico}, {"penalty", s.penalty}, {"beta", s.beta}, {"zico_bc", s.zico_bc}, {"per_layer", per}};
}

/// Everything needed to turn a genome into a ProxyScore reproducibly.
struct ProxyConfig {
  double beta = 1.0;
  std::size_t batches = 8;
  std::size_t batch_size = 8;
  std::uint64_t seed = 0;
  LossKind loss = LossKind::cross_entropy;
  Numerator numerator = Numerator::absolute;
};

inline void validate(const ProxyConfig& c) {
  if (!(c.beta >= 0.0) || !std::isfinite(c.beta))
    throw ValueError("beta: must be a finite non-negative number, got " + std::to_string(c.beta));
  if (c.batches < 2) throw ValueError("batches: need at least 2, got " + std::to_string(c.batches));
  if (c.batch_size < 1) throw ValueError("batch_size: must be positive");
}

inline nlohmann::ordered_json to_json(const ProxyConfig& c) {
  return {{"beta", c.beta},
          {"batches", c.batches},
          {"batch_size", c.batch_size},
          {"seed", c.seed},
          {"loss", to_string(c.loss)},
          {"numerator", to_string(c.numerator)}};
}

/// Compile (weights seeded from cfg.seed), gather statistics over seeded
/// batches, and score.
inline ProxyScore evaluate_genome(const Genome& genome, const ProxyConfig& cfg) {
  validate(cfg);
  const LayerGraph g = compile(genome, derive_seed(cfg.seed, 0));
  const auto batches = make_batches(g, static_cast<std::size_t>(genome.num_classes), cfg.batch_size, cfg.batches,
                                    derive_seed(cfg.seed, 1));
  return zico_bc_score(gather_gradient_stats(g, batches, cfg.loss), g, cfg.beta, cfg.numerator);
}

}  // namespace zico
