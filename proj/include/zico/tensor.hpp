#pragma once

#include <cmath>
#include <cstdint>
#include <cstring>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <variant>
#include <vector>

#include "zico/error.hpp"

namespace zico {

using Shape = std::vector<std::size_t>;

inline std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << ']';
  return os.str();
}

inline std::size_t numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>{});
}

/// Dense row-major tensor of doubles. Activations use (N, C, H, W); conv
/// weights use (Cout, Cin/groups, Kh, Kw).
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_extents();
    data_.assign(numel(shape_), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    check_extents();
    if (numel(shape_) != data_.size())
      throw ShapeError("tensor: shape " + to_string(shape_) + " holds " + std::to_string(numel(shape_)) +
                       " elements but data has " + std::to_string(data_.size()));
  }

  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty(); }

  std::span<const double> data() const noexcept { return data_; }
  std::span<double> data() noexcept { return data_; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator[](std::size_t i) { return data_[i]; }

  // 4-D accessors, (n, c, h, w).
  double at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) const {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }
  double& at(std::size_t n, std::size_t c, std::size_t h, std::size_t w) {
    return data_[((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w];
  }

  bool operator==(const Tensor&) const = default;

 private:
  void check_extents() const {
    if (shape_.empty()) throw ShapeError("tensor: shape must have at least one extent");
    for (auto e : shape_)
      if (e == 0) throw ShapeError("tensor: non-positive extent in shape " + to_string(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

/// Mixes a base seed with a stream id so that independent consumers
/// (per-layer weights, per-batch inputs) draw from decorrelated generators.
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) noexcept {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

/// FNV-1a over the raw bytes of a double sequence. Used for weight hashes
/// and input digests.
inline std::uint64_t fnv1a64(std::span<const unsigned char> bytes,
                             std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  for (auto b : bytes) {
    h ^= b;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t hash_values(std::span<const double> values, std::uint64_t h = 0xcbf29ce484222325ULL) noexcept {
  return fnv1a64({reinterpret_cast<const unsigned char*>(values.data()), values.size_bytes()}, h);
}

namespace init {

struct Gaussian {
  double mean = 0.0;
  double std = 1.0;
};

/// Normal(0, sqrt(2 / fan_in)).
struct KaimingNormal {
  std::size_t fan_in = 1;
};

/// Integers drawn uniformly from the half-open range [lo, hi).
struct UniformInt {
  std::int64_t lo = 0;
  std::int64_t hi = 1;
};

}  // namespace init

using Distribution = std::variant<init::Gaussian, init::KaimingNormal, init::UniformInt>;

/// Deterministic tensor fill: identical (shape, distribution, seed) yields a
/// bit-identical tensor.
inline Tensor seeded_fill(const Shape& shape, const Distribution& dist, std::uint64_t seed) {
  Tensor t(shape);
  std::mt19937_64 rng(seed);
  std::visit(
      [&](const auto& d) {
        using D = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<D, init::Gaussian>) {
          if (!(d.std > 0.0) || !std::isfinite(d.mean))
            throw ValueError("seeded_fill: gaussian requires finite mean and std > 0");
          std::normal_distribution<double> nd(d.mean, d.std);
          for (auto& v : t.data()) v = nd(rng);
        } else if constexpr (std::is_same_v<D, init::KaimingNormal>) {
          if (d.fan_in == 0) throw ValueError("seeded_fill: kaiming_normal requires fan_in > 0");
          std::normal_distribution<double> nd(0.0, std::sqrt(2.0 / static_cast<double>(d.fan_in)));
          for (auto& v : t.data()) v = nd(rng);
        } else {
          if (d.lo >= d.hi) throw ValueError("seeded_fill: uniform_int requires lo < hi");
          std::uniform_int_distribution<std::int64_t> ud(d.lo, d.hi - 1);
          for (auto& v : t.data()) v = static_cast<double>(ud(rng));
        }
      },
      dist);
  return t;
}

}  // namespace zico
