#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "zico/error.hpp"

namespace zico {

enum class Family { effnet_like, resnet_like };
enum class ConvMode { regular, group, depthwise };

inline const char* to_string(Family f) { return f == Family::effnet_like ? "effnet_like" : "resnet_like"; }

inline const char* to_string(ConvMode m) {
  switch (m) {
    case ConvMode::regular: return "regular";
    case ConvMode::group: return "group";
    case ConvMode::depthwise: return "depthwise";
  }
  return "?";
}

inline Family parse_family(const std::string& s) {
  if (s == "effnet_like") return Family::effnet_like;
  if (s == "resnet_like") return Family::resnet_like;
  throw ValueError("family: unknown value '" + s + "' (expected effnet_like or resnet_like)");
}

inline ConvMode parse_conv_mode(const std::string& s) {
  if (s == "regular") return ConvMode::regular;
  if (s == "group") return ConvMode::group;
  if (s == "depthwise") return ConvMode::depthwise;
  throw ValueError("conv_mode: unknown value '" + s + "' (expected regular, group or depthwise)");
}

inline constexpr std::array<int, 2> kKernelChoices{3, 5};
inline constexpr std::array<int, 4> kExpansionChoices{1, 2, 4, 6};
inline constexpr int kDefaultExpansion = 4;
inline constexpr int kChannelQuantum = 8;
inline constexpr int kMaxStages = 8;
inline constexpr int kMaxRepeats = 12;

struct StageGene {
  int repeats = 1;
  int channels = 32;
  int kernel = 3;
  ConvMode conv_mode = ConvMode::regular;
  int stride = 1;
  int expansion = kDefaultExpansion;  // effnet_like only

  bool operator==(const StageGene&) const = default;
};

struct Genome {
  Family family = Family::resnet_like;
  std::vector<StageGene> stages;
  int stem_channels = 32;
  int num_classes = 10;
  int input_height = 32;
  int input_width = 32;

  bool operator==(const Genome&) const = default;
};

/// Channels per group for grouped convolution. resnet_like picks the largest
/// of {128, 64, 32} that divides the stage width; effnet_like is fixed at 32.
/// Returns 0 when no legal group size exists.
inline int group_size(Family family, int channels) {
  if (family == Family::effnet_like) return channels % 32 == 0 ? 32 : 0;
  for (int g : {128, 64, 32})
    if (channels % g == 0) return g;
  return 0;
}

/// Number of conv groups for a layer of `width` channels in a stage.
inline int conv_groups(Family family, ConvMode mode, int stage_channels, int width) {
  switch (mode) {
    case ConvMode::regular: return 1;
    case ConvMode::depthwise: return width;
    case ConvMode::group: {
      const int g = group_size(family, stage_channels);
      return g ? width / g : 0;
    }
  }
  return 1;
}

/// Throws ValueError naming the first violated field.
inline void validate(const Genome& g) {
  auto fail = [](const std::string& field, const std::string& msg) { throw ValueError(field + ": " + msg); };
  if (g.stages.empty() || g.stages.size() > kMaxStages)
    fail("stages", "expected 1.." + std::to_string(kMaxStages) + " stages, got " + std::to_string(g.stages.size()));
  if (g.stem_channels < 1) fail("stem_channels", "must be positive");
  if (g.num_classes < 1) fail("num_classes", "must be positive");
  if (g.input_height < 1 || g.input_width < 1) fail("input_resolution", "extents must be positive");
  int stride_product = 1;
  for (std::size_t i = 0; i < g.stages.size(); ++i) {
    const auto& s = g.stages[i];
    const std::string at = "stages[" + std::to_string(i) + "].";
    if (s.repeats < 1 || s.repeats > kMaxRepeats)
      fail(at + "repeats", "must be in [1, " + std::to_string(kMaxRepeats) + "], got " + std::to_string(s.repeats));
    if (s.channels < kChannelQuantum || s.channels % kChannelQuantum != 0)
      fail(at + "channels", "must be a positive multiple of 8, got " + std::to_string(s.channels));
    if (std::find(kKernelChoices.begin(), kKernelChoices.end(), s.kernel) == kKernelChoices.end())
      fail(at + "kernel", "must be 3 or 5, got " + std::to_string(s.kernel));
    if (s.stride != 1 && s.stride != 2) fail(at + "stride", "must be 1 or 2, got " + std::to_string(s.stride));
    if (std::find(kExpansionChoices.begin(), kExpansionChoices.end(), s.expansion) == kExpansionChoices.end())
      fail(at + "expansion", "must be one of 1, 2, 4, 6, got " + std::to_string(s.expansion));
    if (g.family == Family::resnet_like && s.expansion != kDefaultExpansion)
      fail(at + "expansion", "only meaningful for effnet_like");
    if (s.conv_mode == ConvMode::group && group_size(g.family, s.channels) == 0)
      fail(at + "conv_mode", "group convolution needs a group size of 32/64/128 dividing channels " +
                                 std::to_string(s.channels));
    stride_product *= s.stride;
  }
  if (stride_product > g.input_height || stride_product > g.input_width)
    fail("input_resolution", "resolution underflow: " + std::to_string(g.input_height) + "x" +
                                 std::to_string(g.input_width) + " cannot be downsampled by total stride " +
                                 std::to_string(stride_product));
  if (g.input_height % stride_product != 0 || g.input_width % stride_product != 0)
    fail("input_resolution", std::to_string(g.input_height) + "x" + std::to_string(g.input_width) +
                                 " not divisible by total stride " + std::to_string(stride_product));
}

inline bool is_valid(const Genome& g) {
  try {
    validate(g);
    return true;
  } catch (const ValueError&) {
    return false;
  }
}

/// Total number of blocks across all stages.
inline int total_blocks(const Genome& g) {
  int d = 0;
  for (const auto& s : g.stages) d += s.repeats;
  return d;
}

/// Block-weighted mean stage width.
inline double mean_width(const Genome& g) {
  double w = 0.0;
  for (const auto& s : g.stages) w += static_cast<double>(s.repeats) * s.channels;
  const int d = total_blocks(g);
  return d ? w / d : 0.0;
}

// ---------------------------------------------------------------------------
// JSON. Keys are emitted sorted so that parse -> emit is byte-stable.

inline nlohmann::json to_json(const Genome& g) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : g.stages) {
    nlohmann::json js{{"repeats", s.repeats},
                      {"channels", s.channels},
                      {"kernel", s.kernel},
                      {"conv_mode", to_string(s.conv_mode)},
                      {"stride", s.stride}};
    if (g.family == Family::effnet_like) js["expansion"] = s.expansion;
    stages.push_back(std::move(js));
  }
  return {{"family", to_string(g.family)},
          {"stages", std::move(stages)},
          {"stem_channels", g.stem_channels},
          {"num_classes", g.num_classes},
          {"input_resolution", {g.input_height, g.input_width}}};
}

inline Genome genome_from_json(const nlohmann::json& j) {
  auto need = [](const nlohmann::json& obj, const char* key, const std::string& where) -> const nlohmann::json& {
    if (!obj.is_object() || !obj.contains(key)) throw ParseError(where + key + ": missing field");
    return obj.at(key);
  };
  auto integer = [&](const nlohmann::json& obj, const char* key, const std::string& where) {
    const auto& v = need(obj, key, where);
    if (!v.is_number_integer()) throw ParseError(where + key + ": expected integer");
    return v.get<int>();
  };
  auto reject_unknown = [](const nlohmann::json& obj, std::initializer_list<const char*> allowed,
                           const std::string& where) {
    for (const auto& [k, _] : obj.items())
      if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return k == a; }))
        throw ParseError(where + k + ": unknown field");
  };

  if (!j.is_object()) throw ParseError("genome: expected a JSON object");
  reject_unknown(j, {"family", "stages", "stem_channels", "num_classes", "input_resolution"}, "");
  Genome g;
  const auto& fam = need(j, "family", "");
  if (!fam.is_string()) throw ParseError("family: expected string");
  try {
    g.family = parse_family(fam.get<std::string>());
  } catch (const ValueError& e) {
    throw ParseError(e.what());
  }
  g.stem_channels = integer(j, "stem_channels", "");
  g.num_classes = integer(j, "num_classes", "");
  const auto& res = need(j, "input_resolution", "");
  if (!res.is_array() || res.size() != 2 || !res[0].is_number_integer() || !res[1].is_number_integer())
    throw ParseError("input_resolution: expected [H, W] integers");
  g.input_height = res[0].get<int>();
  g.input_width = res[1].get<int>();
  const auto& stages = need(j, "stages", "");
  if (!stages.is_array()) throw ParseError("stages: expected array");
  for (std::size_t i = 0; i < stages.size(); ++i) {
    const std::string at = "stages[" + std::to_string(i) + "].";
    const auto& js = stages[i];
    if (!js.is_object()) throw ParseError("stages[" + std::to_string(i) + "]: expected object");
    reject_unknown(js, {"repeats", "channels", "kernel", "conv_mode", "stride", "expansion"}, at);
    StageGene s;
    s.repeats = integer(js, "repeats", at);
    s.channels = integer(js, "channels", at);
    s.kernel = integer(js, "kernel", at);
    s.stride = integer(js, "stride", at);
    const auto& mode = need(js, "conv_mode", at);
    if (!mode.is_string()) throw ParseError(at + "conv_mode: expected string");
    try {
      s.conv_mode = parse_conv_mode(mode.get<std::string>());
    } catch (const ValueError& e) {
      throw ParseError(at + e.what());
    }
    if (js.contains("expansion")) s.expansion = integer(js, "expansion", at);
    g.stages.push_back(s);
  }
  return g;
}

inline std::string serialize(const Genome& g) { return to_json(g).dump(); }

inline Genome parse_genome(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("genome: ") + e.what());
  }
  return genome_from_json(j);
}

// ---------------------------------------------------------------------------
// Variation operators.

/// Legal ranges for searchable genes.
struct SpaceBounds {
  int min_repeats = 1;
  int max_repeats = kMaxRepeats;
  int min_channels = 16;
  int max_channels = 256;
  int channel_step = kChannelQuantum;
  std::vector<int> kernels{3, 5};
  bool allow_group = true;
  bool allow_depthwise = false;
  std::vector<int> expansions{kDefaultExpansion};
};

/// Per-gene mutation probabilities, applied independently per stage.
struct MutationRates {
  double repeats = 0.0;
  double channels = 0.0;
  double kernel = 0.0;
  double conv_mode = 0.0;
  double expansion = 0.0;

  static MutationRates uniform(double r) { return {r, r, r, r, r}; }
};

struct MutationConfig {
  MutationRates rates;
  SpaceBounds bounds;
};

namespace detail {

inline int snap(int v, int step, int lo, int hi) {
  const int q = static_cast<int>(std::lround(static_cast<double>(v) / step)) * step;
  return std::clamp(q, lo, hi);
}

template <class T, class Rng>
T pick(const std::vector<T>& choices, Rng& rng) {
  std::uniform_int_distribution<std::size_t> d(0, choices.size() - 1);
  return choices[d(rng)];
}

inline void check_bounds(const SpaceBounds& b) {
  if (b.min_repeats < 1 || b.max_repeats > kMaxRepeats || b.min_repeats > b.max_repeats)
    throw ValueError("bounds: repeats range must lie in [1, 12] and be non-empty");
  if (b.channel_step < kChannelQuantum || b.channel_step % kChannelQuantum != 0)
    throw ValueError("bounds: channel_step must be a positive multiple of 8");
  if (b.min_channels < kChannelQuantum || b.min_channels > b.max_channels || b.min_channels % kChannelQuantum ||
      b.max_channels % kChannelQuantum)
    throw ValueError("bounds: channel range must be non-empty multiples of 8");
  if (b.kernels.empty()) throw ValueError("bounds: at least one kernel size required");
  for (int k : b.kernels)
    if (k != 3 && k != 5) throw ValueError("bounds: kernels must be 3 or 5");
  if (b.expansions.empty()) throw ValueError("bounds: at least one expansion ratio required");
  for (int e : b.expansions)
    if (std::find(kExpansionChoices.begin(), kExpansionChoices.end(), e) == kExpansionChoices.end())
      throw ValueError("bounds: expansions must be drawn from 1, 2, 4, 6");
}

}  // namespace detail

/// Snap channels onto the bounded grid and the conv mode onto a legal group
/// size. The result satisfies every Genome invariant the input's strides allow.
inline void repair(Genome& g, const SpaceBounds& b) {
  for (auto& s : g.stages) {
    s.repeats = std::clamp(s.repeats, b.min_repeats, b.max_repeats);
    s.channels = detail::snap(s.channels, b.channel_step, b.min_channels, b.max_channels);
    if (g.family == Family::resnet_like) s.expansion = kDefaultExpansion;
    if (s.conv_mode == ConvMode::depthwise && !b.allow_depthwise) s.conv_mode = ConvMode::regular;
    if (s.conv_mode == ConvMode::group && group_size(g.family, s.channels) == 0) {
      const int up = (s.channels + 31) / 32 * 32;
      const int down = s.channels / 32 * 32;
      if (up <= b.max_channels)
        s.channels = up;
      else if (down >= b.min_channels && down >= 32)
        s.channels = down;
      else
        s.conv_mode = ConvMode::regular;
    }
  }
}

template <class Rng>
Genome mutate(const Genome& parent, const MutationConfig& cfg, Rng& rng) {
  Genome g = parent;
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::uniform_int_distribution<int> delta(0, 3);
  bool touched = false;
  for (auto& s : g.stages) {
    if (u(rng) < cfg.rates.repeats) {
      std::uniform_int_distribution<int> d(cfg.bounds.min_repeats, cfg.bounds.max_repeats);
      s.repeats = d(rng);
      touched = true;
    }
    if (u(rng) < cfg.rates.channels) {
      static constexpr std::array<int, 4> steps{-2, -1, 1, 2};
      s.channels += steps[static_cast<std::size_t>(delta(rng))] * cfg.bounds.channel_step;
      touched = true;
    }
    if (u(rng) < cfg.rates.kernel) {
      s.kernel = detail::pick(cfg.bounds.kernels, rng);
      touched = true;
    }
    if (u(rng) < cfg.rates.conv_mode) {
      std::vector<ConvMode> modes{ConvMode::regular};
      if (cfg.bounds.allow_group) modes.push_back(ConvMode::group);
      if (cfg.bounds.allow_depthwise) modes.push_back(ConvMode::depthwise);
      s.conv_mode = detail::pick(modes, rng);
      touched = true;
    }
    if (g.family == Family::effnet_like && u(rng) < cfg.rates.expansion) {
      s.expansion = detail::pick(cfg.bounds.expansions, rng);
      touched = true;
    }
  }
  if (touched) repair(g, cfg.bounds);
  return g;
}

inline Genome mutate(const Genome& parent, const MutationConfig& cfg, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return mutate(parent, cfg, rng);
}

/// Uniform stage-wise crossover. Strides, stem, head and resolution come from
/// `a`, so the child inherits `a`'s stride/resolution compatibility.
template <class Rng>
Genome crossover(const Genome& a, const Genome& b, Rng& rng) {
  if (a.family != b.family || a.stages.size() != b.stages.size())
    throw ValueError("crossover: incompatible parents (" + std::string(to_string(a.family)) + "/" +
                     std::to_string(a.stages.size()) + " stages vs " + to_string(b.family) + "/" +
                     std::to_string(b.stages.size()) + " stages)");
  Genome child = a;
  std::bernoulli_distribution coin(0.5);
  for (std::size_t i = 0; i < child.stages.size(); ++i) {
    if (!coin(rng)) continue;
    const int stride = child.stages[i].stride;
    child.stages[i] = b.stages[i];
    child.stages[i].stride = stride;
  }
  return child;
}

inline Genome crossover(const Genome& a, const Genome& b, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return crossover(a, b, rng);
}

/// Search space over genomes sharing a template's family, stage count,
/// strides, stem, head and input resolution.
class GenomeSpace {
 public:
  using genome_type = Genome;

  GenomeSpace(Genome base, SpaceBounds bounds) : base_(std::move(base)), bounds_(std::move(bounds)) {
    detail::check_bounds(bounds_);
    validate(base_);
  }

  const Genome& base() const noexcept { return base_; }
  const SpaceBounds& bounds() const noexcept { return bounds_; }

  template <class Rng>
  Genome sample(Rng& rng) const {
    Genome g = base_;
    std::uniform_int_distribution<int> rep(bounds_.min_repeats, bounds_.max_repeats);
    std::uniform_int_distribution<int> ch(0, (bounds_.max_channels - bounds_.min_channels) / bounds_.channel_step);
    std::vector<ConvMode> modes{ConvMode::regular};
    if (bounds_.allow_group) modes.push_back(ConvMode::group);
    if (bounds_.allow_depthwise) modes.push_back(ConvMode::depthwise);
    for (auto& s : g.stages) {
      s.repeats = rep(rng);
      s.channels = bounds_.min_channels + ch(rng) * bounds_.channel_step;
      s.kernel = detail::pick(bounds_.kernels, rng);
      s.conv_mode = detail::pick(modes, rng);
      s.expansion = g.family == Family::effnet_like ? detail::pick(bounds_.expansions, rng) : kDefaultExpansion;
    }
    repair(g, bounds_);
    return g;
  }

  template <class Rng>
  Genome mutate(const Genome& g, double rate, Rng& rng) const {
    return zico::mutate(g, MutationConfig{MutationRates::uniform(rate), bounds_}, rng);
  }

  template <class Rng>
  Genome crossover(const Genome& a, const Genome& b, Rng& rng) const {
    return zico::crossover(a, b, rng);
  }

  std::string key(const Genome& g) const { return serialize(g); }

 private:
  Genome base_;
  SpaceBounds bounds_;
};

}  // namespace zico
