#pragma once

#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "zico/autodiff.hpp"
#include "zico/error.hpp"
#include "zico/genome.hpp"
#include "zico/tensor.hpp"

namespace zico {

enum class LayerKind { conv, dense };

inline const char* to_string(LayerKind k) { return k == LayerKind::conv ? "conv" : "dense"; }

/// One parameterized layer. `out_*` describe the activation the layer
/// produces; dense layers report H = W = 1.
struct ParamLayer {
  std::size_t index = 0;  // 1-based position among parameterized layers
  LayerKind kind = LayerKind::conv;
  Tensor weight;
  std::optional<Tensor> bias;
  std::size_t in_channels = 0;
  std::size_t in_h = 1, in_w = 1;
  std::size_t out_channels = 0;
  std::size_t out_h = 1, out_w = 1;
  std::size_t kernel = 1;
  std::size_t groups = 1;
  std::size_t stride = 1;
  std::size_t padding = 0;

  std::size_t param_count() const { return weight.size() + (bias ? bias->size() : 0); }

  std::uint64_t macs() const {
    if (kind == LayerKind::dense) return static_cast<std::uint64_t>(in_channels) * out_channels;
    return static_cast<std::uint64_t>(out_h) * out_w * out_channels * (in_channels / groups) * kernel * kernel;
  }
};

enum class NodeKind { input, layer, relu, add, pool };

struct GraphNode {
  NodeKind kind = NodeKind::input;
  std::size_t a = 0, b = 0;  // operand node ids
  std::size_t layer = 0;     // position in LayerGraph::layers for NodeKind::layer
  std::size_t c = 0, h = 1, w = 1;
  bool flat = false;  // (N, C) vector rather than an (N, C, H, W) map
};

/// A compiled network: parameterized layers plus the node program that wires
/// them. Nodes are stored in topological order; node 0 is the input.
struct LayerGraph {
  std::vector<ParamLayer> layers;
  std::vector<GraphNode> nodes;
  std::size_t output = 0;
  std::size_t input_channels = 3, input_h = 1, input_w = 1;

  std::size_t depth() const noexcept { return layers.size(); }

  /// Data-flow edges (producer node, consumer node).
  std::vector<std::pair<std::size_t, std::size_t>> edges() const {
    std::vector<std::pair<std::size_t, std::size_t>> out;
    for (std::size_t i = 1; i < nodes.size(); ++i) {
      out.emplace_back(nodes[i].a, i);
      if (nodes[i].kind == NodeKind::add) out.emplace_back(nodes[i].b, i);
    }
    return out;
  }
};

/// Incrementally assembles a LayerGraph with shape inference. Convs use
/// "same" padding (kernel / 2); spatial extents are controlled by stride.
class GraphBuilder {
 public:
  using NodeId = std::size_t;

  GraphBuilder(std::size_t channels, std::size_t height, std::size_t width, std::uint64_t seed) : seed_(seed) {
    if (!channels || !height || !width) throw ShapeError("graph: input extents must be positive");
    g_.input_channels = channels;
    g_.input_h = height;
    g_.input_w = width;
    g_.nodes.push_back({NodeKind::input, 0, 0, 0, channels, height, width});
  }

  NodeId input() const noexcept { return 0; }
  const GraphNode& node(NodeId id) const { return g_.nodes.at(id); }

  NodeId conv(NodeId x, std::size_t out_channels, std::size_t kernel, std::size_t stride = 1, std::size_t groups = 1) {
    const GraphNode in = node(x);
    if (in.flat) throw ShapeError("conv: input is a flat (N, C) vector");
    if (!out_channels || !kernel || !stride || !groups) throw ShapeError("conv: extents must be positive");
    if (in.c % groups || out_channels % groups)
      throw ShapeError("conv: channels (in " + std::to_string(in.c) + ", out " + std::to_string(out_channels) +
                       ") not divisible by groups " + std::to_string(groups));
    const std::size_t pad = kernel / 2;
    const std::size_t ho = conv_out_extent(in.h, kernel, stride, pad);
    const std::size_t wo = conv_out_extent(in.w, kernel, stride, pad);
    if (!ho || !wo) throw ShapeError("conv: resolution underflow at " + std::to_string(in.h) + "x" + std::to_string(in.w));

    ParamLayer l;
    l.index = g_.layers.size() + 1;
    l.kind = LayerKind::conv;
    const std::size_t fan_in = in.c / groups * kernel * kernel;
    l.weight = seeded_fill({out_channels, in.c / groups, kernel, kernel}, init::KaimingNormal{fan_in},
                           derive_seed(seed_, l.index));
    l.in_channels = in.c;
    l.in_h = in.h;
    l.in_w = in.w;
    l.out_channels = out_channels;
    l.out_h = ho;
    l.out_w = wo;
    l.kernel = kernel;
    l.groups = groups;
    l.stride = stride;
    l.padding = pad;
    return push_layer(std::move(l), x);
  }

  NodeId dense(NodeId x, std::size_t out_features, bool with_bias = true) {
    const GraphNode in = node(x);
    if (!in.flat)
      throw ShapeError("dense: input must be a flat vector, got a " + std::to_string(in.h) + "x" +
                       std::to_string(in.w) + " feature map");
    if (!out_features) throw ShapeError("dense: out_features must be positive");
    ParamLayer l;
    l.index = g_.layers.size() + 1;
    l.kind = LayerKind::dense;
    l.weight = seeded_fill({out_features, in.c}, init::KaimingNormal{in.c}, derive_seed(seed_, l.index));
    if (with_bias) l.bias = Tensor({out_features});
    l.in_channels = in.c;
    l.out_channels = out_features;
    return push_layer(std::move(l), x);
  }

  NodeId relu(NodeId x) {
    GraphNode n = node(x);
    n.kind = NodeKind::relu;
    n.a = x;
    return push(n);
  }

  NodeId add(NodeId x, NodeId y) {
    const GraphNode& a = node(x);
    const GraphNode& b = node(y);
    if (a.c != b.c || a.h != b.h || a.w != b.w || a.flat != b.flat)
      throw ShapeError("residual_add: operand shapes differ, (" + std::to_string(a.c) + "," + std::to_string(a.h) +
                       "," + std::to_string(a.w) + ") vs (" + std::to_string(b.c) + "," + std::to_string(b.h) + "," +
                       std::to_string(b.w) + ")");
    GraphNode n = a;
    n.kind = NodeKind::add;
    n.a = x;
    n.b = y;
    return push(n);
  }

  NodeId pool(NodeId x) {
    GraphNode n = node(x);
    if (n.flat) throw ShapeError("global_avg_pool: input already pooled");
    n.kind = NodeKind::pool;
    n.a = x;
    n.h = n.w = 1;
    n.flat = true;
    return push(n);
  }

  LayerGraph finish(NodeId output) && {
    node(output);
    g_.output = output;
    return std::move(g_);
  }

 private:
  NodeId push(GraphNode n) {
    g_.nodes.push_back(n);
    return g_.nodes.size() - 1;
  }

  NodeId push_layer(ParamLayer l, NodeId x) {
    GraphNode n{NodeKind::layer, x, 0, g_.layers.size(), l.out_channels, l.out_h, l.out_w,
                l.kind == LayerKind::dense};
    g_.layers.push_back(std::move(l));
    return push(n);
  }

  std::uint64_t seed_;
  LayerGraph g_;
};

inline constexpr std::size_t kInputChannels = 3;
inline constexpr std::size_t kStemKernel = 3;

/// Parameterized layers added by one non-transition block of each family.
inline constexpr std::size_t layers_per_block(Family f) { return f == Family::effnet_like ? 3 : 2; }

namespace detail {

// Groups for a conv mapping `in_c` -> `out_c` inside a stage of width
// `stage_c`. Transition convs whose input width differs use the largest
// group count dividing both sides.
inline std::size_t block_groups(Family family, ConvMode mode, int stage_c, std::size_t in_c, std::size_t out_c) {
  const auto g = static_cast<std::size_t>(conv_groups(family, mode, stage_c, static_cast<int>(out_c)));
  return std::gcd(std::gcd(g, in_c), out_c);
}

}  // namespace detail

/// Compile a genome into a LayerGraph. Weights are Kaiming-normal, seeded per
/// layer from `seed`; conv layers carry no bias, the dense head does.
///
/// resnet_like block: k x k conv (stride s) -> relu -> k x k conv, plus a skip
/// (identity, or a strided 1x1 projection when shape changes), then relu.
/// effnet_like block: 1x1 expand (x expansion) -> relu -> k x k grouped conv
/// (stride s) -> relu -> 1x1 project; identity skip when stride is 1 and the
/// width is unchanged.
inline LayerGraph compile(const Genome& genome, std::uint64_t seed) {
  validate(genome);
  GraphBuilder b(kInputChannels, static_cast<std::size_t>(genome.input_height),
                 static_cast<std::size_t>(genome.input_width), seed);
  auto x = b.relu(b.conv(b.input(), static_cast<std::size_t>(genome.stem_channels), kStemKernel));

  for (const auto& st : genome.stages) {
    const auto c = static_cast<std::size_t>(st.channels);
    const auto k = static_cast<std::size_t>(st.kernel);
    for (int r = 0; r < st.repeats; ++r) {
      const std::size_t stride = r == 0 ? static_cast<std::size_t>(st.stride) : 1;
      const std::size_t in_c = b.node(x).c;
      if (genome.family == Family::resnet_like) {
        auto h = b.conv(x, c, k, stride, detail::block_groups(genome.family, st.conv_mode, st.channels, in_c, c));
        h = b.relu(h);
        h = b.conv(h, c, k, 1, detail::block_groups(genome.family, st.conv_mode, st.channels, c, c));
        auto skip = (stride == 1 && in_c == c) ? x : b.conv(x, c, 1, stride, 1);
        x = b.relu(b.add(h, skip));
      } else {
        const std::size_t mid = c * static_cast<std::size_t>(st.expansion);
        auto h = b.relu(b.conv(x, mid, 1, 1, 1));
        h = b.relu(b.conv(h, mid, k, stride, detail::block_groups(genome.family, st.conv_mode, st.channels, mid, mid)));
        h = b.conv(h, c, 1, 1, 1);
        x = (stride == 1 && in_c == c) ? b.add(h, x) : h;
      }
    }
  }
  auto logits = b.dense(b.pool(x), static_cast<std::size_t>(genome.num_classes));
  return std::move(b).finish(logits);
}

inline std::uint64_t count_params(const LayerGraph& g) {
  std::uint64_t n = 0;
  for (const auto& l : g.layers) n += l.param_count();
  return n;
}

/// Per-sample multiply-accumulates.
inline std::uint64_t count_macs(const LayerGraph& g) {
  std::uint64_t n = 0;
  for (const auto& l : g.layers) n += l.macs();
  return n;
}

/// Hash of every parameter tensor, in layer order.
inline std::uint64_t weights_hash(const LayerGraph& g) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& l : g.layers) {
    h = hash_values(l.weight.data(), h);
    if (l.bias) h = hash_values(l.bias->data(), h);
  }
  return h;
}

/// Tape handles produced by one forward pass.
struct ForwardPass {
  VarId output = 0;
  std::vector<VarId> node_values;
  // Per layer: positions of its weight (and bias) in the tape's parameter order.
  std::vector<std::pair<std::size_t, std::optional<std::size_t>>> param_slots;
};

/// Run the graph on `images` (N, C, H, W), recording onto `tape`.
inline ForwardPass forward(const LayerGraph& g, Tape& tape, const Tensor& images) {
  if (images.rank() != 4 || images.dim(1) != g.input_channels || images.dim(2) != g.input_h ||
      images.dim(3) != g.input_w)
    throw ShapeError("forward: batch shape " + to_string(images.shape()) + " does not match graph input (N," +
                     std::to_string(g.input_channels) + "," + std::to_string(g.input_h) + "," +
                     std::to_string(g.input_w) + ")");
  ForwardPass fp;
  std::vector<std::pair<VarId, std::optional<VarId>>> params;
  for (const auto& l : g.layers) {
    const std::size_t w_slot = tape.parameters().size();
    const VarId w = tape.parameter(l.weight);
    std::optional<VarId> bv;
    std::optional<std::size_t> b_slot;
    if (l.bias) {
      b_slot = tape.parameters().size();
      bv = tape.parameter(*l.bias);
    }
    params.emplace_back(w, bv);
    fp.param_slots.emplace_back(w_slot, b_slot);
  }

  fp.node_values.resize(g.nodes.size());
  fp.node_values[0] = tape.constant(images);
  for (std::size_t i = 1; i < g.nodes.size(); ++i) {
    const auto& n = g.nodes[i];
    const VarId a = fp.node_values[n.a];
    switch (n.kind) {
      case NodeKind::layer: {
        const auto& l = g.layers[n.layer];
        const auto& [w, bias] = params[n.layer];
        fp.node_values[i] = l.kind == LayerKind::conv ? tape.conv2d(a, w, {l.stride, l.padding, l.groups})
                                                      : tape.dense(a, w, bias);
        break;
      }
      case NodeKind::relu: fp.node_values[i] = tape.relu(a); break;
      case NodeKind::add: fp.node_values[i] = tape.residual_add(a, fp.node_values[n.b]); break;
      case NodeKind::pool: fp.node_values[i] = tape.global_avg_pool(a); break;
      case NodeKind::input: throw Error("forward: input node out of place");
    }
  }
  fp.output = fp.node_values[g.output];
  return fp;
}

}  // namespace zico
