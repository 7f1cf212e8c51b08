#ifndef ASSIST_NN_NETWORK_HPP_
#define ASSIST_NN_NETWORK_HPP_

#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "assist/core/error.hpp"
#include "assist/core/rng.hpp"
#include "assist/nn/config.hpp"
#include "assist/nn/layers.hpp"
#include "assist/nn/tensor.hpp"

namespace assist::nn {

enum class Mode { train, eval };

// Class index encoding shared by every module.
inline constexpr int kLabelCC = 0;
inline constexpr int kLabelHCC = 1;

struct BnRef {
  int gamma = -1, beta = -1;     // parameter indices
  int mean = -1, var = -1;       // buffer indices
};

struct ConvRef {
  int weight = -1;
  int stride = 1;
  int pad = 0;
};

// Pre-activation unit: conv(relu(bn(x))).
struct UnitRef {
  BnRef bn;
  ConvRef conv;
};

struct DenseLayerRef {
  std::optional<UnitRef> bottleneck;
  UnitRef conv;
};

struct Plan {
  ConvRef stem;
  std::optional<BnRef> stem_bn;
  PoolSpec stem_pool;
  std::vector<std::vector<DenseLayerRef>> blocks;
  std::vector<UnitRef> transitions;
  BnRef final_bn;
  int fc_weight = -1, fc_bias = -1;
};

struct TensorSlot {
  std::string name;
  Shape shape;
};

struct Layout {
  Plan plan;
  std::vector<TensorSlot> params;
  std::vector<TensorSlot> buffers;
};

inline Layout make_layout(const NetworkConfig& cfg) {
  cfg.validate();
  Layout layout;
  auto param = [&](std::string name, Shape shape) {
    layout.params.push_back({std::move(name), std::move(shape)});
    return static_cast<int>(layout.params.size() - 1);
  };
  auto bn = [&](const std::string& name, int ch) {
    const auto c = static_cast<std::size_t>(ch);
    BnRef r;
    r.gamma = param(name + ".gamma", {c});
    r.beta = param(name + ".beta", {c});
    layout.buffers.push_back({name + ".running_mean", {c}});
    r.mean = static_cast<int>(layout.buffers.size() - 1);
    layout.buffers.push_back({name + ".running_var", {c}});
    r.var = static_cast<int>(layout.buffers.size() - 1);
    return r;
  };
  auto conv = [&](const std::string& name, int in, int out, int k, int stride) {
    ConvRef r;
    r.weight = param(name + ".weight", {std::size_t(out), std::size_t(in), std::size_t(k),
                                         std::size_t(k)});
    r.stride = stride;
    r.pad = k / 2;
    return r;
  };

  Plan& plan = layout.plan;
  plan.stem = conv("stem.conv", cfg.channels, cfg.stem_channels, cfg.stem_kernel, cfg.stem_stride);
  if (cfg.stem_bn_relu) plan.stem_bn = bn("stem.bn", cfg.stem_channels);
  plan.stem_pool = cfg.stem_pool;
  int ch = cfg.stem_channels;
  for (std::size_t b = 0; b < cfg.block_layers.size(); ++b) {
    std::vector<DenseLayerRef> block;
    for (int l = 0; l < cfg.block_layers[b]; ++l) {
      const std::string prefix = "block" + std::to_string(b) + ".layer" + std::to_string(l);
      DenseLayerRef layer;
      int in = ch;
      if (cfg.bottleneck_width > 0) {
        layer.bottleneck = UnitRef{bn(prefix + ".bn1", in),
                                   conv(prefix + ".conv1", in, cfg.bottleneck_width, 1, 1)};
        in = cfg.bottleneck_width;
      }
      layer.conv = UnitRef{bn(prefix + ".bn2", in), conv(prefix + ".conv2", in, cfg.growth_rate, 3, 1)};
      block.push_back(layer);
      ch += cfg.growth_rate;
    }
    plan.blocks.push_back(std::move(block));
    if (b + 1 < cfg.block_layers.size()) {
      const std::string prefix = "transition" + std::to_string(b);
      const int out = cfg.transition_channels(ch);
      plan.transitions.push_back(UnitRef{bn(prefix + ".bn", ch), conv(prefix + ".conv", ch, out, 1, 1)});
      ch = out;
    }
  }
  plan.final_bn = bn("final.bn", ch);
  plan.fc_weight = param("head.weight", {std::size_t(cfg.num_classes), std::size_t(ch)});
  plan.fc_bias = param("head.bias", {std::size_t(cfg.num_classes)});
  return layout;
}

// Network weights. Immutable during inference: forward() takes the model by
// const reference, so concurrent forward passes over one Model are safe.
template <typename S>
struct Model {
  NetworkConfig config;
  Layout layout;
  std::vector<Tensor<S>> params;
  std::vector<Tensor<S>> buffers;  // batch-norm running statistics

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto& p : params) n += p.size();
    return n;
  }

  const Tensor<S>& head_weight() const { return params[layout.plan.fc_weight]; }
  const Tensor<S>& head_bias() const { return params[layout.plan.fc_bias]; }

  template <typename T>
  Model<T> cast() const {
    Model<T> out{config, layout, {}, {}};
    for (const auto& p : params) out.params.push_back(p.template cast<T>());
    for (const auto& b : buffers) out.buffers.push_back(b.template cast<T>());
    return out;
  }
};

namespace detail {

template <typename S>
Model<S> allocate(const NetworkConfig& cfg) {
  Model<S> m{cfg, make_layout(cfg), {}, {}};
  for (const auto& slot : m.layout.params) m.params.emplace_back(slot.shape);
  for (const auto& slot : m.layout.buffers) {
    const bool is_var = slot.name.ends_with(".running_var");
    m.buffers.emplace_back(slot.shape, is_var ? S(1) : S(0));
  }
  return m;
}

inline bool is_bn_gamma(const std::string& name) { return name.ends_with(".gamma"); }

}  // namespace detail

// Fan-in scaled initialization: conv weights ~ N(0, 2/fan_in), head weights
// ~ N(0, 1/fan_in), BN scale 1 and shift 0, head bias 0.
template <typename S>
Model<S> init_model(const NetworkConfig& cfg, std::uint64_t seed) {
  auto m = detail::allocate<S>(cfg);
  for (std::size_t i = 0; i < m.params.size(); ++i) {
    const auto& slot = m.layout.params[i];
    auto& t = m.params[i];
    auto rng = CounterRng::stream(seed, slot.name);
    if (slot.shape.size() == 4) {
      const double fan_in = double(slot.shape[1] * slot.shape[2] * slot.shape[3]);
      const double sd = std::sqrt(2.0 / fan_in);
      for (auto& v : t.values()) v = static_cast<S>(rng.normal(0.0, sd));
    } else if (static_cast<int>(i) == m.layout.plan.fc_weight) {
      const double sd = std::sqrt(1.0 / double(slot.shape[1]));
      for (auto& v : t.values()) v = static_cast<S>(rng.normal(0.0, sd));
    } else if (detail::is_bn_gamma(slot.name)) {
      t.fill(S(1));
    }
  }
  return m;
}

// All parameters zero; running statistics at their identity values.
template <typename S>
Model<S> zero_model(const NetworkConfig& cfg) {
  return detail::allocate<S>(cfg);
}

template <typename S>
struct UnitTape {
  ops::BnCache<S> bn;
  Tensor<S> act;  // relu(bn(x)), the convolution input
};

template <typename S>
struct DenseLayerTape {
  std::optional<UnitTape<S>> bottleneck;
  Tensor<S> bottleneck_out;
  UnitTape<S> conv;
  std::size_t in_channels = 0;
};

// Activations retained by a forward pass for the matching backward pass.
template <typename S>
struct Tape {
  Tensor<S> input;
  Tensor<S> stem_conv_out;
  std::optional<ops::BnCache<S>> stem_bn;
  Tensor<S> stem_act;
  ops::PoolCache stem_pool;
  std::vector<std::vector<DenseLayerTape<S>>> blocks;
  std::vector<UnitTape<S>> transitions;
  std::vector<ops::PoolCache> transition_pools;
  std::vector<Shape> transition_pool_in;
  ops::BnCache<S> final_bn;
  Tensor<S> features;
  Tensor<S> pooled;
  // Batch statistics for every BN layer, in (BnRef, stats) order of execution.
  std::vector<std::pair<BnRef, ops::BnBatchStats>> bn_stats;
};

template <typename S>
struct ForwardOutput {
  Tensor<S> logits;    // (N, 2)
  Tensor<S> features;  // (N, K, h, w): final convolutional map before pooling
};

namespace detail {

template <typename S>
Tensor<S> bn_relu(const Model<S>& m, const BnRef& ref, const Tensor<S>& x, bool training,
                  ops::BnCache<S>* cache, Tape<S>* tape) {
  ops::BnBatchStats stats;
  auto y = ops::bn_forward(x, m.params[ref.gamma], m.params[ref.beta], m.buffers[ref.mean],
                           m.buffers[ref.var], training, m.config.bn_epsilon, cache,
                           tape && training ? &stats : nullptr);
  if (tape && training) tape->bn_stats.emplace_back(ref, std::move(stats));
  ops::relu_inplace(y);
  return y;
}

template <typename S>
Tensor<S> unit_forward(const Model<S>& m, const UnitRef& ref, const Tensor<S>& x, bool training,
                       UnitTape<S>* ut, Tape<S>* tape) {
  auto act = bn_relu(m, ref.bn, x, training, ut ? &ut->bn : nullptr, tape);
  auto y = ops::conv_forward(act, m.params[ref.conv.weight], ref.conv.stride, ref.conv.pad);
  if (ut) ut->act = std::move(act);
  return y;
}

template <typename S>
Tensor<S> unit_backward(const Model<S>& m, const UnitRef& ref, const UnitTape<S>& ut,
                        const Tensor<S>& grad_out, std::vector<Tensor<S>>& grads) {
  auto g_act = ops::conv_backward(ut.act, m.params[ref.conv.weight], grad_out, ref.conv.stride,
                                  ref.conv.pad, grads[ref.conv.weight], true);
  ops::relu_backward_inplace(ut.act, g_act);
  return ops::bn_backward(ut.bn, m.params[ref.bn.gamma], g_act, grads[ref.bn.gamma],
                          grads[ref.bn.beta]);
}

template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  const std::size_t n = a.dim(0), ca = a.dim(1), cb = b.dim(1), plane = a.dim(2) * a.dim(3);
  Tensor<S> out({n, ca + cb, a.dim(2), a.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(a.data() + i * ca * plane, ca * plane, out.data() + i * (ca + cb) * plane);
    std::copy_n(b.data() + i * cb * plane, cb * plane, out.data() + (i * (ca + cb) + ca) * plane);
  }
  return out;
}

template <typename S>
std::pair<Tensor<S>, Tensor<S>> split_channels(const Tensor<S>& g, std::size_t first) {
  const std::size_t n = g.dim(0), c = g.dim(1), plane = g.dim(2) * g.dim(3);
  Tensor<S> a({n, first, g.dim(2), g.dim(3)}), b({n, c - first, g.dim(2), g.dim(3)});
  for (std::size_t i = 0; i < n; ++i) {
    std::copy_n(g.data() + i * c * plane, first * plane, a.data() + i * first * plane);
    std::copy_n(g.data() + (i * c + first) * plane, (c - first) * plane,
                b.data() + i * (c - first) * plane);
  }
  return {std::move(a), std::move(b)};
}

template <typename S>
void add_inplace(Tensor<S>& dst, const Tensor<S>& src) {
  for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += src[i];
}

}  // namespace detail

inline const PoolSpec kTransitionPool{PoolKind::average, 2, 2, 0};

// Runs the network on an (N, 3, input, input) batch. When `tape` is given the
// activations needed by backward() are retained.
template <typename S>
ForwardOutput<S> forward(const Model<S>& m, const Tensor<S>& batch, Mode mode,
                         Tape<S>* tape = nullptr) {
  const auto& cfg = m.config;
  const auto side = static_cast<std::size_t>(cfg.input_size);
  if (batch.rank() != 4 || batch.dim(1) != std::size_t(cfg.channels) || batch.dim(2) != side ||
      batch.dim(3) != side)
    throw PreconditionError("batch shape " + shape_string(batch.shape()) +
                            " does not match network input (N," + std::to_string(cfg.channels) +
                            "," + std::to_string(side) + "," + std::to_string(side) + ")");
  const bool training = mode == Mode::train;
  const Plan& plan = m.layout.plan;
  if (tape) {
    *tape = Tape<S>{};
    tape->input = batch;
  }

  auto x = ops::conv_forward(batch, m.params[plan.stem.weight], plan.stem.stride, plan.stem.pad);
  if (plan.stem_bn) {
    if (tape) tape->stem_conv_out = x;
    ops::BnCache<S> cache;
    x = detail::bn_relu(m, *plan.stem_bn, x, training, tape ? &cache : nullptr, tape);
    if (tape) {
      tape->stem_bn = std::move(cache);
      tape->stem_act = x;
    }
  }
  if (plan.stem_pool.kind != PoolKind::none)
    x = ops::pool_forward(x, plan.stem_pool, tape ? &tape->stem_pool : nullptr);

  for (std::size_t b = 0; b < plan.blocks.size(); ++b) {
    if (tape) tape->blocks.emplace_back();
    for (const auto& layer : plan.blocks[b]) {
      DenseLayerTape<S>* lt = nullptr;
      if (tape) {
        tape->blocks.back().emplace_back();
        lt = &tape->blocks.back().back();
        lt->in_channels = x.dim(1);
      }
      Tensor<S> branch_in;
      if (layer.bottleneck) {
        if (lt) lt->bottleneck.emplace();
        branch_in = detail::unit_forward(m, *layer.bottleneck, x, training,
                                         lt ? &*lt->bottleneck : nullptr, tape);
      }
      const Tensor<S>& in = layer.bottleneck ? branch_in : x;
      auto y = detail::unit_forward(m, layer.conv, in, training, lt ? &lt->conv : nullptr, tape);
      x = detail::concat_channels(x, y);
    }
    if (b < plan.transitions.size()) {
      UnitTape<S>* ut = nullptr;
      if (tape) {
        tape->transitions.emplace_back();
        ut = &tape->transitions.back();
      }
      x = detail::unit_forward(m, plan.transitions[b], x, training, ut, tape);
      if (tape) {
        tape->transition_pools.emplace_back();
        tape->transition_pool_in.push_back(x.shape());
      }
      x = ops::pool_forward(x, kTransitionPool, tape ? &tape->transition_pools.back() : nullptr);
    }
  }

  ops::BnCache<S> final_cache;
  auto features = detail::bn_relu(m, plan.final_bn, x, training, tape ? &final_cache : nullptr, tape);
  auto pooled = ops::global_avg_pool(features);
  auto logits = ops::linear_forward(pooled, m.params[plan.fc_weight], m.params[plan.fc_bias]);
  if (!logits.all_finite() || !features.all_finite())
    throw NumericError("non-finite activation in forward pass");
  if (tape) {
    tape->final_bn = std::move(final_cache);
    tape->features = features;
    tape->pooled = std::move(pooled);
  }
  return {std::move(logits), std::move(features)};
}

// Gradients of the loss wrt every parameter given d(loss)/d(logits).
template <typename S>
std::vector<Tensor<S>> backward(const Model<S>& m, const Tape<S>& tape, const Tensor<S>& grad_logits) {
  const Plan& plan = m.layout.plan;
  std::vector<Tensor<S>> grads;
  grads.reserve(m.params.size());
  for (const auto& p : m.params) grads.emplace_back(p.shape());

  auto g_pooled = ops::linear_backward(tape.pooled, m.params[plan.fc_weight], grad_logits,
                                       grads[plan.fc_weight], grads[plan.fc_bias]);
  auto g = ops::global_avg_pool_backward(tape.features.shape(), g_pooled);
  ops::relu_backward_inplace(tape.features, g);
  g = ops::bn_backward(tape.final_bn, m.params[plan.final_bn.gamma], g, grads[plan.final_bn.gamma],
                       grads[plan.final_bn.beta]);

  for (std::size_t bi = plan.blocks.size(); bi-- > 0;) {
    if (bi < plan.transitions.size()) {
      g = ops::pool_backward(tape.transition_pools[bi], kTransitionPool, g);
      g = detail::unit_backward(m, plan.transitions[bi], tape.transitions[bi], g, grads);
    }
    const auto& block = plan.blocks[bi];
    for (std::size_t li = block.size(); li-- > 0;) {
      const auto& layer = block[li];
      const auto& lt = tape.blocks[bi][li];
      auto [g_x, g_y] = detail::split_channels(g, lt.in_channels);
      auto g_branch = detail::unit_backward(m, layer.conv, lt.conv, g_y, grads);
      if (layer.bottleneck)
        g_branch = detail::unit_backward(m, *layer.bottleneck, *lt.bottleneck, g_branch, grads);
      detail::add_inplace(g_x, g_branch);
      g = std::move(g_x);
    }
  }

  if (plan.stem_pool.kind != PoolKind::none) g = ops::pool_backward(tape.stem_pool, plan.stem_pool, g);
  if (plan.stem_bn) {
    ops::relu_backward_inplace(tape.stem_act, g);
    g = ops::bn_backward(*tape.stem_bn, m.params[plan.stem_bn->gamma], g,
                         grads[plan.stem_bn->gamma], grads[plan.stem_bn->beta]);
  }
  ops::conv_backward(tape.input, m.params[plan.stem.weight], g, plan.stem.stride, plan.stem.pad,
                     grads[plan.stem.weight], false);
  return grads;
}

template <typename S>
struct LossAndGrad {
  double loss = 0.0;
  std::vector<Tensor<S>> grads;
  Tensor<S> logits;
  std::vector<std::pair<BnRef, ops::BnBatchStats>> bn_stats;
};

// Mean softmax cross-entropy over the batch and its parameter gradients.
// Labels: 0 = CC, 1 = HCC.
template <typename S>
LossAndGrad<S> loss_and_grad(const Model<S>& m, const Tensor<S>& batch, std::span<const int> labels,
                             Mode mode = Mode::train) {
  for (int y : labels) require(y == kLabelCC || y == kLabelHCC, "label out of range");
  require(labels.size() == batch.dim(0), "one label per example required");
  Tape<S> tape;
  auto out = forward(m, batch, mode, &tape);
  Tensor<S> g_logits;
  const double loss = ops::cross_entropy(out.logits, labels, &g_logits);
  if (!std::isfinite(loss)) throw NumericError("non-finite loss");
  auto grads = backward(m, tape, g_logits);
  return {loss, std::move(grads), std::move(out.logits), std::move(tape.bn_stats)};
}

// Exponential moving average of BN statistics after a training step
// (unbiased batch variance, as in common frameworks).
template <typename S>
void update_running_stats(Model<S>& m, const std::vector<std::pair<BnRef, ops::BnBatchStats>>& stats) {
  const double mom = m.config.bn_momentum;
  for (const auto& [ref, st] : stats) {
    auto& rm = m.buffers[ref.mean];
    auto& rv = m.buffers[ref.var];
    const double unbias = st.count > 1 ? double(st.count) / double(st.count - 1) : 1.0;
    for (std::size_t c = 0; c < rm.size(); ++c) {
      rm[c] = static_cast<S>((1.0 - mom) * rm[c] + mom * st.mean[c]);
      rv[c] = static_cast<S>((1.0 - mom) * rv[c] + mom * st.var[c] * unbias);
    }
  }
}

}  // namespace assist::nn

#endif  // ASSIST_NN_NETWORK_HPP_
