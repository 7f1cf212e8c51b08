#ifndef ASSIST_NN_CONFIG_HPP_
#define ASSIST_NN_CONFIG_HPP_

#include <algorithm>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/core/error.hpp"

namespace assist::nn {

enum class PoolKind { none, average, max };

NLOHMANN_JSON_SERIALIZE_ENUM(PoolKind, {{PoolKind::none, "none"},
                                        {PoolKind::average, "average"},
                                        {PoolKind::max, "max"}})

struct PoolSpec {
  PoolKind kind = PoolKind::none;
  int kernel = 2;
  int stride = 2;
  int pad = 0;

  bool operator==(const PoolSpec&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE(PoolSpec, kind, kernel, stride, pad)

inline int conv_out_extent(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// Dense-block classifier family: stem convolution, dense blocks separated by
// compression transitions (BN-ReLU-conv1x1-avgpool2), final BN-ReLU whose output
// is the feature map used for class activation maps, then global average pool
// and a linear layer to two logits.
struct NetworkConfig {
  int input_size = 64;
  int channels = 3;
  int stem_channels = 16;
  int stem_kernel = 3;
  int stem_stride = 2;
  bool stem_bn_relu = false;
  PoolSpec stem_pool{PoolKind::average, 2, 2, 0};
  std::vector<int> block_layers{3, 3, 3};
  int growth_rate = 8;
  int bottleneck_width = 0;  // 0 disables the 1x1 bottleneck of DenseNet-BC
  double compression = 0.5;
  int num_classes = 2;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  // Desk-scale default: 64 px patches, pooled stem, 3 blocks x 3 layers, growth 8.
  static NetworkConfig desk() { return {}; }

  // Small network for gradient checks (8x8 input, ~1.3k parameters).
  static NetworkConfig toy() {
    NetworkConfig c;
    c.input_size = 8;
    c.stem_channels = 4;
    c.stem_stride = 1;
    c.stem_pool = {};
    c.block_layers = {2, 2};
    c.growth_rate = 4;
    return c;
  }

  // DenseNet-121 layout at 512 px with a two-class head.
  static NetworkConfig densenet121() {
    NetworkConfig c;
    c.input_size = 512;
    c.stem_channels = 64;
    c.stem_kernel = 7;
    c.stem_stride = 2;
    c.stem_bn_relu = true;
    c.stem_pool = {PoolKind::max, 3, 2, 1};
    c.block_layers = {6, 12, 24, 16};
    c.growth_rate = 32;
    c.bottleneck_width = 128;
    c.compression = 0.5;
    return c;
  }

  int stem_pad() const { return stem_kernel / 2; }

  // Spatial extent of the final feature map.
  int feature_extent() const {
    int s = conv_out_extent(input_size, stem_kernel, stem_stride, stem_pad());
    if (stem_pool.kind != PoolKind::none)
      s = conv_out_extent(s, stem_pool.kernel, stem_pool.stride, stem_pool.pad);
    for (std::size_t b = 0; b + 1 < block_layers.size(); ++b) s = conv_out_extent(s, 2, 2, 0);
    return s;
  }

  int transition_channels(int in) const {
    return std::max(1, static_cast<int>(compression * in));
  }

  int feature_channels() const {
    int ch = stem_channels;
    for (std::size_t b = 0; b < block_layers.size(); ++b) {
      ch += block_layers[b] * growth_rate;
      if (b + 1 < block_layers.size()) ch = transition_channels(ch);
    }
    return ch;
  }

  // Count of convolution + linear layers (the "121" in DenseNet-121).
  int weighted_layer_count() const {
    int n = 1;
    for (std::size_t b = 0; b < block_layers.size(); ++b) {
      n += block_layers[b] * (bottleneck_width > 0 ? 2 : 1);
      if (b + 1 < block_layers.size()) ++n;
    }
    return n + 1;
  }

  void validate() const {
    require(num_classes == 2, "network output dimension must be 2");
    require(channels == 3, "network expects RGB input");
    require(input_size > 0 && stem_channels > 0 && growth_rate > 0, "invalid network sizes");
    require(stem_kernel > 0 && stem_stride > 0, "invalid stem convolution");
    require(!block_layers.empty(), "network needs at least one dense block");
    for (int l : block_layers) require(l > 0, "dense blocks need at least one layer");
    require(compression > 0.0 && compression <= 1.0, "compression must be in (0, 1]");
    require(bottleneck_width >= 0, "bottleneck width must be non-negative");
    require(feature_extent() >= 1, "input too small for this network depth");
  }

  bool operator==(const NetworkConfig&) const = default;
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(NetworkConfig, input_size, channels, stem_channels,
                                                stem_kernel, stem_stride, stem_bn_relu, stem_pool,
                                                block_layers, growth_rate, bottleneck_width,
                                                compression, num_classes, bn_epsilon, bn_momentum)

}  // namespace assist::nn

#endif  // ASSIST_NN_CONFIG_HPP_
