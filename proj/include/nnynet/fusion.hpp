#pragma once
// Injection of the tabular feature vector into the bottleneck feature map.
// All modes map [C, d, h, w] to [C, d, h, w].

#include <string>

#include "nnynet/nn.hpp"

namespace nnynet::fusion {

enum class FusionMode { none, add, concat, cross_attention };

FusionMode parse_mode(const std::string& s);
std::string to_string(FusionMode m);

struct FusionConfig {
  FusionMode mode = FusionMode::cross_attention;
  std::size_t heads = 4;           // cross-attention only
  double gate_init = 0.0;          // cross-attention residual gate
  std::size_t concat_channels = 0;  // 0 -> same as the bottleneck

  void validate(std::size_t bottleneck_channels) const;
};

template <typename T>
struct FusionWeights {
  FusionMode mode = FusionMode::none;
  nn::LinearWeights<T> tab_proj;  // add/concat: F -> C (or C_t); cross-attention: query F -> C
  Var<T> concat_proj;             // [C, C + C_t, 1, 1, 1]
  Var<T> concat_proj_bias;
  nn::LinearWeights<T> key, value, out;
  Var<T> gate;  // [1]
  std::size_t heads = 1;
};

template <typename T>
FusionWeights<T> make_fusion_weights(nn::ParameterStore<T>& store, const FusionConfig& cfg, std::size_t channels,
                                     std::size_t tab_features, const std::string& prefix = "fusion");

// fmap + broadcast(linear(tab))
template <typename T>
Var<T> fuse_add(const Var<T>& fmap, const Var<T>& tab, const FusionWeights<T>& w);

// proj1x1(concat(fmap, broadcast(linear(tab))))
template <typename T>
Var<T> fuse_concat(const Var<T>& fmap, const Var<T>& tab, const FusionWeights<T>& w);

// fmap + gate * broadcast(a), where a is the multi-head attention readout of
// the spatial tokens (keys/values) by a single query projected from tab.
// `weights_out` receives the attention weights [heads, 1, d*h*w].
template <typename T>
Var<T> fuse_cross_attention(const Var<T>& fmap, const Var<T>& tab, const FusionWeights<T>& w,
                            Tensor<T>* weights_out = nullptr);

// The attended vector a (dim C) before gating and broadcast.
template <typename T>
Var<T> cross_attention_readout(const Var<T>& fmap, const Var<T>& tab, const FusionWeights<T>& w,
                               Tensor<T>* weights_out = nullptr);

// Dispatch on w.mode; mode none returns fmap itself.
template <typename T>
Var<T> fuse(const Var<T>& fmap, const Var<T>& tab, const FusionWeights<T>& w);

}  // namespace nnynet::fusion
