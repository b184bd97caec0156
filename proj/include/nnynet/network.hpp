#pragma once
// Encoder -> bottleneck fusion -> decoder segmentation network.

#include <cstdint>
#include <string>

#include "nnynet/fusion.hpp"
#include "nnynet/next_decoder.hpp"
#include "nnynet/swin_encoder.hpp"

namespace nnynet {

struct NetworkConfig {
  swin::SwinConfig encoder;
  decoder::DecoderConfig decoder;
  fusion::FusionConfig fusion;
  std::size_t tab_features = 4;

  void validate() const;
  // Extents an input patch must be divisible by.
  std::size_t input_multiple() const;
};

template <typename T>
struct ForwardTrace {
  swin::EncoderOutput<T> encoder;
  Var<T> fused;   // bottleneck after fusion
  Var<T> logits;  // [K, X, Y, Z]
};

template <typename T>
class SegmentationNetwork {
 public:
  SegmentationNetwork(const NetworkConfig& cfg, std::uint64_t seed);

  // volume [S, X, Y, Z] (or [X, Y, Z] for one channel), tab [F] -> logits [K, X, Y, Z]
  Var<T> forward(const Var<T>& volume, const Var<T>& tab) const;
  ForwardTrace<T> trace(const Var<T>& volume, const Var<T>& tab) const;
  // Gradient-free forward on plain tensors.
  Tensor<T> predict(const Tensor<T>& volume, const Tensor<T>& tab) const;

  const NetworkConfig& config() const { return cfg_; }
  nn::ParameterStore<T>& parameters() { return store_; }
  const nn::ParameterStore<T>& parameters() const { return store_; }
  const fusion::FusionWeights<T>& fusion_weights() const { return fusion_; }

 private:
  NetworkConfig cfg_;
  nn::ParameterStore<T> store_;
  swin::SwinEncoderWeights<T> encoder_;
  fusion::FusionWeights<T> fusion_;
  decoder::DecoderWeights<T> decoder_;
};

}  // namespace nnynet
