#pragma once
// ConvNeXt-style decoder: residual depthwise-conv blocks, zero-insertion
// transposed-convolution upsampling, concatenate-and-project skip fusion,
// and a segmentation head at voxel resolution.

#include <vector>

#include "nnynet/swin_encoder.hpp"

namespace nnynet::decoder {

struct DecoderConfig {
  std::vector<std::size_t> depths{1, 1, 1};  // blocks per stage, shallowest first
  std::size_t kernel = 3;                    // depthwise kernel (odd)
  std::size_t expansion = 4;                 // pointwise hidden = expansion * C
  std::size_t num_classes = 3;

  void validate(const swin::SwinConfig& encoder) const;
};

template <typename T>
struct TransposedConvParams {
  Var<T> kernel;  // [C_out, C_in, Fd, Fh, Fw]
  Var<T> bias;    // [C_out] or undefined
  std::size_t stride = 2;
};

template <typename T>
struct NextBlockWeights {
  Var<T> dw_kernel;  // [C, 1, k, k, k]
  Var<T> dw_bias;    // [C]
  nn::LayerNormWeights<T> norm;
  nn::LinearWeights<T> pw1;  // C -> expansion*C
  nn::LinearWeights<T> pw2;  // expansion*C -> C
};

template <typename T>
struct DecoderWeights {
  std::vector<std::vector<NextBlockWeights<T>>> blocks;  // per stage
  std::vector<TransposedConvParams<T>> up;               // stage i+1 -> i
  std::vector<Var<T>> skip_proj;                         // [C_i, 2C_i, 1, 1, 1]
  std::vector<Var<T>> skip_proj_bias;
  TransposedConvParams<T> head_up;  // x patch size
  Var<T> head;                      // [K, C, 1, 1, 1]
  Var<T> head_bias;                 // [K]
};

template <typename T>
NextBlockWeights<T> make_next_block_weights(nn::ParameterStore<T>& store, const std::string& name, std::size_t channels,
                                            std::size_t kernel, std::size_t expansion);
template <typename T>
DecoderWeights<T> make_decoder_weights(nn::ParameterStore<T>& store, const DecoderConfig& cfg,
                                       const swin::SwinConfig& encoder, const std::string& prefix = "decoder");

template <typename T>
Var<T> transposed_conv3d(const Var<T>& x, const TransposedConvParams<T>& p) {
  return nnynet::transposed_conv3d(x, p.kernel, p.bias, p.stride);
}

// x + pw2(GELU(pw1(LN(dwconv(x))))) on a [C, D, H, W] map.
template <typename T>
Var<T> next_block(const Var<T>& x, const NextBlockWeights<T>& w);

// Logits [K, X, Y, Z] at the encoder's input resolution. `bottleneck` is the
// (possibly fused) deepest feature map; skips come from `enc`.
template <typename T>
Var<T> decode(const swin::EncoderOutput<T>& enc, const Var<T>& bottleneck, const DecoderWeights<T>& w,
              const DecoderConfig& cfg);

}  // namespace nnynet::decoder
