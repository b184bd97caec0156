#include "nnynet/next_decoder.hpp"

#include <cmath>

namespace nnynet::decoder {

void DecoderConfig::validate(const swin::SwinConfig& encoder) const {
  if (depths.size() != encoder.stages()) {
    throw ContractError("decoder: " + std::to_string(depths.size()) + " stages for a " +
                        std::to_string(encoder.stages()) + "-stage encoder");
  }
  if (kernel == 0 || kernel % 2 == 0) throw ContractError("decoder: depthwise kernel must be odd");
  if (expansion == 0) throw ContractError("decoder: expansion must be positive");
  if (num_classes < 2) throw ContractError("decoder: at least two classes required");
}

template <typename T>
NextBlockWeights<T> make_next_block_weights(nn::ParameterStore<T>& store, const std::string& name, std::size_t channels,
                                            std::size_t kernel, std::size_t expansion) {
  NextBlockWeights<T> w;
  const double k3 = static_cast<double>(kernel * kernel * kernel);
  w.dw_kernel = store.normal(name + ".dw.weight", {channels, 1, kernel, kernel, kernel}, 1.0 / std::sqrt(k3));
  w.dw_bias = store.zeros(name + ".dw.bias", {channels});
  w.norm = nn::make_layer_norm(store, name + ".norm", channels);
  w.pw1 = nn::make_linear(store, name + ".pw1", channels, expansion * channels);
  w.pw2 = nn::make_linear(store, name + ".pw2", expansion * channels, channels);
  return w;
}

template <typename T>
static TransposedConvParams<T> make_tconv(nn::ParameterStore<T>& store, const std::string& name, std::size_t cin,
                                          std::size_t cout, std::size_t stride, std::size_t f) {
  TransposedConvParams<T> p;
  // Each output voxel sees cin * (f/stride)^3 taps when f is a multiple of stride.
  const double taps = static_cast<double>(cin) * std::max(1.0, std::pow(static_cast<double>(f) / stride, 3.0));
  p.kernel = store.normal(name + ".weight", {cout, cin, f, f, f}, 1.0 / std::sqrt(taps));
  p.bias = store.zeros(name + ".bias", {cout});
  p.stride = stride;
  return p;
}

template <typename T>
DecoderWeights<T> make_decoder_weights(nn::ParameterStore<T>& store, const DecoderConfig& cfg,
                                       const swin::SwinConfig& encoder, const std::string& prefix) {
  cfg.validate(encoder);
  DecoderWeights<T> w;
  const std::size_t stages = encoder.stages();
  for (std::size_t s = 0; s < stages; ++s) {
    const std::size_t c = encoder.stage_channels(s);
    std::vector<NextBlockWeights<T>> blocks;
    for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
      blocks.push_back(make_next_block_weights(store, prefix + ".stage" + std::to_string(s) + ".block" + std::to_string(b),
                                               c, cfg.kernel, cfg.expansion));
    }
    w.blocks.push_back(std::move(blocks));
  }
  for (std::size_t s = 0; s + 1 < stages; ++s) {
    const std::size_t c = encoder.stage_channels(s);
    const std::string tag = prefix + ".stage" + std::to_string(s);
    w.up.push_back(make_tconv(store, tag + ".up", encoder.stage_channels(s + 1), c, 2, 2));
    w.skip_proj.push_back(store.normal(tag + ".skip_proj.weight", {c, 2 * c, 1, 1, 1}, 1.0 / std::sqrt(2.0 * c)));
    w.skip_proj_bias.push_back(store.zeros(tag + ".skip_proj.bias", {c}));
  }
  const std::size_t c0 = encoder.stage_channels(0);
  const auto& p = encoder.patch_size;
  if (p[0] != p[1] || p[1] != p[2]) throw ContractError("decoder: head upsampling needs a cubic patch size");
  w.head_up = make_tconv(store, prefix + ".head_up", c0, c0, p[0], p[0]);
  w.head = store.normal(prefix + ".head.weight", {cfg.num_classes, c0, 1, 1, 1}, 1.0 / std::sqrt(double(c0)));
  w.head_bias = store.zeros(prefix + ".head.bias", {cfg.num_classes});
  return w;
}

template <typename T>
Var<T> next_block(const Var<T>& x, const NextBlockWeights<T>& w) {
  if (x.rank() != 4) throw ShapeError("next_block: expected [C, D, H, W], got " + shape_str(x.shape()));
  const std::size_t c = x.shape()[0];
  const std::size_t k = w.dw_kernel.shape()[2];
  Conv3dOptions opts;
  opts.groups = c;
  opts.padding = {k / 2, k / 2, k / 2};
  Var<T> y = conv3d(x, w.dw_kernel, w.dw_bias, opts);
  y = swin::to_channel_last(y);
  y = nn::layer_norm(y, w.norm);
  y = nn::linear(gelu(nn::linear(y, w.pw1)), w.pw2);
  return add(x, swin::to_channel_first(y));
}

template <typename T>
Var<T> decode(const swin::EncoderOutput<T>& enc, const Var<T>& bottleneck, const DecoderWeights<T>& w,
              const DecoderConfig& cfg) {
  const std::size_t stages = w.blocks.size();
  if (enc.skips.size() + 1 != stages) {
    throw ShapeError("decode: " + std::to_string(enc.skips.size()) + " skips for " + std::to_string(stages) + " stages");
  }
  Var<T> h = bottleneck;
  for (const auto& b : w.blocks[stages - 1]) h = next_block(h, b);
  for (std::size_t s = stages - 1; s-- > 0;) {
    h = transposed_conv3d(h, w.up[s]);
    const Var<T>& skip = enc.skips[s];
    if (h.shape() != skip.shape()) {
      throw ShapeError("decode: stage " + std::to_string(s) + " upsampled map " + shape_str(h.shape()) +
                       " does not match skip " + shape_str(skip.shape()));
    }
    h = conv3d(concat<T>({h, skip}, 0), w.skip_proj[s], w.skip_proj_bias[s]);
    for (const auto& b : w.blocks[s]) h = next_block(h, b);
  }
  h = transposed_conv3d(h, w.head_up);
  Var<T> logits = conv3d(h, w.head, w.head_bias);
  if (logits.shape()[0] != cfg.num_classes) throw ShapeError("decode: head produced wrong class count");
  return logits;
}

#define NNYNET_INST(T)                                                                                          \
  template NextBlockWeights<T> make_next_block_weights(nn::ParameterStore<T>&, const std::string&, std::size_t, \
                                                       std::size_t, std::size_t);                               \
  template DecoderWeights<T> make_decoder_weights(nn::ParameterStore<T>&, const DecoderConfig&,                \
                                                  const swin::SwinConfig&, const std::string&);                 \
  template Var<T> next_block(const Var<T>&, const NextBlockWeights<T>&);                                        \
  template Var<T> decode(const swin::EncoderOutput<T>&, const Var<T>&, const DecoderWeights<T>&, const DecoderConfig&);
NNYNET_INST(float)
NNYNET_INST(double)
#undef NNYNET_INST

}  // namespace nnynet::decoder
