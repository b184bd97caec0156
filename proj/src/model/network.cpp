#include "nnynet/network.hpp"

namespace nnynet {

void NetworkConfig::validate() const {
  encoder.validate();
  decoder.validate(encoder);
  fusion.validate(encoder.stage_channels(encoder.stages() - 1));
  if (tab_features == 0 && fusion.mode != fusion::FusionMode::none) {
    throw ContractError("network: fusion requires at least one tabular feature");
  }
}

std::size_t NetworkConfig::input_multiple() const {
  const std::size_t p = encoder.patch_size[0];
  return p << (encoder.stages() - 1);
}

template <typename T>
SegmentationNetwork<T>::SegmentationNetwork(const NetworkConfig& cfg, std::uint64_t seed) : cfg_(cfg), store_(seed) {
  cfg_.validate();
  encoder_ = swin::make_encoder_weights(store_, cfg_.encoder);
  fusion_ = fusion::make_fusion_weights(store_, cfg_.fusion, cfg_.encoder.stage_channels(cfg_.encoder.stages() - 1),
                                        cfg_.tab_features);
  decoder_ = decoder::make_decoder_weights(store_, cfg_.decoder, cfg_.encoder);
}

template <typename T>
ForwardTrace<T> SegmentationNetwork<T>::trace(const Var<T>& volume, const Var<T>& tab) const {
  Var<T> input = volume;
  if (input.rank() == 3) {
    const Shape& s = input.shape();
    input = reshape(input, {1, s[0], s[1], s[2]});
  }
  ForwardTrace<T> t;
  t.encoder = swin::encode(input, encoder_, cfg_.encoder);
  t.fused = fusion::fuse(t.encoder.bottleneck, tab, fusion_);
  t.logits = decoder::decode(t.encoder, t.fused, decoder_, cfg_.decoder);
  return t;
}

template <typename T>
Var<T> SegmentationNetwork<T>::forward(const Var<T>& volume, const Var<T>& tab) const {
  return trace(volume, tab).logits;
}

template <typename T>
Tensor<T> SegmentationNetwork<T>::predict(const Tensor<T>& volume, const Tensor<T>& tab) const {
  NoGradGuard guard;
  return forward(Var<T>::constant(volume), Var<T>::constant(tab)).value();
}

template class SegmentationNetwork<float>;
template class SegmentationNetwork<double>;

}  // namespace nnynet
