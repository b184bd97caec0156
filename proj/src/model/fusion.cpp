#include "nnynet/fusion.hpp"

#include <cmath>

namespace nnynet::fusion {

FusionMode parse_mode(const std::string& s) {
  if (s == "none") return FusionMode::none;
  if (s == "add") return FusionMode::add;
  if (s == "concat") return FusionMode::concat;
  if (s == "cross_attention" || s == "cross-attention") return FusionMode::cross_attention;
  throw std::invalid_argument("unknown fusion mode '" + s + "' (expected none, add, concat, cross_attention)");
}

std::string to_string(FusionMode m) {
  switch (m) {
    case FusionMode::none: return "none";
    case FusionMode::add: return "add";
    case FusionMode::concat: return "concat";
    case FusionMode::cross_attention: return "cross_attention";
  }
  return "none";
}

void FusionConfig::validate(std::size_t bottleneck_channels) const {
  if (mode == FusionMode::cross_attention && (heads == 0 || bottleneck_channels % heads != 0)) {
    throw ContractError("fusion: bottleneck channels " + std::to_string(bottleneck_channels) +
                        " not divisible by " + std::to_string(heads) + " heads");
  }
}

template <typename T>
FusionWeights<T> make_fusion_weights(nn::ParameterStore<T>& store, const FusionConfig& cfg, std::size_t channels,
                                     std::size_t tab_features, const std::string& prefix) {
  cfg.validate(channels);
  FusionWeights<T> w;
  w.mode = cfg.mode;
  w.heads = cfg.heads;
  switch (cfg.mode) {
    case FusionMode::none:
      break;
    case FusionMode::add:
      w.tab_proj = nn::make_linear(store, prefix + ".add.tab_proj", tab_features, channels);
      break;
    case FusionMode::concat: {
      const std::size_t ct = cfg.concat_channels == 0 ? channels : cfg.concat_channels;
      w.tab_proj = nn::make_linear(store, prefix + ".concat.tab_proj", tab_features, ct);
      w.concat_proj = store.normal(prefix + ".concat.proj.weight", {channels, channels + ct, 1, 1, 1},
                                   1.0 / std::sqrt(static_cast<double>(channels + ct)));
      w.concat_proj_bias = store.zeros(prefix + ".concat.proj.bias", {channels});
      break;
    }
    case FusionMode::cross_attention:
      w.tab_proj = nn::make_linear(store, prefix + ".xattn.query", tab_features, channels);
      w.key = nn::make_linear(store, prefix + ".xattn.key", channels, channels);
      w.value = nn::make_linear(store, prefix + ".xattn.value", channels, channels);
      w.out = nn::make_linear(store, prefix + ".xattn.out", channels, channels);
      w.gate = store.constant(prefix + ".xattn.gate", {1}, static_cast<T>(cfg.gate_init));
      break;
  }
  return w;
}

namespace {

template <typename T>
void check_inputs(const Var<T>& fmap, const Var<T>& tab) {
  if (fmap.rank() != 4) throw ShapeError("fusion: feature map must be [C, d, h, w], got " + shape_str(fmap.shape()));
  if (tab.rank() != 1) throw ShapeError("fusion: tabular input must be a vector, got " + shape_str(tab.shape()));
}

template <typename T>
Var<T> project_tab(const Var<T>& tab, const nn::LinearWeights<T>& w) {
  return nn::linear(reshape(tab, {1, tab.shape()[0]}), w);  // [1, out]
}

}  // namespace

template <typename T>
Var<T> fuse_add(const Var<T>& fmap, const Var<T>& tab, const FusionWeights<T>& w) {
  check_inputs(fmap, tab);
  const std::size_t c = fmap.shape()[0];
  return add(fmap, reshape(project_tab(tab, w.tab_proj), {c, 1, 1, 1}));
}

template <typename T>
Var<T> fuse_concat(const Var<T>& fmap, const Var<T>& tab, const FusionWeights<T>& w) {
  check_inputs(fmap, tab);
  const Shape& s = fmap.shape();
  const std::size_t ct = w.tab_proj.weight.shape()[1];
  Var<T> t = reshape(project_tab(tab, w.tab_proj), {ct, 1, 1, 1});
  t = expand(t, {ct, s[1], s[2], s[3]});
  return conv3d(concat<T>({fmap, t}, 0), w.concat_proj, w.concat_proj_bias);
}

template <typename T>
Var<T> cross_attention_readout(const Var<T>& fmap, const Var<T>& tab, const FusionWeights<T>& w,
                               Tensor<T>* weights_out) {
  check_inputs(fmap, tab);
  const Shape& s = fmap.shape();
  const std::size_t c = s[0], n = s[1] * s[2] * s[3], heads = w.heads;
  if (heads == 0 || c % heads != 0) throw ShapeError("fusion: channels not divisible by heads");
  const std::size_t d = c / heads;

  const Var<T> tokens = permute(reshape(fmap, {c, n}), {1, 0});  // [n, C]
  Var<T> q = reshape(project_tab(tab, w.tab_proj), {heads, 1, d});
  q = scale(q, static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  const Var<T> k = permute(reshape(nn::linear(tokens, w.key), {n, heads, d}), {1, 2, 0});    // [heads, d, n]
  const Var<T> v = permute(reshape(nn::linear(tokens, w.value), {n, heads, d}), {1, 0, 2});  // [heads, n, d]
  const Var<T> attn = softmax(matmul(q, k), 2);                                               // [heads, 1, n]
  if (weights_out != nullptr) *weights_out = attn.value();
  const Var<T> a = reshape(matmul(attn, v), {1, c});  // heads concatenated
  return reshape(nn::linear(a, w.out), {c});
}

template <typename T>
Var<T> fuse_cross_attention(const Var<T>& fmap, const Var<T>& tab, const FusionWeights<T>& w, Tensor<T>* weights_out) {
  const std::size_t c = fmap.shape()[0];
  const Var<T> a = cross_attention_readout(fmap, tab, w, weights_out);
  return add(fmap, reshape(mul(a, w.gate), {c, 1, 1, 1}));
}

template <typename T>
Var<T> fuse(const Var<T>& fmap, const Var<T>& tab, const FusionWeights<T>& w) {
  switch (w.mode) {
    case FusionMode::none: return fmap;
    case FusionMode::add: return fuse_add(fmap, tab, w);
    case FusionMode::concat: return fuse_concat(fmap, tab, w);
    case FusionMode::cross_attention: return fuse_cross_attention(fmap, tab, w);
  }
  return fmap;
}

#define NNYNET_INST(T)                                                                                            \
  template FusionWeights<T> make_fusion_weights(nn::ParameterStore<T>&, const FusionConfig&, std::size_t,        \
                                                std::size_t, const std::string&);                                 \
  template Var<T> fuse_add(const Var<T>&, const Var<T>&, const FusionWeights<T>&);                                \
  template Var<T> fuse_concat(const Var<T>&, const Var<T>&, const FusionWeights<T>&);                             \
  template Var<T> cross_attention_readout(const Var<T>&, const Var<T>&, const FusionWeights<T>&, Tensor<T>*);     \
  template Var<T> fuse_cross_attention(const Var<T>&, const Var<T>&, const FusionWeights<T>&, Tensor<T>*);        \
  template Var<T> fuse(const Var<T>&, const Var<T>&, const FusionWeights<T>&);
NNYNET_INST(float)
NNYNET_INST(double)
#undef NNYNET_INST

}  // namespace nnynet::fusion
