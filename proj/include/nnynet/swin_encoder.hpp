#pragma once
// 3D shifted-window transformer encoder.
//
// Token grids are channel-last [X, Y, Z, C]. Stage outputs handed to the
// decoder are converted to channel-first [C, X, Y, Z].

#include <array>
#include <optional>
#include <vector>

#include "nnynet/nn.hpp"

namespace nnynet::swin {

using Extent3 = std::array<std::size_t, 3>;

struct SwinConfig {
  Extent3 patch_size{2, 2, 2};
  std::size_t in_channels = 1;
  std::size_t embed_dim = 16;
  std::vector<std::size_t> depths{2, 2, 2};
  std::vector<std::size_t> heads{2, 4, 8};
  std::size_t window = 2;
  double mlp_ratio = 4.0;

  void validate() const;
  std::size_t stage_channels(std::size_t stage) const { return embed_dim << stage; }
  std::size_t stages() const { return depths.size(); }
};

template <typename T>
struct AttentionWeights {
  nn::LinearWeights<T> qkv;   // [C, 3C]
  nn::LinearWeights<T> proj;  // [C, C]
  Var<T> bias_table;          // [(2M-1)^3, heads]
  std::size_t heads = 1;
};

template <typename T>
struct SwinBlockWeights {
  nn::LayerNormWeights<T> norm1;
  AttentionWeights<T> attn;
  nn::LayerNormWeights<T> norm2;
  nn::MlpWeights<T> mlp;
};

template <typename T>
struct SwinEncoderWeights {
  nn::LinearWeights<T> patch_embed;                    // [S*p^3, C]
  std::vector<std::vector<SwinBlockWeights<T>>> stages;
  std::vector<nn::LinearWeights<T>> downsample;         // [8C, 2C], no bias
};

template <typename T>
struct EncoderOutput {
  Var<T> bottleneck;         // [C_last, d, h, w]
  std::vector<Var<T>> skips;  // stage 0 .. L-2, channel-first
};

template <typename T>
AttentionWeights<T> make_attention_weights(nn::ParameterStore<T>& store, const std::string& name,
                                           std::size_t channels, std::size_t heads, std::size_t window);
template <typename T>
SwinBlockWeights<T> make_block_weights(nn::ParameterStore<T>& store, const std::string& name, std::size_t channels,
                                       std::size_t heads, std::size_t window, double mlp_ratio);
template <typename T>
SwinEncoderWeights<T> make_encoder_weights(nn::ParameterStore<T>& store, const SwinConfig& cfg,
                                           const std::string& prefix = "encoder");

// [S, X, Y, Z] -> [X/p, Y/p, Z/p, C]. Extents must be divisible by p.
template <typename T>
Var<T> patch_embed(const Var<T>& volume, const nn::LinearWeights<T>& proj, const Extent3& patch);

// [X, Y, Z, C] -> [n_windows, wx*wy*wz, C]; extents must be multiples of win.
template <typename T>
Var<T> window_partition(const Var<T>& tokens, const Extent3& win);
template <typename T>
Var<T> window_merge(const Var<T>& windows, const Extent3& grid, const Extent3& win);

// Rolls the grid so that token (i + offset) lands at i; inverse undoes it.
template <typename T>
Var<T> cyclic_shift(const Var<T>& tokens, const Extent3& offsets);
template <typename T>
Var<T> inverse_cyclic_shift(const Var<T>& tokens, const Extent3& offsets);

// Row of the bias table for every (query, key) pair of a window with
// extents `win`, relative offsets measured against a table built for M.
std::vector<std::size_t> relative_position_index(const Extent3& win, std::size_t window);

// [heads, 1, n, n] bias gathered from the layer's table.
template <typename T>
Var<T> relative_position_bias(const Var<T>& table, const std::vector<std::size_t>& index, std::size_t n);

// Additive mask [n_windows, n, n] (0 or -inf) for a padded grid, or nullopt
// when neither shift nor padding is active. A key is banned when it lies in
// a different shift region than the query, or is padding seen by a real
// query. Positions are in shifted-grid coordinates.
template <typename T>
std::optional<Tensor<T>> attention_mask(const Extent3& padded, const Extent3& real, const Extent3& win,
                                        const Extent3& shift);

// Multi-head attention inside each window: softmax(QK^T/sqrt(d) + B + mask)V,
// heads concatenated and projected. windows: [nW, n, C]. bias: [heads,1,n,n]
// or undefined. When `weights_out` is given it receives the softmax weights
// [heads, nW, n, n].
template <typename T>
Var<T> window_attention(const Var<T>& windows, const AttentionWeights<T>& w, const Var<T>& bias,
                        const Tensor<T>* mask, Tensor<T>* weights_out = nullptr);

// Effective per-axis window and shift: axes no longer than M use a single
// window spanning the axis and no shift.
struct WindowPlan {
  Extent3 window;
  Extent3 shift;
  Extent3 padded;
};
WindowPlan plan_window(const Extent3& grid, std::size_t window, bool shifted);

// W-MSA (shifted = false) or SW-MSA (shifted = true) over a token grid
// [X, Y, Z, C]: pad, shift, partition, attend, merge, unshift, crop.
template <typename T>
Var<T> shifted_window_attention(const Var<T>& tokens, const AttentionWeights<T>& w, std::size_t window, bool shifted,
                                Tensor<T>* weights_out = nullptr);

// z' = attn(LN(z)) + z; out = MLP(LN(z')) + z'.
template <typename T>
Var<T> swin_block(const Var<T>& tokens, const SwinBlockWeights<T>& w, std::size_t window, bool shifted);

// W-MSA block followed by an SW-MSA block.
template <typename T>
Var<T> swin_block_pair(const Var<T>& tokens, const SwinBlockWeights<T>& first, const SwinBlockWeights<T>& second,
                       std::size_t window);

// [X, Y, Z, C] -> [X/2, Y/2, Z/2, 2C] by concatenating 2x2x2 neighbourhoods
// and projecting 8C -> 2C. Extents must be even.
template <typename T>
Var<T> downsample(const Var<T>& tokens, const nn::LinearWeights<T>& w);

// [S, X, Y, Z] -> encoder features.
template <typename T>
EncoderOutput<T> encode(const Var<T>& volume, const SwinEncoderWeights<T>& w, const SwinConfig& cfg);

template <typename T>
Var<T> to_channel_first(const Var<T>& tokens);
template <typename T>
Var<T> to_channel_last(const Var<T>& fmap);

}  // namespace nnynet::swin
