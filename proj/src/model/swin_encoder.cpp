#include "nnynet/swin_encoder.hpp"

#include <cmath>
#include <limits>

namespace nnynet::swin {

void SwinConfig::validate() const {
  if (depths.empty()) throw ContractError("swin: at least one stage required");
  if (depths.size() != heads.size()) throw ContractError("swin: depths and heads differ in length");
  if (embed_dim == 0 || window == 0 || in_channels == 0) throw ContractError("swin: zero-sized config entry");
  for (std::size_t p : patch_size) {
    if (p == 0) throw ContractError("swin: patch size must be positive");
  }
  for (std::size_t i = 0; i < heads.size(); ++i) {
    if (heads[i] == 0 || stage_channels(i) % heads[i] != 0) {
      throw ContractError("swin: stage " + std::to_string(i) + " channels " + std::to_string(stage_channels(i)) +
                          " not divisible by " + std::to_string(heads[i]) + " heads");
    }
  }
  if (!(mlp_ratio > 0)) throw ContractError("swin: mlp_ratio must be positive");
}

template <typename T>
AttentionWeights<T> make_attention_weights(nn::ParameterStore<T>& store, const std::string& name, std::size_t channels,
                                           std::size_t heads, std::size_t window) {
  AttentionWeights<T> w;
  w.qkv = nn::make_linear(store, name + ".qkv", channels, 3 * channels);
  w.proj = nn::make_linear(store, name + ".proj", channels, channels);
  const std::size_t span = 2 * window - 1;
  w.bias_table = store.normal(name + ".relative_position_bias", {span * span * span, heads}, 0.02);
  w.heads = heads;
  return w;
}

template <typename T>
SwinBlockWeights<T> make_block_weights(nn::ParameterStore<T>& store, const std::string& name, std::size_t channels,
                                       std::size_t heads, std::size_t window, double mlp_ratio) {
  SwinBlockWeights<T> w;
  w.norm1 = nn::make_layer_norm(store, name + ".norm1", channels);
  w.attn = make_attention_weights(store, name + ".attn", channels, heads, window);
  w.norm2 = nn::make_layer_norm(store, name + ".norm2", channels);
  const auto hidden = static_cast<std::size_t>(std::lround(mlp_ratio * static_cast<double>(channels)));
  w.mlp = nn::make_mlp(store, name + ".mlp", channels, hidden);
  return w;
}

template <typename T>
SwinEncoderWeights<T> make_encoder_weights(nn::ParameterStore<T>& store, const SwinConfig& cfg, const std::string& prefix) {
  cfg.validate();
  SwinEncoderWeights<T> w;
  const std::size_t patch_vol = cfg.patch_size[0] * cfg.patch_size[1] * cfg.patch_size[2];
  w.patch_embed = nn::make_linear(store, prefix + ".patch_embed", cfg.in_channels * patch_vol, cfg.embed_dim);
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    const std::size_t c = cfg.stage_channels(s);
    std::vector<SwinBlockWeights<T>> blocks;
    for (std::size_t b = 0; b < cfg.depths[s]; ++b) {
      blocks.push_back(make_block_weights(store, prefix + ".stage" + std::to_string(s) + ".block" + std::to_string(b), c,
                                          cfg.heads[s], cfg.window, cfg.mlp_ratio));
    }
    w.stages.push_back(std::move(blocks));
    if (s + 1 < cfg.stages()) {
      w.downsample.push_back(nn::make_linear(store, prefix + ".downsample" + std::to_string(s), 8 * c, 2 * c, false));
    }
  }
  return w;
}

template <typename T>
Var<T> patch_embed(const Var<T>& volume, const nn::LinearWeights<T>& proj, const Extent3& patch) {
  const Shape& s = volume.shape();
  if (s.size() != 4) throw ShapeError("patch_embed: expected [S, X, Y, Z], got " + shape_str(s));
  for (std::size_t a = 0; a < 3; ++a) {
    if (s[a + 1] % patch[a] != 0) {
      throw ShapeError("patch_embed: extent " + std::to_string(s[a + 1]) + " not divisible by patch " +
                       std::to_string(patch[a]));
    }
  }
  const std::size_t gx = s[1] / patch[0], gy = s[2] / patch[1], gz = s[3] / patch[2];
  Var<T> x = reshape(volume, {s[0], gx, patch[0], gy, patch[1], gz, patch[2]});
  x = permute(x, {1, 3, 5, 0, 2, 4, 6});
  x = reshape(x, {gx, gy, gz, s[0] * patch[0] * patch[1] * patch[2]});
  return nn::linear(x, proj);
}

template <typename T>
Var<T> window_partition(const Var<T>& tokens, const Extent3& win) {
  const Shape& s = tokens.shape();
  if (s.size() != 4) throw ShapeError("window_partition: expected [X, Y, Z, C], got " + shape_str(s));
  for (std::size_t a = 0; a < 3; ++a) {
    if (win[a] == 0 || s[a] % win[a] != 0) {
      throw ShapeError("window_partition: extent " + std::to_string(s[a]) + " is not a multiple of window " +
                       std::to_string(win[a]));
    }
  }
  const std::size_t nx = s[0] / win[0], ny = s[1] / win[1], nz = s[2] / win[2];
  Var<T> x = reshape(tokens, {nx, win[0], ny, win[1], nz, win[2], s[3]});
  x = permute(x, {0, 2, 4, 1, 3, 5, 6});
  return reshape(x, {nx * ny * nz, win[0] * win[1] * win[2], s[3]});
}

template <typename T>
Var<T> window_merge(const Var<T>& windows, const Extent3& grid, const Extent3& win) {
  const Shape& s = windows.shape();
  if (s.size() != 3) throw ShapeError("window_merge: expected [nW, n, C], got " + shape_str(s));
  const std::size_t nx = grid[0] / win[0], ny = grid[1] / win[1], nz = grid[2] / win[2];
  if (nx * ny * nz != s[0] || win[0] * win[1] * win[2] != s[1]) {
    throw ShapeError("window_merge: windows " + shape_str(s) + " do not tile the grid");
  }
  Var<T> x = reshape(windows, {nx, ny, nz, win[0], win[1], win[2], s[2]});
  x = permute(x, {0, 3, 1, 4, 2, 5, 6});
  return reshape(x, {grid[0], grid[1], grid[2], s[2]});
}

template <typename T>
Var<T> cyclic_shift(const Var<T>& tokens, const Extent3& offsets) {
  return roll(tokens, {-static_cast<long>(offsets[0]), -static_cast<long>(offsets[1]), -static_cast<long>(offsets[2]), 0});
}

template <typename T>
Var<T> inverse_cyclic_shift(const Var<T>& tokens, const Extent3& offsets) {
  return roll(tokens, {static_cast<long>(offsets[0]), static_cast<long>(offsets[1]), static_cast<long>(offsets[2]), 0});
}

std::vector<std::size_t> relative_position_index(const Extent3& win, std::size_t window) {
  for (std::size_t w : win) {
    if (w > window) throw ContractError("relative_position_index: window extent exceeds M");
  }
  const std::size_t n = win[0] * win[1] * win[2];
  const std::size_t span = 2 * window - 1;
  std::vector<std::size_t> index(n * n);
  auto coord = [&](std::size_t p) {
    return std::array<long, 3>{static_cast<long>(p / (win[1] * win[2])), static_cast<long>((p / win[2]) % win[1]),
                               static_cast<long>(p % win[2])};
  };
  const long shift = static_cast<long>(window) - 1;
  for (std::size_t q = 0; q < n; ++q) {
    const auto cq = coord(q);
    for (std::size_t k = 0; k < n; ++k) {
      const auto ck = coord(k);
      const auto dx = static_cast<std::size_t>(cq[0] - ck[0] + shift);
      const auto dy = static_cast<std::size_t>(cq[1] - ck[1] + shift);
      const auto dz = static_cast<std::size_t>(cq[2] - ck[2] + shift);
      index[q * n + k] = (dx * span + dy) * span + dz;
    }
  }
  return index;
}

template <typename T>
Var<T> relative_position_bias(const Var<T>& table, const std::vector<std::size_t>& index, std::size_t n) {
  const std::size_t heads = table.shape()[1];
  Var<T> b = index_select(table, 0, index);  // [n*n, heads]
  b = permute(b, {1, 0});
  return reshape(b, {heads, 1, n, n});
}

template <typename T>
std::optional<Tensor<T>> attention_mask(const Extent3& padded, const Extent3& real, const Extent3& win,
                                        const Extent3& shift) {
  const bool any_shift = shift[0] || shift[1] || shift[2];
  if (!any_shift && padded == real) return std::nullopt;
  const std::size_t total = padded[0] * padded[1] * padded[2];
  std::vector<int> region(total);
  std::vector<bool> is_pad(total);
  for (std::size_t x = 0; x < padded[0]; ++x) {
    for (std::size_t y = 0; y < padded[1]; ++y) {
      for (std::size_t z = 0; z < padded[2]; ++z) {
        const std::array<std::size_t, 3> pos{x, y, z};
        int id = 0;
        bool pad = false;
        for (std::size_t a = 0; a < 3; ++a) {
          int r = 0;
          if (shift[a] != 0) r = pos[a] < padded[a] - win[a] ? 0 : (pos[a] < padded[a] - shift[a] ? 1 : 2);
          id = id * 3 + r;
          pad = pad || (pos[a] + shift[a]) % padded[a] >= real[a];
        }
        const std::size_t flat = (x * padded[1] + y) * padded[2] + z;
        region[flat] = id;
        is_pad[flat] = pad;
      }
    }
  }
  const std::size_t nx = padded[0] / win[0], ny = padded[1] / win[1], nz = padded[2] / win[2];
  const std::size_t n = win[0] * win[1] * win[2];
  Tensor<T> mask(Shape{nx * ny * nz, n, n});
  std::vector<std::size_t> members(n);
  const T banned = -std::numeric_limits<T>::infinity();
  for (std::size_t wx = 0; wx < nx; ++wx) {
    for (std::size_t wy = 0; wy < ny; ++wy) {
      for (std::size_t wz = 0; wz < nz; ++wz) {
        const std::size_t w = (wx * ny + wy) * nz + wz;
        for (std::size_t p = 0; p < n; ++p) {
          const std::size_t x = wx * win[0] + p / (win[1] * win[2]);
          const std::size_t y = wy * win[1] + (p / win[2]) % win[1];
          const std::size_t z = wz * win[2] + p % win[2];
          members[p] = (x * padded[1] + y) * padded[2] + z;
        }
        for (std::size_t q = 0; q < n; ++q) {
          for (std::size_t k = 0; k < n; ++k) {
            const bool ban = region[members[q]] != region[members[k]] || (is_pad[members[k]] && !is_pad[members[q]]);
            mask[(w * n + q) * n + k] = ban ? banned : T(0);
          }
        }
      }
    }
  }
  return mask;
}

template <typename T>
Var<T> window_attention(const Var<T>& windows, const AttentionWeights<T>& w, const Var<T>& bias, const Tensor<T>* mask,
                        Tensor<T>* weights_out) {
  const Shape& s = windows.shape();
  if (s.size() != 3) throw ShapeError("window_attention: expected [nW, n, C], got " + shape_str(s));
  const std::size_t nw = s[0], n = s[1], c = s[2], heads = w.heads;
  if (heads == 0 || c % heads != 0) throw ShapeError("window_attention: channels not divisible by heads");
  const std::size_t d = c / heads;

  Var<T> qkv = nn::linear(reshape(windows, {nw * n, c}), w.qkv);  // [nW*n, 3C]
  qkv = permute(reshape(qkv, {nw, n, 3, heads, d}), {2, 3, 0, 1, 4});
  auto part = [&](std::size_t i) { return reshape(slice(qkv, 0, i, 1), {heads * nw, n, d}); };
  const Var<T> q = scale(part(0), static_cast<T>(1.0 / std::sqrt(static_cast<double>(d))));
  const Var<T> k = part(1);
  const Var<T> v = part(2);

  Var<T> scores = reshape(matmul(q, permute(k, {0, 2, 1})), {heads, nw, n, n});
  if (bias.defined()) scores = add(scores, bias);
  if (mask != nullptr) scores = add(scores, Var<T>::constant(*mask));
  const Var<T> attn = softmax(scores, 3);
  if (weights_out != nullptr) *weights_out = attn.value();

  Var<T> out = matmul(reshape(attn, {heads * nw, n, n}), v);  // [heads*nW, n, d]
  out = permute(reshape(out, {heads, nw, n, d}), {1, 2, 0, 3});
  out = nn::linear(reshape(out, {nw * n, c}), w.proj);
  return reshape(out, {nw, n, c});
}

WindowPlan plan_window(const Extent3& grid, std::size_t window, bool shifted) {
  WindowPlan p{};
  for (std::size_t a = 0; a < 3; ++a) {
    if (grid[a] <= window) {
      p.window[a] = grid[a];
      p.shift[a] = 0;
    } else {
      p.window[a] = window;
      p.shift[a] = shifted ? window / 2 : 0;
    }
    p.padded[a] = (grid[a] + p.window[a] - 1) / p.window[a] * p.window[a];
  }
  return p;
}

template <typename T>
Var<T> shifted_window_attention(const Var<T>& tokens, const AttentionWeights<T>& w, std::size_t window, bool shifted,
                                Tensor<T>* weights_out) {
  const Shape& s = tokens.shape();
  if (s.size() != 4) throw ShapeError("shifted_window_attention: expected [X, Y, Z, C], got " + shape_str(s));
  const Extent3 grid{s[0], s[1], s[2]};
  const WindowPlan plan = plan_window(grid, window, shifted);
  const bool padded = plan.padded != grid;
  const bool any_shift = plan.shift[0] || plan.shift[1] || plan.shift[2];

  Var<T> x = tokens;
  if (padded) {
    x = pad(x, {0, 0, 0, 0}, {plan.padded[0] - grid[0], plan.padded[1] - grid[1], plan.padded[2] - grid[2], 0});
  }
  if (any_shift) x = cyclic_shift(x, plan.shift);
  const Var<T> windows = window_partition(x, plan.window);
  const std::size_t n = plan.window[0] * plan.window[1] * plan.window[2];
  const Var<T> bias = relative_position_bias(w.bias_table, relative_position_index(plan.window, window), n);
  const std::optional<Tensor<T>> mask = attention_mask<T>(plan.padded, grid, plan.window, plan.shift);
  Var<T> y = window_attention(windows, w, bias, mask ? &*mask : nullptr, weights_out);
  y = window_merge(y, plan.padded, plan.window);
  if (any_shift) y = inverse_cyclic_shift(y, plan.shift);
  if (padded) {
    for (std::size_t a = 0; a < 3; ++a) y = slice(y, a, 0, grid[a]);
  }
  return y;
}

template <typename T>
Var<T> swin_block(const Var<T>& tokens, const SwinBlockWeights<T>& w, std::size_t window, bool shifted) {
  const Var<T> h = add(shifted_window_attention(nn::layer_norm(tokens, w.norm1), w.attn, window, shifted), tokens);
  return add(nn::mlp(nn::layer_norm(h, w.norm2), w.mlp), h);
}

template <typename T>
Var<T> swin_block_pair(const Var<T>& tokens, const SwinBlockWeights<T>& first, const SwinBlockWeights<T>& second,
                       std::size_t window) {
  return swin_block(swin_block(tokens, first, window, false), second, window, true);
}

template <typename T>
Var<T> downsample(const Var<T>& tokens, const nn::LinearWeights<T>& w) {
  const Shape& s = tokens.shape();
  if (s.size() != 4) throw ShapeError("downsample: expected [X, Y, Z, C], got " + shape_str(s));
  for (std::size_t a = 0; a < 3; ++a) {
    if (s[a] % 2 != 0) throw ShapeError("downsample: odd extent in " + shape_str(s));
  }
  Var<T> x = reshape(tokens, {s[0] / 2, 2, s[1] / 2, 2, s[2] / 2, 2, s[3]});
  x = permute(x, {0, 2, 4, 1, 3, 5, 6});
  x = reshape(x, {s[0] / 2, s[1] / 2, s[2] / 2, 8 * s[3]});
  return nn::linear(x, w);
}

template <typename T>
Var<T> to_channel_first(const Var<T>& tokens) {
  return permute(tokens, {3, 0, 1, 2});
}

template <typename T>
Var<T> to_channel_last(const Var<T>& fmap) {
  return permute(fmap, {1, 2, 3, 0});
}

template <typename T>
EncoderOutput<T> encode(const Var<T>& volume, const SwinEncoderWeights<T>& w, const SwinConfig& cfg) {
  if (volume.rank() != 4 || volume.shape()[0] != cfg.in_channels) {
    throw ShapeError("encode: expected [" + std::to_string(cfg.in_channels) + ", X, Y, Z], got " +
                     shape_str(volume.shape()));
  }
  EncoderOutput<T> out;
  Var<T> t = patch_embed(volume, w.patch_embed, cfg.patch_size);
  for (std::size_t s = 0; s < cfg.stages(); ++s) {
    for (std::size_t b = 0; b < w.stages[s].size(); ++b) t = swin_block(t, w.stages[s][b], cfg.window, b % 2 == 1);
    if (s + 1 < cfg.stages()) {
      out.skips.push_back(to_channel_first(t));
      t = downsample(t, w.downsample[s]);
    }
  }
  out.bottleneck = to_channel_first(t);
  return out;
}

#define NNYNET_INST(T)                                                                                                \
  template AttentionWeights<T> make_attention_weights(nn::ParameterStore<T>&, const std::string&, std::size_t,       \
                                                      std::size_t, std::size_t);                                      \
  template SwinBlockWeights<T> make_block_weights(nn::ParameterStore<T>&, const std::string&, std::size_t,           \
                                                  std::size_t, std::size_t, double);                                  \
  template SwinEncoderWeights<T> make_encoder_weights(nn::ParameterStore<T>&, const SwinConfig&, const std::string&); \
  template Var<T> patch_embed(const Var<T>&, const nn::LinearWeights<T>&, const Extent3&);                           \
  template Var<T> window_partition(const Var<T>&, const Extent3&);                                                    \
  template Var<T> window_merge(const Var<T>&, const Extent3&, const Extent3&);                                        \
  template Var<T> cyclic_shift(const Var<T>&, const Extent3&);                                                        \
  template Var<T> inverse_cyclic_shift(const Var<T>&, const Extent3&);                                                \
  template Var<T> relative_position_bias(const Var<T>&, const std::vector<std::size_t>&, std::size_t);               \
  template std::optional<Tensor<T>> attention_mask(const Extent3&, const Extent3&, const Extent3&, const Extent3&);  \
  template Var<T> window_attention(const Var<T>&, const AttentionWeights<T>&, const Var<T>&, const Tensor<T>*,       \
                                   Tensor<T>*);                                                                       \
  template Var<T> shifted_window_attention(const Var<T>&, const AttentionWeights<T>&, std::size_t, bool, Tensor<T>*); \
  template Var<T> swin_block(const Var<T>&, const SwinBlockWeights<T>&, std::size_t, bool);                          \
  template Var<T> swin_block_pair(const Var<T>&, const SwinBlockWeights<T>&, const SwinBlockWeights<T>&,             \
                                  std::size_t);                                                                       \
  template Var<T> downsample(const Var<T>&, const nn::LinearWeights<T>&);                                             \
  template Var<T> to_channel_first(const Var<T>&);                                                                    \
  template Var<T> to_channel_last(const Var<T>&);                                                                     \
  template EncoderOutput<T> encode(const Var<T>&, const SwinEncoderWeights<T>&, const SwinConfig&);
NNYNET_INST(float)
NNYNET_INST(double)
#undef NNYNET_INST

}  // namespace nnynet::swin
