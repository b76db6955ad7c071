#include "vesselseg/fusion.hpp"

#include <cmath>
#include <stdexcept>

#include "vesselseg/ops.hpp"

namespace vseg {

namespace o = ops;

namespace {

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  const double bound = 1.0 / std::sqrt((double)fan_in);
  for (double& v : t.values_mut()) v = rng.uniform(-bound, bound);
  return t;
}

// channel attention over a batch of patches [G,C,s2] -> [G,C]
Tensor ca_batch(Tape& tape, const Tensor& x, const AttentionParams& p) {
  Tensor avg = o::mean_axis(tape, x, 2);
  Tensor mx = o::max_axis(tape, x, 2);
  auto mlp = [&](const Tensor& v) {
    Tensor h = o::relu(
        tape, o::add(tape, o::matmul(tape, v, p.ca_w1), p.ca_b1));
    return o::add(tape, o::matmul(tape, h, p.ca_w2), p.ca_b2);
  };
  return o::sigmoid(tape, o::add(tape, mlp(avg), mlp(mx)));
}

// spatial attention over a batch of patches [G,C,s2] -> [G,s2]
Tensor sa_batch(Tape& tape, const Tensor& x, const AttentionParams& p,
                const AttentionConfig& cfg, std::size_t s) {
  const std::size_t G = x.shape()[0], s2 = s * s;
  Tensor avg = o::mean_axis(tape, x, 1);  // [G,s2]
  Tensor mx = o::max_axis(tape, x, 1);
  Tensor stacked = o::swapaxes(
      tape, o::reshape(tape, o::concat0(tape, {avg, mx}), {2, G, s2}), 0);
  const std::size_t pad = (cfg.kernel - 1) / 2;
  std::vector<Tensor> maps;
  maps.reserve(G);
  Tensor flat = o::reshape(tape, stacked, {1, G, 2 * s2});
  for (std::size_t g = 0; g < G; ++g) {
    Tensor patch = o::reshape(tape, o::slice_mid(tape, flat, g, g + 1),
                              {2, s, s});
    Tensor m = o::conv2d(tape, patch, p.sa_w, p.sa_b, 1, pad);
    maps.push_back(o::reshape(tape, m, {1, s2}));
  }
  return o::sigmoid(tape, o::concat0(tape, maps));
}

void check_patch(const Tensor& patch) {
  if (patch.rank() != 3 || patch.shape()[1] != patch.shape()[2])
    throw std::invalid_argument("attention: patch must be [C,s,s]");
}

}  // namespace

AttentionParams init_attention(std::size_t channels,
                               const AttentionConfig& cfg, Rng& rng) {
  if (channels < cfg.reduction)
    throw std::invalid_argument(
        "init_attention: channel count below the reduction ratio");
  if (cfg.kernel % 2 == 0)
    throw std::invalid_argument("init_attention: conv extent must be odd");
  const std::size_t hidden = channels / cfg.reduction;
  AttentionParams p;
  p.ca_w1 = uniform_fan_in({channels, hidden}, channels, rng);
  p.ca_b1 = Tensor::zeros({hidden}, true);
  p.ca_w2 = uniform_fan_in({hidden, channels}, hidden, rng);
  p.ca_b2 = Tensor::zeros({channels}, true);
  p.sa_w = uniform_fan_in({1, 2, cfg.kernel, cfg.kernel},
                          2 * cfg.kernel * cfg.kernel, rng);
  p.sa_b = Tensor::zeros({1}, true);
  return p;
}

void list_params(const AttentionParams& p, const std::string& prefix,
                 std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".ca_w1", p.ca_w1);
  out.emplace_back(prefix + ".ca_b1", p.ca_b1);
  out.emplace_back(prefix + ".ca_w2", p.ca_w2);
  out.emplace_back(prefix + ".ca_b2", p.ca_b2);
  out.emplace_back(prefix + ".sa_w", p.sa_w);
  out.emplace_back(prefix + ".sa_b", p.sa_b);
}

Tensor window_fft(Tape& tape, const Tensor& ws, std::size_t cell) {
  if (ws.rank() != 3) throw std::invalid_argument("window_fft: needs [G,T,C]");
  const std::size_t G = ws.shape()[0], T = ws.shape()[1], C = ws.shape()[2];
  const std::size_t s2 = cell * cell;
  if (s2 == 0 || T % s2 != 0)
    throw std::invalid_argument("window_fft: tokens not a whole window count");
  const std::size_t W = T / s2;
  // one [s,s] grid per (string, channel, window); imaginary planes start 0
  Tensor re = o::reshape(tape, o::swapaxes(tape, ws, 1),
                         {G * C * W, cell, cell});
  Tensor z = Tensor::zeros({G * C * W, cell, cell});
  Tensor planes = o::swapaxes(
      tape,
      o::reshape(tape, o::concat0(tape, {re, z}), {2, G * C * W, cell, cell}),
      0);
  Tensor f = o::fft2(tape, planes, false);
  // (g,c,w,plane,slot) -> (g,w,slot,plane,c) so planes become channel blocks
  Tensor y = o::reshape(tape, f, {G, C, W, 2, s2});
  y = o::swapaxes(tape, y, 1);  // g w c p t
  y = o::swapaxes(tape, y, 2);  // g w p c t
  y = o::swapaxes(tape, y, 3);  // g w p t c
  y = o::swapaxes(tape, y, 2);  // g w t p c
  return o::reshape(tape, y, {G, T, 2 * C});
}

Tensor window_ifft(Tape& tape, const Tensor& ws, std::size_t cell,
                   double* imag_residue) {
  if (ws.rank() != 3)
    throw std::invalid_argument("window_ifft: needs [G,T,2C]");
  const std::size_t G = ws.shape()[0], T = ws.shape()[1], C2 = ws.shape()[2];
  const std::size_t s2 = cell * cell;
  if (C2 % 2 != 0)
    throw std::invalid_argument("window_ifft: odd channel count");
  if (s2 == 0 || T % s2 != 0)
    throw std::invalid_argument("window_ifft: tokens not a whole window count");
  const std::size_t C = C2 / 2, W = T / s2;
  Tensor y = o::reshape(tape, ws, {G, W, s2, 2, C});
  y = o::swapaxes(tape, y, 2);  // g w p t c
  y = o::swapaxes(tape, y, 3);  // g w p c t
  y = o::swapaxes(tape, y, 2);  // g w c p t
  y = o::swapaxes(tape, y, 1);  // g c w p t
  Tensor inv = o::fft2(
      tape, o::reshape(tape, y, {G * C * W, 2, cell, cell}), true);
  if (imag_residue) {
    double worst = 0;
    auto v = inv.values();
    for (std::size_t b = 0; b < G * C * W; ++b)
      for (std::size_t i = 0; i < s2; ++i)
        worst = std::max(worst, std::fabs(v[(b * 2 + 1) * s2 + i]));
    *imag_residue = worst;
  }
  Tensor real = o::slice_mid(
      tape, o::reshape(tape, inv, {G * C * W, 2, s2}), 0, 1);
  return o::swapaxes(tape, o::reshape(tape, real, {G, C, T}), 1);
}

Tensor channel_attention(Tape& tape, const Tensor& patch,
                         const AttentionParams& p, const AttentionConfig&) {
  check_patch(patch);
  const std::size_t C = patch.shape()[0], s = patch.shape()[1];
  Tensor x = o::reshape(tape, patch, {1, C, s * s});
  return o::reshape(tape, ca_batch(tape, x, p), {C, 1, 1});
}

Tensor spatial_attention(Tape& tape, const Tensor& patch,
                         const AttentionParams& p, const AttentionConfig& cfg) {
  check_patch(patch);
  const std::size_t C = patch.shape()[0], s = patch.shape()[1];
  Tensor x = o::reshape(tape, patch, {1, C, s * s});
  return o::reshape(tape, sa_batch(tape, x, p, cfg, s), {1, s, s});
}

Tensor attention_map(Tape& tape, const Tensor& f_spa, const AttentionParams& p,
                     const AttentionConfig& cfg, std::size_t cell) {
  if (f_spa.rank() != 3)
    throw std::invalid_argument("attention_map: needs [C,H,W]");
  const std::size_t C = f_spa.shape()[0], H = f_spa.shape()[1],
                    W = f_spa.shape()[2];
  const std::size_t s2 = cell * cell;
  Tensor x = o::swapaxes(tape, o::split_cells(tape, f_spa, cell), 1);
  const std::size_t G = x.shape()[0];
  Tensor ca = ca_batch(tape, x, p);            // [G,C]
  Tensor sa = sa_batch(tape, x, p, cfg, cell);  // [G,s2]
  Tensor ca_flat = o::reshape(tape, ca, {1, G, C});
  Tensor sa_flat = o::reshape(tape, sa, {1, G, s2});
  Tensor ones_row = Tensor::full({1, s2}, 1.0);
  Tensor ones_col = Tensor::full({C, 1}, 1.0);
  std::vector<Tensor> parts;
  parts.reserve(G);
  for (std::size_t g = 0; g < G; ++g) {
    Tensor cg = o::reshape(tape, o::slice_mid(tape, ca_flat, g, g + 1),
                           {C, 1});
    Tensor sg = o::reshape(tape, o::slice_mid(tape, sa_flat, g, g + 1),
                           {1, s2});
    Tensor attn = o::mul(tape, o::matmul(tape, cg, ones_row),
                         o::matmul(tape, ones_col, sg));  // [C,s2]
    parts.push_back(
        o::reshape(tape, o::transpose2(tape, attn), {1, s2, C}));
  }
  return o::merge_cells(tape, o::concat0(tape, parts), H, W, cell);
}

Tensor fuse(Tape& tape, const Tensor& f_spa, const Tensor& f_fre,
            const AttentionParams& p, const AttentionConfig& cfg,
            std::size_t cell) {
  if (f_spa.shape() != f_fre.shape())
    throw std::invalid_argument("fuse: branch shapes differ");
  Tensor attn = attention_map(tape, f_spa, p, cfg, cell);
  Tensor keep = o::mul(tape, attn, f_spa);
  Tensor swap = o::mul(tape, o::add_const(tape, o::neg(tape, attn), 1.0),
                       f_fre);
  return o::add(tape, keep, swap);
}

}  // namespace vseg
