#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vesselseg/rng.hpp"
#include "vesselseg/tensor.hpp"

namespace vseg {

struct AttentionConfig {
  std::size_t reduction = 4;  // channel-attention MLP squeeze ratio
  std::size_t kernel = 7;     // spatial-attention conv extent (odd)
};

struct AttentionParams {
  Tensor ca_w1;  // [C, C/r]
  Tensor ca_b1;  // [C/r]
  Tensor ca_w2;  // [C/r, C]
  Tensor ca_b2;  // [C]
  Tensor sa_w;   // [1, 2, k, k] over stacked channel-avg / channel-max
  Tensor sa_b;   // [1]
};

AttentionParams init_attention(std::size_t channels, const AttentionConfig& cfg,
                               Rng& rng);

void list_params(const AttentionParams& p, const std::string& prefix,
                 std::vector<std::pair<std::string, Tensor>>& out);

// Per-window 2-d DFT of token strings [G,T,C] (T a multiple of cell^2; each
// consecutive cell^2 run is one window in row-major slot order). Real and
// imaginary parts come back stacked on the channel axis: [0..C) real,
// [C..2C) imaginary. Unnormalized forward transform; linear and
// differentiable.
Tensor window_fft(Tape& tape, const Tensor& ws, std::size_t cell);

// Inverse of window_fft: [G,T,2C] -> [G,T,C], keeping the real part. If
// imag_residue is given it receives the largest |imaginary| component of the
// inverse transform (0 for any spectrum of a real signal).
Tensor window_ifft(Tape& tape, const Tensor& ws, std::size_t cell,
                   double* imag_residue = nullptr);

// patch [C,s,s] -> [C,1,1]: sigmoid(MLP(avgpool) + MLP(maxpool)), pooling
// over the spatial extent, one shared two-layer MLP with hidden width C/r.
Tensor channel_attention(Tape& tape, const Tensor& patch,
                         const AttentionParams& p, const AttentionConfig& cfg);

// patch [C,s,s] -> [1,s,s]: sigmoid(conv_k(stack(channel-avg, channel-max)))
// with padding preserving the extent.
Tensor spatial_attention(Tape& tape, const Tensor& patch,
                         const AttentionParams& p, const AttentionConfig& cfg);

// Per non-overlapping s-by-s patch of f_spa: spatial map times channel map,
// broadcast to [C,s,s]; assembled back to [C,H,W]. Values in (0,1).
Tensor attention_map(Tape& tape, const Tensor& f_spa, const AttentionParams& p,
                     const AttentionConfig& cfg, std::size_t cell);

// attn * f_spa + (1 - attn) * f_fre with attn computed from f_spa alone, so
// the result lies between the two inputs at every coordinate.
Tensor fuse(Tape& tape, const Tensor& f_spa, const Tensor& f_fre,
            const AttentionParams& p, const AttentionConfig& cfg,
            std::size_t cell);

}  // namespace vseg
