#pragma once

#include <string>
#include <utility>
#include <vector>

#include "vesselseg/rng.hpp"
#include "vesselseg/tensor.hpp"

namespace vseg {

struct MixerConfig {
  std::size_t state_dim = 8;   // N
  std::size_t expand = 2;      // E; mixer works at E*C channels
  std::size_t conv_width = 4;  // causal depthwise conv taps
};

// One selective-state-space mixer direction. The state matrix is
// log-parameterized per channel and strictly negative, so every discrete
// decay factor lies in (0,1) for positive step sizes.
struct MambaParams {
  Tensor in_proj;   // [C, 2*E*C] -> data half + gate half
  Tensor in_bias;   // [2*E*C]
  Tensor conv_w;    // [E*C, k]
  Tensor conv_b;    // [E*C]
  Tensor dt_w;      // [E*C, E*C]; softplus keeps step sizes positive
  Tensor dt_b;      // [E*C]
  Tensor b_w;       // [E*C, N]
  Tensor c_w;       // [E*C, N]
  Tensor a_log;     // [E*C]
  Tensor d_skip;    // [E*C]
  Tensor out_proj;  // [E*C, C]
  Tensor out_bias;  // [C]
  bool passthrough = false;  // test hook: mixer becomes the identity
};

MambaParams init_mamba(std::size_t dim, const MixerConfig& cfg, Rng& rng);

void list_params(const MambaParams& p, const std::string& prefix,
                 std::vector<std::pair<std::string, Tensor>>& out);

// Full mixer over strings x [G,T,C]: in-projection, causal depthwise conv,
// SiLU, selective scan, SiLU gate, out-projection. Causal end to end.
Tensor mamba_mix(Tape& tape, const Tensor& x, const MambaParams& p,
                 const MixerConfig& cfg);

// tokens [G, L*s2, C] -> [G, s2, C]. The forward arm scans windows 0..c,
// the backward arm scans windows c..L-1 in reversed token order; each arm
// keeps its final s2 outputs (the center window's slots), the backward ones
// un-reversed, and the two are summed.
Tensor bidirectional_aggregate(Tape& tape, const Tensor& tokens,
                               const MambaParams& fwd, const MambaParams& bwd,
                               const MixerConfig& cfg, std::size_t chain_len,
                               std::size_t cell);

}  // namespace vseg
