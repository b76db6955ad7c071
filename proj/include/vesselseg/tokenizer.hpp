#pragma once

#include <array>
#include <vector>

#include "vesselseg/tensor.hpp"

namespace vseg {

// Serpentine window chains: every s x s grid cell owns a string of L
// overlapping windows whose corners march outward from the cell corner with
// spacing alpha along one axis while the other axis drifts by learned
// offsets. Windows are sampled bilinearly, so the drift is trainable.
struct TokenizerConfig {
  std::size_t chain_len = 9;  // L: windows per string, odd
  std::size_t cell = 8;       // s: window side and grid interval
  double alpha = 2.0;         // corner spacing along the marching axis
  bool along_cols = false;    // false: rows march, columns drift
};

// Window-corner positions (row, col) = (h*s, w*s), row-major over cells.
// Throws when s does not divide an extent.
std::vector<std::array<std::size_t, 2>> anchor_grid(std::size_t h,
                                                    std::size_t w,
                                                    const TokenizerConfig& cfg);

// One [L,G] coordinate tensor per axis; row c = floor(L/2) holds the cell
// corners untouched by any offset.
struct AnchorStrings {
  Tensor rows;
  Tensor cols;
  std::size_t gh = 0, gw = 0;
};

// Stride-s convolution over f [C,H,W] with kernel [L,C,s,s] + tanh:
// one drift step per window slot per cell, each strictly inside (-1,1).
Tensor predict_offsets(Tape& tape, const Tensor& f, const Tensor& kernel,
                       const Tensor& bias, const TokenizerConfig& cfg);

// Grows both chain arms outward from the center: marching coordinate
// center +- alpha*i exactly; drifting coordinate accumulates alpha*offset
// of every window slot passed, center slot included.
AnchorStrings extend_anchors(Tape& tape, const Tensor& offsets,
                             const TokenizerConfig& cfg);

// [G*L*s*s, 2] sampling locations; token (g,l,m,n) sits at
// (rows[l,g] + m, cols[l,g] + n).
Tensor chain_coords(Tape& tape, const AnchorStrings& anchors,
                    const TokenizerConfig& cfg);

// Bilinear reads of f [C,H,W] at the chain locations -> [G, L*s*s, C].
Tensor sample_windows(Tape& tape, const Tensor& f, const Tensor& coords,
                      const TokenizerConfig& cfg);

struct TokenizeResult {
  Tensor tokens;          // [G, L*s*s, C]
  AnchorStrings anchors;  // for overlays and tests
  Tensor coords;          // [G*L*s*s, 2]
};

// offsets -> chains -> sampled windows in one call.
TokenizeResult tokenize(Tape& tape, const Tensor& f, const Tensor& kernel,
                        const Tensor& bias, const TokenizerConfig& cfg);

}  // namespace vseg
