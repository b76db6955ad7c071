#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vesselseg/tensor.hpp"

namespace vseg {

struct Mask {
  std::size_t h = 0, w = 0;
  std::vector<std::uint8_t> v;  // row-major, strictly {0,1}

  static Mask zeros(std::size_t h, std::size_t w) {
    return Mask{h, w, std::vector<std::uint8_t>(h * w, 0)};
  }
  std::uint8_t at(std::size_t r, std::size_t c) const { return v[r * w + c]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto x : v) n += x;
    return n;
  }
  bool operator==(const Mask& o) const {
    return h == o.h && w == o.w && v == o.v;
  }
};

// logits [H,W] or [1,H,W]; foreground where sigmoid(z) > threshold, i.e.
// z > log(t/(1-t)) — exactly z > 0 at the default.
Mask mask_from_logits(const Tensor& logits, double threshold = 0.5);

// 2|P∩G| / (|P|+|G|); two empty masks count as a perfect match.
double dice(const Mask& p, const Mask& g);

// Two-subiteration boundary thinning, 8-connected foreground. Pixels are
// re-examined against the partially thinned mask in raster order within each
// subiteration (deletions apply immediately), which keeps every component
// connected and nonempty. Subset of the input and idempotent.
Mask skeletonize(const Mask& m);

// Topology precision/sensitivity harmonic mean over skeletons:
// tprec = |skel(P)∩G|/|skel(P)|, tsens = |skel(G)∩P|/|skel(G)|; an empty
// skeleton zeroes its term, and the value is 0 when both terms vanish.
// Evaluated in a canonical orientation of the pair (lexicographic minimum
// over the eight flips/rotations applied to both masks, keyed on the
// unordered pair), so the reported value is exactly invariant to shared
// flips and rotations, and exactly symmetric in its arguments.
double cldice(const Mask& p, const Mask& g);

// Number of 8-connected foreground components (union-find).
std::size_t component_count(const Mask& m);

// |components(P) - components(G)|
double betti0_error(const Mask& p, const Mask& g);

struct MetricsReport {
  std::vector<double> dice_v, cldice_v, betti0_v;

  void add(double d, double c, double b);
  std::size_t images() const { return dice_v.size(); }
  double mean_dice() const;
  double mean_cldice() const;
  double mean_betti0() const;
  std::string lines() const;    // one line per image
  std::string summary() const;  // key = value block with the means
};

}  // namespace vseg
