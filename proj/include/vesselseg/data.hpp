#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vesselseg/metrics.hpp"
#include "vesselseg/tensor.hpp"

namespace vseg {

// Procedural vessel-tree generator controls. Widths are diameters in pixels.
struct VesselGenParams {
  std::size_t size = 64;      // square image extent
  std::size_t trees = 3;      // independent trees per image
  std::size_t steps = 48;     // centerline steps per trunk
  double momentum = 0.8;      // direction smoothing, in [0,1]
  double branch_prob = 0.06;  // per-step chance of spawning a side branch
  double w0 = 3.0;            // root width
  double w1 = 1.0;            // tip width; w0 >= w1 >= 1
  double noise_sigma = 0.05;  // pixel noise; also scales illumination bias
  double contrast = 0.8;      // vessel intensity multiplier
  std::uint64_t seed = 1;
};

struct Sample {
  Tensor image;  // [H,W], values in [0,1]
  Mask mask;
  std::string id;
};

// Grows momentum-smoothed random walks with stochastic branching, rasterizes
// them as capsules whose width tapers linearly w0 -> w1 along each walk, then
// composes image = contrast * width-coded intensity + smooth illumination
// bias + Gaussian noise, clipped to [0,1]. The bias amplitude is tied to
// noise_sigma, so sigma 0 gives the exact no-noise, no-bias limit. Walks
// reflect off the borders instead of dying, which keeps every tree's mask
// 8-connected and its size predictable. Deterministic in the seed.
Sample generate_vessels(const VesselGenParams& p);

// Random crop to `crop` x `crop`, independent horizontal/vertical flips
// (p = 0.5 each), then rotation by k*90 degrees (k uniform in 0..3). The
// same pixel movement is applied to image and mask. Deterministic in seed.
Sample augment(const Sample& s, std::size_t crop, std::uint64_t seed);

// Reads <dir>/images/*.png|pgm paired with <dir>/masks/* by filename stem,
// sorted by stem. Images scale to [0,1]; masks binarize at 128. Throws on an
// unpaired stem or extent mismatch; an empty directory is just empty.
std::vector<Sample> load_dataset(const std::string& dir);

// Writes <dir>/images/<id>.<format> and <dir>/masks/<id>.<format>, creating
// the directories; format is "png" or "pgm". Masks use {0, 255}.
void save_sample(const std::string& dir, const Sample& s,
                 const std::string& format = "png");

}  // namespace vseg
