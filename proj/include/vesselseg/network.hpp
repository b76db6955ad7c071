#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vesselseg/aggregator.hpp"
#include "vesselseg/fusion.hpp"
#include "vesselseg/tensor.hpp"
#include "vesselseg/tokenizer.hpp"

namespace vseg {

// Ablation flags are cumulative: each one requires the previous, giving the
// ladder  plain conv -> fixed-grid mixer -> serpentine strings -> +frequency
// branch (summed) -> +attention fusion.
struct ModelConfig {
  std::size_t stages = 4;
  std::size_t base_channels = 16;  // doubles per stage
  std::size_t input = 64;          // square extent
  TokenizerConfig tok;
  MixerConfig mixer;
  AttentionConfig attn;
  bool use_bam = true;
  bool use_swtoken = true;
  bool use_freq = true;
  bool use_sffu = true;
  std::uint64_t seed = 0;

  void validate() const;
  std::size_t channels(std::size_t stage) const;
};

struct ConvLayer {
  Tensor w;  // [Cout, Cin, k, k]
  Tensor b;  // [Cout]
};

struct StageBlock {
  ConvLayer plain;             // conv path when the mixer is off
  ConvLayer offset;            // serpentine offset predictor
  MambaParams spa_f, spa_b;    // spatial-branch mixers
  MambaParams fre_f, fre_b;    // frequency-branch mixers (2C wide)
  AttentionParams attn;        // fusion attention
};

struct SegmentationModel {
  ModelConfig cfg;
  ConvLayer stem;               // 1 -> base_channels
  std::vector<StageBlock> enc;  // one block per stage
  std::vector<ConvLayer> down;  // stride-2, stage i -> i+1
  std::vector<ConvLayer> up;    // skip-merge conv after doubling
  ConvLayer head;               // 1x1 -> 1 logit channel
};

// Deterministic from cfg.seed; identical configs give bit-identical weights.
SegmentationModel build_model(const ModelConfig& cfg);

std::vector<std::pair<std::string, Tensor>> named_params(
    const SegmentationModel& m);
std::size_t param_count(const SegmentationModel& m);

// One encoder block at a fixed extent. Pre-normalized token strings feed the
// mixer arms; the combined branch output is added back residually.
Tensor block_forward(Tape& tape, const Tensor& f, const StageBlock& blk,
                     const ModelConfig& cfg, std::size_t stage);

// image [1,H,W] -> logits [1,H,W]; the full U pass.
Tensor model_forward(Tape& tape, const SegmentationModel& m,
                     const Tensor& image);

// mean binary cross-entropy from logits plus (1 - soft Dice), smoothing 1.
Tensor segmentation_loss(Tape& tape, const Tensor& logits, const Tensor& mask);

}  // namespace vseg
