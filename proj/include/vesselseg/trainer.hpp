#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vesselseg/data.hpp"
#include "vesselseg/metrics.hpp"
#include "vesselseg/network.hpp"

namespace vseg {

// Moment accumulators aligned one-to-one with a fixed parameter list.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::uint64_t t = 0;
  std::vector<std::vector<double>> m, v;
};

struct TrainConfig {
  std::size_t epochs = 50;
  double lr = 1e-4;
  std::size_t batch = 1;
  std::uint64_t seed = 0;
  std::size_t eval_interval = 1;  // epochs between held-out evaluations
  std::string checkpoint;         // best-on-validation model file
};

struct TrainResult {
  std::string log;        // one "step .. loss .." or "epoch .." line each
  double best_cldice = -1.0;
  std::size_t best_epoch = 0;
  MetricsReport final_eval;
};

// Initializes zero moments for each parameter; lr taken from the argument.
AdamState init_adam(const std::vector<std::pair<std::string, Tensor>>& params,
                    double lr);

// Standard bias-corrected update. Every gradient is checked before anything
// mutates, so a non-finite gradient refuses the whole step.
void adam_step(const std::vector<std::pair<std::string, Tensor>>& params,
               AdamState& state);

// Adam over shuffled per-epoch sample order (order seeded by train seed and
// epoch, so an epoch-boundary resume continues the identical trajectory).
// Logs every step loss; evaluates the held-out split every eval_interval
// epochs and keeps the best-clDice checkpoint at cfg.checkpoint, with a
// ".resume" sidecar holding optimizer state for continuation. A non-finite
// loss aborts with the failing step index.
TrainResult train(const TrainConfig& cfg, const ModelConfig& mcfg,
                  const std::vector<Sample>& train_set,
                  const std::vector<Sample>& val_set);

// Forward with gradients off, threshold 0.5, per-image dice/cldice/betti0.
MetricsReport evaluate(const SegmentationModel& model,
                       const std::vector<Sample>& dataset);

// Container: magic "SWMB", version, tensor table (name, dtype, rank, dims,
// raw little-endian payload), length-prefixed config text, CRC32 trailer.
// Save -> load -> save is byte-identical.
void save_checkpoint(const SegmentationModel& model, const std::string& path);
SegmentationModel load_checkpoint(const std::string& path);

// Applies a checkpoint's tensors onto an already-built model; any name or
// shape difference is an error listing the offending tensors.
void load_checkpoint_into(SegmentationModel& model, const std::string& path);

std::string serialize_config(const ModelConfig& cfg);
ModelConfig parse_config(const std::string& text);

}  // namespace vseg
