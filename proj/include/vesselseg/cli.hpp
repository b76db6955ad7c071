#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "vesselseg/network.hpp"

namespace vseg::cli {

// Every knob a command reads, resolved defaults < config file < flags.
// File format: line-oriented `key = value`, `#` starts a comment. Keys use
// the serialized names below (geometry as L / s / alpha, ablation switches
// under a flags. prefix).
struct CliConfig {
  std::uint64_t seed = 1;
  std::string data_dir = "data";
  std::string out_dir = "out";
  std::size_t stages = 4;
  std::size_t base_channels = 16;
  std::size_t chain_len = 9;  // key: L
  std::size_t cell = 8;       // key: s
  double alpha = 2.0;
  std::size_t state_dim = 8;
  std::size_t epochs = 50;
  double lr = 1e-4;
  std::size_t crop = 64;
  bool use_bam = true;       // key: flags.use_bam
  bool use_swtoken = true;   // key: flags.use_swtoken
  bool use_freq = true;      // key: flags.use_freq
  bool use_sffu = true;      // key: flags.use_sffu
  std::size_t eval_interval = 1;
};

// Throws on an unknown key or a value that does not parse as the key's type.
void set_key(CliConfig& cfg, const std::string& key, const std::string& value);

// Empty path skips the file. Overrides are (key, value) pairs applied after
// the file, in order, so later entries win.
CliConfig parse_config(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& overrides = {});

// `key = value` lines in schema order; feeding the text back through
// parse_config reproduces the exact configuration.
std::string serialize(const CliConfig& cfg);

// Ablation rows by name: baseline (all off), m1 (+mixer), m2 (+serpentine
// strings), m3 (+frequency branch), full (+attention fusion). Throws on an
// unknown name.
void apply_preset(CliConfig& cfg, const std::string& name);

// Model geometry from the resolved settings; input extent = crop.
ModelConfig to_model_config(const CliConfig& cfg);

// Subcommands: gen-data, train, eval, tokenize-debug, grad-check, version.
// Args exclude the program name. Returns the process exit status; errors are
// printed, not thrown.
int run_command(const std::vector<std::string>& args);

}  // namespace vseg::cli
