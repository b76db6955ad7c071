#include "vesselseg/cli.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <stdexcept>

#include "CLI11.hpp"
#include "vesselseg/data.hpp"
#include "vesselseg/gradsuite.hpp"
#include "vesselseg/image_io.hpp"
#include "vesselseg/tokenizer.hpp"
#include "vesselseg/trainer.hpp"

#ifndef VESSELSEG_VERSION
#define VESSELSEG_VERSION "0.0.0"
#endif

namespace fs = std::filesystem;

namespace vseg::cli {
namespace {

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::uint64_t r = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key +
                             "' needs an unsigned integer, got '" + v + "'");
  }
}

double parse_f64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size() || !std::isfinite(r)) throw std::invalid_argument("");
    return r;
  } catch (const std::exception&) {
    throw std::runtime_error("config: key '" + key +
                             "' needs a finite number, got '" + v + "'");
  }
}

bool parse_flag(const std::string& key, const std::string& v) {
  if (v == "0" || v == "false") return false;
  if (v == "1" || v == "true") return true;
  throw std::runtime_error("config: key '" + key + "' needs 0 or 1, got '" +
                           v + "'");
}

std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

std::string fmt_f64(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::uint64_t derive(std::uint64_t seed, std::uint64_t n) {
  return seed ^ (0x9e3779b97f4a7c15ULL * (n + 1));
}

}  // namespace

void set_key(CliConfig& cfg, const std::string& key, const std::string& value) {
  if (key == "seed") cfg.seed = parse_u64(key, value);
  else if (key == "data_dir") cfg.data_dir = value;
  else if (key == "out_dir") cfg.out_dir = value;
  else if (key == "stages") cfg.stages = parse_u64(key, value);
  else if (key == "base_channels") cfg.base_channels = parse_u64(key, value);
  else if (key == "L") cfg.chain_len = parse_u64(key, value);
  else if (key == "s") cfg.cell = parse_u64(key, value);
  else if (key == "alpha") cfg.alpha = parse_f64(key, value);
  else if (key == "state_dim") cfg.state_dim = parse_u64(key, value);
  else if (key == "epochs") cfg.epochs = parse_u64(key, value);
  else if (key == "lr") cfg.lr = parse_f64(key, value);
  else if (key == "crop") cfg.crop = parse_u64(key, value);
  else if (key == "flags.use_bam") cfg.use_bam = parse_flag(key, value);
  else if (key == "flags.use_swtoken") cfg.use_swtoken = parse_flag(key, value);
  else if (key == "flags.use_freq") cfg.use_freq = parse_flag(key, value);
  else if (key == "flags.use_sffu") cfg.use_sffu = parse_flag(key, value);
  else if (key == "eval_interval") cfg.eval_interval = parse_u64(key, value);
  else throw std::runtime_error("config: unknown key '" + key + "'");
}

CliConfig parse_config(
    const std::string& path,
    const std::vector<std::pair<std::string, std::string>>& overrides) {
  CliConfig cfg;
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("config: cannot open " + path);
    std::string line;
    std::size_t ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      if (const auto hash = line.find('#'); hash != std::string::npos)
        line.erase(hash);
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::runtime_error("config: " + path + ":" +
                                 std::to_string(ln) + ": expected key = value");
      set_key(cfg, trim(line.substr(0, eq)), trim(line.substr(eq + 1)));
    }
  }
  for (const auto& [k, v] : overrides) set_key(cfg, k, v);
  return cfg;
}

std::string serialize(const CliConfig& cfg) {
  std::ostringstream out;
  out << "seed = " << cfg.seed << "\n";
  out << "data_dir = " << cfg.data_dir << "\n";
  out << "out_dir = " << cfg.out_dir << "\n";
  out << "stages = " << cfg.stages << "\n";
  out << "base_channels = " << cfg.base_channels << "\n";
  out << "L = " << cfg.chain_len << "\n";
  out << "s = " << cfg.cell << "\n";
  out << "alpha = " << fmt_f64(cfg.alpha) << "\n";
  out << "state_dim = " << cfg.state_dim << "\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "lr = " << fmt_f64(cfg.lr) << "\n";
  out << "crop = " << cfg.crop << "\n";
  out << "flags.use_bam = " << (cfg.use_bam ? 1 : 0) << "\n";
  out << "flags.use_swtoken = " << (cfg.use_swtoken ? 1 : 0) << "\n";
  out << "flags.use_freq = " << (cfg.use_freq ? 1 : 0) << "\n";
  out << "flags.use_sffu = " << (cfg.use_sffu ? 1 : 0) << "\n";
  out << "eval_interval = " << cfg.eval_interval << "\n";
  return out.str();
}

void apply_preset(CliConfig& cfg, const std::string& name) {
  bool v[4];
  if (name == "baseline") v[0] = v[1] = v[2] = v[3] = false;
  else if (name == "m1") v[0] = true, v[1] = v[2] = v[3] = false;
  else if (name == "m2") v[0] = v[1] = true, v[2] = v[3] = false;
  else if (name == "m3") v[0] = v[1] = v[2] = true, v[3] = false;
  else if (name == "full") v[0] = v[1] = v[2] = v[3] = true;
  else
    throw std::runtime_error(
        "preset: unknown name '" + name +
        "' (expected baseline, m1, m2, m3, or full)");
  cfg.use_bam = v[0];
  cfg.use_swtoken = v[1];
  cfg.use_freq = v[2];
  cfg.use_sffu = v[3];
}

ModelConfig to_model_config(const CliConfig& cfg) {
  ModelConfig m;
  m.stages = cfg.stages;
  m.base_channels = cfg.base_channels;
  m.input = cfg.crop;
  m.tok.chain_len = cfg.chain_len;
  m.tok.cell = cfg.cell;
  m.tok.alpha = cfg.alpha;
  m.mixer.state_dim = cfg.state_dim;
  m.use_bam = cfg.use_bam;
  m.use_swtoken = cfg.use_swtoken;
  m.use_freq = cfg.use_freq;
  m.use_sffu = cfg.use_sffu;
  m.seed = cfg.seed;
  return m;
}

namespace {

// One string slot per schema key so flag values survive until dispatch.
struct ConfigCapture {
  std::string file;
  std::string preset;
  struct KeyOpt {
    std::string key;
    std::string value;
    CLI::Option* opt = nullptr;
  };
  std::vector<KeyOpt> keys;

  CliConfig resolve() const {
    CliConfig cfg = parse_config(file);
    // preset before single-flag overrides, so --use-freq 0 can carve one
    // rung off a named row
    if (!preset.empty()) apply_preset(cfg, preset);
    for (const auto& ko : keys)
      if (ko.opt->count() > 0) set_key(cfg, ko.key, ko.value);
    return cfg;
  }
};

void add_config_options(CLI::App* cmd, ConfigCapture& cap) {
  static constexpr std::pair<const char*, const char*> table[] = {
      {"--seed", "seed"},
      {"--data-dir", "data_dir"},
      {"--out-dir", "out_dir"},
      {"--stages", "stages"},
      {"--base-channels", "base_channels"},
      {"--chain-len", "L"},
      {"--cell", "s"},
      {"--alpha", "alpha"},
      {"--state-dim", "state_dim"},
      {"--epochs", "epochs"},
      {"--lr", "lr"},
      {"--crop", "crop"},
      {"--eval-interval", "eval_interval"},
      {"--use-bam", "flags.use_bam"},
      {"--use-swtoken", "flags.use_swtoken"},
      {"--use-freq", "flags.use_freq"},
      {"--use-sffu", "flags.use_sffu"},
  };
  cmd->add_option("--config", cap.file,
                  "settings file, `key = value` lines with # comments");
  cmd->add_option("--preset", cap.preset,
                  "ablation row: baseline, m1, m2, m3, or full");
  cap.keys.reserve(std::size(table));
  for (const auto& [flag, key] : table) {
    cap.keys.push_back({key, "", nullptr});
    auto& ko = cap.keys.back();
    ko.opt = cmd->add_option(flag, ko.value,
                             std::string("config key ") + key);
  }
}

void echo_config(const CliConfig& cfg, const std::string& dir) {
  fs::create_directories(dir);
  std::ofstream out(dir + "/config.txt", std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + dir + "/config.txt");
  out << serialize(cfg);
}

int cmd_gen_data(const CliConfig& cfg) {
  VesselGenParams base;
  base.size = cfg.crop + 16;  // generate wide, then crop through augment
  const struct {
    const char* split;
    std::size_t count;
    std::uint64_t salt;
  } splits[] = {{"train", 200, 0}, {"test", 50, 1'000'000}};
  for (const auto& sp : splits) {
    const std::string dir = cfg.data_dir + "/" + sp.split;
    for (std::size_t i = 0; i < sp.count; ++i) {
      VesselGenParams p = base;
      p.seed = derive(cfg.seed, sp.salt + i);
      Sample s = augment(generate_vessels(p), cfg.crop,
                         derive(cfg.seed, sp.salt + i) ^ 0x517u);
      char id[32];
      std::snprintf(id, sizeof id, "v%03zu", i);
      s.id = id;
      save_sample(dir, s, png_supported() ? "png" : "pgm");
    }
    std::cout << sp.split << ": " << sp.count << " samples in " << dir
              << "\n";
  }
  echo_config(cfg, cfg.data_dir);
  return 0;
}

int cmd_train(const CliConfig& cfg) {
  const auto train_set = load_dataset(cfg.data_dir + "/train");
  const auto test_set = load_dataset(cfg.data_dir + "/test");
  if (train_set.empty() || test_set.empty())
    throw std::runtime_error("train: no samples under " + cfg.data_dir +
                             " (expected train/ and test/ splits)");
  echo_config(cfg, cfg.out_dir);
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.lr = cfg.lr;
  tc.seed = cfg.seed;
  tc.eval_interval = cfg.eval_interval;
  tc.checkpoint = cfg.out_dir + "/model.swmb";
  const TrainResult r = train(tc, to_model_config(cfg), train_set, test_set);
  {
    std::ofstream log(cfg.out_dir + "/train.log", std::ios::binary);
    if (!log) throw std::runtime_error("cannot write " + cfg.out_dir +
                                       "/train.log");
    log << r.log;
  }
  std::cout << "best cldice = " << fmt_f64(r.best_cldice) << " at epoch "
            << r.best_epoch << "\n"
            << r.final_eval.summary();
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& dir) {
  const SegmentationModel model = load_checkpoint(ckpt);
  const auto ds = load_dataset(dir);
  if (ds.empty())
    throw std::runtime_error("eval: no samples under " + dir);
  const MetricsReport rep = evaluate(model, ds);
  std::cout << rep.lines() << rep.summary();
  return 0;
}

// Window outlines of the straight (zero-offset) chains at one stage's
// resolution, scaled back onto the input image; window corners in black.
int cmd_tokenize_debug(const CliConfig& cfg, const std::string& image_path,
                       std::size_t stage, std::string out_path) {
  GrayImage img = read_gray(image_path);
  const std::size_t down = std::size_t{1} << stage;
  if (img.h % (cfg.cell * down) != 0 || img.w % (cfg.cell * down) != 0)
    throw std::runtime_error(
        "tokenize-debug: image extent must be divisible by cell * 2^stage");
  TokenizerConfig tc;
  tc.chain_len = cfg.chain_len;
  tc.cell = cfg.cell;
  tc.alpha = cfg.alpha;
  tc.along_cols = (stage % 2 == 1);
  const std::size_t h = img.h / down, w = img.w / down;
  const std::size_t gh = h / tc.cell, gw = w / tc.cell;
  Tape tape;
  tape.set_recording(false);
  AnchorStrings a = extend_anchors(
      tape, Tensor::zeros({tc.chain_len, gh, gw}), tc);
  GrayImage overlay = img;
  auto paint = [&](long r, long c, std::uint8_t v) {
    if (r < 0 || c < 0 || r >= (long)img.h || c >= (long)img.w) return;
    overlay.px[(std::size_t)r * img.w + (std::size_t)c] = v;
  };
  const long side = (long)(tc.cell * down);
  const std::size_t G = gh * gw;
  auto corner = [&](std::size_t l, std::size_t g) {
    return std::pair<long, long>{
        std::lround(a.rows.values()[l * G + g] * (double)down),
        std::lround(a.cols.values()[l * G + g] * (double)down)};
  };
  for (std::size_t l = 0; l < tc.chain_len; ++l)
    for (std::size_t g = 0; g < G; ++g) {
      const auto [r0, c0] = corner(l, g);
      for (long d = 0; d < side; ++d) {
        paint(r0, c0 + d, 255);
        paint(r0 + side - 1, c0 + d, 255);
        paint(r0 + d, c0, 255);
        paint(r0 + d, c0 + side - 1, 255);
      }
    }
  // anchor marks go on top so overlapping outlines cannot swallow them
  for (std::size_t l = 0; l < tc.chain_len; ++l)
    for (std::size_t g = 0; g < G; ++g) {
      const auto [r0, c0] = corner(l, g);
      paint(r0, c0, 0);
    }
  if (out_path.empty()) {
    out_path = cfg.out_dir + "/overlay_stage" + std::to_string(stage) + ".pgm";
    echo_config(cfg, cfg.out_dir);
  }
  if (const fs::path parent = fs::path(out_path).parent_path();
      !parent.empty())
    fs::create_directories(parent);
  write_gray(out_path, overlay);
  std::cout << "overlay: " << out_path << " (" << G << " strings of "
            << tc.chain_len << " windows)\n";
  return 0;
}

int cmd_grad_check() {
  const auto entries = gradient_suite();
  double worst = 0.0;
  char line[96];
  for (const auto& e : entries) {
    std::snprintf(line, sizeof line, "%-26s max rel err %.3e  (%zu points)",
                  e.name.c_str(), e.max_rel_err, e.points);
    std::cout << line << "\n";
    worst = std::max(worst, e.max_rel_err);
  }
  std::snprintf(line, sizeof line, "%zu items, worst %.3e, tolerance 1e-04",
                entries.size(), worst);
  std::cout << line << "\n";
  return worst < 1e-4 ? 0 : 1;
}

}  // namespace

int run_command(const std::vector<std::string>& args) {
  CLI::App app{"serpentine-window vessel segmentation toolkit"};
  app.name("vesselseg");
  app.require_subcommand(1);

  ConfigCapture gen_cap, train_cap, tok_cap;

  CLI::App* gen = app.add_subcommand(
      "gen-data", "write a synthetic vessel dataset (train + test splits)");
  add_config_options(gen, gen_cap);

  CLI::App* tr = app.add_subcommand(
      "train", "train on data_dir/train, select on data_dir/test");
  add_config_options(tr, train_cap);

  std::string eval_ckpt, eval_dir = "data/test";
  CLI::App* ev = app.add_subcommand(
      "eval", "score a checkpoint over a directory of images + masks");
  ev->add_option("--checkpoint", eval_ckpt, "model file to score")
      ->required();
  ev->add_option("--data-dir", eval_dir,
                 "directory holding images/ and masks/");

  std::string dbg_image, dbg_out;
  std::size_t dbg_stage = 0;
  CLI::App* dbg = app.add_subcommand(
      "tokenize-debug", "draw the stage's window chains over an image");
  add_config_options(dbg, tok_cap);
  dbg->add_option("--image", dbg_image, "grayscale png or pgm input")
      ->required();
  dbg->add_option("--stage", dbg_stage, "encoder stage (halves the extent)");
  dbg->add_option("--out", dbg_out, "overlay path (default under out_dir)");

  CLI::App* gc = app.add_subcommand(
      "grad-check", "central-difference check of every primitive and block");
  CLI::App* ver = app.add_subcommand("version", "print the toolkit version");

  for (CLI::App* sub : {gen, tr, ev, dbg, gc, ver})
    sub->failure_message(CLI::FailureMessage::help);
  app.failure_message(CLI::FailureMessage::help);

  try {
    std::vector<std::string> rev(args.rbegin(), args.rend());
    app.parse(std::move(rev));
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_cap.resolve());
    if (tr->parsed()) return cmd_train(train_cap.resolve());
    if (ev->parsed()) return cmd_eval(eval_ckpt, eval_dir);
    if (dbg->parsed())
      return cmd_tokenize_debug(tok_cap.resolve(), dbg_image, dbg_stage,
                                dbg_out);
    if (gc->parsed()) return cmd_grad_check();
    if (ver->parsed()) {
      std::cout << "vesselseg " << VESSELSEG_VERSION << "\n";
      return 0;
    }
  } catch (const std::exception& e) {
    std::cerr << "vesselseg: " << e.what() << "\n";
    return 1;
  }
  return 0;
}

}  // namespace vseg::cli
