#include "vesselseg/network.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "vesselseg/ops.hpp"

namespace vseg {

namespace o = ops;

namespace {

ConvLayer init_conv(std::size_t cout, std::size_t cin, std::size_t k,
                    Rng& rng) {
  ConvLayer l;
  l.w = Tensor::zeros({cout, cin, k, k}, true);
  const double bound = 1.0 / std::sqrt((double)(cin * k * k));
  for (double& v : l.w.values_mut()) v = rng.uniform(-bound, bound);
  l.b = Tensor::zeros({cout}, true);
  return l;
}

// per-pixel channel normalization of a [C,H,W] map
Tensor map_norm(Tape& tape, const Tensor& f) {
  const std::size_t C = f.shape()[0], hw = f.shape()[1] * f.shape()[2];
  Tensor r = o::transpose2(tape, o::reshape(tape, f, {C, hw}));
  r = o::layer_norm(tape, r);
  return o::reshape(tape, o::transpose2(tape, r), f.shape());
}

}  // namespace

void ModelConfig::validate() const {
  if (stages == 0) throw std::invalid_argument("config: needs at least one stage");
  if (base_channels == 0) throw std::invalid_argument("config: zero channels");
  const std::size_t granule = tok.cell << (stages - 1);
  if (input == 0 || input % granule != 0)
    throw std::invalid_argument(
        "config: input extent must be a multiple of cell * 2^(stages-1)");
  if (tok.chain_len % 2 == 0)
    throw std::invalid_argument("config: chain length must be odd");
  if ((use_swtoken && !use_bam) || (use_freq && !use_swtoken) ||
      (use_sffu && !use_freq))
    throw std::invalid_argument(
        "config: ablation flags are cumulative (bam < swtoken < freq < sffu)");
  if (use_sffu && base_channels < attn.reduction)
    throw std::invalid_argument(
        "config: base channel count below the attention reduction ratio");
}

std::size_t ModelConfig::channels(std::size_t stage) const {
  return base_channels << stage;
}

SegmentationModel build_model(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed ^ 0x5eed5eed5eed5eedULL);
  SegmentationModel m;
  m.cfg = cfg;
  m.stem = init_conv(cfg.channels(0), 1, 3, rng);
  for (std::size_t i = 0; i < cfg.stages; ++i) {
    const std::size_t C = cfg.channels(i);
    StageBlock blk;
    if (!cfg.use_bam) {
      blk.plain = init_conv(C, C, 3, rng);
    } else {
      if (cfg.use_swtoken)
        blk.offset = init_conv(cfg.tok.chain_len, C, cfg.tok.cell, rng);
      blk.spa_f = init_mamba(C, cfg.mixer, rng);
      blk.spa_b = init_mamba(C, cfg.mixer, rng);
      if (cfg.use_freq) {
        blk.fre_f = init_mamba(2 * C, cfg.mixer, rng);
        blk.fre_b = init_mamba(2 * C, cfg.mixer, rng);
      }
      if (cfg.use_sffu) blk.attn = init_attention(C, cfg.attn, rng);
    }
    m.enc.push_back(std::move(blk));
    if (i + 1 < cfg.stages)
      m.down.push_back(init_conv(cfg.channels(i + 1), C, 3, rng));
  }
  for (std::size_t i = 0; i + 1 < cfg.stages; ++i)
    m.up.push_back(
        init_conv(cfg.channels(i), cfg.channels(i + 1) + cfg.channels(i), 3,
                  rng));
  m.head = init_conv(1, cfg.channels(0), 1, rng);
  return m;
}

std::vector<std::pair<std::string, Tensor>> named_params(
    const SegmentationModel& m) {
  std::vector<std::pair<std::string, Tensor>> out;
  auto conv = [&](const std::string& name, const ConvLayer& l) {
    if (!l.w.defined()) return;
    out.emplace_back(name + ".w", l.w);
    out.emplace_back(name + ".b", l.b);
  };
  conv("stem", m.stem);
  for (std::size_t i = 0; i < m.enc.size(); ++i) {
    const std::string p = "enc" + std::to_string(i);
    const StageBlock& b = m.enc[i];
    conv(p + ".plain", b.plain);
    conv(p + ".offset", b.offset);
    if (b.spa_f.in_proj.defined()) {
      list_params(b.spa_f, p + ".spa_f", out);
      list_params(b.spa_b, p + ".spa_b", out);
    }
    if (b.fre_f.in_proj.defined()) {
      list_params(b.fre_f, p + ".fre_f", out);
      list_params(b.fre_b, p + ".fre_b", out);
    }
    if (b.attn.ca_w1.defined()) list_params(b.attn, p + ".attn", out);
  }
  for (std::size_t i = 0; i < m.down.size(); ++i)
    conv("down" + std::to_string(i), m.down[i]);
  for (std::size_t i = 0; i < m.up.size(); ++i)
    conv("up" + std::to_string(i), m.up[i]);
  conv("head", m.head);
  return out;
}

std::size_t param_count(const SegmentationModel& m) {
  std::size_t n = 0;
  for (auto& [_, t] : named_params(m)) n += t.size();
  return n;
}

Tensor block_forward(Tape& tape, const Tensor& f, const StageBlock& blk,
                     const ModelConfig& cfg, std::size_t stage) {
  if (f.rank() != 3) throw std::invalid_argument("block_forward: needs [C,H,W]");
  const std::size_t H = f.shape()[1], W = f.shape()[2];
  if (!cfg.use_bam) {
    Tensor y = o::silu(tape, o::conv2d(tape, f, blk.plain.w, blk.plain.b, 1, 1));
    return o::add(tape, f, y);
  }
  const std::size_t s = cfg.tok.cell;
  if (H % s != 0 || W % s != 0)
    throw std::invalid_argument(
        "block_forward: extent not divisible by the cell size");
  Tensor fn = map_norm(tape, f);
  Tensor tokens;
  std::size_t chain = 1;
  if (cfg.use_swtoken) {
    TokenizerConfig tc = cfg.tok;
    tc.along_cols = (stage % 2 == 1);  // orientation alternates per stage
    tokens = tokenize(tape, fn, blk.offset.w, blk.offset.b, tc).tokens;
    chain = tc.chain_len;
  } else {
    tokens = o::split_cells(tape, fn, s);  // each cell is its own window
  }
  Tensor spa =
      bidirectional_aggregate(tape, tokens, blk.spa_f, blk.spa_b, cfg.mixer,
                              chain, s);
  Tensor f_spa = o::merge_cells(tape, spa, H, W, s);
  Tensor combined = f_spa;
  if (cfg.use_freq) {
    Tensor spec = window_fft(tape, tokens, s);
    Tensor agg = bidirectional_aggregate(tape, spec, blk.fre_f, blk.fre_b,
                                         cfg.mixer, chain, s);
    Tensor f_fre = o::merge_cells(tape, window_ifft(tape, agg, s), H, W, s);
    combined = cfg.use_sffu
                   ? fuse(tape, f_spa, f_fre, blk.attn, cfg.attn, s)
                   : o::add(tape, f_spa, f_fre);
  }
  return o::add(tape, f, combined);
}

Tensor model_forward(Tape& tape, const SegmentationModel& m,
                     const Tensor& image) {
  const ModelConfig& cfg = m.cfg;
  if (image.rank() != 3 || image.shape()[0] != 1)
    throw std::invalid_argument("model_forward: needs [1,H,W]");
  const std::size_t granule = cfg.tok.cell << (cfg.stages - 1);
  if (image.shape()[1] % granule != 0 || image.shape()[2] % granule != 0)
    throw std::invalid_argument(
        "model_forward: extent not divisible by cell * 2^(stages-1)");
  Tensor x = o::conv2d(tape, image, m.stem.w, m.stem.b, 1, 1);
  std::vector<Tensor> skips;
  for (std::size_t i = 0; i < cfg.stages; ++i) {
    try {
      x = block_forward(tape, x, m.enc[i], cfg, i);
    } catch (const std::runtime_error& e) {
      throw std::runtime_error("model_forward: stage " + std::to_string(i) +
                               ": " + e.what());
    }
    skips.push_back(x);
    if (i + 1 < cfg.stages)
      x = o::silu(tape, o::conv2d(tape, x, m.down[i].w, m.down[i].b, 2, 1));
  }
  for (std::size_t i = cfg.stages - 1; i-- > 0;) {
    Tensor upx = o::upsample2(tape, x);
    Tensor cat = o::concat0(tape, {upx, skips[i]});
    x = o::silu(tape, o::conv2d(tape, cat, m.up[i].w, m.up[i].b, 1, 1));
  }
  return o::conv2d(tape, x, m.head.w, m.head.b, 1, 0);
}

Tensor segmentation_loss(Tape& tape, const Tensor& logits, const Tensor& mask) {
  if (logits.shape() != mask.shape())
    throw std::invalid_argument("segmentation_loss: shape mismatch");
  for (double v : mask.values())
    if (v != 0.0 && v != 1.0)
      throw std::invalid_argument("segmentation_loss: mask must be binary");
  const double n = (double)logits.size();
  Tensor rz = o::relu(tape, logits);
  Tensor az = o::add(tape, rz, o::relu(tape, o::neg(tape, logits)));
  Tensor bce_el = o::add(tape, o::sub(tape, rz, o::mul(tape, logits, mask)),
                         o::softplus(tape, o::neg(tape, az)));
  Tensor bce = o::scale(tape, o::sum_all(tape, bce_el), 1.0 / n);
  Tensor p = o::sigmoid(tape, logits);
  Tensor inter = o::sum_all(tape, o::mul(tape, p, mask));
  Tensor denom = o::add_const(
      tape, o::add(tape, o::sum_all(tape, p), o::sum_all(tape, mask)), 1.0);
  Tensor dice = o::div(tape, o::add_const(tape, o::scale(tape, inter, 2.0), 1.0),
                       denom);
  return o::add(tape, bce, o::add_const(tape, o::neg(tape, dice), 1.0));
}

}  // namespace vseg
