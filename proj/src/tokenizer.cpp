#include "vesselseg/tokenizer.hpp"

#include <stdexcept>

#include "vesselseg/ops.hpp"

namespace vseg {

namespace o = ops;

namespace {

void validate(const TokenizerConfig& cfg) {
  if (cfg.chain_len == 0 || cfg.chain_len % 2 == 0)
    throw std::invalid_argument("tokenizer: chain length must be odd");
  if (cfg.cell == 0) throw std::invalid_argument("tokenizer: cell size zero");
}

}  // namespace

std::vector<std::array<std::size_t, 2>> anchor_grid(
    std::size_t h, std::size_t w, const TokenizerConfig& cfg) {
  validate(cfg);
  if (h % cfg.cell != 0 || w % cfg.cell != 0)
    throw std::invalid_argument(
        "anchor_grid: cell size must divide both extents");
  std::vector<std::array<std::size_t, 2>> centers;
  centers.reserve((h / cfg.cell) * (w / cfg.cell));
  for (std::size_t hh = 0; hh < h / cfg.cell; ++hh)
    for (std::size_t ww = 0; ww < w / cfg.cell; ++ww)
      centers.push_back({hh * cfg.cell, ww * cfg.cell});
  return centers;
}

Tensor predict_offsets(Tape& tape, const Tensor& f, const Tensor& kernel,
                       const Tensor& bias, const TokenizerConfig& cfg) {
  validate(cfg);
  if (kernel.rank() != 4 || kernel.shape()[0] != cfg.chain_len ||
      kernel.shape()[1] != f.shape()[0] || kernel.shape()[2] != cfg.cell ||
      kernel.shape()[3] != cfg.cell)
    throw std::invalid_argument("predict_offsets: kernel must be [L,C,s,s]");
  Tensor raw = o::conv2d(tape, f, kernel, bias, cfg.cell, 0);
  return o::tanh(tape, raw);
}

AnchorStrings extend_anchors(Tape& tape, const Tensor& offsets,
                             const TokenizerConfig& cfg) {
  validate(cfg);
  const std::size_t L = cfg.chain_len;
  if (offsets.rank() != 3 || offsets.shape()[0] != L)
    throw std::invalid_argument("extend_anchors: offsets must be [L,gh,gw]");
  const std::size_t gh = offsets.shape()[1], gw = offsets.shape()[2];
  const std::size_t G = gh * gw;
  const std::size_t c = L / 2;
  const double s = (double)cfg.cell;

  // constant center coordinates per cell, row-major
  Tensor center_drift = Tensor::zeros({1, G});
  Tensor march = Tensor::zeros({L, G});
  {
    double* cd = center_drift.values_mut().data();
    double* mv = march.values_mut().data();
    for (std::size_t g = 0; g < G; ++g) {
      const double row = (double)(g / gw) * s;
      const double col = (double)(g % gw) * s;
      cd[g] = cfg.along_cols ? row : col;
      const double base = cfg.along_cols ? col : row;
      for (std::size_t l = 0; l < L; ++l)
        mv[l * G + g] = base + cfg.alpha * ((double)l - (double)c);
    }
  }

  Tensor drift;
  if (L == 1) {
    drift = center_drift;
  } else {
    Tensor u = o::scale(tape, o::reshape(tape, offsets, {L, G}), cfg.alpha);
    Tensor u3 = o::reshape(tape, u, {1, L, G});
    // outward accumulation: prepend the center coordinate so the running sum
    // starts there, then read one row per window slot passed
    Tensor up_seq = o::concat0(
        tape, {center_drift,
               o::reshape(tape, o::slice_mid(tape, u3, c, L), {L - c, G})});
    Tensor up_cs =
        o::cumsum(tape, o::reshape(tape, up_seq, {1, L - c + 1, G}), 1);
    Tensor upper = o::reshape(
        tape, o::slice_mid(tape, up_cs, 2, L - c + 1), {L - 1 - c, G});

    Tensor low_rev =
        o::reverse_mid(tape, o::slice_mid(tape, u3, 0, c + 1));  // U_c..U_0
    Tensor low_seq = o::concat0(
        tape, {center_drift, o::reshape(tape, low_rev, {c + 1, G})});
    Tensor low_cs =
        o::cumsum(tape, o::reshape(tape, low_seq, {1, c + 2, G}), 1);
    Tensor lower = o::reshape(
        tape,
        o::reverse_mid(tape, o::slice_mid(tape, low_cs, 2, c + 2)),
        {c, G});

    drift = o::concat0(
        tape, {lower, center_drift, upper});  // slots 0..c-1, c, c+1..L-1
  }

  AnchorStrings out;
  out.gh = gh;
  out.gw = gw;
  if (cfg.along_cols) {
    out.rows = drift;
    out.cols = march;
  } else {
    out.rows = march;
    out.cols = drift;
  }
  return out;
}

Tensor chain_coords(Tape& tape, const AnchorStrings& anchors,
                    const TokenizerConfig& cfg) {
  validate(cfg);
  const std::size_t L = anchors.rows.shape()[0];
  const std::size_t G = anchors.rows.shape()[1];
  const std::size_t s = cfg.cell, s2 = s * s;
  const std::size_t P = G * L * s2;

  std::vector<std::size_t> pick(P);
  Tensor moff = Tensor::zeros({P});
  Tensor noff = Tensor::zeros({P});
  double* mo = moff.values_mut().data();
  double* no = noff.values_mut().data();
  std::size_t p = 0;
  for (std::size_t g = 0; g < G; ++g)
    for (std::size_t l = 0; l < L; ++l)
      for (std::size_t m = 0; m < s; ++m)
        for (std::size_t n = 0; n < s; ++n, ++p) {
          pick[p] = l * G + g;
          mo[p] = (double)m;
          no[p] = (double)n;
        }
  Tensor rows = o::add(tape, o::gather(tape, anchors.rows, pick, {P}), moff);
  Tensor cols =
      o::add(tape, o::gather(tape, anchors.cols, std::move(pick), {P}), noff);

  Tensor cat = o::concat0(tape, {rows, cols});  // [2P]
  std::vector<std::size_t> lace(2 * P);
  for (std::size_t i = 0; i < P; ++i) {
    lace[2 * i] = i;
    lace[2 * i + 1] = P + i;
  }
  return o::gather(tape, cat, std::move(lace), {P, 2});
}

Tensor sample_windows(Tape& tape, const Tensor& f, const Tensor& coords,
                      const TokenizerConfig& cfg) {
  validate(cfg);
  const std::size_t C = f.shape()[0], H = f.shape()[1], W = f.shape()[2];
  const std::size_t s2 = cfg.cell * cfg.cell;
  const std::size_t G = (H / cfg.cell) * (W / cfg.cell);
  const std::size_t P = coords.shape()[0];
  if (P != G * cfg.chain_len * s2)
    throw std::invalid_argument(
        "sample_windows: coords do not match the field's grid");
  Tensor flat = o::bilinear_sample(tape, f, coords);       // [C,P]
  Tensor by_token = o::transpose2(tape, flat);             // [P,C]
  return o::reshape(tape, by_token, {G, cfg.chain_len * s2, C});
}

TokenizeResult tokenize(Tape& tape, const Tensor& f, const Tensor& kernel,
                        const Tensor& bias, const TokenizerConfig& cfg) {
  validate(cfg);
  if (f.rank() != 3)
    throw std::invalid_argument("tokenize: field must be [C,H,W]");
  if (f.shape()[1] % cfg.cell != 0 || f.shape()[2] % cfg.cell != 0)
    throw std::invalid_argument("tokenize: cell size must divide extents");
  TokenizeResult r;
  Tensor offsets = predict_offsets(tape, f, kernel, bias, cfg);
  r.anchors = extend_anchors(tape, offsets, cfg);
  r.coords = chain_coords(tape, r.anchors, cfg);
  r.tokens = sample_windows(tape, f, r.coords, cfg);
  return r;
}

}  // namespace vseg
