#include "vesselseg/aggregator.hpp"

#include <cmath>
#include <stdexcept>

#include "vesselseg/ops.hpp"

namespace vseg {

namespace o = ops;

namespace {

Tensor uniform_fan_in(Shape shape, std::size_t fan_in, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  const double bound = 1.0 / std::sqrt((double)fan_in);
  for (double& v : t.values_mut()) v = rng.uniform(-bound, bound);
  return t;
}

}  // namespace

MambaParams init_mamba(std::size_t dim, const MixerConfig& cfg, Rng& rng) {
  const std::size_t ec = cfg.expand * dim;
  const std::size_t n = cfg.state_dim;
  MambaParams p;
  p.in_proj = uniform_fan_in({dim, 2 * ec}, dim, rng);
  p.in_bias = Tensor::zeros({2 * ec}, true);
  p.conv_w = uniform_fan_in({ec, cfg.conv_width}, cfg.conv_width, rng);
  p.conv_b = Tensor::zeros({ec}, true);
  p.dt_w = uniform_fan_in({ec, ec}, ec, rng);
  // softplus(bias) lands the initial step sizes in roughly [0.02, 0.12]
  p.dt_b = Tensor::zeros({ec}, true);
  for (double& v : p.dt_b.values_mut()) v = rng.uniform(-4.0, -2.0);
  p.b_w = uniform_fan_in({ec, n}, ec, rng);
  p.c_w = uniform_fan_in({ec, n}, ec, rng);
  // decay rate per channel = exp(a_log) scaled by the state index
  p.a_log = Tensor::zeros({ec}, true);
  for (double& v : p.a_log.values_mut()) v = rng.uniform(-1.0, 0.0);
  p.d_skip = Tensor::full({ec}, 1.0, true);
  p.out_proj = uniform_fan_in({ec, dim}, ec, rng);
  p.out_bias = Tensor::zeros({dim}, true);
  return p;
}

void list_params(const MambaParams& p, const std::string& prefix,
                 std::vector<std::pair<std::string, Tensor>>& out) {
  out.emplace_back(prefix + ".in_proj", p.in_proj);
  out.emplace_back(prefix + ".in_bias", p.in_bias);
  out.emplace_back(prefix + ".conv_w", p.conv_w);
  out.emplace_back(prefix + ".conv_b", p.conv_b);
  out.emplace_back(prefix + ".dt_w", p.dt_w);
  out.emplace_back(prefix + ".dt_b", p.dt_b);
  out.emplace_back(prefix + ".b_w", p.b_w);
  out.emplace_back(prefix + ".c_w", p.c_w);
  out.emplace_back(prefix + ".a_log", p.a_log);
  out.emplace_back(prefix + ".d_skip", p.d_skip);
  out.emplace_back(prefix + ".out_proj", p.out_proj);
  out.emplace_back(prefix + ".out_bias", p.out_bias);
}

Tensor mamba_mix(Tape& tape, const Tensor& x, const MambaParams& p,
                 const MixerConfig& cfg) {
  if (x.rank() != 3) throw std::invalid_argument("mamba_mix: needs [G,T,C]");
  if (p.passthrough) return x;
  const std::size_t G = x.shape()[0], T = x.shape()[1], C = x.shape()[2];
  const std::size_t ec = cfg.expand * C;
  if (p.in_proj.shape() != Shape{C, 2 * ec})
    throw std::invalid_argument("mamba_mix: params sized for another width");

  Tensor flat = o::reshape(tape, x, {G * T, C});
  Tensor proj =
      o::add(tape, o::matmul(tape, flat, p.in_proj), p.in_bias);
  Tensor proj3 = o::reshape(tape, proj, {G, T, 2 * ec});
  Tensor data = o::slice_last(tape, proj3, 0, ec);
  Tensor gate = o::slice_last(tape, proj3, ec, 2 * ec);

  Tensor xa =
      o::silu(tape, o::dwconv1d_causal(tape, data, p.conv_w, p.conv_b));
  Tensor flat2 = o::reshape(tape, xa, {G * T, ec});
  Tensor dt = o::softplus(
      tape, o::add(tape, o::matmul(tape, flat2, p.dt_w), p.dt_b));
  Tensor b_in = o::reshape(tape, o::matmul(tape, flat2, p.b_w),
                           {G, T, cfg.state_dim});
  Tensor c_out = o::reshape(tape, o::matmul(tape, flat2, p.c_w),
                            {G, T, cfg.state_dim});
  Tensor y = o::ssm_scan(tape, xa, o::reshape(tape, dt, {G, T, ec}), b_in,
                         c_out, p.a_log, p.d_skip);
  Tensor gated = o::mul(tape, y, o::silu(tape, gate));
  Tensor out = o::add(
      tape, o::matmul(tape, o::reshape(tape, gated, {G * T, ec}), p.out_proj),
      p.out_bias);
  return o::reshape(tape, out, {G, T, C});
}

Tensor bidirectional_aggregate(Tape& tape, const Tensor& tokens,
                               const MambaParams& fwd, const MambaParams& bwd,
                               const MixerConfig& cfg, std::size_t chain_len,
                               std::size_t cell) {
  if (tokens.rank() != 3)
    throw std::invalid_argument("bidirectional_aggregate: needs [G,L*s2,C]");
  const std::size_t s2 = cell * cell;
  const std::size_t c = chain_len / 2;
  if (tokens.shape()[1] != chain_len * s2)
    throw std::invalid_argument(
        "bidirectional_aggregate: token count does not match the chain");

  Tensor s_f = o::slice_mid(tape, tokens, 0, (c + 1) * s2);
  Tensor s_b = o::slice_mid(tape, tokens, c * s2, chain_len * s2);

  Tensor yf = mamba_mix(tape, s_f, fwd, cfg);
  Tensor f_tail = o::slice_mid(tape, yf, c * s2, (c + 1) * s2);

  Tensor yb = mamba_mix(tape, o::reverse_mid(tape, s_b), bwd, cfg);
  const std::size_t bt = (chain_len - c) * s2;
  Tensor b_tail = o::slice_mid(tape, yb, bt - s2, bt);
  Tensor b_out = o::reverse_mid(tape, b_tail);

  return o::add(tape, f_tail, b_out);
}

}  // namespace vseg
