#include <cmath>
#include <memory>
#include <stdexcept>
#include <vector>

#include "ops_common.hpp"
#include "vesselseg/ops.hpp"

namespace vseg::ops {

namespace {
// Steps between stored states. Backward re-runs the forward inside one
// segment at a time, so peak extra memory is (kSeg+1)*D*N doubles.
constexpr std::size_t kSeg = 64;
}  // namespace

Tensor ssm_scan(Tape& tape, const Tensor& u, const Tensor& dt,
                const Tensor& b_in, const Tensor& c_out, const Tensor& a_log,
                const Tensor& d_skip) {
  if (u.rank() != 3 || dt.shape() != u.shape())
    throw std::invalid_argument("ssm_scan: u and dt must both be [G,T,D]");
  const std::size_t G = u.shape()[0], T = u.shape()[1], D = u.shape()[2];
  if (b_in.rank() != 3 || c_out.shape() != b_in.shape() ||
      b_in.shape()[0] != G || b_in.shape()[1] != T)
    throw std::invalid_argument("ssm_scan: b_in/c_out must be [G,T,N]");
  const std::size_t N = b_in.shape()[2];
  if (a_log.shape() != Shape{D} || d_skip.shape() != Shape{D})
    throw std::invalid_argument("ssm_scan: a_log and d_skip must be [D]");

  bool needs = track(tape, u) || track(tape, dt) || track(tape, b_in) ||
               track(tape, c_out) || track(tape, a_log) ||
               track(tape, d_skip);
  auto out = make_result(u.shape(), needs);

  const double* uv = u.values().data();
  const double* dtv = dt.values().data();
  const double* bv = b_in.values().data();
  const double* cv = c_out.values().data();
  const double* av = a_log.values().data();
  const double* skv = d_skip.values().data();
  double* ov = out->value.data();

  std::vector<double> lam(D);
  for (std::size_t d = 0; d < D; ++d) lam[d] = std::exp(av[d]);

  const std::size_t segs = (T + kSeg - 1) / kSeg;
  // h snapshots taken right before steps 0, kSeg, 2*kSeg, ... of each string.
  auto ckpt =
      needs ? std::make_shared<std::vector<double>>(G * segs * D * N, 0.0)
            : nullptr;

  std::vector<double> h(D * N);
  for (std::size_t g = 0; g < G; ++g) {
    std::fill(h.begin(), h.end(), 0.0);
    for (std::size_t t = 0; t < T; ++t) {
      if (ckpt && t % kSeg == 0) {
        double* dst = ckpt->data() + ((g * segs) + t / kSeg) * D * N;
        for (std::size_t i = 0; i < D * N; ++i) dst[i] = h[i];
      }
      const double* bt = bv + (g * T + t) * N;
      const double* ct = cv + (g * T + t) * N;
      for (std::size_t d = 0; d < D; ++d) {
        const std::size_t td = (g * T + t) * D + d;
        const double q = std::exp(-dtv[td] * lam[d]);
        const double du = dtv[td] * uv[td];
        double* hd = h.data() + d * N;
        double y = skv[d] * uv[td];
        double qq = q;
        for (std::size_t n = 0; n < N; ++n) {
          hd[n] = qq * hd[n] + du * bt[n];
          y += ct[n] * hd[n];
          qq *= q;
        }
        ov[td] = y;
      }
    }
  }
  check_finite(*out, "ssm_scan");
  if (!needs) return Tensor::wrap(out);

  auto un = u.node();
  auto dtn = dt.node();
  auto bn = b_in.node();
  auto cn = c_out.node();
  auto an = a_log.node();
  auto skn = d_skip.node();
  const bool wu = track(tape, u), wdt = track(tape, dt),
             wb = track(tape, b_in), wc = track(tape, c_out),
             wa = track(tape, a_log), wsk = track(tape, d_skip);
  tape.record([=]() {
    if (grad_empty(*out)) return;
    if (wu) un->ensure_grad();
    if (wdt) dtn->ensure_grad();
    if (wb) bn->ensure_grad();
    if (wc) cn->ensure_grad();
    if (wa) an->ensure_grad();
    if (wsk) skn->ensure_grad();
    const double* uv = un->value.data();
    const double* dtv = dtn->value.data();
    const double* bv = bn->value.data();
    const double* cv = cn->value.data();
    const double* av = an->value.data();
    const double* skv = skn->value.data();
    const double* gy = out->grad.data();

    std::vector<double> lam(D);
    for (std::size_t d = 0; d < D; ++d) lam[d] = std::exp(av[d]);

    const std::size_t segs = (T + kSeg - 1) / kSeg;
    std::vector<double> gh(D * N);
    // states[j] = h before step t0+j within the segment being replayed
    std::vector<double> states((kSeg + 1) * D * N);
    for (std::size_t g = 0; g < G; ++g) {
      std::fill(gh.begin(), gh.end(), 0.0);
      for (std::size_t k = segs; k-- > 0;) {
        const std::size_t t0 = k * kSeg;
        const std::size_t len = std::min(kSeg, T - t0);
        const double* cp = ckpt->data() + ((g * segs) + k) * D * N;
        for (std::size_t i = 0; i < D * N; ++i) states[i] = cp[i];
        for (std::size_t j = 0; j < len; ++j) {
          const std::size_t t = t0 + j;
          const double* prev = states.data() + j * D * N;
          double* next = states.data() + (j + 1) * D * N;
          const double* bt = bv + (g * T + t) * N;
          for (std::size_t d = 0; d < D; ++d) {
            const std::size_t td = (g * T + t) * D + d;
            const double q = std::exp(-dtv[td] * lam[d]);
            const double du = dtv[td] * uv[td];
            const double* hp = prev + d * N;
            double* hn = next + d * N;
            double qq = q;
            for (std::size_t n = 0; n < N; ++n) {
              hn[n] = qq * hp[n] + du * bt[n];
              qq *= q;
            }
          }
        }
        for (std::size_t j = len; j-- > 0;) {
          const std::size_t t = t0 + j;
          const double* hprev = states.data() + j * D * N;
          const double* hcur = states.data() + (j + 1) * D * N;
          const double* bt = bv + (g * T + t) * N;
          const double* ct = cv + (g * T + t) * N;
          for (std::size_t d = 0; d < D; ++d) {
            const std::size_t td = (g * T + t) * D + d;
            const double go = gy[td];
            const double q = std::exp(-dtv[td] * lam[d]);
            const double* hp = hprev + d * N;
            const double* hc = hcur + d * N;
            double* ghd = gh.data() + d * N;
            if (wsk) skn->grad[d] += go * uv[td];
            double gu_acc = go * skv[d];
            double gdt_acc = 0.0;
            double ga_acc = 0.0;
            double qq = q;
            for (std::size_t n = 0; n < N; ++n) {
              double ghn = ghd[n] + go * ct[n];
              if (wc) cn->grad[(g * T + t) * N + n] += go * hc[n];
              const double gA = ghn * hp[n];
              const double decay_rate = (double)(n + 1) * lam[d];
              gdt_acc += -gA * decay_rate * qq + ghn * bt[n] * uv[td];
              ga_acc += -gA * dtv[td] * decay_rate * qq;
              if (wb)
                bn->grad[(g * T + t) * N + n] += ghn * dtv[td] * uv[td];
              gu_acc += ghn * dtv[td] * bt[n];
              ghd[n] = ghn * qq;
              qq *= q;
            }
            if (wu) un->grad[td] += gu_acc;
            if (wdt) dtn->grad[td] += gdt_acc;
            if (wa) an->grad[d] += ga_acc;
          }
        }
      }
    }
  });
  return Tensor::wrap(out);
}

}  // namespace vseg::ops
