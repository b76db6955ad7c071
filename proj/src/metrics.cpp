#include "vesselseg/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <stdexcept>

namespace vseg {

namespace {

void check_extents(const Mask& p, const Mask& g, const char* op) {
  if (p.h != g.h || p.w != g.w)
    throw std::invalid_argument(std::string(op) + ": extent mismatch");
}

std::size_t inter_count(const Mask& a, const Mask& b) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < a.v.size(); ++i) n += a.v[i] & b.v[i];
  return n;
}

// neighbors clockwise from north: p2..p9
void neighborhood(const Mask& m, std::size_t r, std::size_t c, int p[8]) {
  static const int dr[8] = {-1, -1, 0, 1, 1, 1, 0, -1};
  static const int dc[8] = {0, 1, 1, 1, 0, -1, -1, -1};
  for (int k = 0; k < 8; ++k) {
    const std::ptrdiff_t rr = (std::ptrdiff_t)r + dr[k];
    const std::ptrdiff_t cc = (std::ptrdiff_t)c + dc[k];
    p[k] = (rr >= 0 && cc >= 0 && rr < (std::ptrdiff_t)m.h &&
            cc < (std::ptrdiff_t)m.w)
               ? m.v[(std::size_t)rr * m.w + (std::size_t)cc]
               : 0;
  }
}

bool thin_pass(Mask& m, bool second) {
  bool changed = false;
  int p[8];
  for (std::size_t r = 0; r < m.h; ++r)
    for (std::size_t c = 0; c < m.w; ++c) {
      if (!m.v[r * m.w + c]) continue;
      neighborhood(m, r, c, p);
      int b = 0, a = 0;
      for (int k = 0; k < 8; ++k) {
        b += p[k];
        if (!p[k] && p[(k + 1) % 8]) ++a;
      }
      if (b < 2 || b > 6 || a != 1) continue;
      // p[0]=N p[2]=E p[4]=S p[6]=W
      const bool ok = second ? (!(p[0] && p[2] && p[6]) &&
                                !(p[0] && p[4] && p[6]))
                             : (!(p[0] && p[2] && p[4]) &&
                                !(p[2] && p[4] && p[6]));
      if (!ok) continue;
      m.v[r * m.w + c] = 0;  // applied immediately; later pixels see it
      changed = true;
    }
  return changed;
}

Mask transform_mask(const Mask& m, int t) {
  Mask r = m;
  for (int k = 0; k < (t & 3); ++k) {  // quarter turns clockwise
    Mask q = Mask::zeros(r.w, r.h);
    for (std::size_t i = 0; i < r.h; ++i)
      for (std::size_t j = 0; j < r.w; ++j)
        q.v[j * q.w + (r.h - 1 - i)] = r.v[i * r.w + j];
    r = std::move(q);
  }
  if (t & 4) {  // mirror columns
    Mask q = Mask::zeros(r.h, r.w);
    for (std::size_t i = 0; i < r.h; ++i)
      for (std::size_t j = 0; j < r.w; ++j)
        q.v[i * q.w + (r.w - 1 - j)] = r.v[i * r.w + j];
    r = std::move(q);
  }
  return r;
}

// orientation key ignores which argument is which: the harmonic mean is
// symmetric, so any representative of the unordered pair gives one value
bool pair_less(const Mask& pa, const Mask& ga, const Mask& pb,
               const Mask& gb) {
  if (pa.h != pb.h) return pa.h < pb.h;
  if (pa.w != pb.w) return pa.w < pb.w;
  const auto* alo = &pa.v;
  const auto* ahi = &ga.v;
  if (*ahi < *alo) std::swap(alo, ahi);
  const auto* blo = &pb.v;
  const auto* bhi = &gb.v;
  if (*bhi < *blo) std::swap(blo, bhi);
  if (*alo != *blo) return *alo < *blo;
  return *ahi < *bhi;
}

}  // namespace

Mask mask_from_logits(const Tensor& logits, double threshold) {
  Shape s = logits.shape();
  if (s.size() == 3 && s[0] == 1) s = {s[1], s[2]};
  if (s.size() != 2)
    throw std::invalid_argument("mask_from_logits: needs [H,W] or [1,H,W]");
  if (!(threshold > 0.0 && threshold < 1.0))
    throw std::invalid_argument("mask_from_logits: threshold outside (0,1)");
  const double cut =
      threshold == 0.5 ? 0.0 : std::log(threshold / (1.0 - threshold));
  Mask m = Mask::zeros(s[0], s[1]);
  auto z = logits.values();
  for (std::size_t i = 0; i < m.v.size(); ++i) m.v[i] = z[i] > cut ? 1 : 0;
  return m;
}

double dice(const Mask& p, const Mask& g) {
  check_extents(p, g, "dice");
  const std::size_t np = p.count(), ng = g.count();
  if (np + ng == 0) return 1.0;
  return 2.0 * (double)inter_count(p, g) / (double)(np + ng);
}

Mask skeletonize(const Mask& m) {
  Mask s = m;
  for (;;) {
    const bool c1 = thin_pass(s, false);
    const bool c2 = thin_pass(s, true);
    if (!c1 && !c2) break;
  }
  return s;
}

double cldice(const Mask& p, const Mask& g) {
  check_extents(p, g, "cldice");
  // canonical orientation of the pair: shared flips/rotations cancel out
  Mask cp = p, cg = g;
  for (int t = 1; t < 8; ++t) {
    Mask tp = transform_mask(p, t), tg = transform_mask(g, t);
    if (pair_less(tp, tg, cp, cg)) {
      cp = std::move(tp);
      cg = std::move(tg);
    }
  }
  const Mask sp = skeletonize(cp), sg = skeletonize(cg);
  const std::size_t nsp = sp.count(), nsg = sg.count();
  const double tprec =
      nsp ? (double)inter_count(sp, cg) / (double)nsp : 0.0;
  const double tsens =
      nsg ? (double)inter_count(sg, cp) / (double)nsg : 0.0;
  if (tprec + tsens == 0.0) return 0.0;
  return 2.0 * tprec * tsens / (tprec + tsens);
}

std::size_t component_count(const Mask& m) {
  std::vector<std::int32_t> parent(m.v.size(), -1);
  std::vector<std::int32_t> rank_(m.v.size(), 0);
  auto find = [&](std::int32_t x) {
    while (parent[x] != x) {
      parent[x] = parent[parent[x]];
      x = parent[x];
    }
    return x;
  };
  auto unite = [&](std::int32_t a, std::int32_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return;
    if (rank_[a] < rank_[b]) std::swap(a, b);
    parent[b] = a;
    if (rank_[a] == rank_[b]) ++rank_[a];
  };
  for (std::size_t r = 0; r < m.h; ++r)
    for (std::size_t c = 0; c < m.w; ++c) {
      const std::size_t i = r * m.w + c;
      if (!m.v[i]) continue;
      parent[i] = (std::int32_t)i;
      // earlier-scanned neighbors: W, NW, N, NE
      static const int dr[4] = {0, -1, -1, -1};
      static const int dc[4] = {-1, -1, 0, 1};
      for (int k = 0; k < 4; ++k) {
        const std::ptrdiff_t rr = (std::ptrdiff_t)r + dr[k];
        const std::ptrdiff_t cc = (std::ptrdiff_t)c + dc[k];
        if (rr < 0 || cc < 0 || cc >= (std::ptrdiff_t)m.w) continue;
        const std::size_t j = (std::size_t)rr * m.w + (std::size_t)cc;
        if (m.v[j]) unite((std::int32_t)i, (std::int32_t)j);
      }
    }
  std::size_t roots = 0;
  for (std::size_t i = 0; i < parent.size(); ++i)
    if (parent[i] == (std::int32_t)i) ++roots;
  return roots;
}

double betti0_error(const Mask& p, const Mask& g) {
  check_extents(p, g, "betti0_error");
  const double a = (double)component_count(p);
  const double b = (double)component_count(g);
  return std::fabs(a - b);
}

void MetricsReport::add(double d, double c, double b) {
  dice_v.push_back(d);
  cldice_v.push_back(c);
  betti0_v.push_back(b);
}

namespace {
double mean_of(const std::vector<double>& v) {
  if (v.empty()) return 0.0;
  return std::accumulate(v.begin(), v.end(), 0.0) / (double)v.size();
}
}  // namespace

double MetricsReport::mean_dice() const { return mean_of(dice_v); }
double MetricsReport::mean_cldice() const { return mean_of(cldice_v); }
double MetricsReport::mean_betti0() const { return mean_of(betti0_v); }

std::string MetricsReport::lines() const {
  std::string out;
  char buf[160];
  for (std::size_t i = 0; i < dice_v.size(); ++i) {
    std::snprintf(buf, sizeof buf,
                  "image %zu dice %.17g cldice %.17g betti0 %.17g\n", i,
                  dice_v[i], cldice_v[i], betti0_v[i]);
    out += buf;
  }
  return out;
}

std::string MetricsReport::summary() const {
  char buf[256];
  std::snprintf(buf, sizeof buf,
                "images = %zu\ndice = %.17g\ncldice = %.17g\nbetti0 = %.17g\n",
                images(), mean_dice(), mean_cldice(), mean_betti0());
  return std::string(buf);
}

}  // namespace vseg
