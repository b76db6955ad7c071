#include <cmath>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "ops_common.hpp"
#include "vesselseg/ops.hpp"

namespace vseg::ops {

namespace {

// Iterative radix-2 transform, exp(sign*2*pi*i*kn/N), no normalization.
void fft_pow2(std::vector<double>& re, std::vector<double>& im, int sign) {
  const std::size_t n = re.size();
  if (n <= 1) return;
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) {
      std::swap(re[i], re[j]);
      std::swap(im[i], im[j]);
    }
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = sign * 2.0 * std::numbers::pi / (double)len;
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t j = 0; j < len / 2; ++j) {
        const double wr = std::cos(ang * (double)j);
        const double wi = std::sin(ang * (double)j);
        const std::size_t a = i + j, b = i + j + len / 2;
        const double ur = re[a], ui = im[a];
        const double vr = re[b] * wr - im[b] * wi;
        const double vi = re[b] * wi + im[b] * wr;
        re[a] = ur + vr;
        im[a] = ui + vi;
        re[b] = ur - vr;
        im[b] = ui - vi;
      }
    }
  }
}

// 2-d transform of one s x s complex plane stored as separate planes.
void fft2_plane(double* re, double* im, std::size_t s, int sign,
                double scale) {
  std::vector<double> br(s), bi(s);
  for (std::size_t r = 0; r < s; ++r) {
    for (std::size_t c = 0; c < s; ++c) {
      br[c] = re[r * s + c];
      bi[c] = im[r * s + c];
    }
    fft_pow2(br, bi, sign);
    for (std::size_t c = 0; c < s; ++c) {
      re[r * s + c] = br[c];
      im[r * s + c] = bi[c];
    }
  }
  for (std::size_t c = 0; c < s; ++c) {
    for (std::size_t r = 0; r < s; ++r) {
      br[r] = re[r * s + c];
      bi[r] = im[r * s + c];
    }
    fft_pow2(br, bi, sign);
    for (std::size_t r = 0; r < s; ++r) {
      re[r * s + c] = br[r] * scale;
      im[r * s + c] = bi[r] * scale;
    }
  }
}

void transform_all(const double* src, double* dst, std::size_t batches,
                   std::size_t s, int sign, double scale) {
  const std::size_t plane = s * s;
  std::vector<double> re(plane), im(plane);
  for (std::size_t b = 0; b < batches; ++b) {
    const double* in = src + b * 2 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      re[i] = in[i];
      im[i] = in[plane + i];
    }
    fft2_plane(re.data(), im.data(), s, sign, scale);
    double* out = dst + b * 2 * plane;
    for (std::size_t i = 0; i < plane; ++i) {
      out[i] = re[i];
      out[plane + i] = im[i];
    }
  }
}

}  // namespace

Tensor fft2(Tape& tape, const Tensor& x, bool inverse) {
  const Shape& sh = x.shape();
  if (sh.size() < 3 || sh[sh.size() - 3] != 2 ||
      sh[sh.size() - 1] != sh[sh.size() - 2])
    throw std::invalid_argument("fft2: expects [...,2,s,s]");
  const std::size_t s = sh.back();
  if (s == 0 || (s & (s - 1)) != 0)
    throw std::invalid_argument("fft2: side must be a power of two");
  std::size_t batches = 1;
  for (std::size_t i = 0; i + 3 < sh.size(); ++i) batches *= sh[i];

  const int sign = inverse ? 1 : -1;
  const double scale = inverse ? 1.0 / (double)(s * s) : 1.0;
  auto out = make_result(sh, track(tape, x));
  transform_all(x.values().data(), out->value.data(), batches, s, sign, scale);
  check_finite(*out, "fft2");
  if (out->requires_grad) {
    auto xn = x.node();
    // The stacked-real Jacobian of a DFT is the same transform with the
    // opposite sign (the DFT matrix is symmetric), keeping the scale factor.
    tape.record([xn, out, batches, s, sign, scale]() {
      if (grad_empty(*out)) return;
      xn->ensure_grad();
      const std::size_t total = out->grad.size();
      std::vector<double> gx(total);
      transform_all(out->grad.data(), gx.data(), batches, s, -sign, scale);
      for (std::size_t i = 0; i < total; ++i) xn->grad[i] += gx[i];
    });
  }
  return Tensor::wrap(out);
}

}  // namespace vseg::ops
