#include "vesselseg/data.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <map>
#include <numbers>
#include <stdexcept>
#include <vector>

#include "vesselseg/image_io.hpp"
#include "vesselseg/rng.hpp"

namespace fs = std::filesystem;

namespace vseg {

namespace {

struct Walk {
  double x, y, dx, dy;
  double width;  // at the walk's start; tapers to w1 at its tip
  std::size_t steps;
};

// intensity is a pure function of the local width, so a fixed width paints a
// single plateau
double width_intensity(double w, double w0) { return 0.5 + 0.5 * (w / w0); }

void stamp(std::vector<double>& val, std::vector<std::uint8_t>& mask,
           std::size_t n, double x, double y, double radius, double inten) {
  const std::ptrdiff_t cx = (std::ptrdiff_t)std::lround(x);
  const std::ptrdiff_t cy = (std::ptrdiff_t)std::lround(y);
  const std::ptrdiff_t r = (std::ptrdiff_t)std::ceil(radius);
  for (std::ptrdiff_t py = cy - r; py <= cy + r; ++py)
    for (std::ptrdiff_t px = cx - r; px <= cx + r; ++px) {
      if (px < 0 || py < 0 || px >= (std::ptrdiff_t)n ||
          py >= (std::ptrdiff_t)n)
        continue;
      const double ddx = (double)px - x, ddy = (double)py - y;
      const bool inside = ddx * ddx + ddy * ddy <= radius * radius;
      // the nearest pixel is always painted so sample chains stay 8-connected
      if (!inside && !(px == cx && py == cy)) continue;
      const std::size_t i = (std::size_t)py * n + (std::size_t)px;
      mask[i] = 1;
      if (inten > val[i]) val[i] = inten;
    }
}

void check_params(const VesselGenParams& p) {
  if (p.size == 0) throw std::invalid_argument("generate_vessels: zero size");
  if (p.steps == 0)
    throw std::invalid_argument("generate_vessels: zero steps");
  if (p.trees == 0)
    throw std::invalid_argument("generate_vessels: zero trees");
  if (!(p.w0 >= p.w1 && p.w1 >= 1.0))
    throw std::invalid_argument("generate_vessels: widths need w0 >= w1 >= 1");
  if (!(p.momentum >= 0.0 && p.momentum <= 1.0))
    throw std::invalid_argument("generate_vessels: momentum outside [0,1]");
}

std::string stem_of(const fs::path& p) { return p.stem().string(); }

bool known_ext(const fs::path& p) {
  const std::string e = p.extension().string();
  return e == ".png" || e == ".pgm";
}

}  // namespace

Sample generate_vessels(const VesselGenParams& p) {
  check_params(p);
  const std::size_t n = p.size;
  Rng rng(p.seed);
  std::vector<double> val(n * n, 0.0);
  Mask mask = Mask::zeros(n, n);

  // bias field first so its draws don't depend on tree growth
  const double ba = rng.uniform(-1.0, 1.0), bb = rng.uniform(-1.0, 1.0),
               bc = rng.uniform(-1.0, 1.0);

  const double lo = 1.0, hi = (double)n - 2.0;  // reflecting walls
  for (std::size_t t = 0; t < p.trees; ++t) {
    std::vector<Walk> todo;
    const double x0 = rng.uniform(0.2 * (double)n, 0.8 * (double)n);
    const double y0 = rng.uniform(0.2 * (double)n, 0.8 * (double)n);
    const double a0 = rng.uniform(0.0, 2.0 * std::numbers::pi);
    todo.push_back({x0, y0, std::cos(a0), std::sin(a0), p.w0, p.steps});
    while (!todo.empty()) {
      Walk w = todo.back();
      todo.pop_back();
      double x = w.x, y = w.y, dx = w.dx, dy = w.dy;
      for (std::size_t k = 0; k < w.steps; ++k) {
        const double frac =
            w.steps > 1 ? (double)k / (double)(w.steps - 1) : 1.0;
        const double width = w.width + (p.w1 - w.width) * frac;
        const double na = rng.uniform(0.0, 2.0 * std::numbers::pi);
        dx = p.momentum * dx + (1.0 - p.momentum) * std::cos(na);
        dy = p.momentum * dy + (1.0 - p.momentum) * std::sin(na);
        const double norm = std::hypot(dx, dy);
        if (norm > 1e-9) {
          dx /= norm;
          dy /= norm;
        }
        if (x + dx < lo || x + dx > hi) dx = -dx;
        if (y + dy < lo || y + dy > hi) dy = -dy;
        // half-pixel sampling keeps consecutive stamps 8-adjacent
        const double inten = width_intensity(width, p.w0);
        stamp(val, mask.v, n, x + 0.5 * dx, y + 0.5 * dy, 0.5 * width, inten);
        x += dx;
        y += dy;
        stamp(val, mask.v, n, x, y, 0.5 * width, inten);
        if (k + 1 < w.steps && rng.uniform() < p.branch_prob) {
          const double turn =
              (rng.uniform() < 0.5 ? 1.0 : -1.0) * rng.uniform(0.5, 1.1);
          const double ca = std::cos(turn), sa = std::sin(turn);
          const std::size_t left = (w.steps - k) / 2;
          if (left >= 2)
            todo.push_back(
                {x, y, dx * ca - dy * sa, dx * sa + dy * ca, width, left});
        }
      }
    }
  }

  Tensor image = Tensor::zeros({n, n});
  auto iv = image.values_mut();
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) {
      const double xf = (double)c / (double)(n - 1) - 0.5;
      const double yf = (double)r / (double)(n - 1) - 0.5;
      const double bias =
          p.noise_sigma * (ba * xf + bb * yf + bc * 2.0 * xf * yf);
      double v = p.contrast * val[r * n + c] + bias +
                 p.noise_sigma * rng.gaussian();
      iv[r * n + c] = std::min(1.0, std::max(0.0, v));
    }
  return {image, std::move(mask), ""};
}

Sample augment(const Sample& s, std::size_t crop, std::uint64_t seed) {
  const std::size_t h = s.mask.h, w = s.mask.w;
  if (s.image.shape() != Shape{h, w})
    throw std::invalid_argument("augment: image and mask extents differ");
  if (crop > h || crop > w)
    throw std::invalid_argument("augment: crop larger than image");
  Rng rng(seed);
  const std::size_t oy = rng.below(h - crop + 1);
  const std::size_t ox = rng.below(w - crop + 1);
  const bool hflip = rng.uniform() < 0.5;
  const bool vflip = rng.uniform() < 0.5;
  const std::size_t quarter = rng.below(4);

  auto src = s.image.values();
  Tensor image = Tensor::zeros({crop, crop});
  auto dst = image.values_mut();
  Mask mask = Mask::zeros(crop, crop);
  for (std::size_t r = 0; r < crop; ++r)
    for (std::size_t c = 0; c < crop; ++c) {
      std::size_t rr = r, cc = c;
      // invert the output-side transforms: rotation first, then flips
      for (std::size_t q = 0; q < quarter; ++q) {
        const std::size_t pr = rr;
        rr = crop - 1 - cc;  // undo one clockwise quarter turn
        cc = pr;
      }
      if (hflip) cc = crop - 1 - cc;
      if (vflip) rr = crop - 1 - rr;
      const std::size_t si = (oy + rr) * w + (ox + cc);
      dst[r * crop + c] = src[si];
      mask.v[r * crop + c] = s.mask.v[si];
    }
  return {image, std::move(mask), s.id};
}

void save_sample(const std::string& dir, const Sample& s,
                 const std::string& format) {
  if (format != "png" && format != "pgm")
    throw std::invalid_argument("save_sample: format must be png or pgm");
  if (s.id.empty()) throw std::invalid_argument("save_sample: empty id");
  fs::create_directories(fs::path(dir) / "images");
  fs::create_directories(fs::path(dir) / "masks");
  GrayImage gi;
  gi.h = s.mask.h;
  gi.w = s.mask.w;
  gi.px.resize(gi.h * gi.w);
  auto iv = s.image.values();
  for (std::size_t i = 0; i < gi.px.size(); ++i) {
    const double v = std::min(1.0, std::max(0.0, iv[i]));
    gi.px[i] = (std::uint8_t)std::lround(v * 255.0);
  }
  const std::string name = s.id + "." + format;
  write_gray((fs::path(dir) / "images" / name).string(), gi);
  for (std::size_t i = 0; i < gi.px.size(); ++i)
    gi.px[i] = s.mask.v[i] ? 255 : 0;
  write_gray((fs::path(dir) / "masks" / name).string(), gi);
}

std::vector<Sample> load_dataset(const std::string& dir) {
  const fs::path images = fs::path(dir) / "images";
  const fs::path masks = fs::path(dir) / "masks";
  if (!fs::is_directory(images) || !fs::is_directory(masks))
    throw std::runtime_error("load_dataset: " + dir +
                             " needs images/ and masks/");
  std::map<std::string, fs::path> imap, mmap;
  for (const auto& e : fs::directory_iterator(images))
    if (e.is_regular_file() && known_ext(e.path()))
      imap[stem_of(e.path())] = e.path();
  for (const auto& e : fs::directory_iterator(masks))
    if (e.is_regular_file() && known_ext(e.path()))
      mmap[stem_of(e.path())] = e.path();
  for (const auto& [stem, path] : mmap)
    if (!imap.count(stem))
      throw std::runtime_error("load_dataset: mask without image: " + stem);

  std::vector<Sample> out;
  for (const auto& [stem, ipath] : imap) {
    auto mit = mmap.find(stem);
    if (mit == mmap.end())
      throw std::runtime_error("load_dataset: image without mask: " + stem);
    const GrayImage gi = read_gray(ipath.string());
    const GrayImage gm = read_gray(mit->second.string());
    if (gi.h != gm.h || gi.w != gm.w)
      throw std::runtime_error("load_dataset: extent mismatch: " + stem);
    Sample s;
    s.id = stem;
    s.image = Tensor::zeros({gi.h, gi.w});
    auto iv = s.image.values_mut();
    for (std::size_t i = 0; i < gi.px.size(); ++i)
      iv[i] = (double)gi.px[i] / 255.0;
    s.mask = Mask::zeros(gm.h, gm.w);
    for (std::size_t i = 0; i < gm.px.size(); ++i)
      s.mask.v[i] = gm.px[i] >= 128 ? 1 : 0;
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace vseg
