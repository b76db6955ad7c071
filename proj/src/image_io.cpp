#include "vesselseg/image_io.hpp"

#include <cctype>
#include <cstdio>
#include <memory>
#include <stdexcept>

#ifdef VESSELSEG_HAVE_PNG
#include <png.h>

#include <csetjmp>
#endif

namespace vseg {

namespace {

struct FileCloser {
  void operator()(std::FILE* f) const {
    if (f) std::fclose(f);
  }
};
using FilePtr = std::unique_ptr<std::FILE, FileCloser>;

// whitespace and '#' comments between header tokens
unsigned pgm_token(std::FILE* f, const std::string& path) {
  int c;
  for (;;) {
    c = std::fgetc(f);
    if (c == '#') {
      while (c != '\n' && c != EOF) c = std::fgetc(f);
    } else if (!std::isspace(c)) {
      break;
    }
  }
  if (c == EOF || !std::isdigit(c))
    throw std::runtime_error("read_gray: malformed header in " + path);
  unsigned v = 0;
  while (std::isdigit(c)) {
    v = v * 10 + (unsigned)(c - '0');
    c = std::fgetc(f);
  }
  return v;
}

GrayImage read_pgm(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("read_gray: cannot open " + path);
  if (std::fgetc(f.get()) != 'P' || std::fgetc(f.get()) != '5')
    throw std::runtime_error("read_gray: not a P5 file: " + path);
  GrayImage img;
  img.w = pgm_token(f.get(), path);
  img.h = pgm_token(f.get(), path);
  const unsigned maxval = pgm_token(f.get(), path);
  if (maxval == 0 || maxval > 255)
    throw std::runtime_error("read_gray: unsupported maxval in " + path);
  img.px.resize(img.h * img.w);
  if (std::fread(img.px.data(), 1, img.px.size(), f.get()) != img.px.size())
    throw std::runtime_error("read_gray: truncated pixel data in " + path);
  return img;
}

void write_pgm(const std::string& path, const GrayImage& img) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("write_gray: cannot open " + path);
  std::fprintf(f.get(), "P5\n%zu %zu\n255\n", img.w, img.h);
  if (std::fwrite(img.px.data(), 1, img.px.size(), f.get()) != img.px.size())
    throw std::runtime_error("write_gray: short write to " + path);
}

#ifdef VESSELSEG_HAVE_PNG

GrayImage read_png(const std::string& path) {
  FilePtr f(std::fopen(path.c_str(), "rb"));
  if (!f) throw std::runtime_error("read_gray: cannot open " + path);
  png_structp pp =
      png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop ip = pp ? png_create_info_struct(pp) : nullptr;
  if (!ip) {
    png_destroy_read_struct(&pp, nullptr, nullptr);
    throw std::runtime_error("read_gray: png init failed");
  }
  if (setjmp(png_jmpbuf(pp))) {
    png_destroy_read_struct(&pp, &ip, nullptr);
    throw std::runtime_error("read_gray: corrupt png: " + path);
  }
  png_init_io(pp, f.get());
  png_read_info(pp, ip);
  const png_byte color = png_get_color_type(pp, ip);
  if (color != PNG_COLOR_TYPE_GRAY) {
    png_destroy_read_struct(&pp, &ip, nullptr);
    throw std::runtime_error("read_gray: not grayscale: " + path);
  }
  if (png_get_bit_depth(pp, ip) < 8) png_set_expand_gray_1_2_4_to_8(pp);
  if (png_get_bit_depth(pp, ip) == 16) png_set_strip_16(pp);
  png_read_update_info(pp, ip);
  GrayImage img;
  img.h = png_get_image_height(pp, ip);
  img.w = png_get_image_width(pp, ip);
  img.px.resize(img.h * img.w);
  std::vector<png_bytep> rows(img.h);
  for (std::size_t r = 0; r < img.h; ++r) rows[r] = img.px.data() + r * img.w;
  png_read_image(pp, rows.data());
  png_read_end(pp, nullptr);
  png_destroy_read_struct(&pp, &ip, nullptr);
  return img;
}

void write_png(const std::string& path, const GrayImage& img) {
  FilePtr f(std::fopen(path.c_str(), "wb"));
  if (!f) throw std::runtime_error("write_gray: cannot open " + path);
  png_structp pp = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr,
                                           nullptr, nullptr);
  png_infop ip = pp ? png_create_info_struct(pp) : nullptr;
  if (!ip) {
    png_destroy_write_struct(&pp, nullptr);
    throw std::runtime_error("write_gray: png init failed");
  }
  if (setjmp(png_jmpbuf(pp))) {
    png_destroy_write_struct(&pp, &ip);
    throw std::runtime_error("write_gray: png write failed: " + path);
  }
  png_init_io(pp, f.get());
  png_set_IHDR(pp, ip, (png_uint_32)img.w, (png_uint_32)img.h, 8,
               PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
               PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
  png_write_info(pp, ip);
  for (std::size_t r = 0; r < img.h; ++r)
    png_write_row(pp, const_cast<png_bytep>(img.px.data() + r * img.w));
  png_write_end(pp, nullptr);
  png_destroy_write_struct(&pp, &ip);
}

#endif  // VESSELSEG_HAVE_PNG

}  // namespace

GrayImage read_gray(const std::string& path) {
  if (path.ends_with(".pgm")) return read_pgm(path);
  if (path.ends_with(".png")) {
#ifdef VESSELSEG_HAVE_PNG
    return read_png(path);
#else
    throw std::runtime_error("read_gray: built without png support: " + path);
#endif
  }
  throw std::runtime_error("read_gray: unsupported extension: " + path);
}

void write_gray(const std::string& path, const GrayImage& img) {
  if (img.px.size() != img.h * img.w)
    throw std::invalid_argument("write_gray: pixel buffer extent mismatch");
  if (path.ends_with(".pgm")) return write_pgm(path, img);
  if (path.ends_with(".png")) {
#ifdef VESSELSEG_HAVE_PNG
    return write_png(path, img);
#else
    throw std::runtime_error("write_gray: built without png support: " + path);
#endif
  }
  throw std::runtime_error("write_gray: unsupported extension: " + path);
}

bool png_supported() {
#ifdef VESSELSEG_HAVE_PNG
  return true;
#else
  return false;
#endif
}

}  // namespace vseg
