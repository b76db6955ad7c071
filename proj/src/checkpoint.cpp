#include <zlib.h>

#include <cstdio>
#include <cstring>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>

#include "checkpoint_io.hpp"
#include "vesselseg/trainer.hpp"

namespace vseg {

namespace ckpt {

namespace {

constexpr char kMagic[4] = {'S', 'W', 'M', 'B'};
constexpr std::uint32_t kVersion = 1;

void put_u32(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back((char)((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back((char)((v >> (8 * i)) & 0xff));
}

void put_f64(std::string& out, double d) {
  std::uint64_t bits;
  std::memcpy(&bits, &d, 8);
  put_u64(out, bits);
}

struct Reader {
  const std::string& buf;
  std::size_t pos = 0;
  const std::string& path;

  void need(std::size_t n) const {
    if (pos + n > buf.size())
      throw std::runtime_error("load_checkpoint: truncated file: " + path);
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i)
      v |= (std::uint32_t)(std::uint8_t)buf[pos++] << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i)
      v |= (std::uint64_t)(std::uint8_t)buf[pos++] << (8 * i);
    return v;
  }
  double f64() {
    const std::uint64_t bits = u64();
    double d;
    std::memcpy(&d, &bits, 8);
    return d;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf.substr(pos, n);
    pos += n;
    return s;
  }
};

std::uint32_t crc_of(const std::string& s) {
  return (std::uint32_t)crc32(0L, (const Bytef*)s.data(), (uInt)s.size());
}

}  // namespace

void write_container(const std::string& path, const Container& c) {
  std::string out(kMagic, 4);
  put_u32(out, kVersion);
  put_u32(out, (std::uint32_t)c.tensors.size());
  for (const RawTensor& t : c.tensors) {
    put_u32(out, (std::uint32_t)t.name.size());
    out += t.name;
    out.push_back((char)1);  // dtype: 64-bit float
    out.push_back((char)t.shape.size());
    std::size_t n = 1;
    for (std::size_t d : t.shape) {
      put_u64(out, d);
      n *= d;
    }
    if (n != t.data.size())
      throw std::invalid_argument("save_checkpoint: element count mismatch: " +
                                  t.name);
    for (double v : t.data) put_f64(out, v);
  }
  put_u32(out, (std::uint32_t)c.config.size());
  out += c.config;
  put_u32(out, crc_of(out));

  std::FILE* f = std::fopen(path.c_str(), "wb");
  if (!f) throw std::runtime_error("save_checkpoint: cannot open " + path);
  const std::size_t wrote = std::fwrite(out.data(), 1, out.size(), f);
  std::fclose(f);
  if (wrote != out.size())
    throw std::runtime_error("save_checkpoint: short write to " + path);
}

Container read_container(const std::string& path) {
  std::string buf;
  {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char chunk[1 << 16];
    std::size_t n;
    while ((n = std::fread(chunk, 1, sizeof chunk, f)) > 0)
      buf.append(chunk, n);
    std::fclose(f);
  }
  if (buf.size() < 16 || std::memcmp(buf.data(), kMagic, 4) != 0)
    throw std::runtime_error("load_checkpoint: magic mismatch: " + path);
  const std::string body = buf.substr(0, buf.size() - 4);
  Reader tail{buf, buf.size() - 4, path};
  if (tail.u32() != crc_of(body))
    throw std::runtime_error("load_checkpoint: checksum mismatch: " + path);

  Reader r{buf, 4, path};
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw std::runtime_error("load_checkpoint: unknown version " +
                             std::to_string(version) + ": " + path);
  Container c;
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    RawTensor t;
    t.name = r.bytes(r.u32());
    r.need(2);
    const int dtype = (std::uint8_t)buf[r.pos++];
    const int rank = (std::uint8_t)buf[r.pos++];
    if (dtype != 1)
      throw std::runtime_error("load_checkpoint: unsupported dtype for " +
                               t.name);
    std::size_t n = 1;
    for (int d = 0; d < rank; ++d) {
      t.shape.push_back(r.u64());
      n *= t.shape.back();
    }
    t.data.reserve(n);
    for (std::size_t k = 0; k < n; ++k) t.data.push_back(r.f64());
    c.tensors.push_back(std::move(t));
  }
  c.config = r.bytes(r.u32());
  if (r.pos != buf.size() - 4)
    throw std::runtime_error("load_checkpoint: trailing bytes in " + path);
  return c;
}

}  // namespace ckpt

namespace {

std::string fmt_double(double v) {
  char b[40];
  std::snprintf(b, sizeof b, "%.17g", v);
  return b;
}

}  // namespace

std::string serialize_config(const ModelConfig& cfg) {
  std::ostringstream o;
  o << "stages = " << cfg.stages << "\n";
  o << "base_channels = " << cfg.base_channels << "\n";
  o << "input = " << cfg.input << "\n";
  o << "chain_len = " << cfg.tok.chain_len << "\n";
  o << "cell = " << cfg.tok.cell << "\n";
  o << "alpha = " << fmt_double(cfg.tok.alpha) << "\n";
  o << "along_cols = " << (cfg.tok.along_cols ? 1 : 0) << "\n";
  o << "state_dim = " << cfg.mixer.state_dim << "\n";
  o << "expand = " << cfg.mixer.expand << "\n";
  o << "conv_width = " << cfg.mixer.conv_width << "\n";
  o << "reduction = " << cfg.attn.reduction << "\n";
  o << "attn_kernel = " << cfg.attn.kernel << "\n";
  o << "use_bam = " << (cfg.use_bam ? 1 : 0) << "\n";
  o << "use_swtoken = " << (cfg.use_swtoken ? 1 : 0) << "\n";
  o << "use_freq = " << (cfg.use_freq ? 1 : 0) << "\n";
  o << "use_sffu = " << (cfg.use_sffu ? 1 : 0) << "\n";
  o << "seed = " << cfg.seed << "\n";
  return o.str();
}

ModelConfig parse_config(const std::string& text) {
  ModelConfig cfg;
  std::istringstream in(text);
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const std::size_t eq = line.find(" = ");
    if (eq == std::string::npos)
      throw std::runtime_error("parse_config: malformed line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 3);
    if (key == "stages")
      cfg.stages = std::stoull(val);
    else if (key == "base_channels")
      cfg.base_channels = std::stoull(val);
    else if (key == "input")
      cfg.input = std::stoull(val);
    else if (key == "chain_len")
      cfg.tok.chain_len = std::stoull(val);
    else if (key == "cell")
      cfg.tok.cell = std::stoull(val);
    else if (key == "alpha")
      cfg.tok.alpha = std::stod(val);
    else if (key == "along_cols")
      cfg.tok.along_cols = std::stoull(val) != 0;
    else if (key == "state_dim")
      cfg.mixer.state_dim = std::stoull(val);
    else if (key == "expand")
      cfg.mixer.expand = std::stoull(val);
    else if (key == "conv_width")
      cfg.mixer.conv_width = std::stoull(val);
    else if (key == "reduction")
      cfg.attn.reduction = std::stoull(val);
    else if (key == "attn_kernel")
      cfg.attn.kernel = std::stoull(val);
    else if (key == "use_bam")
      cfg.use_bam = std::stoull(val) != 0;
    else if (key == "use_swtoken")
      cfg.use_swtoken = std::stoull(val) != 0;
    else if (key == "use_freq")
      cfg.use_freq = std::stoull(val) != 0;
    else if (key == "use_sffu")
      cfg.use_sffu = std::stoull(val) != 0;
    else if (key == "seed")
      cfg.seed = std::stoull(val);
    else
      throw std::runtime_error("parse_config: unknown key: " + key);
  }
  return cfg;
}

void save_checkpoint(const SegmentationModel& model, const std::string& path) {
  ckpt::Container c;
  for (const auto& [name, t] : named_params(model)) {
    auto vals = t.values();
    c.tensors.push_back(
        {name, t.shape(), std::vector<double>(vals.begin(), vals.end())});
  }
  c.config = serialize_config(model.cfg);
  ckpt::write_container(path, c);
}

namespace {

void apply_tensors(SegmentationModel& model, const ckpt::Container& c,
                   const std::string& path) {
  std::map<std::string, Tensor> want;
  for (const auto& [name, t] : named_params(model)) want.emplace(name, t);
  std::string missing, extra, badshape;
  for (const auto& rt : c.tensors) {
    auto it = want.find(rt.name);
    if (it == want.end()) {
      extra += " " + rt.name;
      continue;
    }
    if (it->second.shape() != rt.shape) {
      badshape += " " + rt.name;
      continue;
    }
    auto dst = it->second.values_mut();
    std::copy(rt.data.begin(), rt.data.end(), dst.begin());
    want.erase(it);
  }
  for (const auto& [name, t] : want) missing += " " + name;
  if (!missing.empty() || !extra.empty() || !badshape.empty())
    throw std::runtime_error(
        "load_checkpoint: tensor mismatch in " + path +
        (missing.empty() ? "" : "; missing:" + missing) +
        (extra.empty() ? "" : "; unexpected:" + extra) +
        (badshape.empty() ? "" : "; shape mismatch:" + badshape));
}

}  // namespace

SegmentationModel load_checkpoint(const std::string& path) {
  const ckpt::Container c = ckpt::read_container(path);
  SegmentationModel model = build_model(parse_config(c.config));
  apply_tensors(model, c, path);
  return model;
}

void load_checkpoint_into(SegmentationModel& model, const std::string& path) {
  apply_tensors(model, ckpt::read_container(path), path);
}

}  // namespace vseg
