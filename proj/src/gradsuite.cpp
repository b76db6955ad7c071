#include "vesselseg/gradsuite.hpp"

#include <cmath>
#include <cstdlib>
#include <functional>
#include <stdexcept>
#include <utility>

#include "vesselseg/aggregator.hpp"
#include "vesselseg/fusion.hpp"
#include "vesselseg/gradcheck.hpp"
#include "vesselseg/network.hpp"
#include "vesselseg/ops.hpp"
#include "vesselseg/rng.hpp"
#include "vesselseg/tensor.hpp"
#include "vesselseg/tokenizer.hpp"

namespace vseg {
namespace {

namespace o = ops;

Tensor leaf(Shape shape, Rng& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (double& v : t.values_mut()) v = rng.gaussian();
  return t;
}

// Gaussian magnitudes pushed away from zero; safe denominators and a safe
// side of the relu kink under the probe's finite step.
Tensor leaf_away_from(Shape shape, double margin, Rng& rng) {
  Tensor t = leaf(std::move(shape), rng);
  for (double& v : t.values_mut()) v = std::copysign(margin + std::fabs(v), v);
  return t;
}

// Distinct values along `axis` (gap >= 0.05) so the running argmax cannot
// flip under the probe step.
Tensor leaf_separated(Shape shape, std::size_t axis, Rng& rng) {
  const std::size_t n = shape_numel(shape);
  std::size_t inner = 1;
  for (std::size_t d = axis + 1; d < shape.size(); ++d) inner *= shape[d];
  const std::size_t extent = shape[axis];
  for (int attempt = 0; attempt < 200; ++attempt) {
    Tensor t = leaf(shape, rng);
    auto v = t.values();
    bool ok = true;
    for (std::size_t base = 0; base < n && ok; ++base) {
      if ((base / inner) % extent != 0) continue;  // group start only
      for (std::size_t i = 0; i < extent && ok; ++i)
        for (std::size_t j = i + 1; j < extent; ++j)
          if (std::fabs(v[base + i * inner] - v[base + j * inner]) < 0.05) {
            ok = false;
            break;
          }
    }
    if (ok) return t;
  }
  throw std::runtime_error("gradient_suite: could not separate max groups");
}

using Fn = std::function<Tensor(Tape&)>;

struct Item {
  std::string name;
  std::vector<Tensor> leaves;
  Fn fn;
};

// Scalarize with squares so every output coordinate carries a distinct,
// sign-bearing adjoint; plain sums let cancelling errors hide.
Fn squared(std::function<Tensor(Tape&)> build) {
  return [build = std::move(build)](Tape& t) {
    Tensor y = build(t);
    return o::sum_all(t, o::mul(t, y, y));
  };
}

std::uint64_t mix(std::uint64_t seed, std::size_t salt) {
  return seed ^ (0x9e3779b97f4a7c15ULL * (salt + 1));
}

void add_primitives(std::vector<Item>& items, Rng& rng) {
  {
    Tensor a = leaf({4, 6}, rng), b = leaf({6}, rng);  // broadcast adjoint
    items.push_back({"add", {a, b}, squared([=](Tape& t) {
                       return o::add(t, a, b);
                     })});
  }
  {
    Tensor a = leaf({4, 6}, rng), b = leaf({4, 6}, rng);
    items.push_back({"sub", {a, b}, squared([=](Tape& t) {
                       return o::sub(t, a, b);
                     })});
  }
  {
    Tensor a = leaf({4, 6}, rng), b = leaf({6}, rng);
    items.push_back({"mul", {a, b}, squared([=](Tape& t) {
                       return o::mul(t, a, b);
                     })});
  }
  {
    Tensor a = leaf({4, 6}, rng), b = leaf_away_from({4, 6}, 0.5, rng);
    items.push_back({"div", {a, b}, squared([=](Tape& t) {
                       return o::div(t, a, b);
                     })});
  }
  {
    Tensor x = leaf({4, 6}, rng);
    items.push_back({"scale", {x}, squared([=](Tape& t) {
                       return o::scale(t, x, -1.37);
                     })});
    items.push_back({"add_const", {x}, squared([=](Tape& t) {
                       return o::add_const(t, x, 0.61);
                     })});
    items.push_back({"neg", {x}, squared([=](Tape& t) {
                       return o::neg(t, x);
                     })});
    items.push_back({"tanh", {x}, squared([=](Tape& t) {
                       return o::tanh(t, x);
                     })});
    items.push_back({"sigmoid", {x}, squared([=](Tape& t) {
                       return o::sigmoid(t, x);
                     })});
    items.push_back({"softplus", {x}, squared([=](Tape& t) {
                       return o::softplus(t, x);
                     })});
    items.push_back({"silu", {x}, squared([=](Tape& t) {
                       return o::silu(t, x);
                     })});
  }
  {
    Tensor x = leaf({4, 6}, rng);  // fresh draw keeps exp magnitudes tame
    items.push_back({"exp", {x}, squared([=](Tape& t) {
                       return o::exp(t, o::scale(t, x, 0.5));
                     })});
  }
  {
    Tensor x = leaf_away_from({4, 6}, 0.3, rng);
    items.push_back({"relu", {x}, squared([=](Tape& t) {
                       return o::relu(t, x);
                     })});
  }
  {
    Tensor a = leaf({4, 5}, rng), b = leaf({5, 3}, rng);
    items.push_back({"matmul", {a, b}, squared([=](Tape& t) {
                       return o::matmul(t, a, b);
                     })});
  }
  {
    Tensor x = leaf({2, 5, 5}, rng);
    Tensor k = leaf({3, 2, 3, 3}, rng);
    Tensor b = leaf({3}, rng);
    items.push_back({"conv2d", {x, k, b}, squared([=](Tape& t) {
                       return o::conv2d(t, x, k, b, 2, 1);
                     })});
  }
  {
    Tensor x = leaf({2, 5, 3}, rng);
    Tensor w = leaf({3, 4}, rng);
    Tensor b = leaf({3}, rng);
    items.push_back({"dwconv1d_causal", {x, w, b}, squared([=](Tape& t) {
                       return o::dwconv1d_causal(t, x, w, b);
                     })});
  }
  {
    Tensor x = leaf({4, 6}, rng);
    std::vector<std::size_t> idx;
    for (std::size_t i = 0; i < 24; ++i) idx.push_back(rng.below(24));
    items.push_back({"gather", {x}, squared([=](Tape& t) {
                       return o::gather(t, x, idx, {4, 6});
                     })});
  }
  {
    Tensor a = leaf({3, 4}, rng), b = leaf({2, 4}, rng), c = leaf({2, 4}, rng);
    items.push_back({"concat0", {a, b, c}, squared([=](Tape& t) {
                       return o::concat0(t, {a, b, c});
                     })});
  }
  {
    Tensor x = leaf({4, 6}, rng);
    items.push_back({"reshape", {x}, squared([=](Tape& t) {
                       return o::reshape(t, x, {3, 8});
                     })});
    items.push_back({"transpose2", {x}, squared([=](Tape& t) {
                       return o::transpose2(t, x);
                     })});
  }
  {
    Tensor x = leaf({2, 3, 4}, rng);
    items.push_back({"swapaxes", {x}, squared([=](Tape& t) {
                       return o::swapaxes(t, x, 1);
                     })});
  }
  {
    Tensor x = leaf({2, 7, 3}, rng);
    items.push_back({"slice_mid", {x}, squared([=](Tape& t) {
                       return o::slice_mid(t, x, 2, 6);
                     })});
    items.push_back({"reverse_mid", {x}, squared([=](Tape& t) {
                       return o::reverse_mid(t, x);
                     })});
  }
  {
    Tensor x = leaf({2, 3, 5}, rng);
    items.push_back({"slice_last", {x}, squared([=](Tape& t) {
                       return o::slice_last(t, x, 1, 4);
                     })});
  }
  {
    Tensor f = leaf({2, 4, 6}, rng);
    items.push_back({"split_cells", {f}, squared([=](Tape& t) {
                       return o::split_cells(t, f, 2);
                     })});
  }
  {
    Tensor x = leaf({6, 4, 2}, rng);
    items.push_back({"merge_cells", {x}, squared([=](Tape& t) {
                       return o::merge_cells(t, x, 4, 6, 2);
                     })});
  }
  {
    Tensor x = leaf({2, 3, 4}, rng);
    items.push_back({"upsample2", {x}, squared([=](Tape& t) {
                       return o::upsample2(t, x);
                     })});
    items.push_back({"cumsum", {x}, squared([=](Tape& t) {
                       return o::cumsum(t, x, 1);
                     })});
    items.push_back({"sum_axis", {x}, squared([=](Tape& t) {
                       return o::sum_axis(t, x, 1);
                     })});
    items.push_back({"mean_axis", {x}, squared([=](Tape& t) {
                       return o::mean_axis(t, x, 2);
                     })});
  }
  {
    Tensor x = leaf({4, 6}, rng);
    items.push_back({"sum_all", {x}, [=](Tape& t) {
                       // already scalar; square once for a varied adjoint
                       Tensor s = o::sum_all(t, x);
                       return o::mul(t, s, s);
                     }});
  }
  {
    Tensor x = leaf_separated({3, 8}, 1, rng);
    items.push_back({"max_axis", {x}, squared([=](Tape& t) {
                       return o::max_axis(t, x, 1);
                     })});
  }
  {
    Tensor x = leaf({3, 7}, rng);
    items.push_back({"layer_norm", {x}, squared([=](Tape& t) {
                       return o::layer_norm(t, x);
                     })});
  }
  {
    Tensor f = leaf({2, 5, 5}, rng);
    // cell-interior fractions: the probe step never crosses a lattice line
    Tensor c = Tensor::zeros({12, 2}, true);
    for (double& v : c.values_mut())
      v = (double)rng.below(4) + rng.uniform(0.25, 0.75);
    items.push_back({"bilinear_sample", {f, c}, squared([=](Tape& t) {
                       return o::bilinear_sample(t, f, c);
                     })});
  }
  {
    Tensor x = leaf({2, 2, 4, 4}, rng);
    items.push_back({"fft2", {x}, squared([=](Tape& t) {
                       return o::fft2(t, x, false);
                     })});
    items.push_back({"fft2_inverse", {x}, squared([=](Tape& t) {
                       return o::fft2(t, x, true);
                     })});
  }
  {
    Tensor u = leaf({2, 5, 3}, rng);
    Tensor dt = Tensor::zeros({2, 5, 3}, true);
    for (double& v : dt.values_mut()) v = rng.uniform(0.1, 0.9);
    Tensor bi = leaf({2, 5, 4}, rng);
    Tensor co = leaf({2, 5, 4}, rng);
    Tensor al = leaf({3}, rng);
    Tensor ds = leaf({3}, rng);
    items.push_back(
        {"ssm_scan", {u, dt, bi, co, al, ds}, squared([=](Tape& t) {
           return o::ssm_scan(t, u, dt, bi, co, al, ds);
         })});
  }
}

void add_composed(std::vector<Item>& items, Rng& rng) {
  {
    // serpentine tokenizer end to end: offsets move the sampling
    // coordinates, so this covers the coordinate gradients too
    TokenizerConfig cfg;
    cfg.chain_len = 3;
    cfg.cell = 2;
    Tensor f = leaf({1, 4, 4}, rng);
    Tensor k = leaf({3, 1, 2, 2}, rng);
    Tensor b = leaf({3}, rng);
    items.push_back({"tokenizer_chain", {f, k, b}, squared([=](Tape& t) {
                       return tokenize(t, f, k, b, cfg).tokens;
                     })});
  }
  {
    MixerConfig mc;
    mc.state_dim = 2;
    mc.expand = 2;
    mc.conv_width = 2;
    MambaParams fwd = init_mamba(2, mc, rng);
    MambaParams bwd = init_mamba(2, mc, rng);
    Tensor tokens = leaf({2, 12, 2}, rng);  // chain 3, cell 2
    std::vector<std::pair<std::string, Tensor>> named;
    list_params(fwd, "f", named);
    list_params(bwd, "b", named);
    std::vector<Tensor> leaves{tokens};
    for (auto& [_, t] : named) leaves.push_back(t);
    items.push_back(
        {"bidirectional_aggregate", std::move(leaves), squared([=](Tape& t) {
           return bidirectional_aggregate(t, tokens, fwd, bwd, mc, 3, 2);
         })});
  }
  {
    // spectrum -> inverse -> assembled map, fused with a spatial branch
    AttentionConfig ac;
    ac.reduction = 2;
    ac.kernel = 3;
    AttentionParams ap = init_attention(4, ac, rng);
    Tensor f_spa = leaf({4, 4, 4}, rng);
    Tensor ws = leaf({4, 4, 4}, rng);  // 4 cells of 2x2 slots
    std::vector<std::pair<std::string, Tensor>> named;
    list_params(ap, "a", named);
    std::vector<Tensor> leaves{f_spa, ws};
    for (auto& [_, t] : named) leaves.push_back(t);
    items.push_back({"frequency_fusion", std::move(leaves),
                     squared([=](Tape& t) {
                       Tensor spec = window_fft(t, ws, 2);
                       Tensor back = window_ifft(t, spec, 2);
                       Tensor f_fre = o::merge_cells(t, back, 4, 4, 2);
                       return fuse(t, f_spa, f_fre, ap, ac, 2);
                     })});
  }
  {
    Tensor logits = leaf({1, 6, 6}, rng);
    Tensor mask = Tensor::zeros({1, 6, 6});
    for (double& v : mask.values_mut()) v = rng.below(2) ? 1.0 : 0.0;
    items.push_back({"segmentation_loss", {logits}, [=](Tape& t) {
                       return segmentation_loss(t, logits, mask);
                     }});
  }
}

}  // namespace

std::vector<SuiteEntry> gradient_suite(std::uint64_t seed,
                                       std::size_t points_per_item) {
  Rng rng(seed);
  std::vector<Item> items;
  add_primitives(items, rng);
  add_composed(items, rng);

  std::vector<SuiteEntry> out;
  out.reserve(items.size());
  for (std::size_t i = 0; i < items.size(); ++i) {
    const Item& it = items[i];
    // sampling dedups repeated picks, so grow the budget until the item
    // has probed at least points_per_item distinct coordinates
    GradCheckReport rep;
    for (std::size_t mult = 1; mult <= 8; ++mult) {
      rep = grad_check(it.leaves, it.fn, mult * points_per_item, 1e-5,
                       mix(seed, i));
      if (rep.checked >= points_per_item) break;
    }
    out.push_back({it.name, rep.max_rel_err, rep.checked});
  }
  return out;
}

}  // namespace vseg
