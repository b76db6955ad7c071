#include "vesselseg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "vesselseg/rng.hpp"

namespace vseg {

GradCheckReport grad_check(const std::vector<Tensor>& leaves,
                           const std::function<Tensor(Tape&)>& fn,
                           std::size_t samples_per_leaf, double eps,
                           std::uint64_t seed) {
  for (const Tensor& leaf : leaves)
    if (!leaf.defined() || !leaf.requires_grad())
      throw std::invalid_argument("grad_check: every leaf must require grad");

  std::vector<std::vector<double>> analytic(leaves.size());
  {
    for (const Tensor& leaf : leaves) leaf.node()->grad.clear();
    Tape tape;
    Tensor out = fn(tape);
    tape.backward(out);
    for (std::size_t li = 0; li < leaves.size(); ++li) {
      auto& node = *leaves[li].node();
      node.ensure_grad();  // zero gradient if the leaf was unused
      analytic[li] = node.grad;
    }
  }

  auto eval = [&]() {
    Tape tape;
    tape.set_recording(false);
    return fn(tape).scalar();
  };

  GradCheckReport report;
  Rng rng(seed);
  for (std::size_t li = 0; li < leaves.size(); ++li) {
    auto& node = *leaves[li].node();
    const std::size_t n = node.value.size();
    std::vector<std::size_t> picks;
    if (n <= samples_per_leaf) {
      picks.resize(n);
      for (std::size_t i = 0; i < n; ++i) picks[i] = i;
    } else {
      for (std::size_t k = 0; k < samples_per_leaf; ++k)
        picks.push_back((std::size_t)rng.below(n));
      std::sort(picks.begin(), picks.end());
      picks.erase(std::unique(picks.begin(), picks.end()), picks.end());
    }
    for (std::size_t i : picks) {
      const double saved = node.value[i];
      node.value[i] = saved + eps;
      const double fp = eval();
      node.value[i] = saved - eps;
      const double fm = eval();
      node.value[i] = saved;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double a = analytic[li][i];
      const double denom = std::max({1.0, std::fabs(a), std::fabs(numeric)});
      const double rel = std::fabs(a - numeric) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = "leaf " + std::to_string(li) + " [" +
                       std::to_string(i) + "] analytic=" + std::to_string(a) +
                       " numeric=" + std::to_string(numeric);
      }
    }
  }
  return report;
}

}  // namespace vseg
