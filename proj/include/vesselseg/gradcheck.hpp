#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "vesselseg/tensor.hpp"

namespace vseg {

struct GradCheckReport {
  double max_rel_err = 0.0;
  std::size_t checked = 0;
  std::string worst;  // leaf index / coordinate of the largest error
};

// Compares analytic gradients against central differences.
//
// `fn` must rebuild its graph from the current leaf values on every call and
// return a scalar recorded on the tape it is given. Each leaf is probed at
// up to `samples_per_leaf` random coordinates (all of them when the leaf is
// small). Relative error is |a-n| / max(1, |a|, |n|).
GradCheckReport grad_check(const std::vector<Tensor>& leaves,
                           const std::function<Tensor(Tape&)>& fn,
                           std::size_t samples_per_leaf = 8,
                           double eps = 1e-5, std::uint64_t seed = 0x9d5f);

}  // namespace vseg
