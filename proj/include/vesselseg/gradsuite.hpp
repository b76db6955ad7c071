#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace vseg {

struct SuiteEntry {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t points = 0;  // coordinates probed by central differences
};

// Central-difference checks for every differentiable primitive plus the four
// composed blocks (serpentine tokenizer, bidirectional aggregation,
// spatial-frequency fusion, segmentation loss), each at a small shape with
// at least twenty probed coordinates. Entries report, they do not judge;
// callers compare max_rel_err against their own tolerance.
std::vector<SuiteEntry> gradient_suite(std::uint64_t seed = 0xd1ff,
                                       std::size_t points_per_item = 20);

}  // namespace vseg
