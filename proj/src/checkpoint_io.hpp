#pragma once

// shared container codec for model checkpoints and optimizer sidecars

#include <string>
#include <vector>

#include "vesselseg/tensor.hpp"

namespace vseg::ckpt {

struct RawTensor {
  std::string name;
  Shape shape;
  std::vector<double> data;
};

struct Container {
  std::vector<RawTensor> tensors;
  std::string config;
};

void write_container(const std::string& path, const Container& c);
Container read_container(const std::string& path);

}  // namespace vseg::ckpt
