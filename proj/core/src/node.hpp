#pragma once

#include <memory>
#include <string>
#include <vector>

#include "jamba/tensor.hpp"

namespace jamba::detail {

struct Node {
  Shape shape;
  DType dtype = DType::kReal64;
  std::vector<double> value;
  std::vector<double> grad;
  bool requires_grad = false;
  std::string op;
  std::vector<std::shared_ptr<Node>> inputs;
  BackwardFn backward;

  double* grad_buffer() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0);
    return grad.data();
  }
};

}  // namespace jamba::detail
