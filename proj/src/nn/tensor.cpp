#include "gaitlab/nn/tensor.hpp"

namespace gaitlab::nn {

std::string Tensor::shape_str() const {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

}  // namespace gaitlab::nn
