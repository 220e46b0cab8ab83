#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "hlstmat/tensor.hpp"

namespace hlstmat {

struct NamedParameter {
  std::string name;
  Tensor tensor;
};

/// Tensors are handles, so a ParameterList aliases the model's storage.
using ParameterList = std::vector<NamedParameter>;

void zero_grads(const ParameterList& params);
std::size_t parameter_count(const ParameterList& params);

/// Appends `src` to `dst` with every name prefixed by `prefix`.
void append_prefixed(ParameterList& dst, const std::string& prefix, const ParameterList& src);

/// Copies values of every parameter in `src` whose name also appears in
/// `dst`. Returns the number of tensors copied. Shapes must agree.
std::size_t copy_matching(const ParameterList& src, ParameterList& dst);

}  // namespace hlstmat
