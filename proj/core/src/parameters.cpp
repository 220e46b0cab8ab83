#include "hlstmat/parameters.hpp"

#include <algorithm>
#include <unordered_map>

#include "hlstmat/errors.hpp"

namespace hlstmat {

void zero_grads(const ParameterList& params) {
  for (const auto& p : params) {
    Tensor t = p.tensor;
    t.zero_grad();
  }
}

std::size_t parameter_count(const ParameterList& params) {
  std::size_t n = 0;
  for (const auto& p : params) n += p.tensor.numel();
  return n;
}

void append_prefixed(ParameterList& dst, const std::string& prefix, const ParameterList& src) {
  for (const auto& p : src) dst.push_back({prefix + p.name, p.tensor});
}

std::size_t copy_matching(const ParameterList& src, ParameterList& dst) {
  std::unordered_map<std::string, const Tensor*> by_name;
  for (const auto& p : src) by_name.emplace(p.name, &p.tensor);
  std::size_t copied = 0;
  for (auto& p : dst) {
    auto it = by_name.find(p.name);
    if (it == by_name.end()) continue;
    if (it->second->shape() != p.tensor.shape()) {
      throw DimensionError("copy_matching: parameter '" + p.name + "' has shape " +
                           shape_to_string(p.tensor.shape()) + " but source is " +
                           shape_to_string(it->second->shape()));
    }
    auto src_data = it->second->data();
    std::copy(src_data.begin(), src_data.end(), p.tensor.mutable_data().begin());
    ++copied;
  }
  return copied;
}

}  // namespace hlstmat
