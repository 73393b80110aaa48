#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mein/tensor.hpp"

namespace mein {

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

using ParamList = std::vector<NamedTensor>;

/// Raised when a gradient reaches parameters that a training stage must not
/// touch (the frozen expert in stage 2, the frozen imitators in stage 3).
class StageIsolationError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// FNV-1a over names, shapes and raw float bytes.
std::uint64_t digest(const ParamList& params);

void set_trainable(const ParamList& params, bool trainable);
std::vector<Tensor> tensors_of(const ParamList& params);

/// Throws StageIsolationError naming the first parameter that is trainable
/// or carries a non-zero gradient.
void require_frozen(const ParamList& params, const std::string& what);

/// Leaf parameter with copied values and the same trainable flag.
Tensor clone_parameter(const Tensor& t);

}  // namespace mein
