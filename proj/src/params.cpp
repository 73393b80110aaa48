#include "mein/params.hpp"

#include <cstring>

#include "mein/random.hpp"

namespace mein {

std::uint64_t digest(const ParamList& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](const void* data, std::size_t n) {
    h = fnv1a({static_cast<const unsigned char*>(data), n}, h);
  };
  for (const auto& [name, t] : params) {
    mix(name.data(), name.size());
    for (auto d : t.shape()) {
      const std::uint64_t v = d;
      mix(&v, sizeof v);
    }
    mix(t.values().data(), t.values().size_bytes());
  }
  return h;
}

void set_trainable(const ParamList& params, bool trainable) {
  for (const auto& p : params) {
    auto t = p.tensor;
    t.set_requires_grad(trainable);
  }
}

std::vector<Tensor> tensors_of(const ParamList& params) {
  std::vector<Tensor> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.tensor);
  return out;
}

void require_frozen(const ParamList& params, const std::string& what) {
  for (const auto& [name, t] : params) {
    if (t.requires_grad()) {
      throw StageIsolationError(what + ": parameter '" + name + "' is trainable but must be frozen");
    }
    for (float g : t.grad()) {
      if (g != 0.0f) {
        throw StageIsolationError(what + ": gradient reached frozen parameter '" + name + "'");
      }
    }
  }
}

Tensor clone_parameter(const Tensor& t) {
  std::vector<float> values(t.values().begin(), t.values().end());
  auto out = Tensor::constant(t.shape(), std::move(values));
  out.set_requires_grad(t.requires_grad());
  return out;
}

}  // namespace mein
