#include "mein/adam.hpp"

#include <cmath>
#include <string>

namespace mein {

Adam::Adam(std::vector<Tensor> params, AdamConfig config)
    : params_(std::move(params)), config_(config) {
  first_.reserve(params_.size());
  second_.reserve(params_.size());
  for (const auto& p : params_) {
    if (!p.requires_grad()) throw GraphError("adam: parameter does not require a gradient");
    first_.emplace_back(p.size(), 0.0f);
    second_.emplace_back(p.size(), 0.0f);
  }
}

double Adam::effective_learning_rate() const {
  return config_.learning_rate * std::pow(config_.decay, static_cast<double>(step_));
}

void Adam::step() {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (!params_[i].has_grad()) {
      throw GraphError("adam: parameter " + std::to_string(i) + " of shape " +
                       shape_string(params_[i].shape()) +
                       " has no gradient (detached from the loss)");
    }
  }

  double clip = 1.0;
  if (config_.clip_norm > 0.0) {
    double norm2 = 0.0;
    for (const auto& p : params_)
      for (float g : p.grad()) norm2 += static_cast<double>(g) * g;
    const double norm = std::sqrt(norm2);
    if (norm > config_.clip_norm) clip = config_.clip_norm / norm;
  }

  const double lr = effective_learning_rate();
  const double t = static_cast<double>(step_ + 1);
  const double correct1 = 1.0 - std::pow(config_.beta1, t);
  const double correct2 = 1.0 - std::pow(config_.beta2, t);
  const auto b1 = static_cast<float>(config_.beta1);
  const auto b2 = static_cast<float>(config_.beta2);
  const auto step_size = static_cast<float>(lr / correct1);
  const auto root_correct2 = static_cast<float>(std::sqrt(correct2));
  const auto eps = static_cast<float>(config_.epsilon);
  const auto clip_f = static_cast<float>(clip);

  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto& param = params_[i];
    auto values = param.mutable_values();
    const auto grad = param.grad();
    auto& m = first_[i];
    auto& v = second_[i];
    for (std::size_t k = 0; k < values.size(); ++k) {
      const float g = grad[k] * clip_f;
      m[k] = b1 * m[k] + (1.0f - b1) * g;
      v[k] = b2 * v[k] + (1.0f - b2) * g * g;
      values[k] -= step_size * m[k] / (std::sqrt(v[k]) / root_correct2 + eps);
    }
    param.zero_grad();
  }
  ++step_;
}

}  // namespace mein
