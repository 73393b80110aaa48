#include "mein/mixture.hpp"

#include <cmath>
#include <stdexcept>

#include "mein/layers.hpp"
#include "mein/ops.hpp"
#include "mein/random.hpp"

namespace mein {

MixtureGates MixtureGates::disabled(std::size_t count) {
  return {Tensor::constant({1, count}, std::vector<float>(count, kDisabled))};
}

MixtureGates MixtureGates::trainable(std::size_t count, float value) {
  return {Tensor::parameter({1, count}, std::vector<float>(count, value))};
}

bool MixtureGates::all_disabled() const {
  for (std::size_t i = 0; i < size(); ++i)
    if (!is_disabled(i)) return false;
  return true;
}

double MixtureGates::weight(std::size_t i) const {
  if (is_disabled(i)) return 0.0;
  return 1.0 / (1.0 + std::exp(-static_cast<double>(lambda[i])));
}

MixtureGates MixtureGates::clone() const { return {clone_parameter(lambda)}; }

Tensor mixture_logit(const Tensor& z, std::span<const Tensor> alphas, const MixtureGates& gates) {
  if (alphas.size() != gates.size()) {
    throw ShapeError("mixture_logit: " + std::to_string(alphas.size()) + " imitator logits for " +
                     std::to_string(gates.size()) + " gates");
  }
  for (const auto& a : alphas) {
    if (a.shape() != z.shape()) {
      throw ShapeError("mixture_logit: imitator logit " + shape_string(a.shape()) +
                       " does not match expert logit " + shape_string(z.shape()));
    }
  }
  std::vector<std::uint8_t> enabled(gates.size());
  for (std::size_t i = 0; i < enabled.size(); ++i) enabled[i] = gates.is_disabled(i) ? 0 : 1;
  return layers::mix_logits(z, alphas, gates.lambda, std::span<const std::uint8_t>(enabled));
}

Tensor mixture_prob(const Tensor& mixed_logits) { return softmax(mixed_logits); }

Tensor fine_tune_loss(const SequenceBatch& batch, std::span<const std::int32_t> labels,
                      const ExpertParams& expert, const MixtureGates& gates,
                      std::span<const Tensor> alphas, Rng* dropout_rng) {
  const auto z = expert_forward(batch, expert, dropout_rng).logits;
  return nll(log_softmax(mixture_logit(z, alphas, gates)), labels);
}

Tensor fine_tune_loss(const SequenceBatch& expert_batch, const SequenceBatch& imitator_batch,
                      std::span<const std::int32_t> labels, const ExpertParams& expert,
                      const MixtureGates& gates, std::span<const ImitatorParams* const> imitators,
                      Rng* dropout_rng) {
  std::vector<Tensor> alphas;
  alphas.reserve(imitators.size());
  for (const auto* imitator : imitators) {
    require_frozen(imitator->named(), "fine_tune_loss");
    alphas.push_back(imitator_logit(imitator_batch, *imitator));
  }
  return fine_tune_loss(expert_batch, labels, expert, gates, alphas, dropout_rng);
}

std::vector<std::vector<float>> random_feature_logits(std::size_t num_classes, std::size_t count,
                                                      std::uint64_t seed,
                                                      std::span<const std::int32_t> ids) {
  std::uint64_t key = derive_seed(seed, "random-imitator");
  for (auto id : ids) key = splitmix64(key ^ static_cast<std::uint32_t>(id));
  Rng rng(key);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::vector<std::vector<float>> out(count);
  for (auto& vec : out) {
    std::vector<double> draws(num_classes);
    double mx = -INFINITY;
    for (auto& d : draws) {
      d = normal(rng);
      mx = std::max(mx, d);
    }
    double total = 0.0;
    for (auto d : draws) total += std::exp(d - mx);
    const double lse = mx + std::log(total);
    vec.resize(num_classes);
    for (std::size_t y = 0; y < num_classes; ++y) vec[y] = static_cast<float>(draws[y] - lse);
  }
  return out;
}

}  // namespace mein
