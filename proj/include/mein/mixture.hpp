#pragma once

#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "mein/expert.hpp"
#include "mein/imitator.hpp"
#include "mein/tensor.hpp"

namespace mein {

// Gate scalars lambda_i, one per imitator, stored as a [1, I] parameter.
// A gate equal to -infinity is disabled: sigma(lambda) = 0 and the imitator
// is skipped entirely.
struct MixtureGates {
  static constexpr float kDisabled = -std::numeric_limits<float>::infinity();

  Tensor lambda;

  static MixtureGates disabled(std::size_t count);
  /// All gates at `value` (0 gives sigma = 0.5) and trainable.
  static MixtureGates trainable(std::size_t count, float value = 0.0f);

  std::size_t size() const { return lambda.defined() ? lambda.size() : 0; }
  bool is_disabled(std::size_t i) const { return lambda[i] == kDisabled; }
  bool all_disabled() const;
  double weight(std::size_t i) const;  // sigma(lambda_i)
  ParamList named() const { return {{"mixture.lambda", lambda}}; }
  MixtureGates clone() const;
};

/// z' = z + sum_i sigma(lambda_i) * alpha_i. Returns `z` itself when every
/// gate is disabled.
Tensor mixture_logit(const Tensor& z, std::span<const Tensor> alphas, const MixtureGates& gates);

Tensor mixture_prob(const Tensor& mixed_logits);

/// Mean negative log-likelihood of the mixture given precomputed imitator
/// logits (constants).
Tensor fine_tune_loss(const SequenceBatch& batch, std::span<const std::int32_t> labels,
                      const ExpertParams& expert, const MixtureGates& gates,
                      std::span<const Tensor> alphas, Rng* dropout_rng = nullptr);

/// Same loss computing the imitator logits from frozen imitators. Throws
/// StageIsolationError if any imitator parameter is trainable or holds a
/// gradient.
Tensor fine_tune_loss(const SequenceBatch& expert_batch, const SequenceBatch& imitator_batch,
                      std::span<const std::int32_t> labels, const ExpertParams& expert,
                      const MixtureGates& gates, std::span<const ImitatorParams* const> imitators,
                      Rng* dropout_rng = nullptr);

/// Input-keyed stand-ins for imitator logits: `count` vectors of standard
/// normal draws, each log-normalized, fully determined by (seed, ids).
std::vector<std::vector<float>> random_feature_logits(std::size_t num_classes, std::size_t count,
                                                      std::uint64_t seed,
                                                      std::span<const std::int32_t> ids);

}  // namespace mein
