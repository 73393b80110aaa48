#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mein/expert.hpp"
#include "mein/ops.hpp"
#include "mein/params.hpp"
#include "mein/tensor.hpp"

namespace mein {

struct ImitatorConfig {
  std::size_t vocab_size = 0;   // |V'|, including the pad symbol at id 0
  std::size_t embed_dim = 32;
  std::size_t kernel_dim = 64;  // N
  std::size_t num_classes = 2;
  std::size_t window = 1;       // c: each window spans 2c + 1 tokens
};

// Single-layer CNN over imitator tokens. The pad id (0) has a zero embedding
// that never trains.
struct ImitatorParams {
  static constexpr std::int32_t kPadId = 0;

  ImitatorConfig config;
  Tensor embedding;     // [|V'|, E]
  Tensor kernel;        // [(2c + 1) * E, N]
  Tensor kernel_bias;   // [1, N]
  Tensor class_weight;  // [N, |Y|]
  Tensor class_bias;    // [1, |Y|]

  static ImitatorParams init(const ImitatorConfig& config, std::uint64_t seed);

  std::size_t span() const { return 2 * config.window + 1; }
  ParamList named() const;
  ImitatorParams clone() const;
};

struct ImitatorOutput {
  Tensor hidden;                   // o_j stacked over the batch, [sum J, N]
  Tensor log_probs;                // log p_{i,j}, [sum J, |Y|]
  std::vector<Segment> positions;  // rows of each input inside hidden/log_probs
  Tensor alpha;                    // [B, |Y|]
};

/// Pads each sequence with c pad tokens on both sides and convolves; one
/// leaky-ReLU hidden state per original token.
Tensor pad_and_convolve(const SequenceBatch& batch, const ImitatorParams& params,
                        std::vector<Segment>* positions = nullptr);

/// Per-window class log-probabilities from hidden states.
Tensor window_log_probs(const Tensor& hidden, const ImitatorParams& params);
Tensor window_distribution(const Tensor& hidden, const ImitatorParams& params);

ImitatorOutput imitator_forward(const SequenceBatch& batch, const ImitatorParams& params);

/// alpha_i = log(mean_j p_{i,j}) for each input, [B, |Y|].
Tensor imitator_logit(const SequenceBatch& batch, const ImitatorParams& params);

/// Mean over the batch of sum_i sum_j CE(target, p_{i,j}), where each row of
/// `targets` ([B, |Y|]) is the frozen expert's distribution for that input.
/// The entropy of the target is dropped; see `mean_window_kl` for the KL.
Tensor imitation_loss(const SequenceBatch& batch, const Tensor& targets,
                      std::span<const ImitatorParams* const> imitators);

/// Same loss with targets computed from a frozen expert. Throws
/// StageIsolationError if the expert is trainable or holds a gradient.
Tensor imitation_loss(const SequenceBatch& expert_batch, const SequenceBatch& imitator_batch,
                      const ExpertParams& expert,
                      std::span<const ImitatorParams* const> imitators);

/// Expert distribution for each input without recording a graph, [B, |Y|].
Tensor expert_targets(const SequenceBatch& batch, const ExpertParams& expert);

/// KL(p || q) in nats for two distributions.
double kl_divergence(std::span<const double> p, std::span<const double> q);

/// Mean over every window of KL(target || p_{i,j}).
double mean_window_kl(const ImitatorOutput& out, const Tensor& targets);

}  // namespace mein
