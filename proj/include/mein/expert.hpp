#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "mein/params.hpp"
#include "mein/random.hpp"
#include "mein/tensor.hpp"

namespace mein {

using SequenceBatch = std::vector<std::span<const std::int32_t>>;

struct ExpertConfig {
  std::size_t vocab_size = 0;
  std::size_t embed_dim = 32;   // D
  std::size_t hidden_dim = 64;  // H
  std::size_t mlp_dim = 16;     // M
  std::size_t num_classes = 2;
  double dropout = 0.5;  // embedding dropout, training only
};

// LSTM -> one ReLU layer -> per-class linear scores. Matrices are stored for
// row-vector inputs: x[1, in] * W[in, out].
struct ExpertParams {
  ExpertConfig config;
  Tensor embedding;     // [|V|, D]
  Tensor lstm_weight;   // [D + H, 4H], gate blocks (input, forget, cell, output)
  Tensor lstm_bias;     // [1, 4H]
  Tensor mlp_weight;    // [H, M]
  Tensor mlp_bias;      // [1, M]
  Tensor class_weight;  // [M, |Y|]
  Tensor class_bias;    // [1, |Y|]

  /// Embeddings uniform(-0.1, 0.1); dense and LSTM weights Xavier-uniform;
  /// zero biases except the forget gate, which starts at 1.
  static ExpertParams init(const ExpertConfig& config, std::uint64_t seed);

  ParamList named() const;
  ExpertParams clone() const;
};

struct LstmState {
  Tensor h;  // [B, H]
  Tensor c;  // [B, H]
};

LstmState lstm_step(const Tensor& x, const LstmState& prev, const ExpertParams& params);

struct ExpertOutput {
  std::vector<Tensor> hidden;  // h_1..h_T, each [B, H]
  Tensor state;                // s, [B, M]
  Tensor logits;               // z, [B, |Y|]
};

/// Dropout is applied to embeddings only when `dropout_rng` is non-null.
/// Shorter sequences carry their state forward, so the MLP sees each
/// sequence's state after its own last token.
ExpertOutput expert_forward(const SequenceBatch& batch, const ExpertParams& params,
                            Rng* dropout_rng = nullptr);

/// Softmax over the final axis of the logits.
Tensor expert_prob(const Tensor& logits);

/// Mean negative log-likelihood of `labels` under the expert.
Tensor supervised_loss(const SequenceBatch& batch, std::span<const std::int32_t> labels,
                       const ExpertParams& params, Rng* dropout_rng = nullptr);

}  // namespace mein
