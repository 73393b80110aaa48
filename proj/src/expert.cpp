#include "mein/expert.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "mein/layers.hpp"
#include "mein/ops.hpp"

namespace mein {

namespace {

Tensor uniform_param(Shape shape, float limit, Rng& rng) {
  std::uniform_real_distribution<float> dist(-limit, limit);
  std::vector<float> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::parameter(std::move(shape), std::move(values));
}

float xavier_limit(std::size_t fan_in, std::size_t fan_out) {
  return static_cast<float>(std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)));
}

}  // namespace

ExpertParams ExpertParams::init(const ExpertConfig& config, std::uint64_t seed) {
  if (config.vocab_size == 0 || config.embed_dim == 0 || config.hidden_dim == 0 ||
      config.mlp_dim == 0 || config.num_classes == 0) {
    throw std::invalid_argument("expert: every dimension must be positive");
  }
  Rng rng(seed);
  const auto d = config.embed_dim, h = config.hidden_dim, m = config.mlp_dim,
             y = config.num_classes;
  ExpertParams p;
  p.config = config;
  p.embedding = uniform_param({config.vocab_size, d}, 0.1f, rng);
  p.lstm_weight = uniform_param({d + h, 4 * h}, xavier_limit(d + h, h), rng);
  std::vector<float> bias(4 * h, 0.0f);
  std::fill(bias.begin() + static_cast<std::ptrdiff_t>(h),
            bias.begin() + static_cast<std::ptrdiff_t>(2 * h), 1.0f);
  p.lstm_bias = Tensor::parameter({1, 4 * h}, std::move(bias));
  p.mlp_weight = uniform_param({h, m}, xavier_limit(h, m), rng);
  p.mlp_bias = Tensor::zeros({1, m}, true);
  p.class_weight = uniform_param({m, y}, xavier_limit(m, y), rng);
  p.class_bias = Tensor::zeros({1, y}, true);
  return p;
}

ParamList ExpertParams::named() const {
  return {{"expert.embedding", embedding},     {"expert.lstm_weight", lstm_weight},
          {"expert.lstm_bias", lstm_bias},     {"expert.mlp_weight", mlp_weight},
          {"expert.mlp_bias", mlp_bias},       {"expert.class_weight", class_weight},
          {"expert.class_bias", class_bias}};
}

ExpertParams ExpertParams::clone() const {
  ExpertParams p;
  p.config = config;
  p.embedding = clone_parameter(embedding);
  p.lstm_weight = clone_parameter(lstm_weight);
  p.lstm_bias = clone_parameter(lstm_bias);
  p.mlp_weight = clone_parameter(mlp_weight);
  p.mlp_bias = clone_parameter(mlp_bias);
  p.class_weight = clone_parameter(class_weight);
  p.class_bias = clone_parameter(class_bias);
  return p;
}

LstmState lstm_step(const Tensor& x, const LstmState& prev, const ExpertParams& params) {
  auto next = layers::lstm_cell(x, prev.h, prev.c, params.lstm_weight, params.lstm_bias);
  return {std::move(next.h), std::move(next.c)};
}

ExpertOutput expert_forward(const SequenceBatch& batch, const ExpertParams& params,
                            Rng* dropout_rng) {
  const double rate = params.config.dropout;
  std::function<Tensor(const Tensor&)> dropout;
  if (dropout_rng != nullptr && rate > 0.0) {
    // Inverted dropout on the embeddings.
    dropout = [&](const Tensor& x) {
      std::bernoulli_distribution keep(1.0 - rate);
      const auto kept_scale = static_cast<float>(1.0 / (1.0 - rate));
      std::vector<float> mask(x.size());
      for (auto& m : mask) m = keep(*dropout_rng) ? kept_scale : 0.0f;
      return mul(x, Tensor::constant(x.shape(), std::move(mask)));
    };
  }
  ExpertOutput out;
  const auto last = layers::lstm_sequence(params.embedding, batch, params.lstm_weight, params.lstm_bias,
                                          dropout, &out.hidden);
  auto head = layers::expert_head(last.h, params.mlp_weight, params.mlp_bias, params.class_weight,
                                  params.class_bias);
  out.state = std::move(head.state);
  out.logits = std::move(head.logits);
  return out;
}

Tensor expert_prob(const Tensor& logits) { return softmax(logits); }

Tensor supervised_loss(const SequenceBatch& batch, std::span<const std::int32_t> labels,
                       const ExpertParams& params, Rng* dropout_rng) {
  const auto logits = expert_forward(batch, params, dropout_rng).logits;
  return nll(log_softmax(logits), labels);
}

}  // namespace mein
