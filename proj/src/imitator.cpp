#include "mein/imitator.hpp"

#include <cmath>
#include <stdexcept>

#include "mein/layers.hpp"

namespace mein {

namespace {

Tensor uniform_param(Shape shape, float limit, Rng& rng) {
  std::uniform_real_distribution<float> dist(-limit, limit);
  std::vector<float> values(shape_numel(shape));
  for (auto& v : values) v = dist(rng);
  return Tensor::parameter(std::move(shape), std::move(values));
}

}  // namespace

ImitatorParams ImitatorParams::init(const ImitatorConfig& config, std::uint64_t seed) {
  if (config.vocab_size < 2 || config.embed_dim == 0 || config.kernel_dim == 0 ||
      config.num_classes == 0) {
    throw std::invalid_argument("imitator: every dimension must be positive");
  }
  if (config.window < 1) throw std::invalid_argument("imitator: window size must be at least 1");
  Rng rng(seed);
  ImitatorParams p;
  p.config = config;
  const auto e = config.embed_dim, n = config.kernel_dim, y = config.num_classes;
  p.embedding = uniform_param({config.vocab_size, e}, 0.1f, rng);
  std::fill_n(p.embedding.mutable_values().begin(), e, 0.0f);
  const auto width = p.span() * e;
  p.kernel = uniform_param({width, n},
                           static_cast<float>(std::sqrt(6.0 / static_cast<double>(width + n))), rng);
  p.kernel_bias = Tensor::zeros({1, n}, true);
  p.class_weight =
      uniform_param({n, y}, static_cast<float>(std::sqrt(6.0 / static_cast<double>(n + y))), rng);
  p.class_bias = Tensor::zeros({1, y}, true);
  return p;
}

ParamList ImitatorParams::named() const {
  const auto prefix = "imitator" + std::to_string(config.window) + ".";
  return {{prefix + "embedding", embedding},
          {prefix + "kernel", kernel},
          {prefix + "kernel_bias", kernel_bias},
          {prefix + "class_weight", class_weight},
          {prefix + "class_bias", class_bias}};
}

ImitatorParams ImitatorParams::clone() const {
  ImitatorParams p;
  p.config = config;
  p.embedding = clone_parameter(embedding);
  p.kernel = clone_parameter(kernel);
  p.kernel_bias = clone_parameter(kernel_bias);
  p.class_weight = clone_parameter(class_weight);
  p.class_bias = clone_parameter(class_bias);
  return p;
}

Tensor pad_and_convolve(const SequenceBatch& batch, const ImitatorParams& params,
                        std::vector<Segment>* positions) {
  std::vector<Segment> padded;
  std::vector<Segment> rows;
  const auto stream =
      layers::padded_stream(batch, params.config.window, ImitatorParams::kPadId, padded, rows);
  auto hidden = layers::window_hidden(params.embedding, std::span<const std::int32_t>(stream),
                                      std::span<const Segment>(padded), ImitatorParams::kPadId,
                                      params.kernel, params.kernel_bias);
  if (positions != nullptr) *positions = std::move(rows);
  return hidden;
}

Tensor window_log_probs(const Tensor& hidden, const ImitatorParams& params) {
  return layers::class_log_probs(hidden, params.class_weight, params.class_bias);
}

Tensor window_distribution(const Tensor& hidden, const ImitatorParams& params) {
  return softmax(add_row(matmul(hidden, params.class_weight), params.class_bias));
}

ImitatorOutput imitator_forward(const SequenceBatch& batch, const ImitatorParams& params) {
  ImitatorOutput out;
  out.hidden = pad_and_convolve(batch, params, &out.positions);
  out.log_probs = window_log_probs(out.hidden, params);
  out.alpha = segment_log_mean_exp(out.log_probs, std::span<const Segment>(out.positions));
  return out;
}

Tensor imitator_logit(const SequenceBatch& batch, const ImitatorParams& params) {
  return imitator_forward(batch, params).alpha;
}

Tensor imitation_loss(const SequenceBatch& batch, const Tensor& targets,
                      std::span<const ImitatorParams* const> imitators) {
  if (imitators.empty()) throw std::invalid_argument("imitation_loss: no imitators");
  if (targets.rows() != batch.size()) {
    throw ShapeError("imitation_loss: " + std::to_string(targets.rows()) + " targets for batch of " +
                     std::to_string(batch.size()));
  }
  Tensor total;
  for (const auto* imitator : imitators) {
    if (targets.cols() != imitator->config.num_classes) {
      throw ShapeError("imitation_loss: target classes " + std::to_string(targets.cols()) +
                       " vs imitator classes " + std::to_string(imitator->config.num_classes));
    }
    std::vector<Segment> positions;
    const auto hidden = pad_and_convolve(batch, *imitator, &positions);
    const auto log_p = window_log_probs(hidden, *imitator);
    auto term = soft_cross_entropy(log_p, layers::repeat_targets(targets, std::span<const Segment>(positions)));
    total = total.defined() ? add(total, term) : term;
  }
  return scale(total, 1.0f / static_cast<float>(batch.size()));
}

Tensor expert_targets(const SequenceBatch& batch, const ExpertParams& expert) {
  NoGradGuard no_grad;
  return expert_prob(expert_forward(batch, expert).logits);
}

Tensor imitation_loss(const SequenceBatch& expert_batch, const SequenceBatch& imitator_batch,
                      const ExpertParams& expert,
                      std::span<const ImitatorParams* const> imitators) {
  require_frozen(expert.named(), "imitation_loss");
  return imitation_loss(imitator_batch, expert_targets(expert_batch, expert), imitators);
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw ShapeError("kl_divergence: distribution sizes differ");
  double kl = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] > 0.0) kl += p[i] * (std::log(p[i]) - std::log(q[i]));
  }
  return kl;
}

double mean_window_kl(const ImitatorOutput& out, const Tensor& targets) {
  const auto classes = targets.cols();
  double total = 0.0;
  std::size_t windows = 0;
  for (std::size_t b = 0; b < out.positions.size(); ++b) {
    const float* t = targets.values().data() + b * classes;
    for (std::size_t j = 0; j < out.positions[b].length; ++j) {
      const float* lp = out.log_probs.values().data() + (out.positions[b].offset + j) * classes;
      for (std::size_t y = 0; y < classes; ++y) {
        if (t[y] > 0.0f) {
          total += static_cast<double>(t[y]) * (std::log(static_cast<double>(t[y])) - lp[y]);
        }
      }
      ++windows;
    }
  }
  return windows == 0 ? 0.0 : total / static_cast<double>(windows);
}

}  // namespace mein
