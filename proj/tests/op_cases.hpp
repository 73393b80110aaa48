#pragma once

// Random instance generators for the gradient oracle: one per primitive op
// plus the composites the models are built from.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "grad_check.hpp"
#include "mein/layers.hpp"
#include "mein/ops.hpp"

namespace mein::testing {

struct OpCase {
  GraphFn fn;
  std::vector<GradInput> inputs;
};

using CaseGenerator = std::function<OpCase(std::mt19937_64&)>;

struct NamedGenerator {
  std::string name;
  CaseGenerator make;
};

inline std::size_t pick(std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
  return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
}

inline GradInput input(Shape shape, std::vector<double> values, bool differentiable = true) {
  return {std::move(shape), std::move(values), differentiable};
}

inline GradInput random_input(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  const auto n = shape_numel(shape);
  return input(std::move(shape), random_values(n, rng, lo, hi));
}

inline std::vector<double> random_distributions(std::size_t rows, std::size_t cols, std::mt19937_64& rng) {
  auto v = random_values(rows * cols, rng, 0.05, 1.0);
  for (std::size_t r = 0; r < rows; ++r) {
    double total = 0.0;
    for (std::size_t c = 0; c < cols; ++c) total += v[r * cols + c];
    for (std::size_t c = 0; c < cols; ++c) v[r * cols + c] /= total;
  }
  return v;
}

inline std::vector<std::vector<std::int32_t>> random_sequences(std::size_t batch, std::size_t max_len,
                                                               std::int32_t lo, std::int32_t hi,
                                                               std::mt19937_64& rng) {
  std::uniform_int_distribution<std::int32_t> id(lo, hi);
  std::vector<std::vector<std::int32_t>> seqs(batch);
  for (auto& s : seqs) {
    s.resize(pick(rng, 1, max_len));
    for (auto& x : s) x = id(rng);
  }
  return seqs;
}

inline std::vector<std::span<const std::int32_t>> views(const std::vector<std::vector<std::int32_t>>& seqs) {
  return {seqs.begin(), seqs.end()};
}

inline std::vector<Segment> random_segments(std::size_t count, std::size_t min_len, std::size_t max_len,
                                            std::mt19937_64& rng) {
  std::vector<Segment> segs;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < count; ++i) {
    const auto len = pick(rng, min_len, max_len);
    segs.push_back({offset, len});
    offset += len;
  }
  return segs;
}

inline std::size_t total_rows(const std::vector<Segment>& segs) {
  return segs.empty() ? 0 : segs.back().offset + segs.back().length;
}

inline bool clear_of_zero(std::span<const double> values, double margin) {
  return std::all_of(values.begin(), values.end(), [&](double v) { return std::fabs(v) >= margin; });
}

// Pre-activations nearer than this to a ReLU / leaky-ReLU kink get resampled;
// the finite-difference step cannot cross it from there.
inline constexpr double kKinkMargin = 0.01;

inline OpCase op_case(OpKind kind, std::mt19937_64& rng) {
  const auto m = pick(rng, 1, 4);
  const auto n = pick(rng, 1, 4);
  OpArgs args;
  std::vector<GradInput> in;
  switch (kind) {
    case OpKind::kMatmul: {
      const auto k = pick(rng, 1, 4);
      in = {random_input({m, k}, rng), random_input({k, n}, rng)};
      break;
    }
    case OpKind::kAdd:
    case OpKind::kSub:
    case OpKind::kMul:
    case OpKind::kSelectRows:
      in = {random_input({m, n}, rng), random_input({m, n}, rng)};
      if (kind == OpKind::kSelectRows) {
        for (std::size_t r = 0; r < m; ++r) args.mask.push_back(static_cast<std::uint8_t>(pick(rng, 0, 1)));
      }
      break;
    case OpKind::kAddRow:
      in = {random_input({m, n}, rng), random_input({1, n}, rng)};
      break;
    case OpKind::kScale:
      in = {random_input({m, n}, rng)};
      args.factor = std::uniform_real_distribution<double>(-2.0, 2.0)(rng);
      break;
    case OpKind::kMulScalar:
      in = {random_input({m, n}, rng), random_input({1, 1}, rng)};
      break;
    case OpKind::kSigmoid:
    case OpKind::kTanh:
      in = {random_input({m, n}, rng, -2.0, 2.0)};
      break;
    case OpKind::kRelu:
    case OpKind::kLeakyRelu:
      in = {input({m, n}, away_from_zero(m * n, rng))};
      break;
    case OpKind::kSoftmax:
    case OpKind::kLogSoftmax:
    case OpKind::kMeanRows:
    case OpKind::kSum:
      in = {random_input({m, n}, rng, -2.0, 2.0)};
      break;
    case OpKind::kEmbedding: {
      const auto vocab = pick(rng, 2, 6);
      in = {random_input({vocab, n}, rng)};
      const auto count = pick(rng, 1, 6);
      for (std::size_t i = 0; i < count; ++i) args.ids.push_back(static_cast<std::int32_t>(pick(rng, 0, vocab - 1)));
      args.frozen_id = pick(rng, 0, 1) ? 0 : -1;
      break;
    }
    case OpKind::kConv1d: {
      const auto span = pick(rng, 1, 3);
      const auto channels = pick(rng, 1, 3);
      args.segments = random_segments(pick(rng, 1, 3), span, span + 3, rng);
      in = {random_input({total_rows(args.segments), channels}, rng), random_input({span * channels, n}, rng),
            random_input({1, n}, rng)};
      break;
    }
    case OpKind::kConcatCols:
      in = {random_input({m, n}, rng), random_input({m, pick(rng, 1, 4)}, rng)};
      break;
    case OpKind::kSliceCols: {
      const auto cols = pick(rng, 1, 5);
      args.start = pick(rng, 0, cols - 1);
      args.length = pick(rng, 1, cols - args.start);
      in = {random_input({m, cols}, rng)};
      break;
    }
    case OpKind::kNll: {
      const auto classes = pick(rng, 2, 4);
      in = {random_input({m, classes}, rng, -3.0, 0.0)};
      for (std::size_t r = 0; r < m; ++r) args.ids.push_back(static_cast<std::int32_t>(pick(rng, 0, classes - 1)));
      break;
    }
    case OpKind::kSoftCrossEntropy: {
      const auto classes = pick(rng, 2, 4);
      in = {random_input({m, classes}, rng, -3.0, 0.0),
            input({m, classes}, random_distributions(m, classes, rng), false)};
      break;
    }
    case OpKind::kSegmentLogMeanExp:
      args.segments = random_segments(pick(rng, 1, 3), 1, 4, rng);
      in = {random_input({total_rows(args.segments), n}, rng, -3.0, 1.0)};
      break;
  }
  return {[kind, args](const std::vector<DTensor>& x) {
            return forward_op<double>(kind, std::span<const DTensor>(x), args);
          },
          std::move(in)};
}

// One LSTM step; output is [h | c].
inline OpCase lstm_step_case(std::mt19937_64& rng) {
  const auto batch = pick(rng, 1, 3);
  const auto dim = pick(rng, 1, 3);
  const auto hidden = pick(rng, 1, 3);
  return {[](const std::vector<DTensor>& x) {
            const auto s = layers::lstm_cell(x[0], x[1], x[2], x[3], x[4]);
            return concat_cols(s.h, s.c);
          },
          {random_input({batch, dim}, rng), random_input({batch, hidden}, rng), random_input({batch, hidden}, rng),
           random_input({dim + hidden, 4 * hidden}, rng), random_input({1, 4 * hidden}, rng)}};
}

// Embedding -> masked LSTM over unequal lengths -> ReLU MLP -> class scores
// -> mean NLL. Inputs: table, lstm W, lstm b, mlp W, mlp b, class W, class b.
inline OpCase expert_case(std::mt19937_64& rng) {
  for (;;) {
    const auto vocab = pick(rng, 2, 6);
    const auto dim = pick(rng, 1, 3);
    const auto hidden = pick(rng, 1, 3);
    const auto mlp = pick(rng, 1, 3);
    const auto classes = pick(rng, 2, 3);
    const auto batch = pick(rng, 1, 3);
    auto seqs = random_sequences(batch, 4, 0, static_cast<std::int32_t>(vocab - 1), rng);
    std::vector<std::int32_t> labels(batch);
    for (auto& y : labels) y = static_cast<std::int32_t>(pick(rng, 0, classes - 1));
    std::vector<GradInput> in{random_input({vocab, dim}, rng),
                              random_input({dim + hidden, 4 * hidden}, rng),
                              random_input({1, 4 * hidden}, rng),
                              random_input({hidden, mlp}, rng, -1.5, 1.5),
                              random_input({1, mlp}, rng, -0.5, 0.5),
                              random_input({mlp, classes}, rng),
                              random_input({1, classes}, rng)};
    auto pre_activation = [seqs](const std::vector<DTensor>& x) {
      const auto last = layers::lstm_sequence(x[0], views(seqs), x[1], x[2]);
      return add_row(matmul(last.h, x[3]), x[4]);
    };
    {
      NoGradGuard no_grad;
      std::vector<DTensor> x;
      for (const auto& i : in) x.push_back(DTensor::constant(i.shape, i.values));
      if (!clear_of_zero(pre_activation(x).values(), kKinkMargin)) continue;
    }
    return {[seqs, labels](const std::vector<DTensor>& x) {
              const auto last = layers::lstm_sequence(x[0], views(seqs), x[1], x[2]);
              const auto head = layers::expert_head(last.h, x[3], x[4], x[5], x[6]);
              return nll(log_softmax(head.logits), std::span<const std::int32_t>(labels));
            },
            std::move(in)};
  }
}

struct CnnShape {
  std::vector<std::size_t> windows;  // one imitator per entry
  std::size_t vocab, dim, kernel, classes;
  std::vector<std::vector<std::int32_t>> seqs;
};

inline CnnShape random_cnn_shape(std::mt19937_64& rng, std::size_t imitators) {
  CnnShape s;
  for (std::size_t i = 0; i < imitators; ++i) s.windows.push_back(pick(rng, 1, 3));
  s.vocab = pick(rng, 3, 6);
  s.dim = pick(rng, 1, 3);
  s.kernel = pick(rng, 1, 3);
  s.classes = pick(rng, 2, 3);
  // Id 0 is the pad symbol; real tokens use the rest of the table.
  s.seqs = random_sequences(pick(rng, 1, 3), 4, 1, static_cast<std::int32_t>(s.vocab - 1), rng);
  return s;
}

// Per imitator: table, kernel, kernel bias, class W, class b.
inline void add_imitator_inputs(const CnnShape& s, std::size_t window, std::vector<GradInput>& in,
                                std::mt19937_64& rng) {
  in.push_back(random_input({s.vocab, s.dim}, rng));
  in.push_back(random_input({(2 * window + 1) * s.dim, s.kernel}, rng));
  in.push_back(random_input({1, s.kernel}, rng));
  in.push_back(random_input({s.kernel, s.classes}, rng));
  in.push_back(random_input({1, s.classes}, rng));
}

struct Windows {
  std::vector<std::int32_t> stream;
  std::vector<Segment> padded;
  std::vector<Segment> positions;
};

inline Windows windows_for(const CnnShape& s, std::size_t window) {
  Windows w;
  w.stream = layers::padded_stream(views(s.seqs), window, 0, w.padded, w.positions);
  return w;
}

inline DTensor imitator_log_probs(const std::vector<DTensor>& x, std::size_t first, const Windows& w) {
  const auto hidden = layers::window_hidden(x[first], std::span<const std::int32_t>(w.stream),
                                            std::span<const Segment>(w.padded), 0, x[first + 1], x[first + 2]);
  return layers::class_log_probs(hidden, x[first + 3], x[first + 4]);
}

inline bool conv_clear_of_kink(const CnnShape& s, const std::vector<GradInput>& in, std::size_t first_input) {
  NoGradGuard no_grad;
  for (std::size_t i = 0; i < s.windows.size(); ++i) {
    const auto w = windows_for(s, s.windows[i]);
    const auto at = first_input + 5 * i;
    const auto table = DTensor::constant(in[at].shape, in[at].values);
    const auto kernel = DTensor::constant(in[at + 1].shape, in[at + 1].values);
    const auto bias = DTensor::constant(in[at + 2].shape, in[at + 2].values);
    const auto pre = conv1d(embedding(table, std::span<const std::int32_t>(w.stream), 0), kernel, bias,
                            std::span<const Segment>(w.padded));
    if (!clear_of_zero(pre.values(), kKinkMargin)) return false;
  }
  return true;
}

// Imitation loss: per-window soft cross-entropy against fixed expert
// distributions, summed over imitators and windows, divided by the batch.
inline OpCase imitation_case(std::mt19937_64& rng) {
  for (;;) {
    const auto s = random_cnn_shape(rng, pick(rng, 1, 2));
    std::vector<GradInput> in{input({s.seqs.size(), s.classes}, random_distributions(s.seqs.size(), s.classes, rng),
                                    false)};
    for (auto c : s.windows) add_imitator_inputs(s, c, in, rng);
    if (!conv_clear_of_kink(s, in, 1)) continue;
    return {[s](const std::vector<DTensor>& x) {
              DTensor total;
              for (std::size_t i = 0; i < s.windows.size(); ++i) {
                const auto w = windows_for(s, s.windows[i]);
                const auto log_p = imitator_log_probs(x, 1 + 5 * i, w);
                const auto term =
                    soft_cross_entropy(log_p, layers::repeat_targets(x[0], std::span<const Segment>(w.positions)));
                total = total.defined() ? add(total, term) : term;
              }
              return scale(total, 1.0 / static_cast<double>(s.seqs.size()));
            },
            std::move(in)};
  }
}

// alpha = log of the mean window distribution, one row per input.
inline OpCase imitator_logit_case(std::mt19937_64& rng) {
  for (;;) {
    const auto s = random_cnn_shape(rng, 1);
    std::vector<GradInput> in;
    add_imitator_inputs(s, s.windows[0], in, rng);
    if (!conv_clear_of_kink(s, in, 0)) continue;
    return {[s](const std::vector<DTensor>& x) {
              const auto w = windows_for(s, s.windows[0]);
              return segment_log_mean_exp(imitator_log_probs(x, 0, w), std::span<const Segment>(w.positions));
            },
            std::move(in)};
  }
}

// Mixture loss over expert scores z, imitator logits and gates.
// Inputs: z, lambda, alpha_1..alpha_I.
inline OpCase mixture_case(std::mt19937_64& rng) {
  const auto batch = pick(rng, 1, 3);
  const auto classes = pick(rng, 2, 4);
  const auto count = pick(rng, 1, 4);
  std::vector<std::uint8_t> enabled(count);
  for (auto& e : enabled) e = static_cast<std::uint8_t>(pick(rng, 0, 3) != 0);
  std::vector<std::int32_t> labels(batch);
  for (auto& y : labels) y = static_cast<std::int32_t>(pick(rng, 0, classes - 1));
  std::vector<GradInput> in{random_input({batch, classes}, rng, -2.0, 2.0), random_input({1, count}, rng, -2.0, 2.0)};
  for (std::size_t i = 0; i < count; ++i) in.push_back(random_input({batch, classes}, rng, -3.0, 0.0));
  return {[enabled, labels](const std::vector<DTensor>& x) {
            std::vector<DTensor> alphas(x.begin() + 2, x.end());
            const auto mixed = layers::mix_logits(x[0], std::span<const DTensor>(alphas), x[1],
                                                  std::span<const std::uint8_t>(enabled));
            return nll(log_softmax(mixed), std::span<const std::int32_t>(labels));
          },
          std::move(in)};
}

// One input reaching the output along several paths.
inline OpCase fan_out_case(std::mt19937_64& rng) {
  const auto m = pick(rng, 1, 3);
  const auto n = pick(rng, 1, 3);
  return {[](const std::vector<DTensor>& x) {
            const auto a = mein::tanh(x[0]);
            return mul(a, add(x[0], add(matmul(x[0], x[1]), sigmoid(a))));
          },
          {random_input({m, n}, rng), random_input({n, n}, rng)}};
}

inline std::vector<NamedGenerator> all_generators() {
  std::vector<NamedGenerator> gens;
  for (auto kind : kAllOps) {
    gens.push_back({std::string(op_name(kind)), [kind](std::mt19937_64& rng) { return op_case(kind, rng); }});
  }
  gens.push_back({"lstm_step", lstm_step_case});
  gens.push_back({"expert_loss", expert_case});
  gens.push_back({"imitation_loss", imitation_case});
  gens.push_back({"imitator_logit", imitator_logit_case});
  gens.push_back({"mixture_loss", mixture_case});
  gens.push_back({"fan_out", fan_out_case});
  return gens;
}

}  // namespace mein::testing
