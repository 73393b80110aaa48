#pragma once

// Scalar-generic building blocks shared by the models. The float models call
// these directly; gradient checks instantiate them with double.

#include <algorithm>
#include <cstdint>
#include <functional>
#include <span>
#include <stdexcept>
#include <utility>
#include <vector>

#include "mein/ops.hpp"

namespace mein::layers {

template <typename T>
struct Lstm {
  BasicTensor<T> h;
  BasicTensor<T> c;
};

/// One LSTM step with gate blocks (input, forget, cell, output) laid out
/// along the columns of `weight` ([in + H, 4H]).
template <typename T>
Lstm<T> lstm_cell(const BasicTensor<T>& x, const BasicTensor<T>& h_prev,
                  const BasicTensor<T>& c_prev, const BasicTensor<T>& weight,
                  const BasicTensor<T>& bias) {
  const std::size_t h = h_prev.cols();
  if (weight.cols() != 4 * h || weight.rows() != x.cols() + h) {
    throw ShapeError("lstm_cell: weight " + shape_string(weight.shape()) + " does not fit input " +
                     shape_string(x.shape()) + " and state " + shape_string(h_prev.shape()));
  }
  const auto gates = add_row(matmul(concat_cols(x, h_prev), weight), bias);
  const auto input_gate = sigmoid(slice_cols(gates, 0, h));
  const auto forget_gate = sigmoid(slice_cols(gates, h, h));
  const auto candidate = mein::tanh(slice_cols(gates, 2 * h, h));
  const auto output_gate = sigmoid(slice_cols(gates, 3 * h, h));
  auto c = add(mul(forget_gate, c_prev), mul(input_gate, candidate));
  auto out = mul(output_gate, mein::tanh(c));
  return {std::move(out), std::move(c)};
}

/// Runs the LSTM over a batch of id sequences from a zero state. Rows whose
/// sequence has ended keep their previous state, so the result holds each
/// sequence's state after its own last token. `on_embedded` may transform
/// each step's embeddings (dropout); `states` collects h after every step.
template <typename T>
Lstm<T> lstm_sequence(const BasicTensor<T>& table, const std::vector<std::span<const std::int32_t>>& batch,
                      const BasicTensor<T>& weight, const BasicTensor<T>& bias,
                      const std::function<BasicTensor<T>(const BasicTensor<T>&)>& on_embedded = {},
                      std::vector<BasicTensor<T>>* states = nullptr) {
  if (batch.empty()) throw std::invalid_argument("lstm_sequence: empty batch");
  std::size_t steps = 0;
  for (const auto& seq : batch) {
    if (seq.empty()) throw std::invalid_argument("lstm_sequence: empty sequence");
    steps = std::max(steps, seq.size());
  }
  const auto rows = batch.size();
  const auto hidden = bias.cols() / 4;
  Lstm<T> state{BasicTensor<T>::zeros({rows, hidden}), BasicTensor<T>::zeros({rows, hidden})};
  std::vector<std::int32_t> ids(rows);
  std::vector<std::uint8_t> active(rows);
  for (std::size_t t = 0; t < steps; ++t) {
    bool all_active = true;
    for (std::size_t b = 0; b < rows; ++b) {
      active[b] = t < batch[b].size();
      all_active = all_active && active[b];
      ids[b] = active[b] ? batch[b][t] : 0;
    }
    auto x = embedding(table, std::span<const std::int32_t>(ids));
    if (on_embedded) x = on_embedded(x);
    auto next = lstm_cell(x, state.h, state.c, weight, bias);
    if (all_active) {
      state = std::move(next);
    } else {
      state.h = select_rows(next.h, state.h, std::span<const std::uint8_t>(active));
      state.c = select_rows(next.c, state.c, std::span<const std::uint8_t>(active));
    }
    if (states != nullptr) states->push_back(state.h);
  }
  return state;
}

template <typename T>
struct Head {
  BasicTensor<T> state;   // ReLU layer output
  BasicTensor<T> logits;  // per-class scores
};

template <typename T>
Head<T> expert_head(const BasicTensor<T>& h, const BasicTensor<T>& mlp_weight, const BasicTensor<T>& mlp_bias,
                    const BasicTensor<T>& class_weight, const BasicTensor<T>& class_bias) {
  auto state = relu(add_row(matmul(h, mlp_weight), mlp_bias));
  auto logits = add_row(matmul(state, class_weight), class_bias);
  return {std::move(state), std::move(logits)};
}

/// Builds the padded id stream: `pad` pad ids on both sides of every
/// sequence. Returns the segments of the stream and, through `positions`,
/// the rows each sequence occupies in the convolution output.
inline std::vector<std::int32_t> padded_stream(const std::vector<std::span<const std::int32_t>>& batch,
                                               std::size_t pad, std::int32_t pad_id,
                                               std::vector<Segment>& stream_segments,
                                               std::vector<Segment>& positions) {
  std::vector<std::int32_t> stream;
  std::size_t out_row = 0;
  for (const auto& seq : batch) {
    if (seq.empty()) throw std::invalid_argument("padded_stream: empty sequence");
    stream_segments.push_back({stream.size(), seq.size() + 2 * pad});
    stream.insert(stream.end(), pad, pad_id);
    stream.insert(stream.end(), seq.begin(), seq.end());
    stream.insert(stream.end(), pad, pad_id);
    positions.push_back({out_row, seq.size()});
    out_row += seq.size();
  }
  return stream;
}

/// leaky_relu(conv1d(embedding(stream))) with the pad row frozen at zero.
template <typename T>
BasicTensor<T> window_hidden(const BasicTensor<T>& table, std::span<const std::int32_t> stream,
                             std::span<const Segment> stream_segments, std::int32_t pad_id,
                             const BasicTensor<T>& kernel, const BasicTensor<T>& kernel_bias) {
  const auto embedded = embedding(table, stream, pad_id);
  return leaky_relu(conv1d(embedded, kernel, kernel_bias, stream_segments));
}

template <typename T>
BasicTensor<T> class_log_probs(const BasicTensor<T>& hidden, const BasicTensor<T>& weight,
                               const BasicTensor<T>& bias) {
  return log_softmax(add_row(matmul(hidden, weight), bias));
}

/// z + sum_i weight_i * alpha_i with weight = sigmoid(lambda); imitators with
/// `enabled[i] == 0` are skipped.
template <typename T>
BasicTensor<T> mix_logits(const BasicTensor<T>& z, std::span<const BasicTensor<T>> alphas,
                          const BasicTensor<T>& lambda, std::span<const std::uint8_t> enabled) {
  bool any = false;
  for (auto e : enabled) any = any || e != 0;
  if (!any) return z;
  const auto weights = sigmoid(lambda);
  BasicTensor<T> mixed = z;
  for (std::size_t i = 0; i < alphas.size(); ++i) {
    if (!enabled[i]) continue;
    mixed = add(mixed, mul_scalar(alphas[i], slice_cols(weights, i, 1)));
  }
  return mixed;
}

/// Expands per-input target rows to one row per window.
template <typename T>
BasicTensor<T> repeat_targets(const BasicTensor<T>& targets, std::span<const Segment> positions) {
  const auto classes = targets.cols();
  std::size_t total = 0;
  for (const auto& s : positions) total += s.length;
  std::vector<T> rows(total * classes);
  for (std::size_t b = 0; b < positions.size(); ++b) {
    const T* src = targets.values().data() + b * classes;
    for (std::size_t j = 0; j < positions[b].length; ++j) {
      std::copy_n(src, classes, rows.data() + (positions[b].offset + j) * classes);
    }
  }
  return BasicTensor<T>::constant({total, classes}, std::move(rows));
}

}  // namespace mein::layers
