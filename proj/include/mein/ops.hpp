#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mein/tensor.hpp"

namespace mein {

inline constexpr double kLeakySlope = 0.01;

// A contiguous run of rows inside a stacked [rows, cols] tensor.
struct Segment {
  std::size_t offset = 0;
  std::size_t length = 0;
};

template <typename T> BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b);
/// a[m,n] + bias[1,n] broadcast over rows.
template <typename T> BasicTensor<T> add_row(const BasicTensor<T>& a, const BasicTensor<T>& bias);
template <typename T> BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T> BasicTensor<T> scale(const BasicTensor<T>& a, T factor);
/// a * s where s holds a single element; differentiable in both.
template <typename T> BasicTensor<T> mul_scalar(const BasicTensor<T>& a, const BasicTensor<T>& s);

template <typename T> BasicTensor<T> sigmoid(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> tanh(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> relu(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> leaky_relu(const BasicTensor<T>& a);

// Row-wise over the final axis.
template <typename T> BasicTensor<T> softmax(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> log_softmax(const BasicTensor<T>& a);

/// Gathers rows of `table` for each id. Rows whose id equals `frozen_id` are
/// read as zeros and never receive gradient.
template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::int32_t> ids,
                         std::int32_t frozen_id = -1);

/// Valid 1-D convolution applied independently to each segment of `input`
/// ([rows, C]). `kernel` is [span * C, N] with window rows stacked in order.
/// Output stacks (length - span + 1) rows per segment.
template <typename T>
BasicTensor<T> conv1d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, std::span<const Segment> segments);

/// Row r of the result is a[r] when keep_a[r] != 0, else b[r].
template <typename T>
BasicTensor<T> select_rows(const BasicTensor<T>& a, const BasicTensor<T>& b,
                           std::span<const std::uint8_t> keep_a);

template <typename T> BasicTensor<T> mean_rows(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> sum(const BasicTensor<T>& a);
template <typename T> BasicTensor<T> concat_cols(const BasicTensor<T>& a, const BasicTensor<T>& b);
template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t start, std::size_t length);

/// Mean over rows of -logp[r, label[r]].
template <typename T>
BasicTensor<T> nll(const BasicTensor<T>& log_probs, std::span<const std::int32_t> labels);

/// -sum(targets * log_probs); targets are treated as constants.
template <typename T>
BasicTensor<T> soft_cross_entropy(const BasicTensor<T>& log_probs, const BasicTensor<T>& targets);

/// For each segment of rows: log(mean_r exp(a[r, :])), computed with
/// log-sum-exp. Output is [segments, cols].
template <typename T>
BasicTensor<T> segment_log_mean_exp(const BasicTensor<T>& a, std::span<const Segment> segments);

enum class OpKind {
  kMatmul,
  kAdd,
  kSub,
  kAddRow,
  kMul,
  kScale,
  kMulScalar,
  kSigmoid,
  kTanh,
  kRelu,
  kLeakyRelu,
  kSoftmax,
  kLogSoftmax,
  kEmbedding,
  kConv1d,
  kSelectRows,
  kMeanRows,
  kSum,
  kConcatCols,
  kSliceCols,
  kNll,
  kSoftCrossEntropy,
  kSegmentLogMeanExp,
};

inline constexpr OpKind kAllOps[] = {
    OpKind::kMatmul,     OpKind::kAdd,        OpKind::kSub,
    OpKind::kAddRow,     OpKind::kMul,        OpKind::kScale,
    OpKind::kMulScalar,  OpKind::kSigmoid,    OpKind::kTanh,
    OpKind::kRelu,       OpKind::kLeakyRelu,  OpKind::kSoftmax,
    OpKind::kLogSoftmax, OpKind::kEmbedding,  OpKind::kConv1d,
    OpKind::kSelectRows, OpKind::kMeanRows,   OpKind::kSum,        OpKind::kConcatCols,
    OpKind::kSliceCols,  OpKind::kNll,        OpKind::kSoftCrossEntropy,
    OpKind::kSegmentLogMeanExp,
};

std::string_view op_name(OpKind kind);

// Non-tensor arguments for the generic dispatcher.
struct OpArgs {
  std::vector<std::int32_t> ids;  // embedding ids or nll labels
  std::vector<std::uint8_t> mask;  // select_rows
  std::int32_t frozen_id = -1;
  std::vector<Segment> segments;
  std::size_t start = 0;
  std::size_t length = 0;
  double factor = 1.0;
};

/// Dispatches to the named op. Tensor arity follows the typed functions.
template <typename T>
BasicTensor<T> forward_op(OpKind kind, std::span<const BasicTensor<T>> inputs,
                          const OpArgs& args = {});

}  // namespace mein
