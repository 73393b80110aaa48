#include "mein/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

namespace mein {

namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using MapConstMat = Eigen::Map<const RowMat<T>>;

template <typename T>
MapConstMat<T> as_mat(const BasicTensor<T>& t) {
  return MapConstMat<T>(t.values().data(), static_cast<Eigen::Index>(t.rows()),
                        static_cast<Eigen::Index>(t.cols()));
}

template <typename T>
MapConstMat<T> value_mat(const Node<T>& n, std::size_t rows, std::size_t cols) {
  return MapConstMat<T>(n.value.data(), static_cast<Eigen::Index>(rows),
                        static_cast<Eigen::Index>(cols));
}

template <typename T>
MapMat<T> grad_mat(Node<T>& n, std::size_t rows, std::size_t cols) {
  return MapMat<T>(n.grad_buffer(), static_cast<Eigen::Index>(rows),
                   static_cast<Eigen::Index>(cols));
}

template <typename T>
Shape mat_shape(std::size_t r, std::size_t c) {
  return {r, c};
}

template <typename T>
void require_same_shape(const char* op, const BasicTensor<T>& a, const BasicTensor<T>& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
}

template <typename T>
void require_defined(const char* op, const BasicTensor<T>& a) {
  if (!a.defined()) throw ShapeError(std::string(op) + ": undefined tensor input");
}

template <typename T>
T stable_sigmoid(T x) {
  if (x >= T(0)) return T(1) / (T(1) + std::exp(-x));
  const T e = std::exp(x);
  return e / (T(1) + e);
}

// Applies f elementwise; df(x, y) gives dy/dx from input and output.
template <typename T, typename F, typename DF>
BasicTensor<T> unary(const char* op, const BasicTensor<T>& a, F f, DF df) {
  require_defined(op, a);
  std::vector<T> out(a.size());
  const auto in = a.values();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(in[i]);
  return make_result<T>(op, a.shape(), std::move(out), {a}, [df](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i) {
      g[i] += self.grad[i] * df(p.value[i], self.value[i]);
    }
  });
}

template <typename T>
void segments_cover(const char* op, std::span<const Segment> segments, std::size_t rows,
                    std::size_t min_length) {
  for (const auto& s : segments) {
    if (s.length < min_length || s.offset + s.length > rows) {
      throw ShapeError(std::string(op) + ": segment [" + std::to_string(s.offset) + ", +" +
                       std::to_string(s.length) + ") invalid for " + std::to_string(rows) +
                       " rows (minimum length " + std::to_string(min_length) + ")");
    }
  }
}

}  // namespace

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_defined("matmul", a);
  require_defined("matmul", b);
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ " + shape_string(a.shape()) + " x " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  std::vector<T> out(m * n);
  MapMat<T>(out.data(), m, n).noalias() = as_mat(a) * as_mat(b);
  return make_result<T>("matmul", mat_shape<T>(m, n), std::move(out), {a, b},
                        [m, k, n](Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          MapConstMat<T> grad_out(self.grad.data(), m, n);
                          if (pa.requires_grad) {
                            grad_mat(pa, m, k).noalias() +=
                                grad_out * value_mat(pb, k, n).transpose();
                          }
                          if (pb.requires_grad) {
                            grad_mat(pb, k, n).noalias() +=
                                value_mat(pa, m, k).transpose() * grad_out;
                          }
                        });
}

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("add", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  return make_result<T>("add", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    for (auto& p : self.parents) {
      if (!p->requires_grad) continue;
      T* g = p->grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> sub(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("sub", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] - b[i];
  return make_result<T>("sub", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] -= self.grad[i];
    }
  });
}

template <typename T>
BasicTensor<T> add_row(const BasicTensor<T>& a, const BasicTensor<T>& bias) {
  require_defined("add_row", a);
  require_defined("add_row", bias);
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_row: bias " + shape_string(bias.shape()) + " does not broadcast over " +
                     shape_string(a.shape()));
  }
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(a.size());
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[r * n + c] = a[r * n + c] + bias[c];
  return make_result<T>("add_row", a.shape(), std::move(out), {a, bias}, [m, n](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer();
      for (std::size_t r = 0; r < m; ++r)
        for (std::size_t c = 0; c < n; ++c) g[c] += self.grad[r * n + c];
    }
  });
}

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_same_shape("mul", a, b);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * b[i];
  return make_result<T>("mul", a.shape(), std::move(out), {a, b}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& pb = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      T* g = pb.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

template <typename T>
BasicTensor<T> scale(const BasicTensor<T>& a, T factor) {
  require_defined("scale", a);
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_result<T>("scale", a.shape(), std::move(out), {a}, [factor](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * factor;
  });
}

template <typename T>
BasicTensor<T> mul_scalar(const BasicTensor<T>& a, const BasicTensor<T>& s) {
  require_defined("mul_scalar", a);
  require_defined("mul_scalar", s);
  if (s.size() != 1) {
    throw ShapeError("mul_scalar: factor " + shape_string(s.shape()) + " is not a scalar (input " +
                     shape_string(a.shape()) + ")");
  }
  const T factor = s[0];
  std::vector<T> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] * factor;
  return make_result<T>("mul_scalar", a.shape(), std::move(out), {a, s}, [](Node<T>& self) {
    auto& pa = *self.parents[0];
    auto& ps = *self.parents[1];
    if (pa.requires_grad) {
      T* g = pa.grad_buffer();
      for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i] * ps.value[0];
    }
    if (ps.requires_grad) {
      T acc = 0;
      for (std::size_t i = 0; i < self.grad.size(); ++i) acc += self.grad[i] * pa.value[i];
      ps.grad_buffer()[0] += acc;
    }
  });
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& a) {
  return unary<T>(
      "sigmoid", a, [](T x) { return stable_sigmoid(x); },
      [](T, T y) { return y * (T(1) - y); });
}

template <typename T>
BasicTensor<T> tanh(const BasicTensor<T>& a) {
  return unary<T>(
      "tanh", a, [](T x) { return std::tanh(x); }, [](T, T y) { return T(1) - y * y; });
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& a) {
  return unary<T>(
      "relu", a, [](T x) { return x > T(0) ? x : T(0); },
      [](T x, T) { return x > T(0) ? T(1) : T(0); });
}

template <typename T>
BasicTensor<T> leaky_relu(const BasicTensor<T>& a) {
  constexpr T slope = static_cast<T>(kLeakySlope);
  return unary<T>(
      "leaky_relu", a, [](T x) { return x > T(0) ? x : slope * x; },
      [](T x, T) { return x > T(0) ? T(1) : slope; });
}

template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& a) {
  require_defined("softmax", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(a.size());
  for (std::size_t r = 0; r < m; ++r) {
    const T* x = a.values().data() + r * n;
    T* y = out.data() + r * n;
    const T mx = *std::max_element(x, x + n);
    T total = 0;
    for (std::size_t c = 0; c < n; ++c) total += (y[c] = std::exp(x[c] - mx));
    for (std::size_t c = 0; c < n; ++c) y[c] /= total;
  }
  return make_result<T>("softmax", a.shape(), std::move(out), {a}, [m, n](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    for (std::size_t r = 0; r < m; ++r) {
      const T* y = self.value.data() + r * n;
      const T* dy = self.grad.data() + r * n;
      T dot = 0;
      for (std::size_t c = 0; c < n; ++c) dot += dy[c] * y[c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += y[c] * (dy[c] - dot);
    }
  });
}

template <typename T>
BasicTensor<T> log_softmax(const BasicTensor<T>& a) {
  require_defined("log_softmax", a);
  const std::size_t m = a.rows(), n = a.cols();
  std::vector<T> out(a.size());
  for (std::size_t r = 0; r < m; ++r) {
    const T* x = a.values().data() + r * n;
    T* y = out.data() + r * n;
    const T mx = *std::max_element(x, x + n);
    T total = 0;
    for (std::size_t c = 0; c < n; ++c) total += std::exp(x[c] - mx);
    const T lse = mx + std::log(total);
    for (std::size_t c = 0; c < n; ++c) y[c] = x[c] - lse;
  }
  return make_result<T>("log_softmax", a.shape(), std::move(out), {a}, [m, n](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    for (std::size_t r = 0; r < m; ++r) {
      const T* y = self.value.data() + r * n;
      const T* dy = self.grad.data() + r * n;
      T total = 0;
      for (std::size_t c = 0; c < n; ++c) total += dy[c];
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += dy[c] - std::exp(y[c]) * total;
    }
  });
}

template <typename T>
BasicTensor<T> embedding(const BasicTensor<T>& table, std::span<const std::int32_t> ids,
                         std::int32_t frozen_id) {
  require_defined("embedding", table);
  const std::size_t vocab = table.rows(), dim = table.cols();
  std::vector<T> out(ids.size() * dim, T(0));
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto id = ids[i];
    if (id == frozen_id) continue;
    if (id < 0 || static_cast<std::size_t>(id) >= vocab) {
      throw ShapeError("embedding: id " + std::to_string(id) + " outside table " +
                       shape_string(table.shape()));
    }
    std::copy_n(table.values().data() + static_cast<std::size_t>(id) * dim, dim,
                out.data() + i * dim);
  }
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  return make_result<T>(
      "embedding", mat_shape<T>(ids.size(), dim), std::move(out), {table},
      [kept = std::move(kept), frozen_id, dim](Node<T>& self) {
        auto& p = *self.parents[0];
        if (!p.requires_grad) return;
        T* g = p.grad_buffer();
        for (std::size_t i = 0; i < kept.size(); ++i) {
          if (kept[i] == frozen_id) continue;
          T* row = g + static_cast<std::size_t>(kept[i]) * dim;
          const T* dy = self.grad.data() + i * dim;
          for (std::size_t c = 0; c < dim; ++c) row[c] += dy[c];
        }
      });
}

template <typename T>
BasicTensor<T> conv1d(const BasicTensor<T>& input, const BasicTensor<T>& kernel,
                      const BasicTensor<T>& bias, std::span<const Segment> segments) {
  require_defined("conv1d", input);
  require_defined("conv1d", kernel);
  require_defined("conv1d", bias);
  const std::size_t channels = input.cols();
  if (channels == 0 || kernel.rows() % channels != 0 || kernel.rows() == 0) {
    throw ShapeError("conv1d: kernel " + shape_string(kernel.shape()) +
                     " is not a whole number of windows over input " +
                     shape_string(input.shape()));
  }
  const std::size_t span = kernel.rows() / channels;
  const std::size_t width = kernel.rows();
  const std::size_t out_dim = kernel.cols();
  if (bias.rows() != 1 || bias.cols() != out_dim) {
    throw ShapeError("conv1d: bias " + shape_string(bias.shape()) + " does not match kernel " +
                     shape_string(kernel.shape()));
  }
  segments_cover<T>("conv1d", segments, input.rows(), span);

  std::size_t total = 0;
  for (const auto& s : segments) total += s.length - span + 1;
  std::vector<T> out(total * out_dim);
  const auto kmat = as_mat(kernel);
  const T* in = input.values().data();
  std::size_t row = 0;
  for (const auto& s : segments) {
    const std::size_t windows = s.length - span + 1;
    // Window i of a segment is `span` consecutive input rows, which are
    // contiguous in row-major storage; an outer stride of `channels` views
    // every window without copying.
    Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> view(
        in + s.offset * channels, windows, width, Eigen::OuterStride<>(channels));
    MapMat<T> dst(out.data() + row * out_dim, windows, out_dim);
    dst.noalias() = view * kmat;
    dst.rowwise() += as_mat(bias).row(0);
    row += windows;
  }

  std::vector<Segment> segs(segments.begin(), segments.end());
  return make_result<T>(
      "conv1d", mat_shape<T>(total, out_dim), std::move(out), {input, kernel, bias},
      [segs = std::move(segs), span, channels, width, out_dim](Node<T>& self) {
        auto& pin = *self.parents[0];
        auto& pk = *self.parents[1];
        auto& pb = *self.parents[2];
        std::size_t row = 0;
        RowMat<T> dwin;
        for (const auto& s : segs) {
          const std::size_t windows = s.length - span + 1;
          MapConstMat<T> dy(self.grad.data() + row * out_dim, windows, out_dim);
          if (pk.requires_grad) {
            Eigen::Map<const RowMat<T>, 0, Eigen::OuterStride<>> view(
                pin.value.data() + s.offset * channels, windows, width,
                Eigen::OuterStride<>(channels));
            grad_mat(pk, width, out_dim).noalias() += view.transpose() * dy;
          }
          if (pb.requires_grad) {
            grad_mat(pb, 1, out_dim) += dy.colwise().sum();
          }
          if (pin.requires_grad) {
            dwin.noalias() = dy * value_mat(pk, width, out_dim).transpose();
            T* g = pin.grad_buffer() + s.offset * channels;
            for (std::size_t i = 0; i < windows; ++i) {
              T* dst = g + i * channels;
              const T* src = dwin.data() + i * width;
              for (std::size_t c = 0; c < width; ++c) dst[c] += src[c];
            }
          }
          row += windows;
        }
      });
}

template <typename T>
BasicTensor<T> select_rows(const BasicTensor<T>& a, const BasicTensor<T>& b,
                           std::span<const std::uint8_t> keep_a) {
  require_same_shape("select_rows", a, b);
  const std::size_t m = a.rows(), n = a.cols();
  if (keep_a.size() != m) {
    throw ShapeError("select_rows: " + std::to_string(keep_a.size()) + " mask entries for " +
                     shape_string(a.shape()));
  }
  std::vector<T> out(a.size());
  for (std::size_t r = 0; r < m; ++r) {
    const auto& src = keep_a[r] ? a : b;
    std::copy_n(src.values().data() + r * n, n, out.data() + r * n);
  }
  std::vector<std::uint8_t> keep(keep_a.begin(), keep_a.end());
  return make_result<T>("select_rows", a.shape(), std::move(out), {a, b},
                        [keep = std::move(keep), m, n](Node<T>& self) {
                          for (std::size_t side = 0; side < 2; ++side) {
                            auto& p = *self.parents[side];
                            if (!p.requires_grad) continue;
                            T* g = p.grad_buffer();
                            for (std::size_t r = 0; r < m; ++r) {
                              if ((keep[r] != 0) != (side == 0)) continue;
                              for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[r * n + c];
                            }
                          }
                        });
}

template <typename T>
BasicTensor<T> mean_rows(const BasicTensor<T>& a) {
  require_defined("mean_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (m == 0) throw ShapeError("mean_rows: empty input " + shape_string(a.shape()));
  std::vector<T> out(n, T(0));
  for (std::size_t r = 0; r < m; ++r)
    for (std::size_t c = 0; c < n; ++c) out[c] += a[r * n + c];
  for (auto& v : out) v /= static_cast<T>(m);
  return make_result<T>("mean_rows", mat_shape<T>(1, n), std::move(out), {a}, [m, n](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    const T inv = T(1) / static_cast<T>(m);
    for (std::size_t r = 0; r < m; ++r)
      for (std::size_t c = 0; c < n; ++c) g[r * n + c] += self.grad[c] * inv;
  });
}

template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& a) {
  require_defined("sum", a);
  T total = 0;
  for (auto v : a.values()) total += v;
  return make_result<T>("sum", Shape{1}, {total}, {a}, [](Node<T>& self) {
    auto& p = *self.parents[0];
    if (!p.requires_grad) return;
    T* g = p.grad_buffer();
    for (std::size_t i = 0; i < p.value.size(); ++i) g[i] += self.grad[0];
  });
}

template <typename T>
BasicTensor<T> concat_cols(const BasicTensor<T>& a, const BasicTensor<T>& b) {
  require_defined("concat_cols", a);
  require_defined("concat_cols", b);
  if (a.rows() != b.rows()) {
    throw ShapeError("concat_cols: row counts differ " + shape_string(a.shape()) + " vs " +
                     shape_string(b.shape()));
  }
  const std::size_t m = a.rows(), na = a.cols(), nb = b.cols(), n = na + nb;
  std::vector<T> out(m * n);
  for (std::size_t r = 0; r < m; ++r) {
    std::copy_n(a.values().data() + r * na, na, out.data() + r * n);
    std::copy_n(b.values().data() + r * nb, nb, out.data() + r * n + na);
  }
  return make_result<T>("concat_cols", mat_shape<T>(m, n), std::move(out), {a, b},
                        [m, na, nb, n](Node<T>& self) {
                          auto& pa = *self.parents[0];
                          auto& pb = *self.parents[1];
                          if (pa.requires_grad) {
                            T* g = pa.grad_buffer();
                            for (std::size_t r = 0; r < m; ++r)
                              for (std::size_t c = 0; c < na; ++c)
                                g[r * na + c] += self.grad[r * n + c];
                          }
                          if (pb.requires_grad) {
                            T* g = pb.grad_buffer();
                            for (std::size_t r = 0; r < m; ++r)
                              for (std::size_t c = 0; c < nb; ++c)
                                g[r * nb + c] += self.grad[r * n + na + c];
                          }
                        });
}

template <typename T>
BasicTensor<T> slice_cols(const BasicTensor<T>& a, std::size_t start, std::size_t length) {
  require_defined("slice_cols", a);
  const std::size_t m = a.rows(), n = a.cols();
  if (start + length > n) {
    throw ShapeError("slice_cols: columns [" + std::to_string(start) + ", " +
                     std::to_string(start + length) + ") outside " + shape_string(a.shape()));
  }
  std::vector<T> out(m * length);
  for (std::size_t r = 0; r < m; ++r)
    std::copy_n(a.values().data() + r * n + start, length, out.data() + r * length);
  return make_result<T>("slice_cols", mat_shape<T>(m, length), std::move(out), {a},
                        [m, n, start, length](Node<T>& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          T* g = p.grad_buffer();
                          for (std::size_t r = 0; r < m; ++r)
                            for (std::size_t c = 0; c < length; ++c)
                              g[r * n + start + c] += self.grad[r * length + c];
                        });
}

template <typename T>
BasicTensor<T> nll(const BasicTensor<T>& log_probs, std::span<const std::int32_t> labels) {
  require_defined("nll", log_probs);
  const std::size_t m = log_probs.rows(), n = log_probs.cols();
  if (labels.size() != m || m == 0) {
    throw ShapeError("nll: " + std::to_string(labels.size()) + " labels for log-probs " +
                     shape_string(log_probs.shape()));
  }
  T total = 0;
  for (std::size_t r = 0; r < m; ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= n) {
      throw std::out_of_range("nll: label " + std::to_string(labels[r]) + " outside " +
                              std::to_string(n) + " classes");
    }
    total -= log_probs[r * n + static_cast<std::size_t>(labels[r])];
  }
  std::vector<std::int32_t> kept(labels.begin(), labels.end());
  return make_result<T>("nll", Shape{1}, {total / static_cast<T>(m)}, {log_probs},
                        [kept = std::move(kept), m, n](Node<T>& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          T* g = p.grad_buffer();
                          const T step = self.grad[0] / static_cast<T>(m);
                          for (std::size_t r = 0; r < m; ++r)
                            g[r * n + static_cast<std::size_t>(kept[r])] -= step;
                        });
}

template <typename T>
BasicTensor<T> soft_cross_entropy(const BasicTensor<T>& log_probs, const BasicTensor<T>& targets) {
  require_same_shape("soft_cross_entropy", log_probs, targets);
  T total = 0;
  for (std::size_t i = 0; i < log_probs.size(); ++i) total -= targets[i] * log_probs[i];
  return make_result<T>("soft_cross_entropy", Shape{1}, {total}, {log_probs},
                        [targets](Node<T>& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          T* g = p.grad_buffer();
                          const auto t = targets.values();
                          for (std::size_t i = 0; i < t.size(); ++i) g[i] -= self.grad[0] * t[i];
                        });
}

template <typename T>
BasicTensor<T> segment_log_mean_exp(const BasicTensor<T>& a, std::span<const Segment> segments) {
  require_defined("segment_log_mean_exp", a);
  segments_cover<T>("segment_log_mean_exp", segments, a.rows(), 1);
  const std::size_t n = a.cols();
  std::vector<T> out(segments.size() * n);
  const T* x = a.values().data();
  for (std::size_t s = 0; s < segments.size(); ++s) {
    const auto seg = segments[s];
    for (std::size_t c = 0; c < n; ++c) {
      T mx = -std::numeric_limits<T>::infinity();
      for (std::size_t r = 0; r < seg.length; ++r) mx = std::max(mx, x[(seg.offset + r) * n + c]);
      T total = 0;
      for (std::size_t r = 0; r < seg.length; ++r) total += std::exp(x[(seg.offset + r) * n + c] - mx);
      out[s * n + c] = mx + std::log(total) - std::log(static_cast<T>(seg.length));
    }
  }
  std::vector<Segment> segs(segments.begin(), segments.end());
  return make_result<T>("segment_log_mean_exp", mat_shape<T>(segments.size(), n), std::move(out),
                        {a}, [segs = std::move(segs), n](Node<T>& self) {
                          auto& p = *self.parents[0];
                          if (!p.requires_grad) return;
                          T* g = p.grad_buffer();
                          for (std::size_t s = 0; s < segs.size(); ++s) {
                            const auto seg = segs[s];
                            const T log_len = std::log(static_cast<T>(seg.length));
                            for (std::size_t c = 0; c < n; ++c) {
                              const T lse = self.value[s * n + c] + log_len;
                              const T dy = self.grad[s * n + c];
                              for (std::size_t r = 0; r < seg.length; ++r) {
                                const std::size_t i = (seg.offset + r) * n + c;
                                g[i] += dy * std::exp(p.value[i] - lse);
                              }
                            }
                          }
                        });
}

std::string_view op_name(OpKind kind) {
  switch (kind) {
    case OpKind::kMatmul: return "matmul";
    case OpKind::kAdd: return "add";
    case OpKind::kSub: return "sub";
    case OpKind::kAddRow: return "add_row";
    case OpKind::kMul: return "mul";
    case OpKind::kScale: return "scale";
    case OpKind::kMulScalar: return "mul_scalar";
    case OpKind::kSigmoid: return "sigmoid";
    case OpKind::kTanh: return "tanh";
    case OpKind::kRelu: return "relu";
    case OpKind::kLeakyRelu: return "leaky_relu";
    case OpKind::kSoftmax: return "softmax";
    case OpKind::kLogSoftmax: return "log_softmax";
    case OpKind::kEmbedding: return "embedding";
    case OpKind::kConv1d: return "conv1d";
    case OpKind::kSelectRows: return "select_rows";
    case OpKind::kMeanRows: return "mean_rows";
    case OpKind::kSum: return "sum";
    case OpKind::kConcatCols: return "concat_cols";
    case OpKind::kSliceCols: return "slice_cols";
    case OpKind::kNll: return "nll";
    case OpKind::kSoftCrossEntropy: return "soft_cross_entropy";
    case OpKind::kSegmentLogMeanExp: return "segment_log_mean_exp";
  }
  return "unknown";
}

template <typename T>
BasicTensor<T> forward_op(OpKind kind, std::span<const BasicTensor<T>> in, const OpArgs& args) {
  auto need = [&](std::size_t n) {
    if (in.size() != n) {
      throw ShapeError(std::string(op_name(kind)) + ": expected " + std::to_string(n) +
                       " tensor inputs, got " + std::to_string(in.size()));
    }
  };
  switch (kind) {
    case OpKind::kMatmul: need(2); return matmul(in[0], in[1]);
    case OpKind::kAdd: need(2); return add(in[0], in[1]);
    case OpKind::kSub: need(2); return sub(in[0], in[1]);
    case OpKind::kAddRow: need(2); return add_row(in[0], in[1]);
    case OpKind::kMul: need(2); return mul(in[0], in[1]);
    case OpKind::kScale: need(1); return scale(in[0], static_cast<T>(args.factor));
    case OpKind::kMulScalar: need(2); return mul_scalar(in[0], in[1]);
    case OpKind::kSigmoid: need(1); return sigmoid(in[0]);
    case OpKind::kTanh: need(1); return mein::tanh(in[0]);
    case OpKind::kRelu: need(1); return relu(in[0]);
    case OpKind::kLeakyRelu: need(1); return leaky_relu(in[0]);
    case OpKind::kSoftmax: need(1); return softmax(in[0]);
    case OpKind::kLogSoftmax: need(1); return log_softmax(in[0]);
    case OpKind::kEmbedding: need(1); return embedding(in[0], std::span(args.ids), args.frozen_id);
    case OpKind::kConv1d: need(3); return conv1d(in[0], in[1], in[2], std::span(args.segments));
    case OpKind::kSelectRows: need(2); return select_rows(in[0], in[1], std::span(args.mask));
    case OpKind::kMeanRows: need(1); return mean_rows(in[0]);
    case OpKind::kSum: need(1); return sum(in[0]);
    case OpKind::kConcatCols: need(2); return concat_cols(in[0], in[1]);
    case OpKind::kSliceCols: need(1); return slice_cols(in[0], args.start, args.length);
    case OpKind::kNll: need(1); return nll(in[0], std::span(args.ids));
    case OpKind::kSoftCrossEntropy: need(2); return soft_cross_entropy(in[0], in[1]);
    case OpKind::kSegmentLogMeanExp:
      need(1);
      return segment_log_mean_exp(in[0], std::span(args.segments));
  }
  throw ShapeError("forward_op: unknown op kind");
}

#define MEIN_INSTANTIATE_OPS(T)                                                                 \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&);               \
  template BasicTensor<T> add(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> sub(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> add_row(const BasicTensor<T>&, const BasicTensor<T>&);              \
  template BasicTensor<T> mul(const BasicTensor<T>&, const BasicTensor<T>&);                  \
  template BasicTensor<T> scale(const BasicTensor<T>&, T);                                    \
  template BasicTensor<T> mul_scalar(const BasicTensor<T>&, const BasicTensor<T>&);           \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                                     \
  template BasicTensor<T> tanh(const BasicTensor<T>&);                                        \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                        \
  template BasicTensor<T> leaky_relu(const BasicTensor<T>&);                                  \
  template BasicTensor<T> softmax(const BasicTensor<T>&);                                     \
  template BasicTensor<T> log_softmax(const BasicTensor<T>&);                                 \
  template BasicTensor<T> embedding(const BasicTensor<T>&, std::span<const std::int32_t>,     \
                                    std::int32_t);                                           \
  template BasicTensor<T> conv1d(const BasicTensor<T>&, const BasicTensor<T>&,                \
                                 const BasicTensor<T>&, std::span<const Segment>);            \
  template BasicTensor<T> select_rows(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                     std::span<const std::uint8_t>);                          \
  template BasicTensor<T> mean_rows(const BasicTensor<T>&);                                   \
  template BasicTensor<T> sum(const BasicTensor<T>&);                                         \
  template BasicTensor<T> concat_cols(const BasicTensor<T>&, const BasicTensor<T>&);          \
  template BasicTensor<T> slice_cols(const BasicTensor<T>&, std::size_t, std::size_t);        \
  template BasicTensor<T> nll(const BasicTensor<T>&, std::span<const std::int32_t>);          \
  template BasicTensor<T> soft_cross_entropy(const BasicTensor<T>&, const BasicTensor<T>&);   \
  template BasicTensor<T> segment_log_mean_exp(const BasicTensor<T>&,                         \
                                               std::span<const Segment>);                     \
  template BasicTensor<T> forward_op(OpKind, std::span<const BasicTensor<T>>, const OpArgs&);

MEIN_INSTANTIATE_OPS(float)
MEIN_INSTANTIATE_OPS(double)

#undef MEIN_INSTANTIATE_OPS

}  // namespace mein
