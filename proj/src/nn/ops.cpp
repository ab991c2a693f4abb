#include "signtok/nn/ops.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "signtok/error.hpp"

namespace signtok::nn {

namespace {

using MatR = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapR = Eigen::Map<MatR>;
using CMapR = Eigen::Map<const MatR>;
using Strided = Eigen::Map<MatR, 0, Eigen::OuterStride<>>;
using CStrided = Eigen::Map<const MatR, 0, Eigen::OuterStride<>>;

MapR view(Storage& s, std::size_t rows, std::size_t cols) {
  return MapR(s.data(), static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
}

[[noreturn]] void shape_fail(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": incompatible shapes " + a.shape_string() + " and " +
                   b.shape_string());
}

void require_same_shape(const char* op, const Tensor& a, const Tensor& b) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) shape_fail(op, a, b);
}

Storage storage(std::size_t n, Scalar fill = 0.0) { return Storage(n, fill); }

void check_lengths(const char* op, const Tensor& x, const Lengths& lengths) {
  if (total_length(lengths) != x.rows()) {
    throw ShapeError(std::string(op) + ": group lengths sum to " +
                     std::to_string(total_length(lengths)) + " but input is " + x.shape_string());
  }
}

}  // namespace

std::size_t total_length(const Lengths& lengths) {
  return std::accumulate(lengths.begin(), lengths.end(), std::size_t{0});
}

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a, bool transpose_b) {
  const std::size_t m = transpose_a ? a.cols() : a.rows();
  const std::size_t ka = transpose_a ? a.rows() : a.cols();
  const std::size_t kb = transpose_b ? b.cols() : b.rows();
  const std::size_t n = transpose_b ? b.rows() : b.cols();
  if (ka != kb) shape_fail("matmul", a, b);

  Storage out = storage(m * n);
  {
    auto A = view(a.node()->value, a.rows(), a.cols());
    auto B = view(b.node()->value, b.rows(), b.cols());
    auto C = view(out, m, n);
    if (!transpose_a && !transpose_b) C.noalias() = A * B;
    else if (transpose_a && !transpose_b) C.noalias() = A.transpose() * B;
    else if (!transpose_a && transpose_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  return make_result(m, n, std::move(out), {a, b}, [transpose_a, transpose_b](detail::Node& c) {
    auto& pa = *c.parents[0];
    auto& pb = *c.parents[1];
    auto dC = view(c.grad, c.rows, c.cols);
    auto A = view(pa.value, pa.rows, pa.cols);
    auto B = view(pb.value, pb.rows, pb.cols);
    if (pa.requires_grad) {
      auto dA = view(pa.grad, pa.rows, pa.cols);
      // dA' = dC B'^T
      if (!transpose_a && !transpose_b) dA.noalias() += dC * B.transpose();
      else if (!transpose_a && transpose_b) dA.noalias() += dC * B;
      else if (transpose_a && !transpose_b) dA.noalias() += B * dC.transpose();
      else dA.noalias() += B.transpose() * dC.transpose();
    }
    if (pb.requires_grad) {
      auto dB = view(pb.grad, pb.rows, pb.cols);
      // dB' = A'^T dC
      if (!transpose_a && !transpose_b) dB.noalias() += A.transpose() * dC;
      else if (transpose_a && !transpose_b) dB.noalias() += A * dC;
      else if (!transpose_a && transpose_b) dB.noalias() += dC.transpose() * A;
      else dB.noalias() += dC.transpose() * A.transpose();
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape("add", a, b);
  Storage out = storage(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] + b.values()[i];
  return make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](detail::Node& c) {
    for (auto& p : c.parents) {
      if (!p->requires_grad) continue;
      for (std::size_t i = 0; i < c.grad.size(); ++i) p->grad[i] += c.grad[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape("sub", a, b);
  Storage out = storage(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] - b.values()[i];
  return make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](detail::Node& c) {
    auto& pa = *c.parents[0];
    auto& pb = *c.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < c.grad.size(); ++i) pa.grad[i] += c.grad[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < c.grad.size(); ++i) pb.grad[i] -= c.grad[i];
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape("mul", a, b);
  Storage out = storage(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * b.values()[i];
  return make_result(a.rows(), a.cols(), std::move(out), {a, b}, [](detail::Node& c) {
    auto& pa = *c.parents[0];
    auto& pb = *c.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < c.grad.size(); ++i) pa.grad[i] += c.grad[i] * pb.value[i];
    if (pb.requires_grad)
      for (std::size_t i = 0; i < c.grad.size(); ++i) pb.grad[i] += c.grad[i] * pa.value[i];
  });
}

Tensor scale(const Tensor& a, Scalar factor) {
  Storage out = storage(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  return make_result(a.rows(), a.cols(), std::move(out), {a}, [factor](detail::Node& c) {
    auto& pa = *c.parents[0];
    for (std::size_t i = 0; i < c.grad.size(); ++i) pa.grad[i] += c.grad[i] * factor;
  });
}

Tensor scale_by(const Tensor& a, const Tensor& s) {
  if (s.size() != 1) shape_fail("scale_by", a, s);
  const Scalar factor = s.item();
  Storage out = storage(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.values()[i] * factor;
  return make_result(a.rows(), a.cols(), std::move(out), {a, s}, [factor](detail::Node& c) {
    auto& pa = *c.parents[0];
    auto& ps = *c.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < c.grad.size(); ++i) pa.grad[i] += c.grad[i] * factor;
    if (ps.requires_grad) {
      Scalar acc = 0.0;
      for (std::size_t i = 0; i < c.grad.size(); ++i) acc += c.grad[i] * pa.value[i];
      ps.grad[0] += acc;
    }
  });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
  if (row.rows() != 1 || row.cols() != a.cols()) shape_fail("add_row", a, row);
  const std::size_t cols = a.cols();
  Storage out = storage(a.size());
  for (std::size_t r = 0; r < a.rows(); ++r)
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = a.values()[r * cols + j] + row.values()[j];
  return make_result(a.rows(), cols, std::move(out), {a, row}, [cols](detail::Node& c) {
    auto& pa = *c.parents[0];
    auto& pr = *c.parents[1];
    if (pa.requires_grad)
      for (std::size_t i = 0; i < c.grad.size(); ++i) pa.grad[i] += c.grad[i];
    if (pr.requires_grad)
      for (std::size_t r = 0; r < c.rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) pr.grad[j] += c.grad[r * cols + j];
  });
}

Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias) {
  if (x.cols() != weight.rows()) shape_fail("linear", x, weight);
  return add_row(matmul(x, weight), bias);
}

Tensor relu(const Tensor& x) {
  Storage out = storage(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::max(x.values()[i], 0.0);
  return make_result(x.rows(), x.cols(), std::move(out), {x}, [](detail::Node& c) {
    auto& px = *c.parents[0];
    for (std::size_t i = 0; i < c.grad.size(); ++i)
      if (px.value[i] > 0.0) px.grad[i] += c.grad[i];
  });
}

Tensor gelu(const Tensor& x) {
  constexpr Scalar inv_sqrt2 = 0.70710678118654752440;
  Storage out = storage(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    const Scalar v = x.values()[i];
    out[i] = 0.5 * v * (1.0 + std::erf(v * inv_sqrt2));
  }
  return make_result(x.rows(), x.cols(), std::move(out), {x}, [](detail::Node& c) {
    constexpr Scalar inv_sqrt2 = 0.70710678118654752440;
    constexpr Scalar inv_sqrt_2pi = 0.39894228040143267794;
    auto& px = *c.parents[0];
    for (std::size_t i = 0; i < c.grad.size(); ++i) {
      const Scalar v = px.value[i];
      const Scalar cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
      const Scalar pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
      px.grad[i] += c.grad[i] * (cdf + v * pdf);
    }
  });
}

Tensor exp(const Tensor& x) {
  Storage out = storage(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.values()[i]);
  return make_result(x.rows(), x.cols(), std::move(out), {x}, [](detail::Node& c) {
    auto& px = *c.parents[0];
    for (std::size_t i = 0; i < c.grad.size(); ++i) px.grad[i] += c.grad[i] * c.value[i];
  });
}

Tensor sum(const Tensor& x) {
  Storage out = storage(1);
  for (Scalar v : x.values()) out[0] += v;
  return make_result(1, 1, std::move(out), {x}, [](detail::Node& c) {
    auto& px = *c.parents[0];
    for (auto& g : px.grad) g += c.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty input " + x.shape_string());
  return scale(sum(x), 1.0 / static_cast<Scalar>(x.size()));
}

Tensor softmax_rows(const Tensor& x, const std::vector<bool>& mask) {
  if (!mask.empty() && mask.size() != x.size()) {
    throw ShapeError("softmax_rows: mask of " + std::to_string(mask.size()) + " for " +
                     x.shape_string());
  }
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  Storage out = storage(x.size());
  for (std::size_t r = 0; r < rows; ++r) {
    Scalar hi = -std::numeric_limits<Scalar>::infinity();
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t i = r * cols + j;
      if (mask.empty() || !mask[i]) hi = std::max(hi, x.values()[i]);
    }
    if (!std::isfinite(hi)) continue;
    Scalar z = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t i = r * cols + j;
      if (!mask.empty() && mask[i]) continue;
      out[i] = std::exp(x.values()[i] - hi);
      z += out[i];
    }
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] /= z;
  }
  return make_result(rows, cols, std::move(out), {x}, [cols](detail::Node& c) {
    auto& px = *c.parents[0];
    for (std::size_t r = 0; r < c.rows; ++r) {
      Scalar dot = 0.0;
      for (std::size_t j = 0; j < cols; ++j) dot += c.grad[r * cols + j] * c.value[r * cols + j];
      for (std::size_t j = 0; j < cols; ++j) {
        const std::size_t i = r * cols + j;
        px.grad[i] += c.value[i] * (c.grad[i] - dot);
      }
    }
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (gamma.rows() != 1 || gamma.cols() != cols) shape_fail("layer_norm", x, gamma);
  if (beta.rows() != 1 || beta.cols() != cols) shape_fail("layer_norm", x, beta);
  Storage out = storage(x.size());
  std::vector<Scalar> xhat(x.size());
  std::vector<Scalar> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const Scalar* row = x.values().data() + r * cols;
    Scalar mu = 0.0;
    for (std::size_t j = 0; j < cols; ++j) mu += row[j];
    mu /= static_cast<Scalar>(cols);
    Scalar var = 0.0;
    for (std::size_t j = 0; j < cols; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<Scalar>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < cols; ++j) {
      const std::size_t i = r * cols + j;
      xhat[i] = (row[j] - mu) * inv_std[r];
      out[i] = gamma.values()[j] * xhat[i] + beta.values()[j];
    }
  }
  return make_result(
      rows, cols, std::move(out), {x, gamma, beta},
      [cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& c) {
        auto& px = *c.parents[0];
        auto& pg = *c.parents[1];
        auto& pb = *c.parents[2];
        const Scalar n = static_cast<Scalar>(cols);
        for (std::size_t r = 0; r < c.rows; ++r) {
          Scalar mean_d = 0.0;
          Scalar mean_dx = 0.0;
          for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t i = r * cols + j;
            const Scalar d = c.grad[i] * pg.value[j];
            mean_d += d;
            mean_dx += d * xhat[i];
            if (pg.requires_grad) pg.grad[j] += c.grad[i] * xhat[i];
            if (pb.requires_grad) pb.grad[j] += c.grad[i];
          }
          if (!px.requires_grad) continue;
          mean_d /= n;
          mean_dx /= n;
          for (std::size_t j = 0; j < cols; ++j) {
            const std::size_t i = r * cols + j;
            const Scalar d = c.grad[i] * pg.value[j];
            px.grad[i] += inv_std[r] * (d - mean_d - xhat[i] * mean_dx);
          }
        }
      });
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormBuffers& buffers, bool training, Scalar momentum, Scalar eps) {
  const std::size_t rows = x.rows();
  const std::size_t cols = x.cols();
  if (gamma.cols() != cols || beta.cols() != cols || buffers.running_mean.cols() != cols ||
      buffers.running_var.cols() != cols) {
    shape_fail("batch_norm", x, gamma);
  }
  Storage out = storage(x.size());
  if (!training) {
    std::vector<Scalar> inv(cols);
    std::vector<Scalar> mu(buffers.running_mean.values().begin(), buffers.running_mean.values().end());
    for (std::size_t j = 0; j < cols; ++j) {
      inv[j] = 1.0 / std::sqrt(buffers.running_var.values()[j] + eps);
      for (std::size_t r = 0; r < rows; ++r) {
        const std::size_t i = r * cols + j;
        out[i] = gamma.values()[j] * (x.values()[i] - mu[j]) * inv[j] + beta.values()[j];
      }
    }
    return make_result(rows, cols, std::move(out), {x, gamma, beta},
                       [cols, inv = std::move(inv), mu = std::move(mu)](detail::Node& c) {
                         auto& px = *c.parents[0];
                         auto& pg = *c.parents[1];
                         auto& pb = *c.parents[2];
                         for (std::size_t r = 0; r < c.rows; ++r)
                           for (std::size_t j = 0; j < cols; ++j) {
                             const std::size_t i = r * cols + j;
                             const Scalar xhat = (px.value[i] - mu[j]) * inv[j];
                             if (px.requires_grad) px.grad[i] += c.grad[i] * pg.value[j] * inv[j];
                             if (pg.requires_grad) pg.grad[j] += c.grad[i] * xhat;
                             if (pb.requires_grad) pb.grad[j] += c.grad[i];
                           }
                       });
  }

  if (rows == 0) throw ShapeError("batch_norm: no rows in training mode");
  std::vector<Scalar> xhat(x.size());
  std::vector<Scalar> inv_std(cols);
  const Scalar n = static_cast<Scalar>(rows);
  for (std::size_t j = 0; j < cols; ++j) {
    Scalar mu = 0.0;
    for (std::size_t r = 0; r < rows; ++r) mu += x.values()[r * cols + j];
    mu /= n;
    Scalar var = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
      const Scalar d = x.values()[r * cols + j] - mu;
      var += d * d;
    }
    var /= n;
    inv_std[j] = 1.0 / std::sqrt(var + eps);
    for (std::size_t r = 0; r < rows; ++r) {
      const std::size_t i = r * cols + j;
      xhat[i] = (x.values()[i] - mu) * inv_std[j];
      out[i] = gamma.values()[j] * xhat[i] + beta.values()[j];
    }
    auto rm = buffers.running_mean.mutable_values();
    auto rv = buffers.running_var.mutable_values();
    const Scalar unbiased = rows > 1 ? var * n / (n - 1.0) : var;
    rm[j] = (1.0 - momentum) * rm[j] + momentum * mu;
    rv[j] = (1.0 - momentum) * rv[j] + momentum * unbiased;
  }
  return make_result(
      rows, cols, std::move(out), {x, gamma, beta},
      [cols, xhat = std::move(xhat), inv_std = std::move(inv_std)](detail::Node& c) {
        auto& px = *c.parents[0];
        auto& pg = *c.parents[1];
        auto& pb = *c.parents[2];
        const Scalar n = static_cast<Scalar>(c.rows);
        for (std::size_t j = 0; j < cols; ++j) {
          Scalar mean_d = 0.0;
          Scalar mean_dx = 0.0;
          for (std::size_t r = 0; r < c.rows; ++r) {
            const std::size_t i = r * cols + j;
            const Scalar d = c.grad[i] * pg.value[j];
            mean_d += d;
            mean_dx += d * xhat[i];
            if (pg.requires_grad) pg.grad[j] += c.grad[i] * xhat[i];
            if (pb.requires_grad) pb.grad[j] += c.grad[i];
          }
          if (!px.requires_grad) continue;
          mean_d /= n;
          mean_dx /= n;
          for (std::size_t r = 0; r < c.rows; ++r) {
            const std::size_t i = r * cols + j;
            const Scalar d = c.grad[i] * pg.value[j];
            px.grad[i] += inv_std[j] * (d - mean_d - xhat[i] * mean_dx);
          }
        }
      });
}

Tensor dropout(const Tensor& x, Scalar p, bool training, Rng& rng) {
  if (!training || p <= 0.0) return x;
  if (p >= 1.0) throw NumericError("dropout: p must be < 1");
  std::uniform_real_distribution<Scalar> unif(0.0, 1.0);
  const Scalar keep_scale = 1.0 / (1.0 - p);
  std::vector<Scalar> factor(x.size());
  for (auto& f : factor) f = unif(rng) < p ? 0.0 : keep_scale;
  Storage out = storage(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.values()[i] * factor[i];
  return make_result(x.rows(), x.cols(), std::move(out), {x},
                     [factor = std::move(factor)](detail::Node& c) {
                       auto& px = *c.parents[0];
                       for (std::size_t i = 0; i < c.grad.size(); ++i) px.grad[i] += c.grad[i] * factor[i];
                     });
}

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices) {
  const std::size_t cols = x.cols();
  Storage out = storage(indices.size() * cols);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= x.rows()) {
      throw ShapeError("gather_rows: index " + std::to_string(indices[r]) + " out of range for " +
                       x.shape_string());
    }
    std::copy_n(x.values().data() + indices[r] * cols, cols, out.data() + r * cols);
  }
  return make_result(indices.size(), cols, std::move(out), {x},
                     [cols, idx = std::vector<std::size_t>(indices.begin(), indices.end())](
                         detail::Node& c) {
                       auto& px = *c.parents[0];
                       for (std::size_t r = 0; r < idx.size(); ++r)
                         for (std::size_t j = 0; j < cols; ++j)
                           px.grad[idx[r] * cols + j] += c.grad[r * cols + j];
                     });
}

Tensor reshape(const Tensor& x, std::size_t rows, std::size_t cols) {
  if (rows * cols != x.size()) {
    throw ShapeError("reshape: cannot view " + x.shape_string() + " as [" + std::to_string(rows) +
                     "x" + std::to_string(cols) + "]");
  }
  Storage out(x.values().begin(), x.values().end());
  return make_result(rows, cols, std::move(out), {x}, [](detail::Node& c) {
    auto& px = *c.parents[0];
    for (std::size_t i = 0; i < c.grad.size(); ++i) px.grad[i] += c.grad[i];
  });
}

Tensor concat_rows(std::span<const Tensor> parts) {
  if (parts.empty()) throw ShapeError("concat_rows: no inputs");
  const std::size_t cols = parts.front().cols();
  std::size_t rows = 0;
  for (const auto& p : parts) {
    if (p.cols() != cols) shape_fail("concat_rows", parts.front(), p);
    rows += p.rows();
  }
  Storage out = storage(rows * cols);
  std::size_t offset = 0;
  for (const auto& p : parts) {
    std::copy(p.values().begin(), p.values().end(), out.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += p.size();
  }
  return make_result(rows, cols, std::move(out), {parts.begin(), parts.end()}, [](detail::Node& c) {
    std::size_t off = 0;
    for (auto& p : c.parents) {
      if (p->requires_grad)
        for (std::size_t i = 0; i < p->value.size(); ++i) p->grad[i] += c.grad[off + i];
      off += p->value.size();
    }
  });
}

Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count) {
  if (begin + count > x.rows()) {
    throw ShapeError("slice_rows: [" + std::to_string(begin) + ", " + std::to_string(begin + count) +
                     ") out of range for " + x.shape_string());
  }
  std::vector<std::size_t> idx(count);
  std::iota(idx.begin(), idx.end(), begin);
  return gather_rows(x, idx);
}

Tensor segment_mean(const Tensor& x, const Lengths& lengths) {
  check_lengths("segment_mean", x, lengths);
  const std::size_t cols = x.cols();
  Storage out = storage(lengths.size() * cols);
  std::size_t row = 0;
  for (std::size_t g = 0; g < lengths.size(); ++g) {
    if (lengths[g] == 0) throw ShapeError("segment_mean: empty group " + std::to_string(g));
    for (std::size_t r = 0; r < lengths[g]; ++r, ++row)
      for (std::size_t j = 0; j < cols; ++j) out[g * cols + j] += x.values()[row * cols + j];
    for (std::size_t j = 0; j < cols; ++j) out[g * cols + j] /= static_cast<Scalar>(lengths[g]);
  }
  return make_result(lengths.size(), cols, std::move(out), {x}, [cols, lengths](detail::Node& c) {
    auto& px = *c.parents[0];
    std::size_t row = 0;
    for (std::size_t g = 0; g < lengths.size(); ++g) {
      const Scalar w = 1.0 / static_cast<Scalar>(lengths[g]);
      for (std::size_t r = 0; r < lengths[g]; ++r, ++row)
        for (std::size_t j = 0; j < cols; ++j) px.grad[row * cols + j] += c.grad[g * cols + j] * w;
    }
  });
}

Tensor segment_max(const Tensor& x, const Lengths& lengths) {
  check_lengths("segment_max", x, lengths);
  const std::size_t cols = x.cols();
  Storage out = storage(lengths.size() * cols);
  std::vector<std::size_t> argmax(lengths.size() * cols);
  std::size_t start = 0;
  for (std::size_t g = 0; g < lengths.size(); ++g) {
    if (lengths[g] == 0) throw ShapeError("segment_max: empty group " + std::to_string(g));
    for (std::size_t j = 0; j < cols; ++j) {
      std::size_t best = start;
      for (std::size_t r = start + 1; r < start + lengths[g]; ++r)
        if (x.values()[r * cols + j] > x.values()[best * cols + j]) best = r;
      argmax[g * cols + j] = best;
      out[g * cols + j] = x.values()[best * cols + j];
    }
    start += lengths[g];
  }
  return make_result(lengths.size(), cols, std::move(out), {x},
                     [cols, argmax = std::move(argmax)](detail::Node& c) {
                       auto& px = *c.parents[0];
                       for (std::size_t i = 0; i < argmax.size(); ++i)
                         px.grad[argmax[i] * cols + i % cols] += c.grad[i];
                     });
}

Lengths conv1d_lengths(const Lengths& lengths, std::size_t kernel) {
  Lengths out;
  out.reserve(lengths.size());
  for (auto n : lengths) {
    if (n < kernel) {
      throw ShapeError("conv1d: group of length " + std::to_string(n) + " shorter than kernel " +
                       std::to_string(kernel));
    }
    out.push_back(n - kernel + 1);
  }
  return out;
}

Tensor conv1d(const Tensor& x, const Lengths& lengths, const Tensor& weight, const Tensor& bias,
              std::size_t kernel) {
  check_lengths("conv1d", x, lengths);
  if (kernel == 0 || weight.rows() != kernel * x.cols()) shape_fail("conv1d", x, weight);
  const Lengths out_lengths = conv1d_lengths(lengths, kernel);
  std::vector<std::size_t> idx;
  idx.reserve(total_length(out_lengths) * kernel);
  std::size_t start = 0;
  for (std::size_t g = 0; g < lengths.size(); ++g) {
    for (std::size_t t = 0; t < out_lengths[g]; ++t)
      for (std::size_t tap = 0; tap < kernel; ++tap) idx.push_back(start + t + tap);
    start += lengths[g];
  }
  const std::size_t out_rows = total_length(out_lengths);
  Tensor windows = reshape(gather_rows(x, idx), out_rows, kernel * x.cols());
  return linear(windows, weight, bias);
}

Tensor l2_normalize_rows(const Tensor& x, Scalar eps) {
  const std::size_t cols = x.cols();
  Storage out = storage(x.size());
  std::vector<Scalar> norms(x.rows());
  for (std::size_t r = 0; r < x.rows(); ++r) {
    Scalar s = 0.0;
    for (std::size_t j = 0; j < cols; ++j) s += x.values()[r * cols + j] * x.values()[r * cols + j];
    norms[r] = std::max(std::sqrt(s), eps);
    for (std::size_t j = 0; j < cols; ++j) out[r * cols + j] = x.values()[r * cols + j] / norms[r];
  }
  return make_result(x.rows(), cols, std::move(out), {x},
                     [cols, norms = std::move(norms)](detail::Node& c) {
                       auto& px = *c.parents[0];
                       for (std::size_t r = 0; r < c.rows; ++r) {
                         Scalar dot = 0.0;
                         for (std::size_t j = 0; j < cols; ++j)
                           dot += c.grad[r * cols + j] * c.value[r * cols + j];
                         for (std::size_t j = 0; j < cols; ++j) {
                           const std::size_t i = r * cols + j;
                           px.grad[i] += (c.grad[i] - c.value[i] * dot) / norms[r];
                         }
                       }
                     });
}

std::size_t attention_score_elements(const Lengths& q_lengths, const Lengths& k_lengths,
                                     std::size_t heads) {
  std::size_t total = 0;
  for (std::size_t b = 0; b < q_lengths.size(); ++b) total += q_lengths[b] * k_lengths[b];
  return total * heads;
}

Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Lengths& q_lengths,
                 const Lengths& k_lengths, std::size_t heads, const AttentionMask& mask) {
  const std::size_t dim = q.cols();
  if (k.cols() != dim || v.cols() != dim) shape_fail("attention", q, k);
  if (k.rows() != v.rows()) shape_fail("attention", k, v);
  if (heads == 0 || dim % heads != 0) {
    throw ShapeError("attention: model dim " + std::to_string(dim) + " not divisible by " +
                     std::to_string(heads) + " heads");
  }
  if (q_lengths.size() != k_lengths.size()) {
    throw ShapeError("attention: " + std::to_string(q_lengths.size()) + " query groups vs " +
                     std::to_string(k_lengths.size()) + " key groups");
  }
  check_lengths("attention(q)", q, q_lengths);
  check_lengths("attention(k)", k, k_lengths);
  if (!mask.key_padding.empty() && mask.key_padding.size() != k.rows()) {
    throw ShapeError("attention: key padding mask has " + std::to_string(mask.key_padding.size()) +
                     " entries for " + std::to_string(k.rows()) + " keys");
  }

  const std::size_t head_dim = dim / heads;
  const Scalar inv_sqrt = 1.0 / std::sqrt(static_cast<Scalar>(head_dim));
  const auto stride = Eigen::OuterStride<>(static_cast<Eigen::Index>(dim));

  // Probabilities per (group, head), stored back to back.
  std::vector<Scalar> probs(attention_score_elements(q_lengths, k_lengths, heads));
  Storage out = storage(q.rows() * dim);

  std::size_t q_off = 0, k_off = 0, p_off = 0;
  for (std::size_t b = 0; b < q_lengths.size(); ++b) {
    const auto lq = static_cast<Eigen::Index>(q_lengths[b]);
    const auto lk = static_cast<Eigen::Index>(k_lengths[b]);
    for (std::size_t h = 0; h < heads; ++h) {
      const std::size_t col = h * head_dim;
      CStrided Q(q.values().data() + q_off * dim + col, lq, static_cast<Eigen::Index>(head_dim), stride);
      CStrided K(k.values().data() + k_off * dim + col, lk, static_cast<Eigen::Index>(head_dim), stride);
      CStrided V(v.values().data() + k_off * dim + col, lk, static_cast<Eigen::Index>(head_dim), stride);
      MapR P(probs.data() + p_off, lq, lk);
      P.noalias() = (Q * K.transpose()) * inv_sqrt;
      for (Eigen::Index i = 0; i < lq; ++i) {
        Scalar hi = -std::numeric_limits<Scalar>::infinity();
        for (Eigen::Index j = 0; j < lk; ++j) {
          const bool masked = (mask.causal && j > i) ||
                              (!mask.key_padding.empty() && mask.key_padding[k_off + static_cast<std::size_t>(j)]);
          if (masked) P(i, j) = -std::numeric_limits<Scalar>::infinity();
          else hi = std::max(hi, P(i, j));
        }
        if (!std::isfinite(hi)) {
          P.row(i).setZero();
          continue;
        }
        Scalar z = 0.0;
        for (Eigen::Index j = 0; j < lk; ++j) {
          P(i, j) = std::isinf(P(i, j)) ? 0.0 : std::exp(P(i, j) - hi);
          z += P(i, j);
        }
        P.row(i) /= z;
      }
      Strided O(out.data() + q_off * dim + col, lq, static_cast<Eigen::Index>(head_dim), stride);
      O.noalias() = P * V;
      p_off += q_lengths[b] * k_lengths[b];
    }
    q_off += q_lengths[b];
    k_off += k_lengths[b];
  }

  return make_result(
      q.rows(), dim, std::move(out), {q, k, v},
      [=, probs = std::move(probs)](detail::Node& c) {
        auto& pq = *c.parents[0];
        auto& pk = *c.parents[1];
        auto& pv = *c.parents[2];
        std::size_t qo = 0, ko = 0, po = 0;
        MatR dP, dS;
        for (std::size_t b = 0; b < q_lengths.size(); ++b) {
          const auto lq = static_cast<Eigen::Index>(q_lengths[b]);
          const auto lk = static_cast<Eigen::Index>(k_lengths[b]);
          const auto hd = static_cast<Eigen::Index>(head_dim);
          for (std::size_t h = 0; h < heads; ++h) {
            const std::size_t col = h * head_dim;
            CMapR P(probs.data() + po, lq, lk);
            CStrided dO(c.grad.data() + qo * dim + col, lq, hd, stride);
            CStrided Q(pq.value.data() + qo * dim + col, lq, hd, stride);
            CStrided K(pk.value.data() + ko * dim + col, lk, hd, stride);
            CStrided V(pv.value.data() + ko * dim + col, lk, hd, stride);
            if (pv.requires_grad) {
              Strided dV(pv.grad.data() + ko * dim + col, lk, hd, stride);
              dV.noalias() += P.transpose() * dO;
            }
            if (pq.requires_grad || pk.requires_grad) {
              dP.noalias() = dO * V.transpose();
              dS.resize(lq, lk);
              for (Eigen::Index i = 0; i < lq; ++i) {
                const Scalar dot = P.row(i).dot(dP.row(i));
                dS.row(i) = P.row(i).cwiseProduct((dP.row(i).array() - dot).matrix()) * inv_sqrt;
              }
              if (pq.requires_grad) {
                Strided dQ(pq.grad.data() + qo * dim + col, lq, hd, stride);
                dQ.noalias() += dS * K;
              }
              if (pk.requires_grad) {
                Strided dK(pk.grad.data() + ko * dim + col, lk, hd, stride);
                dK.noalias() += dS.transpose() * Q;
              }
            }
            po += q_lengths[b] * k_lengths[b];
          }
          qo += q_lengths[b];
          ko += k_lengths[b];
        }
      });
}

Tensor sinusoidal_positions(std::size_t length, std::size_t dim) {
  Storage out = storage(length * dim);
  for (std::size_t pos = 0; pos < length; ++pos) {
    for (std::size_t i = 0; i < dim; ++i) {
      const Scalar freq = std::pow(10000.0, -static_cast<Scalar>(2 * (i / 2)) / static_cast<Scalar>(dim));
      const Scalar angle = static_cast<Scalar>(pos) * freq;
      out[pos * dim + i] = (i % 2 == 0) ? std::sin(angle) : std::cos(angle);
    }
  }
  return make_result(length, dim, std::move(out), {}, nullptr);
}

Tensor add_positions(const Tensor& x, const Lengths& lengths) {
  check_lengths("add_positions", x, lengths);
  std::size_t longest = 0;
  for (auto l : lengths) longest = std::max(longest, l);
  const Tensor table = sinusoidal_positions(longest, x.cols());
  std::vector<std::size_t> idx;
  idx.reserve(x.rows());
  for (auto l : lengths)
    for (std::size_t p = 0; p < l; ++p) idx.push_back(p);
  return add(x, gather_rows(table, idx));
}

}  // namespace signtok::nn
