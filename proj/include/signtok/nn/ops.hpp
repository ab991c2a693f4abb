#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "signtok/nn/tensor.hpp"

namespace signtok::nn {

using Rng = std::mt19937_64;

// Lengths of consecutive row groups in a packed (variable-length) batch.
using Lengths = std::vector<std::size_t>;

std::size_t total_length(const Lengths& lengths);

Tensor matmul(const Tensor& a, const Tensor& b, bool transpose_a = false, bool transpose_b = false);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, Scalar factor);
// a * s where s is a [1x1] tensor.
Tensor scale_by(const Tensor& a, const Tensor& s);
// a (RxC) + row (1xC), broadcast over rows.
Tensor add_row(const Tensor& a, const Tensor& row);
// x W + b with W stored [in x out] and b [1 x out].
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor& bias);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor exp(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Row softmax. Entries with mask[i] true (row-major index) get probability 0;
// a fully masked row is all zeros.
Tensor softmax_rows(const Tensor& x, const std::vector<bool>& mask = {});

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, Scalar eps = 1e-5);

struct BatchNormBuffers {
  Tensor running_mean;  // [1 x C]
  Tensor running_var;   // [1 x C]
};

// Per-column normalization over all rows. In training mode the batch statistics
// are used and the running buffers are updated; otherwise the running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  BatchNormBuffers& buffers, bool training, Scalar momentum = 0.1,
                  Scalar eps = 1e-5);

// Inverted dropout; identity when !training or p == 0.
Tensor dropout(const Tensor& x, Scalar p, bool training, Rng& rng);

Tensor gather_rows(const Tensor& x, std::span<const std::size_t> indices);
Tensor reshape(const Tensor& x, std::size_t rows, std::size_t cols);
Tensor concat_rows(std::span<const Tensor> parts);
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);

Tensor segment_mean(const Tensor& x, const Lengths& lengths);
Tensor segment_max(const Tensor& x, const Lengths& lengths);

// Valid 1-D convolution over time applied to each row group independently.
// weight is [kernel*C_in x C_out] with row index tap*C_in + channel; every group
// must have at least `kernel` rows and yields length - kernel + 1 output rows.
Tensor conv1d(const Tensor& x, const Lengths& lengths, const Tensor& weight, const Tensor& bias,
              std::size_t kernel);
Lengths conv1d_lengths(const Lengths& lengths, std::size_t kernel);

Tensor l2_normalize_rows(const Tensor& x, Scalar eps = 1e-12);

struct AttentionMask {
  bool causal = false;
  // Optional per-key padding mask over the packed key rows; true = masked.
  std::vector<bool> key_padding;
};

// Scaled dot-product multi-head attention over packed sequences: query group b
// attends only to key group b. q is [sum(q_lengths) x D]; k, v are
// [sum(k_lengths) x D]; D must be divisible by heads.
Tensor attention(const Tensor& q, const Tensor& k, const Tensor& v, const Lengths& q_lengths,
                 const Lengths& k_lengths, std::size_t heads, const AttentionMask& mask = {});

// Number of score elements the attention op materializes for these lengths.
std::size_t attention_score_elements(const Lengths& q_lengths, const Lengths& k_lengths,
                                     std::size_t heads);

Tensor sinusoidal_positions(std::size_t length, std::size_t dim);
// Adds sinusoidal positions restarting at 0 for every group.
Tensor add_positions(const Tensor& x, const Lengths& lengths);

}  // namespace signtok::nn
