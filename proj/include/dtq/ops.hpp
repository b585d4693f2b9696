#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "dtq/tensor.hpp"

namespace dtq {

// Boolean [batch, length] grid; true marks a padded slot.
struct PadMask {
  std::size_t batch = 0;
  std::size_t length = 0;
  std::vector<std::uint8_t> padded;

  PadMask() = default;
  PadMask(std::size_t batch, std::size_t length)
      : batch(batch), length(length), padded(batch * length, 0) {}

  bool at(std::size_t b, std::size_t i) const { return padded[b * length + i] != 0; }
  void set(std::size_t b, std::size_t i, bool value) { padded[b * length + i] = value ? 1 : 0; }
  // Each slot repeated `factor` times along the length axis.
  PadMask repeat_each(std::size_t factor) const;
  std::size_t count_unpadded() const;
};

namespace ops {

// [m,k]·[k,n] -> [m,n]
Tensor matmul(const Tensor& a, const Tensor& b);

// x[..., in] · weightᵀ + bias with weight stored [out, in]. bias may be null.
Tensor linear(const Tensor& x, const Tensor& weight, const Tensor* bias);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double factor);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// Same buffer, new shape.
Tensor reshape(const Tensor& a, Shape shape);
// Columns [start, start+len) of the last axis.
Tensor slice_last(const Tensor& a, std::size_t start, std::size_t len);
// [A,B,C,D] -> [A,C,B,D]
Tensor swap_axes_12(const Tensor& a);

// Normalizes the last axis with population variance, then applies gain/bias.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps);

// tanh approximation: 0.5x(1 + tanh(sqrt(2/pi)(x + 0.044715x^3)))
Tensor gelu(const Tensor& x);
Tensor tanh(const Tensor& x);

// Scaled dot-product attention over [B,h,L,dk] with inclusive causal
// visibility; padded keys get zero weight. A query that sees no key attends
// only to itself.
Tensor causal_softmax_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                const PadMask& pad_mask);

// Attention weights as computed inside causal_softmax_attention, [B,h,L,L].
std::vector<double> attention_weights(const Tensor& q, const Tensor& k, const PadMask& pad_mask);

// Rows of table[n,d] -> [indices.size(), d]
Tensor embedding(const Tensor& table, std::span<const std::size_t> indices);

// x[B,L,d] -> [B,P,d] taking sequence positions `positions`.
Tensor gather_positions(const Tensor& x, std::span<const std::size_t> positions);

// parts[j] of shape [B,K,d] -> [B, n*K, d] with output position t*n + j.
Tensor interleave(std::span<const Tensor> parts);

}  // namespace ops
}  // namespace dtq
