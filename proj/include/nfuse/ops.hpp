#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "nfuse/tensor.hpp"

// Differentiable tensor operations. Each op records itself on the active tape
// (see tape.hpp) when any input is tracked; the output is then tracked too.
namespace nfuse::ops {

struct ConvGeometry {
  std::size_t padding = 0;
  std::size_t stride = 1;
  std::size_t dilation = 1;
};

// out = floor((in + 2p - d(k-1) - 1) / s) + 1. Throws when the dilated
// window does not fit the padded input.
std::size_t conv_output_extent(std::size_t in, std::size_t kernel, const ConvGeometry& geometry);
// out = floor((in - k) / s) + 1. Throws when in < k.
std::size_t pool_output_extent(std::size_t in, std::size_t kernel, std::size_t stride);

// Cross-correlation (no kernel flip). input [N,Ci,D,H,W], weight [Co,Ci,k,k,k], bias [Co].
template <typename T>
BasicTensor<T> conv3d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, const ConvGeometry& geometry);

// Gradient goes to the first maximal element of each window in row-major order.
template <typename T>
BasicTensor<T> maxpool3d(const BasicTensor<T>& input, std::size_t kernel, std::size_t stride);

// Per (sample, channel) normalization over spatial elements with biased variance.
template <typename T>
BasicTensor<T> instance_norm3d(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                               const BasicTensor<T>& beta, double eps = 1e-5);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

// input [N,Fi], weight [Fo,Fi], bias [Fo] -> [N,Fo]
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

template <typename T>
BasicTensor<T> add(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> mul(const BasicTensor<T>& a, const BasicTensor<T>& b);

// [N,Fa] ++ [N,Fb] -> [N,Fa+Fb], a's features first.
template <typename T>
BasicTensor<T> concat(const BasicTensor<T>& a, const BasicTensor<T>& b);

template <typename T>
BasicTensor<T> reshape(const BasicTensor<T>& input, Shape shape);

// Sum of all elements as a one-element tensor.
template <typename T>
BasicTensor<T> sum(const BasicTensor<T>& input);

// Row-wise softmax of [N,C] logits; never recorded.
template <typename T>
BasicTensor<T> softmax(const BasicTensor<T>& logits);

template <typename T>
struct CrossEntropyResult {
  BasicTensor<T> loss;           // one element: mean over the batch of -log p[target]
  BasicTensor<T> probabilities;  // [N,3], untracked
};

inline constexpr std::size_t kNumClasses = 3;

template <typename T>
CrossEntropyResult<T> softmax_cross_entropy(const BasicTensor<T>& logits,
                                            std::span<const int> targets);

}  // namespace nfuse::ops
