#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "sliceforge/tensor.hpp"

namespace sliceforge {

enum class Mode { kTrain, kInfer };
enum class Padding { kSame, kValid };

/// Output of a layer in one forward invocation, plus what its gradient needs.
template <typename T, typename Cache>
struct LayerResult {
  BasicTensor<T> output;
  Cache cache;
};

/// Spatial output extent. "same" pads floor(k/2) on both sides, giving
/// ceil(in / stride) for odd k.
std::size_t conv_output_size(std::size_t in, std::size_t kernel, int stride, Padding padding);

// ---------------------------------------------------------------------------
// Depthwise separable convolution: per-channel kxk spatial filter followed by
// a 1x1 cross-channel projection, with no nonlinearity in between.

template <typename T>
struct SepConvParams {
  BasicTensor<T> depthwise;  // [C_in, 1, k, k]
  BasicTensor<T> pointwise;  // [C_out, C_in, 1, 1]
  BasicTensor<T> bias;       // [C_out]
  int stride = 1;
  Padding padding = Padding::kSame;
};

template <typename T>
struct SepConvCache {
  BasicTensor<T> input;
  BasicTensor<T> depthwise_out;
};

template <typename T>
struct SepConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> depthwise;
  BasicTensor<T> pointwise;
  BasicTensor<T> bias;
};

template <typename T>
void validate_sepconv(const SepConvParams<T>& p);

template <typename T>
LayerResult<T, SepConvCache<T>> sepconv2d(const BasicTensor<T>& x, const SepConvParams<T>& p);

template <typename T>
SepConvGrads<T> sepconv2d_backward(const BasicTensor<T>& grad_out, const SepConvParams<T>& p,
                                   const SepConvCache<T>& cache);

// ---------------------------------------------------------------------------
// Batch normalization over N*H*W per channel.

template <typename T>
struct BatchNormParams {
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
  BasicTensor<T> running_mean;
  BasicTensor<T> running_var;
  double momentum = 0.99;
  double epsilon = 1e-3;
  /// Train-mode batches folded into the running statistics so far.
  std::uint64_t updates = 0;
};

template <typename T>
struct BatchNormCache {
  Mode mode = Mode::kInfer;
  BasicTensor<T> normalized;
  std::vector<double> inv_std;
  std::vector<double> batch_mean;  // empty in infer mode
  std::vector<double> batch_var;   // biased (population) variance
};

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> input;
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
};

template <typename T>
BatchNormParams<T> make_batchnorm(std::size_t channels, double momentum = 0.99,
                                  double epsilon = 1e-3);

template <typename T>
LayerResult<T, BatchNormCache<T>> batchnorm(const BasicTensor<T>& x, const BatchNormParams<T>& p,
                                            Mode mode);

template <typename T>
BatchNormGrads<T> batchnorm_backward(const BasicTensor<T>& grad_out, const BatchNormParams<T>& p,
                                     const BatchNormCache<T>& cache);

/// Exponential moving average of the batch statistics with bias correction:
/// after t updates the running value is EMA_t / (1 - momentum^t), where EMA
/// starts at zero. The first update therefore adopts the batch statistics and
/// the (0, 1) initial values only act before any training batch. No-op for
/// infer caches.
template <typename T>
void update_running_stats(BatchNormParams<T>& p, const BatchNormCache<T>& cache);

// ---------------------------------------------------------------------------

template <typename T>
struct ReluCache {
  BasicTensor<T> input;
};

template <typename T>
LayerResult<T, ReluCache<T>> relu(const BasicTensor<T>& x);

/// Gradient passes where input > 0; the subgradient at exactly 0 is 0.
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const ReluCache<T>& cache);

struct PoolCache {
  Shape input_shape;
};

/// [N,C,H,W] -> [N,C] spatial mean.
template <typename T>
LayerResult<T, PoolCache> global_avg_pool(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> global_avg_pool_backward(const BasicTensor<T>& grad_out, const PoolCache& cache);

// ---------------------------------------------------------------------------

template <typename T>
struct DenseParams {
  BasicTensor<T> weight;  // [out, in]
  BasicTensor<T> bias;    // [out]
};

template <typename T>
struct DenseCache {
  BasicTensor<T> input;
};

template <typename T>
struct DenseGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  BasicTensor<T> bias;
};

/// y = x W^T + b for x of shape [N, in].
template <typename T>
LayerResult<T, DenseCache<T>> dense(const BasicTensor<T>& x, const DenseParams<T>& p);

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& grad_out, const DenseParams<T>& p,
                             const DenseCache<T>& cache);

// ---------------------------------------------------------------------------
// Inverted dropout. Each sample n draws from the stream keyed by
// (seed, epoch, sample_indices[n], layer_index).

struct RngContext {
  std::uint64_t seed = 0;
  std::uint64_t epoch = 0;
  std::vector<std::uint64_t> sample_indices;  // empty: position within the batch
};

template <typename T>
struct DropoutCache {
  BasicTensor<T> mask;  // 0 or 1/(1-rate) per element; all ones when inactive
};

template <typename T>
LayerResult<T, DropoutCache<T>> dropout(const BasicTensor<T>& x, double rate, Mode mode,
                                        const RngContext& rng, std::uint64_t layer_index);

/// Dropout with a caller-supplied mask (used to freeze randomness).
template <typename T>
LayerResult<T, DropoutCache<T>> dropout_with_mask(const BasicTensor<T>& x,
                                                  const BasicTensor<T>& mask);

template <typename T>
BasicTensor<T> dropout_backward(const BasicTensor<T>& grad_out, const DropoutCache<T>& cache);

// ---------------------------------------------------------------------------

template <typename T>
struct SigmoidCache {
  BasicTensor<T> output;
};

/// Numerically stable logistic function.
template <typename T>
T stable_sigmoid(T x);

template <typename T>
LayerResult<T, SigmoidCache<T>> sigmoid(const BasicTensor<T>& x);

template <typename T>
BasicTensor<T> sigmoid_backward(const BasicTensor<T>& grad_out, const SigmoidCache<T>& cache);

}  // namespace sliceforge
