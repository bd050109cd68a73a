#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <utility>
#include <vector>

#include <json.hpp>

#include "sliceforge/layers.hpp"
#include "sliceforge/tensor.hpp"

namespace sliceforge {

inline constexpr std::size_t kNumBlocks = 9;
/// Layer index used to key the dropout stream (blocks occupy 0..8, hidden dense 9).
inline constexpr std::uint64_t kDropoutLayerIndex = 10;

/// Architecture hyperparameters of the separable-convolution classifier.
struct ModelConfig {
  std::size_t input_height = 32;
  std::size_t input_width = 32;
  std::size_t input_channels = 1;
  std::vector<std::size_t> channel_plan = {8, 8, 16, 16, 32, 32, 64, 64, 128};
  std::vector<int> stride_plan = {1, 2, 1, 2, 1, 2, 1, 2, 1};
  std::size_t kernel = 3;
  std::size_t hidden_units = 64;
  double dropout_rate = 0.5;
  double threshold = 0.5;
  double bn_momentum = 0.99;
  double bn_epsilon = 1e-3;

  /// Throws InvalidArgument on any violated invariant, including spatial collapse.
  void validate() const;
  /// Spatial (height, width) produced by block `b`.
  std::pair<std::size_t, std::size_t> block_output_size(std::size_t b) const;
  std::size_t block_input_channels(std::size_t b) const {
    return b == 0 ? input_channels : channel_plan[b - 1];
  }

  bool operator==(const ModelConfig&) const = default;
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <typename T>
struct Block {
  SepConvParams<T> conv;
  BatchNormParams<T> norm;
};

template <typename T>
struct BasicModel {
  ModelConfig config;
  std::vector<Block<T>> blocks;
  DenseParams<T> hidden;
  DenseParams<T> output;

  /// Trainable tensors in fixed order: per block depthwise, pointwise, bias,
  /// gamma, beta; then hidden weight, bias; output weight, bias.
  std::vector<BasicTensor<T>*> trainable();
  std::vector<const BasicTensor<T>*> trainable() const;
  /// Every stored tensor (trainable plus running statistics) in file order.
  std::vector<const BasicTensor<T>*> stored() const;

  template <typename U>
  BasicModel<U> cast() const;
};

using Model = BasicModel<float>;
using ModelD = BasicModel<double>;

/// Deterministic Glorot-uniform initialization from `seed`.
Model build_model(const ModelConfig& config, std::uint64_t seed);

/// Number of stored scalars, counting the four per-channel batch-norm vectors.
std::size_t parameter_count(const ModelConfig& config);

template <typename T>
struct BlockCache {
  SepConvCache<T> conv;
  BatchNormCache<T> norm;
  ReluCache<T> act;
};

template <typename T>
struct ForwardPass {
  BasicTensor<T> logits;  // [N]
  BasicTensor<T> probs;   // [N]
  std::vector<BlockCache<T>> blocks;
  std::vector<BasicTensor<T>> activations;  // post-ReLU output of each block
  PoolCache pool;
  DenseCache<T> hidden;
  ReluCache<T> hidden_act;
  DropoutCache<T> drop;
  DenseCache<T> output;
};

/// Runs the network. `dropout_mask`, when given, replaces the sampled
/// dropout mask (shape [N, hidden_units]).
template <typename T>
ForwardPass<T> forward(const BasicModel<T>& model, const BasicTensor<T>& batch, Mode mode,
                       const RngContext& rng = {}, const BasicTensor<T>* dropout_mask = nullptr);

/// Gradients of the loss w.r.t. every trainable tensor, in `trainable()` order.
template <typename T>
std::vector<BasicTensor<T>> backward(const BasicModel<T>& model, const ForwardPass<T>& pass,
                                     const BasicTensor<T>& grad_logits);

/// Folds the batch statistics recorded in a train-mode pass into the running stats.
template <typename T>
void apply_running_stats(BasicModel<T>& model, const ForwardPass<T>& pass);

/// 1 (positive class) iff prob >= threshold.
std::vector<int> predict_labels(const Tensor& probs, double threshold);

// SFM1 file: "SFM1", u32 version, u32 length + UTF-8 JSON config, then the
// tensors of `stored()` as consecutive TSR1 records.
inline constexpr std::uint32_t kModelFileVersion = 1;
void save_model(const std::filesystem::path& path, const Model& model);
Model load_model(const std::filesystem::path& path);

/// Post-ReLU feature map [H', W'] of one block channel for a single input
/// [1, C, H, W], evaluated in inference mode.
Tensor extract_activation(const Model& model, const Tensor& input, std::size_t block,
                          std::size_t channel);

struct MaximizeResult {
  Tensor image;                         // [1, C, H, W]
  std::vector<double> objective_trace;  // steps + 1 entries, initial first
};

/// Gradient ascent on the mean activation of (block, channel), starting from a
/// seeded uniform [0,1) image.
MaximizeResult maximize_activation(const Model& model, std::size_t block, std::size_t channel,
                                   int steps, double step_size, std::uint64_t seed);

}  // namespace sliceforge
