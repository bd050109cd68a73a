#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "sliceforge/dataset.hpp"
#include "sliceforge/model.hpp"
#include "sliceforge/validation.hpp"

namespace sliceforge {

struct TrainConfig {
  double initial_lr = 1e-4;
  double decay_factor = 0.96;
  std::size_t epochs = 30;
  std::size_t batch_size = 16;
  double clip_value = 0.5;
  double clip_norm = 1.0;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const TrainConfig&) const = default;
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double lr = 0.0;
  double train_loss = 0.0;
  double train_accuracy = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct History {
  std::vector<EpochRecord> epochs;

  /// CSV with header `epoch,lr,train_loss,train_acc,val_loss,val_acc`.
  std::string to_csv() const;
  void write_csv(const std::filesystem::path& path) const;
  static History read_csv(const std::filesystem::path& path);
};

/// In-memory slices (raw intensities, [H,W]) with labels and identities.
struct SampleSet {
  std::vector<Tensor> slices;
  std::vector<int> labels;
  std::vector<std::string> subject_ids;
  std::vector<std::uint64_t> sample_ids;  // stable per manifest slice; keys RNG streams
  double intensity_ceiling = 255.0;

  std::size_t size() const { return slices.size(); }
};

/// Loads the slices named by `ids` (subject ids or slice keys per `granularity`).
SampleSet load_samples(const DatasetManifest& manifest, const std::vector<std::string>& ids,
                       Granularity granularity);

template <typename T>
struct BceResult {
  double loss = 0.0;
  BasicTensor<T> grad_logits;  // (sigmoid(z) - y) / N
};

/// Mean binary cross-entropy evaluated from logits:
/// max(z,0) - y z + log1p(exp(-|z|)).
template <typename T>
BceResult<T> bce_loss(const BasicTensor<T>& logits, const std::vector<int>& labels);

/// Clamps every element to [-clip_value, clip_value], then rescales the whole
/// collection so its global L2 norm is at most clip_norm.
void clip_gradients(std::vector<Tensor>& grads, double clip_value, double clip_norm);
double global_norm(const std::vector<Tensor>& grads);

/// initial_lr * decay_factor^epoch, epoch 0-based.
double lr_for_epoch(const TrainConfig& config, std::size_t epoch);

/// w <- w - lr * g.
void sgd_step(const std::vector<Tensor*>& params, const std::vector<Tensor>& grads, double lr);

struct FitResult {
  Model final_model;
  Model best_model;
  std::size_t best_epoch = 0;  // 1-based
  double best_val_accuracy = 0.0;
  History history;
};

FitResult fit(Model model, const SampleSet& train, const SampleSet& val, const TrainConfig& config,
              const AugmentConfig& augment);

struct EvalResult {
  ConfusionCounts counts;
  double mean_loss = 0.0;
  std::vector<float> probs;
};

/// Inference-mode evaluation; slices are scale-normalized when `normalize` is set.
EvalResult evaluate(const Model& model, const SampleSet& data, double threshold,
                    bool normalize = true, std::size_t batch_size = 64);

/// Subject-level counts from a majority vote over each subject's slice
/// predictions (ties count as positive, matching the >= threshold rule).
ConfusionCounts subject_vote_counts(const SampleSet& data, const std::vector<float>& probs,
                                    double threshold);

}  // namespace sliceforge
