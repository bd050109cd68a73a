#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sliceforge/dataset.hpp"
#include "sliceforge/model.hpp"
#include "sliceforge/training.hpp"
#include "sliceforge/validation.hpp"

namespace sliceforge {

void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);

struct SplitSettings {
  std::size_t k = 2;
  std::uint64_t seed = 0;
  std::optional<bool> stratified;  // unset: on for imbalanced manifests only
  Granularity granularity = Granularity::kSubject;
};

struct ExperimentConfig {
  std::filesystem::path manifest_path;
  std::filesystem::path output_dir;
  ModelConfig model;
  TrainConfig train;
  AugmentConfig augment;
  SplitSettings split;
  bool allow_leakage = false;

  void validate() const;
};

void to_json(nlohmann::json& j, const ExperimentConfig& c);
void from_json(const nlohmann::json& j, ExperimentConfig& c);

/// Relative paths in the file are resolved against the file's directory.
ExperimentConfig load_experiment_config(const std::filesystem::path& path);
void save_experiment_config(const std::filesystem::path& path, const ExperimentConfig& config);

/// Applies SLICEFORGE_SEED (if set) to both the split and the training seed.
void apply_seed_env(ExperimentConfig& config);

struct FoldOutcome {
  std::size_t fold = 0;  // 1-based
  std::size_t best_epoch = 0;
  double best_val_accuracy = 0.0;
  ConfusionCounts slice_counts;
  ConfusionCounts subject_counts;
  MetricsReport slice_metrics;
  MetricsReport subject_metrics;
};

nlohmann::json fold_outcome_to_json(const FoldOutcome& f);
FoldOutcome fold_outcome_from_json(const nlohmann::json& j);

struct RunSummary {
  SplitPlan plan;
  AuditReport audit;
  std::vector<FoldOutcome> folds;
  AggregateReport slice_aggregate;
  AggregateReport subject_aggregate;
};

/// Builds the split plan for `manifest` as configured.
SplitPlan plan_split(const ExperimentConfig& config, const DatasetManifest& manifest);

/// Throws LeakageError naming the leaked subjects unless leakage is allowed.
void enforce_leakage_guard(const AuditReport& audit, bool allow_leakage);

/// Trains and evaluates one fold (0-based `fold_index`), writing
/// fold_<n>/{history.csv,best_model.sfm,final_model.sfm,metrics.json}.
FoldOutcome run_fold(const ExperimentConfig& config, const DatasetManifest& manifest,
                     const SplitPlan& plan, std::size_t fold_index, std::ostream* log = nullptr);

/// Full cross-validation run. Writes config.json, split.json, audit.json,
/// audit.txt, per-fold artifacts, metrics.csv, summary.json, report.md and
/// report.csv into the output directory.
RunSummary run_experiment(const ExperimentConfig& config, std::ostream* log = nullptr);

struct RunReport {
  std::string markdown;
  std::string csv;
};

/// Rebuilds the report from a completed run directory.
RunReport build_report(const std::filesystem::path& run_dir);
void write_report(const std::filesystem::path& run_dir);

/// 8-bit binary PGM of a [H,W] map, min-max scaled (constant maps write 0).
void write_pgm(const std::filesystem::path& path, const Tensor& map);

}  // namespace sliceforge
