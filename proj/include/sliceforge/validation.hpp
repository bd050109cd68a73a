#pragma once

#include <cstddef>
#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "sliceforge/dataset.hpp"

namespace sliceforge {

enum class Granularity { kSubject, kSlice };

std::string to_string(Granularity g);
Granularity parse_granularity(const std::string& s);

/// Identifier of a single slice: "<subject_id>#<slice index>".
std::string slice_key(const std::string& subject_id, std::size_t index);
/// Inverse of slice_key; returns {subject_id, index}.
std::pair<std::string, std::size_t> parse_slice_key(const std::string& key);

struct Fold {
  std::vector<std::string> train_ids;
  std::vector<std::string> val_ids;
  bool operator==(const Fold&) const = default;
};

/// Per-fold train/validation assignment. Ids are subject ids at subject
/// granularity and slice keys at slice granularity.
struct SplitPlan {
  std::size_t k = 0;
  std::uint64_t seed = 0;
  bool stratified = false;
  Granularity granularity = Granularity::kSubject;
  std::vector<Fold> folds;
  bool operator==(const SplitPlan&) const = default;
};

void to_json(nlohmann::json& j, const SplitPlan& p);
void from_json(const nlohmann::json& j, SplitPlan& p);
void save_split(const std::filesystem::path& path, const SplitPlan& plan);
SplitPlan load_split(const std::filesystem::path& path);

/// True when the per-class subject counts differ.
bool is_imbalanced(const DatasetManifest& manifest);

/// Deterministic k-fold split. Subjects (or slices, at slice granularity) are
/// shuffled by seed and dealt round-robin into folds; stratified mode deals
/// each class in turn, continuing the round-robin position across classes.
SplitPlan kfold_split(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed,
                      bool stratified, Granularity granularity = Granularity::kSubject);

struct SummaryStats {
  double min = 0.0, max = 0.0, mean = 0.0, std = 0.0;
  std::size_t count = 0;
};

struct ClassSummary {
  std::size_t subjects = 0;
  std::size_t slices = 0;
  SummaryStats age;
  SummaryStats mmse;
  std::size_t male = 0;
  std::size_t female = 0;
};

struct AuditReport {
  std::vector<std::string> leaked_subject_ids;  // sorted, unique
  double imbalance_ratio = 1.0;                 // majority : minority subjects
  ClassSummary negative;                        // label 0
  ClassSummary positive;                        // label 1
  std::vector<std::size_t> fold_train_slices;
  std::vector<std::size_t> fold_val_slices;

  bool clean() const { return leaked_subject_ids.empty(); }
};

AuditReport audit_split(const SplitPlan& plan, const DatasetManifest& manifest);
nlohmann::json audit_to_json(const AuditReport& report);
/// Demographics table in the column layout of the cohort description tables.
std::string render_audit_table(const AuditReport& report);

// ---------------------------------------------------------------------------

struct ConfusionCounts {
  std::uint64_t tp = 0, fp = 0, tn = 0, fn = 0;
  std::uint64_t total() const { return tp + fp + tn + fn; }
  ConfusionCounts& operator+=(const ConfusionCounts& o) {
    tp += o.tp;
    fp += o.fp;
    tn += o.tn;
    fn += o.fn;
    return *this;
  }
  bool operator==(const ConfusionCounts&) const = default;
};

/// Counts predictions against labels; label 1 is the positive class.
ConfusionCounts count_confusion(const std::vector<int>& labels, const std::vector<int>& predictions);

inline constexpr const char* kMetricNames[6] = {"accuracy",  "sensitivity", "specificity",
                                                "precision", "f1",          "mcc"};
inline constexpr const char* kMetricHeaders[6] = {"Accuracy",  "Sensitivity (Recall)", "Specificity",
                                                  "Precision", "F1-Score",             "MCC"};

struct MetricsReport {
  double accuracy = 0.0;
  double sensitivity = 0.0;
  double specificity = 0.0;
  double precision = 0.0;
  double f1 = 0.0;
  double mcc = 0.0;
  /// Names of metrics whose denominator was zero (reported as 0).
  std::vector<std::string> undefined;

  double value(std::size_t i) const;
};

MetricsReport compute_metrics(const ConfusionCounts& c);
nlohmann::json metrics_to_json(const MetricsReport& r);
MetricsReport metrics_from_json(const nlohmann::json& j);

struct MeanStd {
  double mean = 0.0;
  double std = 0.0;  // population standard deviation
};

struct AggregateReport {
  MeanStd metrics[6];
  std::size_t folds = 0;
};

AggregateReport aggregate_folds(const std::vector<MetricsReport>& reports);

/// "0.6298±0.0122"
std::string format_mean_std(const MeanStd& v);
/// "74.45%"
std::string format_percent(double fraction);

/// Markdown table of the six metrics as mean±std.
std::string render_aggregate_table(const AggregateReport& agg);
/// Markdown table "Fold-1 ... Fold-k" of best validation accuracies.
std::string render_fold_table(const std::vector<double>& best_val_accuracy);

}  // namespace sliceforge
