#include "sliceforge/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <ostream>
#include <sstream>

#include "sliceforge/error.hpp"

namespace sliceforge {

namespace fs = std::filesystem;
using nlohmann::json;

void to_json(json& j, const AugmentConfig& c) {
  j = json{{"width_shift_frac", c.width_shift_frac},
           {"height_shift_frac", c.height_shift_frac},
           {"horizontal_flip", c.horizontal_flip},
           {"normalize", c.normalize}};
}

void from_json(const json& j, AugmentConfig& c) {
  AugmentConfig d;
  c.width_shift_frac = j.value("width_shift_frac", d.width_shift_frac);
  c.height_shift_frac = j.value("height_shift_frac", d.height_shift_frac);
  c.horizontal_flip = j.value("horizontal_flip", d.horizontal_flip);
  c.normalize = j.value("normalize", d.normalize);
}

void ExperimentConfig::validate() const {
  if (manifest_path.empty()) throw InvalidArgument("manifest_path is required");
  if (output_dir.empty()) throw InvalidArgument("output_dir is required");
  if (split.k < 2) throw InvalidArgument("split.k must be at least 2");
  model.validate();
  train.validate();
  augment.validate();
}

void to_json(json& j, const ExperimentConfig& c) {
  json split{{"k", c.split.k},
             {"seed", c.split.seed},
             {"granularity", to_string(c.split.granularity)},
             {"stratified", c.split.stratified ? json(*c.split.stratified) : json(nullptr)}};
  j = json{{"manifest_path", c.manifest_path.generic_string()},
           {"output_dir", c.output_dir.generic_string()},
           {"model", c.model},
           {"train", c.train},
           {"augment", c.augment},
           {"split", split},
           {"allow_leakage", c.allow_leakage}};
}

void from_json(const json& j, ExperimentConfig& c) {
  c.manifest_path = j.value("manifest_path", std::string());
  c.output_dir = j.value("output_dir", std::string());
  if (j.contains("model")) c.model = j.at("model").get<ModelConfig>();
  if (j.contains("train")) c.train = j.at("train").get<TrainConfig>();
  if (j.contains("augment")) c.augment = j.at("augment").get<AugmentConfig>();
  if (j.contains("split")) {
    const json& s = j.at("split");
    c.split.k = s.value("k", c.split.k);
    c.split.seed = s.value("seed", c.split.seed);
    if (s.contains("granularity")) c.split.granularity = parse_granularity(s.at("granularity").get<std::string>());
    if (s.contains("stratified") && !s.at("stratified").is_null()) c.split.stratified = s.at("stratified").get<bool>();
  }
  c.allow_leakage = j.value("allow_leakage", false);
}

ExperimentConfig load_experiment_config(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path.string());
  ExperimentConfig c;
  try {
    c = json::parse(in).get<ExperimentConfig>();
  } catch (const json::exception& e) {
    throw InvalidArgument("malformed config " + path.string() + ": " + e.what());
  }
  const fs::path base = path.parent_path();
  if (!c.manifest_path.empty() && c.manifest_path.is_relative()) c.manifest_path = base / c.manifest_path;
  if (!c.output_dir.empty() && c.output_dir.is_relative()) c.output_dir = base / c.output_dir;
  return c;
}

void save_experiment_config(const fs::path& path, const ExperimentConfig& config) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << json(config).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

void apply_seed_env(ExperimentConfig& config) {
  const char* env = std::getenv("SLICEFORGE_SEED");
  if (env == nullptr || *env == '\0') return;
  char* end = nullptr;
  const unsigned long long v = std::strtoull(env, &end, 10);
  if (end == env || *end != '\0') throw InvalidArgument(std::string("SLICEFORGE_SEED is not an integer: ") + env);
  config.split.seed = v;
  config.train.seed = v;
}

// ---------------------------------------------------------------------------

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("missing run artifact " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json counts_to_json(const ConfusionCounts& c) {
  return json{{"tp", c.tp}, {"fp", c.fp}, {"tn", c.tn}, {"fn", c.fn}};
}

ConfusionCounts counts_from_json(const json& j) {
  return ConfusionCounts{j.at("tp").get<std::uint64_t>(), j.at("fp").get<std::uint64_t>(),
                         j.at("tn").get<std::uint64_t>(), j.at("fn").get<std::uint64_t>()};
}

json aggregate_to_json(const AggregateReport& agg) {
  json j = json::object();
  for (std::size_t i = 0; i < 6; ++i) {
    j[kMetricNames[i]] = json{{"mean", agg.metrics[i].mean}, {"std", agg.metrics[i].std}};
  }
  return j;
}

fs::path fold_dir(const fs::path& root, std::size_t fold_index) {
  return root / ("fold_" + std::to_string(fold_index + 1));
}

std::string metrics_csv(const std::vector<FoldOutcome>& folds) {
  std::ostringstream os;
  os << "fold,level";
  for (const char* n : kMetricNames) os << ',' << n;
  os << '\n';
  char buf[32];
  for (const auto& f : folds) {
    for (int level = 0; level < 2; ++level) {
      const MetricsReport& r = level == 0 ? f.slice_metrics : f.subject_metrics;
      os << f.fold << ',' << (level == 0 ? "slice" : "subject");
      for (std::size_t i = 0; i < 6; ++i) {
        std::snprintf(buf, sizeof buf, "%.6f", r.value(i));
        os << ',' << buf;
      }
      os << '\n';
    }
  }
  return os.str();
}

}  // namespace

json fold_outcome_to_json(const FoldOutcome& f) {
  return json{{"fold", f.fold},
              {"best_epoch", f.best_epoch},
              {"best_val_accuracy", f.best_val_accuracy},
              {"slice", json{{"counts", counts_to_json(f.slice_counts)}, {"metrics", metrics_to_json(f.slice_metrics)}}},
              {"subject",
               json{{"counts", counts_to_json(f.subject_counts)}, {"metrics", metrics_to_json(f.subject_metrics)}}}};
}

FoldOutcome fold_outcome_from_json(const json& j) {
  FoldOutcome f;
  f.fold = j.at("fold").get<std::size_t>();
  f.best_epoch = j.at("best_epoch").get<std::size_t>();
  f.best_val_accuracy = j.at("best_val_accuracy").get<double>();
  f.slice_counts = counts_from_json(j.at("slice").at("counts"));
  f.slice_metrics = metrics_from_json(j.at("slice").at("metrics"));
  f.subject_counts = counts_from_json(j.at("subject").at("counts"));
  f.subject_metrics = metrics_from_json(j.at("subject").at("metrics"));
  return f;
}

SplitPlan plan_split(const ExperimentConfig& config, const DatasetManifest& manifest) {
  const bool stratified = config.split.stratified.value_or(is_imbalanced(manifest));
  return kfold_split(manifest, config.split.k, config.split.seed, stratified, config.split.granularity);
}

void enforce_leakage_guard(const AuditReport& audit, bool allow_leakage) {
  if (audit.clean() || allow_leakage) return;
  std::string msg = "split leaks " + std::to_string(audit.leaked_subject_ids.size()) +
                    " subject(s) across train/validation:";
  for (const auto& id : audit.leaked_subject_ids) msg += ' ' + id;
  throw LeakageError(msg);
}

FoldOutcome run_fold(const ExperimentConfig& config, const DatasetManifest& manifest, const SplitPlan& plan,
                     std::size_t fold_index, std::ostream* log) {
  if (fold_index >= plan.folds.size()) {
    throw InvalidArgument("fold " + std::to_string(fold_index + 1) + " out of range (k=" +
                          std::to_string(plan.folds.size()) + ")");
  }
  const Fold& fold = plan.folds[fold_index];
  const SampleSet train = load_samples(manifest, fold.train_ids, plan.granularity);
  const SampleSet val = load_samples(manifest, fold.val_ids, plan.granularity);

  // Slices are single-channel; the manifest fixes the input extent.
  ModelConfig mc = config.model;
  mc.input_height = manifest.slice_height;
  mc.input_width = manifest.slice_width;
  mc.input_channels = 1;
  Model model = build_model(mc, config.train.seed);
  FitResult result = fit(std::move(model), train, val, config.train, config.augment);

  const double threshold = config.model.threshold;
  const EvalResult eval = evaluate(result.best_model, val, threshold, config.augment.normalize);

  FoldOutcome out;
  out.fold = fold_index + 1;
  out.best_epoch = result.best_epoch;
  out.best_val_accuracy = result.best_val_accuracy;
  out.slice_counts = eval.counts;
  out.slice_metrics = compute_metrics(eval.counts);
  out.subject_counts = subject_vote_counts(val, eval.probs, threshold);
  out.subject_metrics = compute_metrics(out.subject_counts);

  const fs::path dir = fold_dir(config.output_dir, fold_index);
  fs::create_directories(dir);
  result.history.write_csv(dir / "history.csv");
  save_model(dir / "best_model.sfm", result.best_model);
  save_model(dir / "final_model.sfm", result.final_model);
  write_text(dir / "metrics.json", fold_outcome_to_json(out).dump(2) + "\n");

  if (log != nullptr) {
    for (const auto& e : result.history.epochs) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "fold %zu epoch %zu lr %.3g loss %.4f acc %.4f val_loss %.4f val_acc %.4f\n",
                    out.fold, e.epoch, e.lr, e.train_loss, e.train_accuracy, e.val_loss, e.val_accuracy);
      *log << buf;
    }
    *log << "fold " << out.fold << " best epoch " << out.best_epoch << " val accuracy "
         << format_percent(out.best_val_accuracy) << '\n';
  }
  return out;
}

RunSummary run_experiment(const ExperimentConfig& config, std::ostream* log) {
  config.validate();
  const DatasetManifest manifest = load_manifest(config.manifest_path);

  RunSummary summary;
  summary.plan = plan_split(config, manifest);
  summary.audit = audit_split(summary.plan, manifest);

  fs::create_directories(config.output_dir);
  save_experiment_config(config.output_dir / "config.json", config);
  save_split(config.output_dir / "split.json", summary.plan);
  write_text(config.output_dir / "audit.json", audit_to_json(summary.audit).dump(2) + "\n");
  write_text(config.output_dir / "audit.txt", render_audit_table(summary.audit));

  enforce_leakage_guard(summary.audit, config.allow_leakage);
  if (log != nullptr && !summary.audit.clean()) {
    *log << "warning: leakage override set; " << summary.audit.leaked_subject_ids.size()
         << " subject(s) appear on both sides\n";
  }

  std::vector<MetricsReport> slice_reports, subject_reports;
  for (std::size_t f = 0; f < summary.plan.folds.size(); ++f) {
    summary.folds.push_back(run_fold(config, manifest, summary.plan, f, log));
    slice_reports.push_back(summary.folds.back().slice_metrics);
    subject_reports.push_back(summary.folds.back().subject_metrics);
  }
  summary.slice_aggregate = aggregate_folds(slice_reports);
  summary.subject_aggregate = aggregate_folds(subject_reports);

  json folds = json::array();
  for (const auto& f : summary.folds) folds.push_back(fold_outcome_to_json(f));
  const json js{{"k", summary.plan.k},
                {"granularity", to_string(summary.plan.granularity)},
                {"stratified", summary.plan.stratified},
                {"leakage", !summary.audit.clean()},
                {"folds", folds},
                {"aggregate", json{{"slice", aggregate_to_json(summary.slice_aggregate)},
                                   {"subject", aggregate_to_json(summary.subject_aggregate)}}}};
  write_text(config.output_dir / "metrics.csv", metrics_csv(summary.folds));
  write_text(config.output_dir / "summary.json", js.dump(2) + "\n");
  write_report(config.output_dir);
  return summary;
}

// ---------------------------------------------------------------------------

RunReport build_report(const fs::path& run_dir) {
  if (!fs::is_directory(run_dir)) throw IoError("run directory not found: " + run_dir.string());
  const fs::path split_path = run_dir / "split.json";
  if (!fs::exists(split_path)) throw IoError("incomplete run directory (no split.json): " + run_dir.string());
  const SplitPlan plan = load_split(split_path);

  std::vector<FoldOutcome> folds;
  for (std::size_t f = 0; f < plan.folds.size(); ++f) {
    const fs::path p = fold_dir(run_dir, f) / "metrics.json";
    try {
      folds.push_back(fold_outcome_from_json(json::parse(read_text(p))));
    } catch (const json::exception& e) {
      throw IoError("corrupt run artifact " + p.string() + ": " + e.what());
    }
  }

  std::vector<MetricsReport> slice_reports, subject_reports;
  std::vector<double> best;
  for (const auto& f : folds) {
    slice_reports.push_back(f.slice_metrics);
    subject_reports.push_back(f.subject_metrics);
    best.push_back(f.best_val_accuracy);
  }
  const AggregateReport slice = aggregate_folds(slice_reports);
  const AggregateReport subject = aggregate_folds(subject_reports);

  RunReport r;
  std::ostringstream md;
  md << "# Cross-validation report\n\n"
     << plan.k << "-fold, " << to_string(plan.granularity) << " granularity"
     << (plan.stratified ? ", stratified" : "") << "\n\n"
     << "## Slice-level metrics (mean±std over folds)\n\n"
     << render_aggregate_table(slice) << "\n"
     << "## Subject-level metrics (majority vote, mean±std over folds)\n\n"
     << render_aggregate_table(subject) << "\n"
     << "## Best validation accuracy per fold\n\n"
     << render_fold_table(best);
  r.markdown = md.str();

  std::ostringstream csv;
  csv << "level";
  for (const char* h : kMetricHeaders) csv << ',' << h;
  csv << '\n';
  csv << "slice";
  for (const auto& m : slice.metrics) csv << ',' << format_mean_std(m);
  csv << "\nsubject";
  for (const auto& m : subject.metrics) csv << ',' << format_mean_std(m);
  csv << "\n\nfold,best_val_accuracy\n";
  for (std::size_t i = 0; i < best.size(); ++i) csv << "Fold-" << i + 1 << ',' << format_percent(best[i]) << '\n';
  r.csv = csv.str();
  return r;
}

void write_report(const fs::path& run_dir) {
  const RunReport r = build_report(run_dir);
  write_text(run_dir / "report.md", r.markdown);
  write_text(run_dir / "report.csv", r.csv);
}

void write_pgm(const fs::path& path, const Tensor& map) {
  if (map.shape().rank() != 2) throw InvalidArgument("PGM export expects an [H,W] map");
  const auto values = map.data();
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  std::string pixels(values.size(), '\0');
  for (std::size_t i = 0; i < values.size(); ++i) {
    const double t = hi > lo ? (values[i] - lo) / (hi - lo) : 0.0;
    pixels[i] = static_cast<char>(static_cast<unsigned char>(std::lround(t * 255.0)));
  }
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot write " + path.string());
  out << "P5\n" << map.dim(1) << ' ' << map.dim(0) << "\n255\n" << pixels;
  if (!out) throw IoError("write failed for " + path.string());
}

}  // namespace sliceforge
