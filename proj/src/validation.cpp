#include "sliceforge/validation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>

#include "sliceforge/rng.hpp"

namespace sliceforge {

using nlohmann::json;

std::string to_string(Granularity g) { return g == Granularity::kSubject ? "subject" : "slice"; }

Granularity parse_granularity(const std::string& s) {
  if (s == "subject") return Granularity::kSubject;
  if (s == "slice") return Granularity::kSlice;
  throw InvalidArgument("granularity must be 'subject' or 'slice', got '" + s + "'");
}

std::string slice_key(const std::string& subject_id, std::size_t index) {
  return subject_id + "#" + std::to_string(index);
}

std::pair<std::string, std::size_t> parse_slice_key(const std::string& key) {
  const auto pos = key.rfind('#');
  if (pos == std::string::npos || pos + 1 >= key.size()) {
    throw InvalidArgument("malformed slice key '" + key + "'");
  }
  std::size_t idx = 0;
  for (std::size_t i = pos + 1; i < key.size(); ++i) {
    if (key[i] < '0' || key[i] > '9') throw InvalidArgument("malformed slice key '" + key + "'");
    idx = idx * 10 + static_cast<std::size_t>(key[i] - '0');
  }
  return {key.substr(0, pos), idx};
}

void to_json(json& j, const SplitPlan& p) {
  json folds = json::array();
  for (const auto& f : p.folds) folds.push_back({{"train", f.train_ids}, {"val", f.val_ids}});
  j = json{{"k", p.k},
           {"seed", p.seed},
           {"stratified", p.stratified},
           {"granularity", to_string(p.granularity)},
           {"folds", std::move(folds)}};
}

void from_json(const json& j, SplitPlan& p) {
  p.k = j.at("k").get<std::size_t>();
  p.seed = j.at("seed").get<std::uint64_t>();
  p.stratified = j.at("stratified").get<bool>();
  p.granularity = parse_granularity(j.at("granularity").get<std::string>());
  p.folds.clear();
  for (const auto& f : j.at("folds")) {
    p.folds.push_back(Fold{f.at("train").get<std::vector<std::string>>(),
                           f.at("val").get<std::vector<std::string>>()});
  }
  if (p.folds.size() != p.k) throw InvalidArgument("split plan fold count does not match k");
}

void save_split(const std::filesystem::path& path, const SplitPlan& plan) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write split " + path.string());
  out << json(plan).dump(2) << '\n';
  if (!out) throw IoError("write failed for " + path.string());
}

SplitPlan load_split(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open split " + path.string());
  try {
    return json::parse(in).get<SplitPlan>();
  } catch (const json::exception& e) {
    throw IoError("malformed split " + path.string() + ": " + e.what());
  } catch (const InvalidArgument& e) {
    throw IoError("invalid split " + path.string() + ": " + e.what());
  }
}

bool is_imbalanced(const DatasetManifest& manifest) {
  std::size_t counts[2] = {0, 0};
  for (const auto& s : manifest.subjects) ++counts[s.label];
  return counts[0] != counts[1];
}

SplitPlan kfold_split(const DatasetManifest& manifest, std::size_t k, std::uint64_t seed,
                      bool stratified, Granularity granularity) {
  if (k < 2) throw InvalidArgument("k must be at least 2");
  // Units to deal, grouped by class (one group when not stratified).
  std::vector<std::vector<std::string>> groups(stratified ? 2 : 1);
  for (const auto& s : manifest.subjects) {
    auto& g = groups[stratified ? static_cast<std::size_t>(s.label) : 0];
    if (granularity == Granularity::kSubject) {
      g.push_back(s.subject_id);
    } else {
      for (std::size_t i = 0; i < s.slice_paths.size(); ++i) g.push_back(slice_key(s.subject_id, i));
    }
  }
  for (std::size_t c = 0; c < groups.size(); ++c) {
    if (groups[c].empty()) {
      throw InvalidArgument(stratified ? "empty class " + std::to_string(c) + " under stratification"
                                       : std::string("manifest has no subjects"));
    }
    if (groups[c].size() < k) {
      throw InvalidArgument("k=" + std::to_string(k) + " exceeds the " +
                            std::to_string(groups[c].size()) + " units available" +
                            (stratified ? " in class " + std::to_string(c) : std::string()));
    }
  }

  std::vector<std::vector<std::string>> dealt(k);
  std::size_t position = 0;
  for (std::size_t c = 0; c < groups.size(); ++c) {
    RngStream rng{stream_tag::kSplit, seed, c};
    deterministic_shuffle(groups[c], rng);
    for (auto& id : groups[c]) dealt[position++ % k].push_back(std::move(id));
  }

  SplitPlan plan;
  plan.k = k;
  plan.seed = seed;
  plan.stratified = stratified;
  plan.granularity = granularity;
  for (std::size_t f = 0; f < k; ++f) {
    Fold fold;
    fold.val_ids = dealt[f];
    for (std::size_t o = 0; o < k; ++o) {
      if (o != f) fold.train_ids.insert(fold.train_ids.end(), dealt[o].begin(), dealt[o].end());
    }
    std::sort(fold.val_ids.begin(), fold.val_ids.end());
    std::sort(fold.train_ids.begin(), fold.train_ids.end());
    plan.folds.push_back(std::move(fold));
  }
  return plan;
}

// ---------------------------------------------------------------------------

namespace {

SummaryStats summarize(const std::vector<double>& values) {
  SummaryStats s;
  s.count = values.size();
  if (values.empty()) return s;
  s.min = *std::min_element(values.begin(), values.end());
  s.max = *std::max_element(values.begin(), values.end());
  double sum = 0.0;
  for (double v : values) sum += v;
  s.mean = sum / static_cast<double>(values.size());
  double sq = 0.0;
  for (double v : values) sq += (v - s.mean) * (v - s.mean);
  s.std = std::sqrt(sq / static_cast<double>(values.size()));
  return s;
}

ClassSummary summarize_class(const DatasetManifest& m, int label) {
  ClassSummary c;
  std::vector<double> ages, mmse;
  for (const auto& s : m.subjects) {
    if (s.label != label) continue;
    ++c.subjects;
    c.slices += s.slice_paths.size();
    ages.push_back(s.age);
    if (s.mmse) mmse.push_back(*s.mmse);
    (s.sex == 'M' ? c.male : c.female)++;
  }
  c.age = summarize(ages);
  c.mmse = summarize(mmse);
  return c;
}

json stats_json(const SummaryStats& s) {
  return json{{"min", s.min}, {"max", s.max}, {"mean", s.mean}, {"std", s.std}, {"count", s.count}};
}

json class_json(const ClassSummary& c) {
  return json{{"subjects", c.subjects}, {"slices", c.slices},   {"age", stats_json(c.age)},
              {"mmse", stats_json(c.mmse)}, {"male", c.male}, {"female", c.female}};
}

std::string fmt(const char* pattern, double a, double b = 0.0, double c = 0.0, double d = 0.0) {
  char buf[128];
  std::snprintf(buf, sizeof buf, pattern, a, b, c, d);
  return buf;
}

}  // namespace

AuditReport audit_split(const SplitPlan& plan, const DatasetManifest& manifest) {
  std::unordered_map<std::string, const SubjectRecord*> by_id;
  for (const auto& s : manifest.subjects) by_id.emplace(s.subject_id, &s);

  auto resolve = [&](const std::string& id) -> const SubjectRecord& {
    if (plan.granularity == Granularity::kSubject) {
      auto it = by_id.find(id);
      if (it == by_id.end()) throw InvalidArgument("unknown subject id " + id);
      return *it->second;
    }
    const auto [subject, index] = parse_slice_key(id);
    auto it = by_id.find(subject);
    if (it == by_id.end()) throw InvalidArgument("unknown subject id " + subject);
    if (index >= it->second->slice_paths.size()) throw InvalidArgument("unknown slice " + id);
    return *it->second;
  };
  auto slice_count = [&](const std::string& id) {
    const SubjectRecord& s = resolve(id);
    return plan.granularity == Granularity::kSubject ? s.slice_paths.size() : std::size_t{1};
  };

  AuditReport report;
  std::set<std::string> leaked;
  for (const auto& fold : plan.folds) {
    std::set<std::string> train_subjects;
    std::size_t train_slices = 0, val_slices = 0;
    for (const auto& id : fold.train_ids) {
      train_subjects.insert(resolve(id).subject_id);
      train_slices += slice_count(id);
    }
    for (const auto& id : fold.val_ids) {
      const std::string& subject = resolve(id).subject_id;
      if (train_subjects.count(subject)) leaked.insert(subject);
      val_slices += slice_count(id);
    }
    report.fold_train_slices.push_back(train_slices);
    report.fold_val_slices.push_back(val_slices);
  }
  report.leaked_subject_ids.assign(leaked.begin(), leaked.end());

  report.negative = summarize_class(manifest, 0);
  report.positive = summarize_class(manifest, 1);
  const std::size_t lo = std::min(report.negative.subjects, report.positive.subjects);
  const std::size_t hi = std::max(report.negative.subjects, report.positive.subjects);
  if (lo == 0) throw InvalidArgument("imbalance ratio undefined: a class has no subjects");
  report.imbalance_ratio = static_cast<double>(hi) / static_cast<double>(lo);
  return report;
}

json audit_to_json(const AuditReport& r) {
  return json{{"leaked_subject_ids", r.leaked_subject_ids},
              {"leakage", !r.clean()},
              {"imbalance_ratio", r.imbalance_ratio},
              {"non_alzheimers", class_json(r.negative)},
              {"alzheimers", class_json(r.positive)},
              {"fold_train_slices", r.fold_train_slices},
              {"fold_val_slices", r.fold_val_slices}};
}

std::string render_audit_table(const AuditReport& r) {
  auto stats = [](const SummaryStats& s) {
    if (s.count == 0) return std::string("n/a");
    return fmt("Range: %.0f-%.0f Mean: %.2f Std: %.2f", s.min, s.max, s.mean, s.std);
  };
  std::ostringstream os;
  os << "| Class | Subjects | Slices | Age | Gender | MMSE |\n";
  os << "|---|---|---|---|---|---|\n";
  const std::pair<const char*, const ClassSummary*> rows[] = {{"Non-Alzheimer's", &r.negative},
                                                             {"Alzheimer's", &r.positive}};
  for (const auto& [name, c] : rows) {
    os << "| " << name << " | " << c->subjects << " | " << c->slices << " | " << stats(c->age)
       << " | Male: " << c->male << " Female: " << c->female << " | " << stats(c->mmse) << " |\n";
  }
  os << "\nImbalance ratio (majority:minority): " << fmt("%.4g", r.imbalance_ratio) << ":1\n";
  if (r.clean()) {
    os << "Leakage: none (no subject appears on both sides of any fold)\n";
  } else {
    os << "Leakage: " << r.leaked_subject_ids.size() << " subject(s) on both sides of a fold:";
    for (const auto& id : r.leaked_subject_ids) os << ' ' << id;
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------

ConfusionCounts count_confusion(const std::vector<int>& labels, const std::vector<int>& predictions) {
  if (labels.size() != predictions.size()) throw InvalidArgument("label/prediction count mismatch");
  ConfusionCounts c;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    const bool actual = labels[i] == 1, predicted = predictions[i] == 1;
    if (actual && predicted) ++c.tp;
    else if (!actual && predicted) ++c.fp;
    else if (!actual && !predicted) ++c.tn;
    else ++c.fn;
  }
  return c;
}

double MetricsReport::value(std::size_t i) const {
  switch (i) {
    case 0: return accuracy;
    case 1: return sensitivity;
    case 2: return specificity;
    case 3: return precision;
    case 4: return f1;
    case 5: return mcc;
    default: throw InvalidArgument("metric index out of range");
  }
}

MetricsReport compute_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw InvalidArgument("compute_metrics needs at least one counted sample");
  const double tp = static_cast<double>(c.tp), fp = static_cast<double>(c.fp);
  const double tn = static_cast<double>(c.tn), fn = static_cast<double>(c.fn);
  MetricsReport r;
  auto ratio = [&r](double num, double den, const char* name) {
    if (den == 0.0) {
      r.undefined.emplace_back(name);
      return 0.0;
    }
    return num / den;
  };
  r.accuracy = (tp + tn) / (tp + tn + fp + fn);
  r.sensitivity = ratio(tp, tp + fn, "sensitivity");
  r.specificity = ratio(tn, tn + fp, "specificity");
  r.precision = ratio(tp, tp + fp, "precision");
  r.f1 = ratio(2.0 * tp, 2.0 * tp + fp + fn, "f1");
  const double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  r.mcc = ratio(tp * tn - fp * fn, std::sqrt(den), "mcc");
  return r;
}

json metrics_to_json(const MetricsReport& r) {
  json j;
  for (std::size_t i = 0; i < 6; ++i) j[kMetricNames[i]] = r.value(i);
  j["undefined"] = r.undefined;
  return j;
}

MetricsReport metrics_from_json(const json& j) {
  MetricsReport r;
  r.accuracy = j.at("accuracy").get<double>();
  r.sensitivity = j.at("sensitivity").get<double>();
  r.specificity = j.at("specificity").get<double>();
  r.precision = j.at("precision").get<double>();
  r.f1 = j.at("f1").get<double>();
  r.mcc = j.at("mcc").get<double>();
  r.undefined = j.value("undefined", std::vector<std::string>{});
  return r;
}

AggregateReport aggregate_folds(const std::vector<MetricsReport>& reports) {
  if (reports.empty()) throw InvalidArgument("aggregate_folds needs at least one report");
  AggregateReport agg;
  agg.folds = reports.size();
  const double n = static_cast<double>(reports.size());
  for (std::size_t m = 0; m < 6; ++m) {
    double sum = 0.0;
    for (const auto& r : reports) sum += r.value(m);
    const double mean = sum / n;
    double sq = 0.0;
    for (const auto& r : reports) sq += (r.value(m) - mean) * (r.value(m) - mean);
    agg.metrics[m] = MeanStd{mean, std::sqrt(sq / n)};
  }
  return agg;
}

std::string format_mean_std(const MeanStd& v) {
  // '+ 0.0' folds a negative zero into "0.0000".
  return fmt("%.4f±%.4f", v.mean + 0.0, v.std + 0.0);
}

std::string format_percent(double fraction) { return fmt("%.2f%%", 100.0 * fraction + 0.0); }

std::string render_aggregate_table(const AggregateReport& agg) {
  std::ostringstream os;
  os << '|';
  for (const char* h : kMetricHeaders) os << ' ' << h << " |";
  os << "\n|";
  for (std::size_t i = 0; i < 6; ++i) os << "---|";
  os << "\n|";
  for (const auto& m : agg.metrics) os << ' ' << format_mean_std(m) << " |";
  os << '\n';
  return os.str();
}

std::string render_fold_table(const std::vector<double>& best_val_accuracy) {
  std::ostringstream os;
  os << '|';
  for (std::size_t i = 0; i < best_val_accuracy.size(); ++i) os << " Fold-" << i + 1 << " |";
  os << "\n|";
  for (std::size_t i = 0; i < best_val_accuracy.size(); ++i) os << "---|";
  os << "\n|";
  for (double a : best_val_accuracy) os << ' ' << format_percent(a) << " |";
  os << '\n';
  return os.str();
}

}  // namespace sliceforge
