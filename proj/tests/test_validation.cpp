#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <map>
#include <set>

#include "sliceforge/error.hpp"
#include "sliceforge/validation.hpp"
#include "support/oracles.hpp"

using namespace sliceforge;
namespace fs = std::filesystem;

namespace {

// In-memory manifest; slice paths are never opened by splitting or auditing.
DatasetManifest cohort(std::size_t negatives, std::size_t positives, std::size_t slices) {
  DatasetManifest m;
  m.name = "cohort";
  m.slice_height = m.slice_width = 8;
  for (std::size_t i = 0; i < negatives + positives; ++i) {
    SubjectRecord s;
    s.subject_id = "S" + std::to_string(1000 + i);
    s.label = i < negatives ? 0 : 1;
    s.cdr = s.label == 0 ? 0.0 : (i % 3 == 0 ? 1.0 : 0.5);
    s.age = 60.0 + static_cast<double>(i % 30);
    s.sex = i % 3 == 0 ? 'M' : 'F';
    if (i % 7 != 0) s.mmse = static_cast<int>(20 + i % 11);
    for (std::size_t k = 0; k < slices; ++k) s.slice_paths.push_back("x.tsr");
    m.subjects.push_back(std::move(s));
  }
  return m;
}

std::size_t count_label(const DatasetManifest& m, const std::vector<std::string>& ids, int label) {
  std::size_t n = 0;
  for (const auto& id : ids) n += m.subject(id).label == label;
  return n;
}

std::string golden(const std::string& name) {
  std::ifstream in(fs::path(SLICEFORGE_TEST_DATA_DIR) / "golden" / name, std::ios::binary);
  REQUIRE(in);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace

TEST_CASE("fold sizes for balanced cohorts") {
  const DatasetManifest m = cohort(90, 90, 96);
  struct Expect {
    std::size_t k, train, val;
  };
  for (const Expect e : {Expect{2, 45, 45}, Expect{5, 72, 18}, Expect{9, 80, 10}}) {
    const SplitPlan plan = kfold_split(m, e.k, 1, true);
    REQUIRE(plan.folds.size() == e.k);
    for (const auto& f : plan.folds) {
      CHECK(count_label(m, f.train_ids, 0) == e.train);
      CHECK(count_label(m, f.train_ids, 1) == e.train);
      CHECK(count_label(m, f.val_ids, 0) == e.val);
      CHECK(count_label(m, f.val_ids, 1) == e.val);
    }
  }
  const AuditReport a = audit_split(kfold_split(m, 2, 1, true), m);
  CHECK(a.fold_val_slices == std::vector<std::size_t>{8640, 8640});
  CHECK(a.fold_train_slices == std::vector<std::size_t>{8640, 8640});
}

TEST_CASE("stratified fold sizes for an imbalanced cohort") {
  const DatasetManifest m = cohort(84, 30, 4);
  CHECK(is_imbalanced(m));
  const SplitPlan plan = kfold_split(m, 6, 3, true);
  for (const auto& f : plan.folds) {
    CHECK(count_label(m, f.train_ids, 0) == 70);
    CHECK(count_label(m, f.train_ids, 1) == 25);
    CHECK(count_label(m, f.val_ids, 0) == 14);
    CHECK(count_label(m, f.val_ids, 1) == 5);
  }
  CHECK(audit_split(plan, m).imbalance_ratio == 2.8);
}

TEST_CASE("subject-granularity plans are disjoint and cover every subject once") {
  RngStream rng{4};
  for (int trial = 0; trial < 40; ++trial) {
    const std::size_t neg = 3 + rng.below(20), pos = 3 + rng.below(20);
    const DatasetManifest m = cohort(neg, pos, 2);
    const std::size_t k = 2 + rng.below(2);
    const bool strat = rng.below(2) == 1;
    const SplitPlan plan = kfold_split(m, k, rng.next_u64(), strat);
    std::map<std::string, int> seen;
    for (const auto& f : plan.folds) {
      const std::set<std::string> train(f.train_ids.begin(), f.train_ids.end());
      for (const auto& id : f.val_ids) {
        CHECK(train.count(id) == 0);
        ++seen[id];
      }
      CHECK(f.train_ids.size() + f.val_ids.size() == neg + pos);
    }
    CHECK(seen.size() == neg + pos);
    for (const auto& [id, n] : seen) CHECK(n == 1);
    CHECK(audit_split(plan, m).clean());
    CHECK(kfold_split(m, k, plan.seed, strat) == plan);
  }
}

TEST_CASE("split errors and serialization") {
  const DatasetManifest m = cohort(4, 3, 2);
  CHECK_THROWS_AS(kfold_split(m, 1, 0, false), InvalidArgument);
  CHECK_THROWS_AS(kfold_split(m, 4, 0, true), InvalidArgument);
  CHECK_THROWS_AS(kfold_split(cohort(4, 0, 2), 2, 0, true), InvalidArgument);
  CHECK_NOTHROW(kfold_split(m, 7, 0, false));
  CHECK_THROWS_AS(kfold_split(m, 8, 0, false), InvalidArgument);

  const SplitPlan plan = kfold_split(m, 2, 9, true, Granularity::kSlice);
  const fs::path p = fs::temp_directory_path() / "sliceforge_split_roundtrip.json";
  save_split(p, plan);
  CHECK(load_split(p) == plan);
  CHECK(parse_slice_key(slice_key("S1", 12)) == std::make_pair(std::string("S1"), std::size_t{12}));
  CHECK_THROWS_AS(parse_slice_key("S1"), InvalidArgument);
  CHECK_THROWS_AS(parse_granularity("voxel"), InvalidArgument);
}

TEST_CASE("slice-granularity splits leak subjects") {
  const DatasetManifest m = cohort(10, 10, 96);
  const SplitPlan plan = kfold_split(m, 2, 5, false, Granularity::kSlice);
  const AuditReport a = audit_split(plan, m);
  CHECK_FALSE(a.clean());
  CHECK(a.leaked_subject_ids.size() == 20);
  CHECK(audit_split(kfold_split(m, 2, 5, false), m).clean());

  SplitPlan unknown = kfold_split(m, 2, 5, false);
  unknown.folds[0].val_ids.push_back("GHOST");
  CHECK_THROWS_AS(audit_split(unknown, m), InvalidArgument);
}

TEST_CASE("audit demographics") {
  const DatasetManifest m = cohort(84, 30, 2);
  const AuditReport a = audit_split(kfold_split(m, 6, 0, true), m);
  CHECK(a.negative.subjects == 84);
  CHECK(a.positive.subjects == 30);
  CHECK(a.negative.slices == 168);
  CHECK(a.negative.male + a.negative.female == 84);

  std::vector<double> ages;
  for (const auto& s : m.subjects)
    if (s.label == 1) ages.push_back(s.age);
  double mean = 0, var = 0;
  for (double v : ages) mean += v;
  mean /= ages.size();
  for (double v : ages) var += (v - mean) * (v - mean);
  CHECK(a.positive.age.mean == doctest::Approx(mean));
  CHECK(a.positive.age.std == doctest::Approx(std::sqrt(var / ages.size())));
  CHECK(a.positive.age.min == *std::min_element(ages.begin(), ages.end()));

  std::size_t with_mmse = 0;
  for (const auto& s : m.subjects) with_mmse += s.label == 0 && s.mmse.has_value();
  CHECK(a.negative.mmse.count == with_mmse);

  const std::string table = render_audit_table(a);
  CHECK(table.find("Imbalance ratio") != std::string::npos);
  CHECK(table.find("2.8:1") != std::string::npos);
  CHECK(audit_to_json(a).at("imbalance_ratio").get<double>() == 2.8);
}

TEST_CASE("metric examples") {
  const MetricsReport r = compute_metrics({45, 5, 45, 5});
  CHECK(r.accuracy == doctest::Approx(0.9));
  CHECK(r.sensitivity == doctest::Approx(0.9));
  CHECK(r.specificity == doctest::Approx(0.9));
  CHECK(r.precision == doctest::Approx(0.9));
  CHECK(r.f1 == doctest::Approx(0.9));
  CHECK(r.mcc == doctest::Approx(0.8));
  CHECK(r.undefined.empty());

  const MetricsReport p = compute_metrics({10, 0, 10, 0});
  for (std::size_t i = 0; i < 6; ++i) CHECK(p.value(i) == 1.0);

  const MetricsReport c = compute_metrics({1, 1, 1, 1});
  CHECK(c.accuracy == 0.5);
  CHECK(c.mcc == 0.0);

  const MetricsReport none = compute_metrics({0, 0, 7, 3});
  CHECK(none.precision == 0.0);
  CHECK(none.mcc == 0.0);
  CHECK(std::find(none.undefined.begin(), none.undefined.end(), "precision") != none.undefined.end());
  CHECK(std::find(none.undefined.begin(), none.undefined.end(), "mcc") != none.undefined.end());

  CHECK_THROWS_AS(compute_metrics({0, 0, 0, 0}), InvalidArgument);
  CHECK(count_confusion({1, 1, 0, 0, 1}, {1, 0, 0, 1, 1}) == ConfusionCounts{2, 1, 1, 1});
  CHECK(metrics_from_json(metrics_to_json(none)).undefined == none.undefined);
}

TEST_CASE("metrics agree with brute force on random tables") {
  RngStream rng{6};
  for (int trial = 0; trial < 10000; ++trial) {
    const std::size_t n = 1 + rng.below(trial % 10 == 0 ? 4 : 300);
    std::vector<int> labels(n), preds(n);
    const double bias = rng.uniform();
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = rng.uniform() < bias ? 1 : 0;
      preds[i] = rng.uniform() < 0.5 ? labels[i] : static_cast<int>(rng.below(2));
    }
    const MetricsReport r = compute_metrics(count_confusion(labels, preds));
    const auto b = oracle::brute_metrics(labels, preds);
    CHECK(std::abs(r.accuracy - b.accuracy) <= 1e-12);
    CHECK(std::abs(r.sensitivity - b.sensitivity) <= 1e-12);
    CHECK(std::abs(r.specificity - b.specificity) <= 1e-12);
    CHECK(std::abs(r.precision - b.precision) <= 1e-12);
    CHECK(std::abs(r.f1 - b.f1) <= 1e-12);
    CHECK(std::abs(r.mcc - b.mcc) <= 1e-12);
    CHECK(r.mcc >= -1.0);
    CHECK(r.mcc <= 1.0);
    if (r.precision + r.sensitivity > 0 && r.undefined.empty()) {
      CHECK(std::abs(r.f1 - 2 * r.precision * r.sensitivity / (r.precision + r.sensitivity)) <= 1e-12);
    }
  }
}

TEST_CASE("aggregation and formatting") {
  MetricsReport a, b;
  a.accuracy = 0.6176;
  b.accuracy = 0.6420;
  const AggregateReport agg = aggregate_folds({a, b});
  CHECK(format_mean_std(agg.metrics[0]) == "0.6298±0.0122");
  CHECK(agg.folds == 2);

  const AggregateReport one = aggregate_folds({a});
  CHECK(one.metrics[0].std == 0.0);
  const AggregateReport same = aggregate_folds({a, a, a});
  CHECK(same.metrics[0].std == 0.0);
  CHECK_THROWS_AS(aggregate_folds({}), InvalidArgument);

  CHECK(format_percent(0.7445) == "74.45%");
  CHECK(format_mean_std({-0.0, 0.0}) == "0.0000±0.0000");
}

TEST_CASE("rendered tables match golden files") {
  AggregateReport agg;
  agg.folds = 6;
  agg.metrics[0] = {0.6298, 0.0122};
  agg.metrics[1] = {0.71234, 0.05};
  agg.metrics[2] = {1.0, 0.0};
  agg.metrics[3] = {0.0, 0.0};
  agg.metrics[4] = {0.123456, 0.000049};
  agg.metrics[5] = {-0.25, 0.1};
  CHECK(render_aggregate_table(agg) == golden("aggregate_table.md"));
  CHECK(render_fold_table({0.7445, 0.6891, 1.0, 0.0, 0.5, 5.0 / 6.0}) == golden("fold_table.md"));
}
