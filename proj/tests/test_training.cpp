#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>

#include "sliceforge/dataset.hpp"
#include "sliceforge/error.hpp"
#include "sliceforge/training.hpp"
#include "support/oracles.hpp"

using namespace sliceforge;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "sliceforge_test_training" / name;
  fs::create_directories(dir);
  return dir;
}

ModelConfig small_config() {
  ModelConfig c;
  c.input_height = 16;
  c.input_width = 16;
  return c;
}

struct ToyData {
  DatasetManifest manifest;
  SampleSet train, val;
};

const ToyData& toy() {
  static const ToyData data = [] {
    ToyData d;
    d.manifest = generate_synthetic(4, 2, 16, 16, 1, scratch("toy"));
    std::vector<std::string> tr, va;
    for (const auto& s : d.manifest.subjects) {
      const int n = std::stoi(s.subject_id.substr(4));
      (n % 4 == 0 ? va : tr).push_back(s.subject_id);
    }
    d.train = load_samples(d.manifest, tr, Granularity::kSubject);
    d.val = load_samples(d.manifest, va, Granularity::kSubject);
    return d;
  }();
  return data;
}

// A model whose logit is a fixed positive multiple of (mean intensity - 0.5):
// every block routes channel 0 through a centre tap, everything else is zero.
Model mean_intensity_model() {
  Model m = build_model(small_config(), 0);
  for (Tensor* t : m.trainable()) *t = Tensor(t->shape());
  for (std::size_t b = 0; b < m.blocks.size(); ++b) {
    auto& blk = m.blocks[b];
    blk.conv.depthwise[4] = 1.0f;
    blk.conv.pointwise[0] = 1.0f;
    for (float& g : blk.norm.gamma.data()) g = 1.0f;
  }
  m.hidden.weight[0] = 1.0f;
  const double c = std::pow(1.0 / std::sqrt(1.001), 9);
  m.output.weight[0] = 10.0f;
  m.output.bias[0] = static_cast<float>(-5.0 * c);
  return m;
}

SampleSet constant_images(std::size_t per_class) {
  SampleSet s;
  for (std::size_t i = 0; i < 2 * per_class; ++i) {
    const int label = i < per_class ? 0 : 1;
    s.slices.push_back(Tensor(Shape{16, 16}, label == 1 ? 255.0f : 0.0f));
    s.labels.push_back(label);
    s.subject_ids.push_back("S" + std::to_string(i / 2));
    s.sample_ids.push_back(i);
  }
  return s;
}

}  // namespace

TEST_CASE("bce_loss examples") {
  const auto half = bce_loss(tensor_create(Shape{1}, {0.0f}), {1});
  CHECK(half.loss == doctest::Approx(std::log(2.0)).epsilon(1e-9));
  CHECK(half.grad_logits[0] == doctest::Approx(-0.5));

  const auto fit = bce_loss(tensor_create(Shape{2}, {30.0f, -30.0f}), {1, 0});
  CHECK(fit.loss <= 1e-6);

  CHECK_THROWS_AS(bce_loss(tensor_create(Shape{1}, {0.0f}), {2}), InvalidArgument);
  CHECK_THROWS_AS(bce_loss(tensor_create(Shape{2}, {0.0f, 1.0f}), {1}), InvalidArgument);
}

TEST_CASE("bce_loss gradient is (p - y) / N and finite everywhere") {
  RngStream rng{1};
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.below(6);
    TensorD z = oracle::random_tensor(Shape{n}, rng, -8, 8);
    std::vector<int> y(n);
    for (auto& v : y) v = static_cast<int>(rng.below(2));
    const auto r = bce_loss(z, y);
    for (std::size_t i = 0; i < n; ++i) {
      const double p = 1.0 / (1.0 + std::exp(-z[i]));
      CHECK(std::abs(r.grad_logits[i] - (p - y[i]) / static_cast<double>(n)) <= 1e-12);
    }
    const TensorD num = oracle::numeric_gradient(z, [&] { return bce_loss(z, y).loss; }, 1e-5);
    for (std::size_t i = 0; i < n; ++i) CHECK(std::abs(num[i] - r.grad_logits[i]) <= 1e-6);
  }
  for (double z = -50; z <= 50; z += 0.5) {
    CHECK(std::isfinite(bce_loss(tensor_create(Shape{2}, {float(z), float(z)}), {0, 1}).loss));
  }
  CHECK(std::isfinite(bce_loss(tensor_create(Shape{1}, {3e38f}), {0}).loss));
}

TEST_CASE("clip_gradients examples") {
  std::vector<Tensor> small{tensor_create(Shape{2}, {0.1f, -0.2f})};
  const auto before = small;
  clip_gradients(small, 0.5, 1.0);
  CHECK(small[0] == before[0]);

  std::vector<Tensor> one{tensor_create(Shape{1}, {0.7f})};
  clip_gradients(one, 0.5, 1.0);
  CHECK(one[0][0] == 0.5f);

  std::vector<Tensor> pair{tensor_create(Shape{2}, {0.6f, 0.8f})};
  clip_gradients(pair, 0.5, 1.0);
  CHECK(pair[0].values() == std::vector<float>{0.5f, 0.5f});
  CHECK(global_norm(pair) == doctest::Approx(std::sqrt(0.5)));

  std::vector<Tensor> bad{tensor_create(Shape{1}, {0.0f})};
  bad[0][0] = std::numeric_limits<float>::infinity();
  CHECK_THROWS_AS(clip_gradients(bad, 0.5, 1.0), NumericError);
}

TEST_CASE("clip_gradients satisfies both bounds on random collections") {
  RngStream rng{2};
  for (int trial = 0; trial < 500; ++trial) {
    std::vector<Tensor> g;
    const std::size_t count = 1 + rng.below(6);
    const double scale = std::pow(10.0, rng.uniform(-3, 3));
    for (std::size_t i = 0; i < count; ++i) {
      g.push_back(oracle::random_tensor<float>(Shape{1 + rng.below(50)}, rng, -scale, scale));
    }
    clip_gradients(g, 0.5, 1.0);
    double mx = 0.0;
    for (const auto& t : g)
      for (float v : t.data()) mx = std::max(mx, double(std::abs(v)));
    CHECK(mx <= 0.5);
    CHECK(global_norm(g) <= 1.0 + 1e-6);
  }
}

TEST_CASE("learning rate schedule and sgd") {
  TrainConfig c;
  CHECK(lr_for_epoch(c, 0) == doctest::Approx(1e-4));
  CHECK(lr_for_epoch(c, 1) == doctest::Approx(9.6e-5));
  for (std::size_t e = 1; e < 30; ++e) CHECK(lr_for_epoch(c, e) <= lr_for_epoch(c, e - 1));

  Tensor w = tensor_create(Shape{1}, {1.0f});
  sgd_step({&w}, {Tensor(Shape{1})}, 0.1);
  CHECK(w[0] == 1.0f);
  sgd_step({&w}, {Tensor(Shape{1}, 1.0f)}, 0.1);
  CHECK(w[0] == doctest::Approx(0.9));
  sgd_step({&w}, {Tensor(Shape{1}, 1.0f)}, 0.1);
  CHECK(w[0] == doctest::Approx(0.8));
  CHECK_THROWS_AS(sgd_step({&w}, {Tensor(Shape{2})}, 0.1), InvalidArgument);

  TrainConfig bad;
  bad.initial_lr = 0;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
  bad = TrainConfig{};
  bad.clip_norm = -1;
  CHECK_THROWS_AS(bad.validate(), InvalidArgument);
}

TEST_CASE("one small step on a frozen batch lowers the loss") {
  Model m = build_model(small_config(), 3);
  RngStream rng{3};
  const Tensor x = oracle::random_tensor<float>(Shape{4, 1, 16, 16}, rng, 0.0, 1.0);
  const std::vector<int> y{0, 1, 0, 1};
  const Tensor mask = Tensor(Shape{4, 64}, 1.0f);
  const auto pass = forward(m, x, Mode::kTrain, {}, &mask);
  const double before = bce_loss(pass.logits, y).loss;
  const auto grads = backward(m, pass, bce_loss(pass.logits, y).grad_logits);
  sgd_step(m.trainable(), grads, 1e-5);
  const double after = bce_loss(forward(m, x, Mode::kTrain, {}, &mask).logits, y).loss;
  CHECK(after < before);
}

TEST_CASE("evaluate partitions the dataset") {
  const SampleSet data = constant_images(10);
  const EvalResult perfect = evaluate(mean_intensity_model(), data, 0.5);
  CHECK(perfect.counts == ConfusionCounts{10, 0, 10, 0});

  Model flat = build_model(small_config(), 1);
  for (Tensor* t : flat.trainable()) *t = Tensor(t->shape());
  const EvalResult half = evaluate(flat, data, 0.5);
  CHECK(half.counts.fn == 0);
  CHECK(half.counts.tn == 0);
  CHECK(half.mean_loss == doctest::Approx(std::log(2.0)));

  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const EvalResult r = evaluate(build_model(small_config(), seed), toy().val, 0.5);
    CHECK(r.counts.total() == toy().val.size());
    CHECK(r.probs.size() == toy().val.size());
  }
  CHECK_THROWS_AS(evaluate(flat, SampleSet{}, 0.5), InvalidArgument);
}

TEST_CASE("subject vote counts") {
  SampleSet s;
  s.labels = {1, 1, 1, 0, 0, 0};
  s.subject_ids = {"A", "A", "A", "B", "B", "C"};
  s.slices.resize(6);
  s.sample_ids = {0, 1, 2, 3, 4, 5};
  // A: 2 of 3 positive -> 1; B: tie -> 1; C: 0
  const ConfusionCounts c = subject_vote_counts(s, {0.9f, 0.6f, 0.1f, 0.7f, 0.2f, 0.3f}, 0.5);
  CHECK(c == ConfusionCounts{1, 1, 1, 0});
}

TEST_CASE("fit is deterministic and records every epoch") {
  TrainConfig cfg;
  cfg.epochs = 3;
  cfg.batch_size = 4;
  cfg.initial_lr = 1e-2;
  cfg.seed = 5;
  const auto a = fit(build_model(small_config(), 5), toy().train, toy().val, cfg, AugmentConfig{});
  const auto b = fit(build_model(small_config(), 5), toy().train, toy().val, cfg, AugmentConfig{});
  CHECK(a.history.to_csv() == b.history.to_csv());
  REQUIRE(a.history.epochs.size() == 3);
  const auto pa = a.final_model.stored(), pb = b.final_model.stored();
  for (std::size_t i = 0; i < pa.size(); ++i) CHECK(*pa[i] == *pb[i]);

  double best = -1;
  std::size_t best_epoch = 0;
  for (const auto& e : a.history.epochs) {
    CHECK(std::isfinite(e.train_loss));
    CHECK(std::isfinite(e.val_loss));
    if (e.val_accuracy > best) best = e.val_accuracy, best_epoch = e.epoch;
  }
  CHECK(a.best_epoch == best_epoch);
  CHECK(a.best_val_accuracy == best);
  CHECK(a.history.epochs[1].lr == doctest::Approx(1e-2 * 0.96));

  cfg.seed = 6;
  const auto c = fit(build_model(small_config(), 5), toy().train, toy().val, cfg, AugmentConfig{});
  CHECK(c.history.to_csv() != a.history.to_csv());
}

TEST_CASE("fit preconditions and numeric abort") {
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.batch_size = 1000;
  CHECK_THROWS_AS(fit(build_model(small_config(), 1), toy().train, toy().val, cfg, {}), InvalidArgument);
  cfg.batch_size = 4;
  CHECK_THROWS_AS(fit(build_model(small_config(), 1), toy().train, toy().train, cfg, {}), InvalidArgument);
  CHECK_THROWS_AS(fit(build_model(small_config(), 1), SampleSet{}, toy().val, cfg, {}), InvalidArgument);

  Model blown = build_model(small_config(), 1);
  for (float& v : blown.hidden.bias.data()) v = 1e30f;
  for (float& v : blown.output.weight.data()) v = 1e30f;
  CHECK_THROWS_WITH_AS(fit(blown, toy().train, toy().val, cfg, {}), doctest::Contains("epoch 1 batch 1"),
                       NumericError);
}

TEST_CASE("history csv") {
  History h;
  h.epochs.push_back({1, 1e-4, 0.69, 0.5, 0.7, 0.5});
  h.epochs.push_back({2, 9.6e-5, 0.6, 0.75, 0.65, 0.625});
  const std::string csv = h.to_csv();
  CHECK(csv.rfind("epoch,lr,train_loss,train_acc,val_loss,val_acc\n", 0) == 0);
  const fs::path p = scratch("hist") / "history.csv";
  h.write_csv(p);
  const History back = History::read_csv(p);
  REQUIRE(back.epochs.size() == 2);
  CHECK(back.epochs[1].val_accuracy == doctest::Approx(0.625));
  CHECK(back.to_csv() == csv);
}

TEST_CASE("sample ids are stable manifest slice indices") {
  const auto& d = toy();
  std::vector<std::string> keys{slice_key("SUB_0002", 1), slice_key("SUB_0001", 0)};
  const SampleSet s = load_samples(d.manifest, keys, Granularity::kSlice);
  CHECK(s.sample_ids == std::vector<std::uint64_t>{3, 0});
  CHECK_THROWS_AS(load_samples(d.manifest, {"NOPE"}, Granularity::kSubject), InvalidArgument);
  CHECK_THROWS_AS(load_samples(d.manifest, {slice_key("SUB_0001", 9)}, Granularity::kSlice), InvalidArgument);
}
