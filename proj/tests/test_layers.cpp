#include <doctest.h>

#include <cmath>

#include "sliceforge/error.hpp"
#include "sliceforge/layers.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace sliceforge;

namespace {

SepConvParams<float> identity_sepconv(std::size_t channels) {
  SepConvParams<float> p;
  p.depthwise = Tensor(Shape{channels, 1, 3, 3});
  for (std::size_t c = 0; c < channels; ++c) p.depthwise[c * 9 + 4] = 1.0f;
  p.pointwise = Tensor(Shape{channels, channels, 1, 1});
  for (std::size_t c = 0; c < channels; ++c) p.pointwise[c * channels + c] = 1.0f;
  p.bias = Tensor(Shape{channels});
  return p;
}

}  // namespace

TEST_CASE("sepconv2d examples") {
  RngStream rng{1};
  const Tensor x = oracle::random_tensor<float>(Shape{2, 3, 5, 4}, rng);
  CHECK(sepconv2d(x, identity_sepconv(3)).output == x);

  SepConvParams<float> zero = identity_sepconv(3);
  zero.depthwise = Tensor(zero.depthwise.shape());
  zero.pointwise = Tensor(zero.pointwise.shape());
  const Tensor zeros = sepconv2d(x, zero).output;
  for (float v : zeros.data()) CHECK(v == 0.0f);

  SepConvParams<float> p;
  p.depthwise = Tensor(Shape{1, 1, 3, 3}, 1.0f);
  p.pointwise = Tensor(Shape{1, 1, 1, 1}, 2.0f);
  p.bias = Tensor(Shape{1}, 1.0f);
  p.padding = Padding::kValid;
  const Tensor out = sepconv2d(Tensor(Shape{1, 1, 3, 3}, 1.0f), p).output;
  REQUIRE(out.shape() == Shape{1, 1, 1, 1});
  CHECK(out[0] == doctest::Approx(19.0));
}

TEST_CASE("sepconv2d shape algebra and errors") {
  CHECK(conv_output_size(7, 3, 2, Padding::kSame) == 4);
  CHECK(conv_output_size(8, 3, 2, Padding::kSame) == 4);
  CHECK(conv_output_size(7, 3, 1, Padding::kValid) == 5);
  SepConvParams<float> p = identity_sepconv(2);
  CHECK_THROWS_AS(sepconv2d(Tensor(Shape{1, 3, 4, 4}), p), InvalidArgument);
  p.depthwise = Tensor(Shape{2, 1, 2, 2});
  CHECK_THROWS_AS(sepconv2d(Tensor(Shape{1, 2, 4, 4}), p), InvalidArgument);
}

TEST_CASE("sepconv2d equals the direct convolution loop") {
  RngStream rng{2};
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const Shape s = oracle::random_shape4(rng, 2, 3, 7);
    const std::size_t k = rng.below(2) == 0 ? 1 : 3, m = 1 + rng.below(4);
    SepConvParams<float> p;
    p.stride = 1 + static_cast<int>(rng.below(2));
    p.padding = (rng.below(2) == 0 || s[2] < k || s[3] < k) ? Padding::kSame : Padding::kValid;
    p.depthwise = oracle::random_tensor<float>(Shape{s[1], 1, k, k}, rng);
    p.pointwise = oracle::random_tensor<float>(Shape{m, s[1], 1, 1}, rng);
    p.bias = oracle::random_tensor<float>(Shape{m}, rng);
    const Tensor x = oracle::random_tensor<float>(s, rng);
    const Tensor y = sepconv2d(x, p).output;

    auto as_double = [](const Tensor& t) { return std::vector<double>(t.data().begin(), t.data().end()); };
    std::size_t oh = 0, ow = 0;
    const auto ref = oracle::direct_sepconv(as_double(x), s[0], s[1], s[2], s[3], as_double(p.depthwise), k,
                                            as_double(p.pointwise), as_double(p.bias), m, p.stride,
                                            p.padding == Padding::kSame, oh, ow);
    REQUIRE(y.shape() == Shape{s[0], m, oh, ow});
    for (std::size_t i = 0; i < ref.size(); ++i) {
      worst = std::max(worst, std::abs(y[i] - ref[i]) / std::max(1.0, std::abs(ref[i])));
    }
  }
  CHECK(worst <= 1e-5);
}

TEST_CASE("batchnorm examples") {
  auto p = make_batchnorm<float>(1);
  const Tensor constant(Shape{2, 1, 2, 2}, 3.0f);
  const Tensor centred = batchnorm(constant, p, Mode::kTrain).output;
  for (float v : centred.data()) CHECK(v == doctest::Approx(0.0));

  const Tensor pm = tensor_create(Shape{2, 1, 1, 1}, {-1, 1});
  const Tensor out = batchnorm(pm, p, Mode::kTrain).output;
  CHECK(out[0] == doctest::Approx(-1.0 / std::sqrt(1.001)).epsilon(1e-6));
  CHECK(out[1] == doctest::Approx(1.0 / std::sqrt(1.001)).epsilon(1e-6));
  CHECK(out[1] == doctest::Approx(0.9995).epsilon(1e-4));

  // infer mode with running stats (0,1) is the identity up to epsilon
  const Tensor x = tensor_create(Shape{1, 1, 1, 3}, {-2, 0, 5});
  const Tensor id = batchnorm(x, p, Mode::kInfer).output;
  for (std::size_t i = 0; i < 3; ++i) CHECK(id[i] == doctest::Approx(x[i] / std::sqrt(1.001)));

  CHECK_THROWS_AS(batchnorm(Tensor(Shape{1, 1, 1, 1}), p, Mode::kTrain), InvalidArgument);
}

TEST_CASE("batchnorm train output is standardized per channel") {
  RngStream rng{3};
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor x = oracle::random_tensor<float>(Shape{2, 3, 4, 5}, rng, -3, 7);
    auto p = make_batchnorm<float>(3);
    const Tensor y = batchnorm(x, p, Mode::kTrain).output;
    for (std::size_t c = 0; c < 3; ++c) {
      double sum = 0.0, sq = 0.0, xs = 0.0, xsq = 0.0;
      for (std::size_t n = 0; n < 2; ++n)
        for (std::size_t i = 0; i < 20; ++i) {
          const double v = y[(n * 3 + c) * 20 + i], u = x[(n * 3 + c) * 20 + i];
          sum += v, sq += v * v, xs += u, xsq += u * u;
        }
      const double mean = sum / 40, var = sq / 40 - mean * mean;
      const double xvar = xsq / 40 - (xs / 40) * (xs / 40);
      CHECK(std::abs(mean) <= 1e-5);
      CHECK(std::abs(var - xvar / (xvar + 1e-3)) <= 1e-3);
    }
  }
}

TEST_CASE("running statistics: first update adopts the batch, then exponential averaging") {
  auto p = make_batchnorm<float>(1);
  const Tensor a = tensor_create(Shape{2, 1, 1, 1}, {1, 3});
  update_running_stats(p, batchnorm(a, p, Mode::kTrain).cache);
  CHECK(p.running_mean[0] == doctest::Approx(2.0));
  CHECK(p.running_var[0] == doctest::Approx(1.0));
  CHECK(p.updates == 1);

  const Tensor b = tensor_create(Shape{2, 1, 1, 1}, {5, 7});
  update_running_stats(p, batchnorm(b, p, Mode::kTrain).cache);
  // (0.99 * 0.01 * 2 + 0.01 * 6) / (1 - 0.99^2)
  CHECK(p.running_mean[0] == doctest::Approx((0.99 * 0.01 * 2 + 0.01 * 6) / (1 - 0.99 * 0.99)));

  const float before = p.running_mean[0];
  update_running_stats(p, batchnorm(b, p, Mode::kInfer).cache);
  CHECK(p.running_mean[0] == before);
}

TEST_CASE("relu examples") {
  const Tensor x = tensor_create(Shape{3}, {-2, 0, 3});
  const auto r = relu(x);
  CHECK(r.output.values() == std::vector<float>{0, 0, 3});
  CHECK(relu_backward(Tensor(Shape{3}, 1.0f), r.cache).values() == std::vector<float>{0, 0, 1});
  const auto neg = relu(tensor_create(Shape{2}, {-1, -5}));
  CHECK(neg.output.values() == std::vector<float>{0, 0});
  CHECK(relu_backward(Tensor(Shape{2}, 1.0f), neg.cache).values() == std::vector<float>{0, 0});
}

TEST_CASE("global average pool examples") {
  CHECK(global_avg_pool(Tensor(Shape{1, 1, 3, 2}, 7.0f)).output[0] == doctest::Approx(7.0));
  const auto r = global_avg_pool(tensor_create(Shape{1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(r.output.shape() == Shape{1, 1});
  CHECK(r.output[0] == doctest::Approx(2.5));
  const Tensor g = global_avg_pool_backward(Tensor(Shape{1, 1}, 8.0f), r.cache);
  for (float v : g.data()) CHECK(v == doctest::Approx(2.0));
}

TEST_CASE("dense examples") {
  DenseParams<float> id{tensor_create(Shape{2, 2}, {1, 0, 0, 1}), Tensor(Shape{2})};
  const Tensor x = tensor_create(Shape{1, 2}, {1, 2});
  CHECK(dense(x, id).output.values() == x.values());
  DenseParams<float> zero{Tensor(Shape{2, 2}), tensor_create(Shape{2}, {4, 5})};
  CHECK(dense(x, zero).output.values() == std::vector<float>{4, 5});
  DenseParams<float> p{tensor_create(Shape{1, 2}, {3, 4}), tensor_create(Shape{1}, {1})};
  CHECK(dense(x, p).output.values() == std::vector<float>{12});
  CHECK_THROWS_AS(dense(Tensor(Shape{1, 3}), p), InvalidArgument);
}

TEST_CASE("dropout contract") {
  RngStream rng{4};
  const Tensor x = oracle::random_tensor<float>(Shape{3, 7}, rng);
  const RngContext ctx{11, 2, {}};
  CHECK(dropout(x, 0.0, Mode::kTrain, ctx, 10).output == x);
  CHECK(dropout(x, 0.7, Mode::kInfer, ctx, 10).output == x);
  CHECK_THROWS_AS(dropout(x, 1.0, Mode::kTrain, ctx, 10), InvalidArgument);
  CHECK_THROWS_AS(dropout(x, -0.1, Mode::kTrain, ctx, 10), InvalidArgument);

  const Tensor ones(Shape{10, 10000}, 1.0f);
  const Tensor y = dropout(ones, 0.5, Mode::kTrain, ctx, 10).output;
  double mean = 0.0;
  std::size_t zeros = 0;
  for (float v : y.data()) {
    mean += v;
    zeros += v == 0.0f;
    CHECK((v == 0.0f || v == 2.0f));
  }
  mean /= static_cast<double>(y.size());
  CHECK(std::abs(mean - 1.0) <= 0.01);
  CHECK(std::abs(static_cast<double>(zeros) / y.size() - 0.5) <= 0.01);

  // same key, same mask; different sample index, different mask
  CHECK(dropout(ones, 0.5, Mode::kTrain, ctx, 10).output == y);
  const RngContext shifted{11, 2, std::vector<std::uint64_t>{5, 1, 2, 3, 4, 0, 6, 7, 8, 9}};
  CHECK_FALSE(dropout(ones, 0.5, Mode::kTrain, shifted, 10).output == y);
}

TEST_CASE("sigmoid examples") {
  CHECK(stable_sigmoid(0.0f) == 0.5f);
  const float tiny = stable_sigmoid(-100.0f);
  CHECK(std::isfinite(tiny));
  CHECK(tiny >= 0.0f);
  CHECK(tiny < 1e-30f);
  CHECK(stable_sigmoid(100.0f) == 1.0f);
  RngStream rng{5};
  for (int i = 0; i < 1000; ++i) {
    const double x = rng.uniform(-30, 30);
    CHECK(std::abs(stable_sigmoid(-x) - (1.0 - stable_sigmoid(x))) <= 1e-7);
  }
}

TEST_CASE("every layer gradient matches central finite differences") {
  for (const auto& g : oracle::layer_gradchecks(20261014, 30)) {
    INFO(g.name);
    CHECK(g.cases > 0);
    CHECK(g.worst <= 1e-4);
  }
}
