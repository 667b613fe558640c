#include <doctest.h>

#include <random>

#include "mvstr/autograd.hpp"
#include "mvstr/errors.hpp"
#include "mvstr/feature_net.hpp"
#include "mvstr/gradcheck.hpp"
#include "mvstr/ops.hpp"
#include "test_util.hpp"

using namespace mvstr;

TEST_CASE("feature pyramid shapes") {
  ParamStore store;
  std::mt19937_64 rng(1);
  auto params = init_feature_net(store, FeatureNetConfig{{8, 16, 32}}, rng);
  CHECK(store.size() == 8 * 2 + 5 * 2);
  auto img = testing::random_tensor({3, 64, 64}, rng, 0, 1);
  auto pyr = extract_features(img, params);
  CHECK(pyr.f1.shape() == Shape{8, 64, 64});
  CHECK(pyr.f2.shape() == Shape{16, 32, 32});
  CHECK(pyr.f4.shape() == Shape{32, 16, 16});

  auto batch = extract_features(ops::reshape(img, {1, 3, 64, 64}), params);
  CHECK(batch.f4.shape() == Shape{1, 32, 16, 16});
  CHECK(testing::max_abs_diff(batch.f4.to_vector(), pyr.f4.to_vector()) == 0.0);

  CHECK_THROWS_AS(extract_features(Tensor::zeros({3, 62, 64}), params), DimensionError);
  CHECK_THROWS_AS(extract_features(Tensor::zeros({1, 64, 64}), params), DimensionError);
}

TEST_CASE("zero image gives zero features") {
  ParamStore store;
  std::mt19937_64 rng(2);
  auto params = init_feature_net(store, FeatureNetConfig{{4, 8, 8}}, rng);
  auto pyr = extract_features(Tensor::zeros({3, 16, 16}), params);
  for (const auto& f : {pyr.f1, pyr.f2, pyr.f4}) {
    for (double v : f.to_vector()) CHECK(v == 0.0);
  }
}

TEST_CASE("views are processed independently and identically") {
  ParamStore store;
  std::mt19937_64 rng(3);
  auto params = init_feature_net(store, FeatureNetConfig{{4, 8, 8}}, rng);
  auto a = testing::random_tensor({1, 3, 16, 24}, rng, 0, 1);
  auto b = testing::random_tensor({1, 3, 16, 24}, rng, 0, 1);
  auto ab = extract_features(ops::concat({a, b}, 0), params);
  auto ba = extract_features(ops::concat({b, a}, 0), params);
  auto aa = extract_features(ops::concat({a, a}, 0), params);
  for (auto [x, y] : {std::pair{ab.f4, ba.f4}, std::pair{ab.f2, ba.f2}, std::pair{ab.f1, ba.f1}}) {
    CHECK(testing::max_abs_diff(ops::slice(x, 0, 0, 1), ops::slice(y, 0, 1, 1)) == 0.0);
    CHECK(testing::max_abs_diff(ops::slice(x, 0, 1, 1), ops::slice(y, 0, 0, 1)) == 0.0);
  }
  CHECK(testing::max_abs_diff(ops::slice(aa.f4, 0, 0, 1), ops::slice(aa.f4, 0, 1, 1)) == 0.0);
}

TEST_CASE("stride-aligned shift moves the quarter map by one pixel") {
  ParamStore store(Precision::verification);
  std::mt19937_64 rng(4);
  auto params = init_feature_net(store, FeatureNetConfig{{4, 8, 8}}, rng);
  auto img = testing::random_tensor({3, 64, 64}, rng, 0, 1, Precision::verification);
  // Roll right by 4 columns.
  auto shifted = ops::concat({ops::slice(img, 2, 60, 4), ops::slice(img, 2, 0, 60)}, 2);
  auto f = extract_features(img, params).f4;
  auto g = extract_features(shifted, params).f4;
  double worst = 0;
  for (std::int64_t c = 0; c < 8; ++c) {
    for (std::int64_t y = 0; y < 16; ++y) {
      for (std::int64_t x = 6; x <= 9; ++x) {
        worst = std::max(worst, std::abs(g.at({c, y, x + 1}) - f.at({c, y, x})));
      }
    }
  }
  CHECK(worst < 1e-12);
}

TEST_CASE("fuse_upsampled") {
  ParamStore store(Precision::verification);
  std::mt19937_64 rng(5);
  auto fuse = init_fuse(store, 4, 3, 3, rng, "fuse");
  CHECK(fuse.weight.shape() == Shape{3, 7, 1, 1});

  auto zero = fuse_upsampled(Tensor::zeros({4, 4, 5}, Precision::verification),
                             Tensor::zeros({3, 8, 10}, Precision::verification), fuse);
  CHECK(zero.shape() == Shape{3, 8, 10});
  for (double v : zero.to_vector()) CHECK(v == 0.0);

  // Weights that select the fine channels pass them through.
  std::vector<double> w(3 * 7, 0.0);
  for (int o = 0; o < 3; ++o) w[static_cast<std::size_t>(o * 7 + 4 + o)] = 1.0;
  FuseParams select{Tensor::from_vector({3, 7, 1, 1}, std::span<const double>(w), Precision::verification),
                    Tensor::zeros({3}, Precision::verification)};
  auto coarse = testing::random_tensor({4, 4, 5}, rng, -1, 1, Precision::verification);
  auto fine = testing::random_tensor({3, 8, 10}, rng, -1, 1, Precision::verification);
  CHECK(testing::max_abs_diff(fuse_upsampled(coarse, fine, select), fine) == 0.0);

  CHECK_THROWS_AS(fuse_upsampled(coarse, Tensor::zeros({3, 8, 9}, Precision::verification), fuse),
                  DimensionError);

  auto report = gradcheck(
      [&](const std::vector<Tensor>& in) {
        FuseParams p{in[2], in[3]};
        auto y = fuse_upsampled(in[0], in[1], p);
        return ops::sum(ops::mul(y, y));
      },
      {coarse, fine, fuse.weight, fuse.bias}, {}, "fuse_upsampled");
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("feature net gradcheck") {
  ParamStore store(Precision::verification);
  std::mt19937_64 rng(6);
  auto params = init_feature_net(store, FeatureNetConfig{{2, 3, 4}}, rng);
  auto img = testing::random_tensor({3, 8, 8}, rng, 0, 1, Precision::verification);
  std::vector<Tensor> inputs{img, params.weight[0], params.weight[2], params.weight[7],
                             params.ln_gamma[5]};
  GradcheckOptions opt;
  opt.max_samples_per_input = 24;
  auto report = gradcheck(
      [&](const std::vector<Tensor>& in) {
        auto p = params;
        p.weight[0] = in[1];
        p.weight[2] = in[2];
        p.weight[7] = in[3];
        p.ln_gamma[5] = in[4];
        auto pyr = extract_features(in[0], p);
        return ops::add(ops::add(ops::sum(ops::mul(pyr.f4, pyr.f4)), ops::mean(pyr.f2)),
                        ops::mean(pyr.f1));
      },
      inputs, opt, "feature_net");
  CHECK(report.max_rel_error < 1e-4);
}
