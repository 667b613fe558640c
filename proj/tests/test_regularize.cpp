#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <random>

#include "mvstr/autograd.hpp"
#include "mvstr/errors.hpp"
#include "mvstr/gradcheck.hpp"
#include "mvstr/ops.hpp"
#include "mvstr/regularize.hpp"
#include "test_util.hpp"

using namespace mvstr;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

constexpr auto kVerif = Precision::verification;

void zero_unit(Conv3dUnit& u) {
  u.w = Tensor::zeros(u.w.shape(), kVerif);
  u.b = Tensor::zeros(u.b.shape(), kVerif);
  u.ln_b = Tensor::zeros(u.ln_b.shape(), kVerif);
}

// Independent confidence: best sum of three consecutive probabilities.
double window_confidence(const std::vector<double>& p) {
  double best = 0;
  for (std::size_t s = 0; s + 3 <= p.size(); ++s) best = std::max(best, p[s] + p[s + 1] + p[s + 2]);
  return best;
}

}  // namespace

TEST_CASE("unet3d shapes and zero weights") {
  ParamStore store(kVerif);
  std::mt19937_64 rng(21);
  auto p = init_unet3d(store, 4, {}, rng, "u");
  CHECK(p.down.size() == 2);
  CHECK(p.down[1].w.shape() == Shape{32, 16, 3, 3, 3});
  CHECK(store.contains("u.head.w"));

  for (Shape s : {Shape{4, 8, 8, 8}, Shape{4, 5, 6, 7}, Shape{4, 1, 3, 9}}) {
    auto cost = random_tensor(s, rng, -1, 1, kVerif);
    auto logits = unet3d(cost, p);
    CHECK(logits.shape() == Shape{s[1], s[2], s[3]});
    for (double x : logits.to_vector()) CHECK(std::isfinite(x));
  }

  UNetParams z = p;
  zero_unit(z.stem);
  for (auto& u : z.down) zero_unit(u);
  for (auto& u : z.up) zero_unit(u);
  z.head_w = Tensor::zeros(z.head_w.shape(), kVerif);
  z.head_b = Tensor::zeros({1}, kVerif);
  auto zl = unet3d(random_tensor({4, 6, 5, 7}, rng, -1, 1, kVerif), z);
  for (double x : zl.to_vector()) CHECK(x == 0.0);

  CHECK_THROWS_AS(unet3d(Tensor::zeros({4, 8, 8}, kVerif), p), DimensionError);
  CHECK_THROWS_AS(init_unet3d(store, 4, {0, 2}, rng, "bad"), ConfigError);
}

TEST_CASE("unet3d gradcheck on an 8x8x8 volume") {
  ParamStore store(kVerif);
  std::mt19937_64 rng(22);
  auto p = init_unet3d(store, 1, {}, rng, "u");
  auto cost = random_tensor({1, 8, 8, 8}, rng, -1, 1, kVerif);
  auto weights = random_tensor({8, 8, 8}, rng, -1, 1, kVerif);
  GradcheckOptions opt;
  opt.max_samples_per_input = 40;
  auto report = gradcheck(
      [&](const std::vector<Tensor>& in) {
        UNetParams q = p;
        q.stem.w = in[1];
        q.down[1].w = in[2];
        q.up[0].ln_g = in[3];
        q.head_w = in[4];
        return ops::sum(ops::mul(unet3d(in[0], q), weights));
      },
      {cost, p.stem.w, p.down[1].w, p.up[0].ln_g, p.head_w}, opt, "unet3d");
  CHECK(report.max_rel_error < 1e-3);
}

TEST_CASE("soft_argmin closed forms") {
  const int D = 6, h = 2, w = 3;
  auto hyp = initial_hypotheses(1.0, 6.0, D, kVerif);
  const auto hv = hyp.values.to_vector();

  SUBCASE("one-hot logits") {
    std::vector<double> l(static_cast<std::size_t>(D * h * w), 0.0);
    for (int i = 0; i < h * w; ++i) l[static_cast<std::size_t>((i % D) * h * w + i)] = 60.0;
    auto r = soft_argmin(Tensor::from_vector({D, h, w}, std::span<const double>(l), kVerif), hyp);
    const auto d = r.depth.depth.to_vector();
    const auto c = r.depth.confidence.to_vector();
    for (int i = 0; i < h * w; ++i) {
      CHECK(d[static_cast<std::size_t>(i)] == doctest::Approx(hv[static_cast<std::size_t>(i % D)]).epsilon(1e-12));
      CHECK(c[static_cast<std::size_t>(i)] == doctest::Approx(1.0).epsilon(1e-12));
    }
  }

  SUBCASE("uniform logits with hypotheses 1..D") {
    std::vector<double> ints(D);
    for (int d = 0; d < D; ++d) ints[static_cast<std::size_t>(d)] = d + 1;
    DepthHypotheses lin{Tensor::from_vector({D}, std::span<const double>(ints), kVerif), 1};
    auto r = soft_argmin(Tensor::full({D, h, w}, -0.7, kVerif), lin);
    for (double x : r.depth.depth.to_vector()) CHECK(x == doctest::Approx(3.5).epsilon(1e-12));
    for (double x : r.depth.confidence.to_vector()) CHECK(x == doctest::Approx(0.5).epsilon(1e-12));
    for (double x : r.prob.to_vector()) CHECK(x == doctest::Approx(1.0 / D).epsilon(1e-12));
  }

  CHECK_THROWS_AS(soft_argmin(Tensor::zeros({D + 1, h, w}, kVerif), hyp), DimensionError);
  CHECK_THROWS_AS(soft_argmin(Tensor::zeros({D, h}, kVerif), hyp), DimensionError);
}

TEST_CASE("soft_argmin properties on random inputs") {
  std::mt19937_64 rng(23);
  const int D = 8, h = 5, w = 4;
  const auto plane = static_cast<std::size_t>(h * w);
  for (int trial = 0; trial < 20; ++trial) {
    auto logits = random_tensor({D, h, w}, rng, -8, 8, kVerif);
    // Per-pixel increasing hypotheses with random gaps.
    auto gaps = random_tensor({D, h, w}, rng, 0.01, 0.5, kVerif).to_vector();
    std::vector<double> hv(gaps.size());
    for (std::size_t i = 0; i < plane; ++i) {
      double acc = 1.0;
      for (std::size_t d = 0; d < D; ++d) {
        acc += gaps[d * plane + i];
        hv[d * plane + i] = acc;
      }
    }
    DepthHypotheses hyp{Tensor::from_vector({D, h, w}, std::span<const double>(hv), kVerif), 3};
    auto r = soft_argmin(logits, hyp);
    CHECK(r.depth.stage == 3);
    const auto d = r.depth.depth.to_vector();
    const auto c = r.depth.confidence.to_vector();
    const auto p = r.prob.to_vector();
    for (std::size_t i = 0; i < plane; ++i) {
      CHECK(d[i] >= hv[i]);
      CHECK(d[i] <= hv[(D - 1) * plane + i]);
      std::vector<double> pi(D);
      double total = 0;
      for (std::size_t k = 0; k < D; ++k) {
        pi[k] = p[k * plane + i];
        CHECK(pi[k] >= 0);
        total += pi[k];
      }
      CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
      CHECK(c[i] == doctest::Approx(window_confidence(pi)).epsilon(1e-12));
      CHECK(c[i] >= 0);
      CHECK(c[i] <= 1);
    }

    // Shift invariance.
    auto shifted = soft_argmin(ops::add_scalar(logits, 37.5), hyp);
    CHECK(max_abs_diff(shifted.depth.depth, r.depth.depth) < 1e-12);
    CHECK(max_abs_diff(shifted.depth.confidence, r.depth.confidence) < 1e-12);
  }
}

TEST_CASE("confidence carries no gradient, depth does") {
  std::mt19937_64 rng(24);
  auto logits = random_tensor({4, 2, 2}, rng, -1, 1, kVerif);
  logits.set_requires_grad(true);
  auto hyp = initial_hypotheses(1.0, 3.0, 4, kVerif);
  Tape tape;
  TapeScope scope(tape);
  auto r = soft_argmin(logits, hyp);
  CHECK(r.depth.depth.requires_grad());
  CHECK(!r.depth.confidence.requires_grad());
  auto g = tape.backward(ops::sum(r.depth.depth));
  double norm = 0;
  for (double x : g.get(logits).to_vector()) norm += std::abs(x);
  CHECK(norm > 0);
}

TEST_CASE("unet3d and soft_argmin composite gradcheck") {
  ParamStore store(kVerif);
  std::mt19937_64 rng(25);
  auto p = init_unet3d(store, 2, {4, 1}, rng, "u");
  auto cost = random_tensor({2, 4, 4, 4}, rng, -1, 1, kVerif);
  auto hyp = initial_hypotheses(1.0, 3.0, 4, kVerif);
  auto target = random_tensor({4, 4}, rng, 1.0, 3.0, kVerif);
  GradcheckOptions opt;
  opt.max_samples_per_input = 60;
  auto report = gradcheck(
      [&](const std::vector<Tensor>& in) {
        UNetParams q = p;
        q.down[0].w = in[1];
        auto r = soft_argmin(unet3d(in[0], q), hyp);
        auto e = ops::sub(r.depth.depth, target);
        return ops::sum(ops::mul(e, e));
      },
      {cost, p.down[0].w}, opt, "unet3d+soft_argmin");
  CHECK(report.max_rel_error < 1e-3);
}
