#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <limits>
#include <random>
#include <regex>
#include <sstream>

#include "mvstr/checkpoint.hpp"
#include "mvstr/errors.hpp"
#include "mvstr/gradcheck.hpp"
#include "mvstr/ops.hpp"
#include "mvstr/train.hpp"
#include "test_util.hpp"

using namespace mvstr;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

constexpr auto kVerif = Precision::verification;

std::vector<DepthMap> stage_maps(const std::vector<Tensor>& depths) {
  std::vector<DepthMap> out;
  for (std::size_t i = 0; i < depths.size(); ++i) out.push_back({depths[i], Tensor{}, static_cast<int>(i) + 1});
  return out;
}

// Nearest downsample by index arithmetic.
std::vector<double> pick(const std::vector<double>& v, std::int64_t W, std::int64_t factor, std::int64_t h,
                         std::int64_t w) {
  std::vector<double> out;
  for (std::int64_t y = 0; y < h; ++y) {
    for (std::int64_t x = 0; x < w; ++x) out.push_back(v[static_cast<std::size_t>(y * factor * W + x * factor)]);
  }
  return out;
}

double smooth_l1_ref(double d) { return std::abs(d) < 1 ? 0.5 * d * d : std::abs(d) - 0.5; }

ModelConfig small_config() {
  ModelConfig c;
  c.hypotheses = {8, 6, 4};
  c.unet.base_channels = 4;
  c.unet.levels = 1;
  c.image_h = 32;
  c.image_w = 32;
  return c;
}

std::vector<TrainSample> small_samples(Precision p) {
  SceneSpec spec;
  spec.width = 32;
  spec.height = 32;
  spec.focal = 32;
  spec.num_views = 3;
  spec.num_sources = 2;
  return make_samples({render_scene(spec, p)}, 2);
}

}  // namespace

TEST_CASE("nearest downsampling keeps every factor-th sample") {
  std::vector<double> v(8 * 12);
  for (std::size_t i = 0; i < v.size(); ++i) v[i] = static_cast<double>(i);
  auto m = Tensor::from_vector({8, 12}, std::span<const double>(v), kVerif);
  for (int f : {1, 2, 4}) {
    auto d = downsample_nearest(m, f);
    CHECK(d.shape() == Shape{8 / f, 12 / f});
    CHECK(d.to_vector() == pick(v, 12, f, 8 / f, 12 / f));
  }
  CHECK_THROWS_AS(downsample_nearest(m, 3), DimensionError);
}

TEST_CASE("multiscale loss closed forms") {
  std::mt19937_64 rng(31);
  auto gt = random_tensor({8, 8}, rng, 2, 5, kVerif);
  auto mask = Tensor::ones({8, 8}, kVerif);
  std::vector<Tensor> exact = {downsample_nearest(gt, 4), downsample_nearest(gt, 2), gt};
  CHECK(multiscale_loss(stage_maps(exact), gt, mask).item() == 0.0);

  std::vector<Tensor> off;
  for (const auto& e : exact) off.push_back(ops::add_scalar(e, 2.0));
  CHECK(multiscale_loss(stage_maps(off), gt, mask).item() == doctest::Approx(5.25).epsilon(1e-14));

  // Per-stage masked means with custom weights against a direct loop.
  auto mv = random_tensor({8, 8}, rng, 0, 1, kVerif).to_vector();
  for (auto& x : mv) x = x < 0.6 ? 1.0 : 0.0;
  mv[0] = 1.0;  // keeps the coarse masks non-empty
  auto mk = Tensor::from_vector({8, 8}, std::span<const double>(mv), kVerif);
  std::vector<Tensor> pred = {random_tensor({2, 2}, rng, 1, 6, kVerif), random_tensor({4, 4}, rng, 1, 6, kVerif),
                              random_tensor({8, 8}, rng, 1, 6, kVerif)};
  LossWeights lw;
  lw.alpha = {0.3, 0.7, 1.9};
  double want = 0;
  for (int s = 0; s < 3; ++s) {
    const std::int64_t f = 4 >> s;
    const auto g = pick(gt.to_vector(), 8, f, 8 / f, 8 / f);
    const auto m = pick(mv, 8, f, 8 / f, 8 / f);
    const auto p = pred[static_cast<std::size_t>(s)].to_vector();
    double acc = 0, n = 0;
    for (std::size_t i = 0; i < p.size(); ++i) {
      acc += m[i] * smooth_l1_ref(p[i] - g[i]);
      n += m[i];
    }
    want += lw.alpha[static_cast<std::size_t>(s)] * acc / n;
  }
  CHECK(multiscale_loss(stage_maps(pred), gt, mk, lw).item() == doctest::Approx(want).epsilon(1e-12));
}

TEST_CASE("multiscale loss ignores GT outside the mask") {
  std::mt19937_64 rng(32);
  auto gt = random_tensor({8, 8}, rng, 2, 5, kVerif);
  auto mv = random_tensor({8, 8}, rng, 0, 1, kVerif).to_vector();
  for (auto& x : mv) x = x < 0.5 ? 1.0 : 0.0;
  mv[0] = 1.0;
  auto mask = Tensor::from_vector({8, 8}, std::span<const double>(mv), kVerif);
  std::vector<Tensor> pred = {random_tensor({2, 2}, rng, 1, 6, kVerif), random_tensor({4, 4}, rng, 1, 6, kVerif),
                              random_tensor({8, 8}, rng, 1, 6, kVerif)};
  const double base = multiscale_loss(stage_maps(pred), gt, mask).item();
  for (double junk : {0.0, -1e6, std::numeric_limits<double>::quiet_NaN(), std::numeric_limits<double>::infinity()}) {
    auto g = gt.to_vector();
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (mv[i] == 0) g[i] = junk;
    }
    const double l = multiscale_loss(stage_maps(pred), Tensor::from_vector({8, 8}, std::span<const double>(g), kVerif),
                                     mask)
                         .item();
    CHECK(l == base);
  }
}

TEST_CASE("multiscale loss is non-negative and zero only at the GT") {
  std::mt19937_64 rng(33);
  for (int trial = 0; trial < 20; ++trial) {
    auto gt = random_tensor({8, 8}, rng, 1, 3, kVerif);
    std::vector<Tensor> pred = {random_tensor({2, 2}, rng, 0, 4, kVerif), random_tensor({4, 4}, rng, 0, 4, kVerif),
                                random_tensor({8, 8}, rng, 0, 4, kVerif)};
    CHECK(multiscale_loss(stage_maps(pred), gt, Tensor::ones({8, 8}, kVerif)).item() > 0.0);
  }
}

TEST_CASE("multiscale loss errors") {
  auto gt = Tensor::ones({8, 8}, kVerif);
  std::vector<Tensor> pred = {Tensor::ones({2, 2}, kVerif), Tensor::ones({4, 4}, kVerif), Tensor::ones({8, 8}, kVerif)};
  CHECK_THROWS_AS(multiscale_loss(stage_maps(pred), gt, Tensor::zeros({8, 8}, kVerif)), UsageError);
  // Non-empty at full resolution, empty once subsampled.
  auto mv = std::vector<double>(64, 0.0);
  mv[9] = 1.0;
  CHECK_THROWS_AS(
      multiscale_loss(stage_maps(pred), gt, Tensor::from_vector({8, 8}, std::span<const double>(mv), kVerif)),
      UsageError);
  CHECK_THROWS_AS(multiscale_loss(stage_maps({pred[0], pred[1]}), gt, gt), UsageError);
  CHECK_THROWS_AS(multiscale_loss(stage_maps({pred[0], pred[1], Tensor::ones({8, 6}, kVerif)}), gt, gt),
                  DimensionError);
}

TEST_CASE("multiscale loss gradcheck") {
  std::mt19937_64 rng(34);
  auto gt = random_tensor({8, 8}, rng, 2, 3, kVerif);
  auto mv = random_tensor({8, 8}, rng, 0, 1, kVerif).to_vector();
  for (auto& x : mv) x = x < 0.7 ? 1.0 : 0.0;
  mv[0] = 1.0;
  auto mask = Tensor::from_vector({8, 8}, std::span<const double>(mv), kVerif);
  // Offsets of 0.2..0.8 and 1.2..2 keep clear of the |d| = 1 kink.
  auto shift = [&](const Tensor& g) {
    auto v = g.to_vector();
    std::uniform_real_distribution<double> u(0.2, 0.8);
    std::bernoulli_distribution far(0.5);
    for (auto& x : v) x += (far(rng) ? 1.0 + u(rng) : u(rng)) * (far(rng) ? 1 : -1);
    return Tensor::from_vector(g.shape(), std::span<const double>(v), kVerif);
  };
  std::vector<Tensor> pred = {shift(downsample_nearest(gt, 4)), shift(downsample_nearest(gt, 2)), shift(gt)};
  GradcheckOptions opt;
  auto report = gradcheck([&](const std::vector<Tensor>& in) { return multiscale_loss(stage_maps(in), gt, mask); },
                          pred, opt, "multiscale_loss");
  CHECK(report.max_rel_error < 1e-4);
}

TEST_CASE("adam") {
  ParamStore store(kVerif);
  auto a = store.add("a", Tensor::from_vector({3}, {1.0, -2.0, 0.5}, kVerif));
  auto b = store.add("b", Tensor::from_vector({2}, {0.25, 4.0}, kVerif));
  AdamConfig cfg;

  SUBCASE("zero gradient leaves parameters unchanged") {
    Gradients none;
    AdamState st;
    adam_step(store, none, st, cfg, 1e-3);
    CHECK(a.to_vector() == std::vector<double>{1.0, -2.0, 0.5});
    CHECK(b.to_vector() == std::vector<double>{0.25, 4.0});
    CHECK(st.t == 1);
  }

  SUBCASE("first step moves every entry by lr against the gradient sign; matches a scalar recurrence") {
    std::vector<std::vector<double>> gseq = {{0.3, -5.0, 1e-3}, {-0.1, 2.0, 0.0}, {0.7, 0.7, -0.2}};
    std::vector<double> x = a.to_vector(), m(3, 0.0), v(3, 0.0);
    AdamState st;
    const double lr = 1e-3;
    for (std::size_t t = 0; t < gseq.size(); ++t) {
      Tape tape;
      Gradients grads;
      {
        TapeScope scope(tape);
        auto g = Tensor::from_vector({3}, std::span<const double>(gseq[t]), kVerif);
        grads = tape.backward(ops::sum(ops::mul(a, g)));
      }
      const auto before = a.to_vector();
      adam_step(store, grads, st, cfg, lr);
      const auto after = a.to_vector();
      for (std::size_t i = 0; i < 3; ++i) {
        const double g = gseq[t][i];
        m[i] = 0.9 * m[i] + 0.1 * g;
        v[i] = 0.999 * v[i] + 0.001 * g * g;
        const double mh = m[i] / (1 - std::pow(0.9, double(t + 1)));
        const double vh = v[i] / (1 - std::pow(0.999, double(t + 1)));
        x[i] -= lr * mh / (std::sqrt(vh) + 1e-8);
        CHECK(after[i] == doctest::Approx(x[i]).epsilon(1e-14));
        if (t == 0) CHECK(std::abs(before[i] - after[i]) == doctest::Approx(lr).epsilon(1e-4));
      }
    }
    // b never received a gradient.
    CHECK(b.to_vector() == std::vector<double>{0.25, 4.0});
  }
}

TEST_CASE("learning-rate schedule") {
  CHECK(scaled_schedule(16) == std::vector<int>{10, 12, 14});
  CHECK(scaled_schedule(2000) == std::vector<int>{1250, 1500, 1750});
  TrainConfig c;
  c.halve_at = scaled_schedule(16);
  CHECK(learning_rate(c, 0) == 1e-3);
  CHECK(learning_rate(c, 9) == 1e-3);
  CHECK(learning_rate(c, 10) == 5e-4);
  CHECK(learning_rate(c, 13) == 2.5e-4);
  CHECK(learning_rate(c, 15) == 1.25e-4);
}

TEST_CASE("training samples take two paired sources") {
  auto samples = small_samples(kVerif);
  REQUIRE(samples.size() == 3);
  for (const auto& s : samples) {
    CHECK(s.sources.size() == 2);
    CHECK(s.gt.shape() == Shape{32, 32});
    for (const auto& src : s.sources) CHECK(src.view_id != s.ref.view_id);
  }
  SceneSpec spec;
  spec.num_views = 2;
  CHECK_THROWS_AS(make_samples({render_scene(spec)}, 2), ConfigError);
}

TEST_CASE("every parameter receives a gradient") {
  ParamStore store(Precision::standard);
  auto cfg = small_config();
  auto model = init_model(store, cfg, 4);
  // Random images and cameras from a scene, random GT depths.
  auto samples = small_samples(Precision::standard);
  std::mt19937_64 rng(35);
  auto& s = samples[0];
  s.ref.image = random_tensor({3, 32, 32}, rng, 0, 1);
  for (auto& src : s.sources) src.image = random_tensor({3, 32, 32}, rng, 0, 1);
  s.gt = random_tensor({32, 32}, rng, s.ref.depth_min, s.ref.depth_max);
  Tape tape;
  Gradients grads;
  {
    TapeScope scope(tape);
    auto stages = cascade_forward(s.ref, s.sources, model);
    std::vector<DepthMap> pred;
    for (const auto& st : stages) pred.push_back(st.reg.depth);
    grads = tape.backward(multiscale_loss(pred, s.gt, s.mask));
  }
  int zero = 0;
  for (const auto& [name, t] : store.items()) {
    CHECK_MESSAGE(grads.has(t), name);
    double norm = 0;
    for (double x : grads.get(t).to_vector()) norm += std::abs(x);
    if (norm == 0) {
      ++zero;
      MESSAGE("zero gradient: " << name);
    }
  }
  CHECK(zero == 0);
  // Spot-check the groups by name.
  for (const char* n : {"feat.conv1.w", "feat.conv8.w", "tf.pos", "tf.round3.cs.ffn2.w", "fuse2.w", "fuse3.w", "unet1.stem.w", "unet3.head.w"}) {
    CHECK_MESSAGE(store.contains(n), n);
  }
}

TEST_CASE("training is deterministic and logs every step") {
  auto run = [](std::ostringstream& log) {
    ParamStore store(Precision::standard);
    auto model = init_model(store, small_config(), 7);
    TrainConfig tc;
    tc.steps = 4;
    tc.halve_at = scaled_schedule(4);
    tc.seed = 3;
    auto out = train_toy(model, store, small_samples(Precision::standard), tc, &log);
    std::vector<double> flat;
    for (const auto& [n, t] : store.items()) {
      auto v = t.to_vector();
      flat.insert(flat.end(), v.begin(), v.end());
    }
    return std::make_pair(out, flat);
  };
  std::ostringstream l1, l2;
  auto [o1, p1] = run(l1);
  auto [o2, p2] = run(l2);
  CHECK(p1 == p2);
  CHECK(o1.loss == o2.loss);
  CHECK(l1.str() == l2.str());
  // Halving points {2, 3, 3}.
  CHECK(o1.lr == std::vector<double>{1e-3, 1e-3, 5e-4, 1.25e-4});

  std::istringstream in(l1.str());
  std::string line;
  int k = 0;
  const std::regex re(R"(step (\d+) loss ([-+0-9.eE]+) lr ([-+0-9.eE]+))");
  while (std::getline(in, line)) {
    std::smatch m;
    REQUIRE(std::regex_match(line, m, re));
    CHECK(std::stoi(m[1]) == ++k);
    CHECK(std::stod(m[2]) == doctest::Approx(o1.loss[static_cast<std::size_t>(k - 1)]).epsilon(1e-5));
  }
  CHECK(k == 4);
}

TEST_CASE("divergence and checkpoints") {
  ParamStore store(Precision::standard);
  auto model = init_model(store, small_config(), 8);
  auto samples = small_samples(Precision::standard);
  auto g = samples[0].gt.to_vector();
  auto m = samples[0].mask.to_vector();
  g[100] = std::numeric_limits<double>::quiet_NaN();
  m[100] = 1;
  for (auto& s : samples) {
    s.gt = Tensor::from_vector({32, 32}, std::span<const double>(g), Precision::standard);
    s.mask = Tensor::from_vector({32, 32}, std::span<const double>(m), Precision::standard);
  }
  TrainConfig tc;
  tc.steps = 2;
  CHECK_THROWS_AS(train_toy(model, store, samples, tc), NumericalError);

  const auto path = (std::filesystem::temp_directory_path() / "mvstr_train.ckpt").string();
  save_checkpoint(store, path);
  ParamStore other(Precision::standard);
  init_model(other, small_config(), 99);
  load_checkpoint(other, path);
  for (std::size_t i = 0; i < store.size(); ++i) {
    CHECK(max_abs_diff(store.items()[i].second, other.items()[i].second) == 0.0);
  }
  std::filesystem::remove(path);
}
