#include "mvstr/gradcheck_suite.hpp"

#include <cmath>
#include <cstdio>
#include <ostream>
#include <random>

#include "mvstr/cost_volume.hpp"
#include "mvstr/feature_net.hpp"
#include "mvstr/model.hpp"
#include "mvstr/ops.hpp"
#include "mvstr/regularize.hpp"
#include "mvstr/synth.hpp"
#include "mvstr/train.hpp"
#include "mvstr/transformer.hpp"

namespace mvstr {

namespace {

constexpr auto kVerif = Precision::verification;

using Inputs = std::vector<Tensor>;

class Draw {
 public:
  explicit Draw(std::uint64_t seed) : rng_(seed) {}

  Tensor uniform(const Shape& shape, double lo = -1, double hi = 1) {
    std::uniform_real_distribution<double> u(lo, hi);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = u(rng_);
    return Tensor::from_vector(shape, std::span<const double>(v), kVerif);
  }

  // Magnitudes in [0.1, 1] with random sign, clear of kinks at zero.
  Tensor away(const Shape& shape) {
    auto t = uniform(shape, 0.1, 1.0);
    auto v = t.to_vector();
    std::bernoulli_distribution flip(0.5);
    for (auto& x : v) x = flip(rng_) ? -x : x;
    return Tensor::from_vector(shape, std::span<const double>(v), kVerif);
  }

  // Pixel coordinates whose fractional part stays in [0.1, 0.9].
  Tensor coords(const Shape& shape, int lo, int hi) {
    std::uniform_int_distribution<int> whole(lo, hi);
    std::uniform_real_distribution<double> frac(0.1, 0.9);
    std::vector<double> v(static_cast<std::size_t>(shape_numel(shape)));
    for (auto& x : v) x = whole(rng_) + frac(rng_);
    return Tensor::from_vector(shape, std::span<const double>(v), kVerif);
  }

  std::uint64_t next() { return rng_(); }

 private:
  std::mt19937_64 rng_;
};

// Scalar probe: sum of y times fixed random weights.
Tensor probe(const Tensor& y, std::uint64_t seed) {
  Draw d(seed);
  return ops::sum(ops::mul(y, d.uniform(y.shape())));
}

GradcheckOptions opts(bool composite, std::uint64_t seed, int samples = 0) {
  GradcheckOptions o;
  o.tol = composite ? kCompositeTol : kPrimitiveTol;
  o.seed = seed;
  o.max_samples_per_input = samples;
  return o;
}

}  // namespace

std::vector<SuiteCheck> gradcheck_suite(std::uint64_t seed) {
  std::vector<SuiteCheck> checks;
  std::uint64_t counter = 0;
  // Primitive: f(inputs) is probed with random weights.
  auto primitive = [&](std::string name, std::function<Tensor(const Inputs&)> f,
                       std::function<Inputs(Draw&)> make) {
    const std::uint64_t s = seed * 1000 + ++counter;
    checks.push_back({name, false, [name, f, make, s]() {
                        Draw d(s);
                        Inputs in = make(d);
                        const std::uint64_t w = d.next();
                        return gradcheck([&](const Inputs& x) { return probe(f(x), w); }, in, opts(false, s), name);
                      }});
  };
  auto composite = [&](std::string name, std::function<GradcheckReport(std::uint64_t)> run) {
    const std::uint64_t s = seed * 1000 + ++counter;
    checks.push_back({name, true, [run, s]() { return run(s); }});
  };

  // ---- shape ----
  primitive("reshape", [](const Inputs& x) { return ops::reshape(x[0], {4, -1}); },
            [](Draw& d) { return Inputs{d.uniform({2, 3, 4})}; });
  primitive("permute", [](const Inputs& x) { return ops::permute(x[0], {2, 0, 1}); },
            [](Draw& d) { return Inputs{d.uniform({2, 3, 4})}; });
  primitive("transpose", [](const Inputs& x) { return ops::transpose(x[0], 0, 2); },
            [](Draw& d) { return Inputs{d.uniform({2, 3, 4})}; });
  primitive("slice", [](const Inputs& x) { return ops::slice(x[0], 1, 1, 2); },
            [](Draw& d) { return Inputs{d.uniform({2, 4, 3})}; });
  primitive("pad", [](const Inputs& x) { return ops::pad(x[0], {{1, 0}, {2, 1}}); },
            [](Draw& d) { return Inputs{d.uniform({2, 3, 4})}; });
  primitive("concat", [](const Inputs& x) { return ops::concat({x[0], x[1]}, 1); },
            [](Draw& d) { return Inputs{d.uniform({2, 3}), d.uniform({2, 2})}; });
  primitive("squeeze_unsqueeze", [](const Inputs& x) { return ops::unsqueeze(ops::squeeze(x[0], 1), 0); },
            [](Draw& d) { return Inputs{d.uniform({3, 1, 4})}; });

  // ---- elementwise ----
  auto pair = [](Draw& d) { return Inputs{d.uniform({2, 3}), d.uniform({1, 3}, 0.5, 2.0)}; };
  primitive("add", [](const Inputs& x) { return ops::add(x[0], x[1]); }, pair);
  primitive("sub", [](const Inputs& x) { return ops::sub(x[0], x[1]); }, pair);
  primitive("mul", [](const Inputs& x) { return ops::mul(x[0], x[1]); }, pair);
  primitive("div", [](const Inputs& x) { return ops::div(x[0], x[1]); }, pair);
  primitive("add_scalar", [](const Inputs& x) { return ops::add_scalar(x[0], 0.7); },
            [](Draw& d) { return Inputs{d.uniform({5})}; });
  primitive("mul_scalar", [](const Inputs& x) { return ops::mul_scalar(x[0], -1.3); },
            [](Draw& d) { return Inputs{d.uniform({5})}; });
  primitive("elu", [](const Inputs& x) { return ops::elu(x[0]); }, [](Draw& d) { return Inputs{d.away({3, 4})}; });
  primitive("elu_plus_one", [](const Inputs& x) { return ops::elu_plus_one(x[0]); },
            [](Draw& d) { return Inputs{d.away({3, 4})}; });
  primitive("relu", [](const Inputs& x) { return ops::relu(x[0]); }, [](Draw& d) { return Inputs{d.away({3, 4})}; });
  primitive("exp", [](const Inputs& x) { return ops::exp(x[0]); }, [](Draw& d) { return Inputs{d.uniform({3, 4})}; });
  primitive("smooth_l1",
            [](const Inputs& x) { return ops::smooth_l1(x[0], x[1]); },
            [](Draw& d) {
              // Differences of 0.1..0.9 or 1.1..1.9 in magnitude, clear of the kinks at 0 and 1.
              auto b = d.uniform({3, 4});
              auto off = d.away({3, 4}).to_vector();
              auto bump = d.uniform({3, 4}).to_vector();
              for (std::size_t i = 0; i < off.size(); ++i) off[i] += bump[i] > 0 ? (off[i] > 0 ? 1.0 : -1.0) : 0.0;
              auto a = ops::add(b, Tensor::from_vector({3, 4}, std::span<const double>(off), kVerif));
              return Inputs{a, b};
            });

  // ---- reductions ----
  primitive("sum", [](const Inputs& x) { return ops::sum(x[0]); }, [](Draw& d) { return Inputs{d.uniform({3, 4})}; });
  primitive("sum_dim", [](const Inputs& x) { return ops::sum(x[0], 1, true); },
            [](Draw& d) { return Inputs{d.uniform({2, 3, 4})}; });
  primitive("mean", [](const Inputs& x) { return ops::mean(x[0]); }, [](Draw& d) { return Inputs{d.uniform({3, 4})}; });
  primitive("mean_dim", [](const Inputs& x) { return ops::mean(x[0], 0); },
            [](Draw& d) { return Inputs{d.uniform({2, 3, 4})}; });
  primitive("sum_to", [](const Inputs& x) { return ops::sum_to(x[0], {1, 4}); },
            [](Draw& d) { return Inputs{d.uniform({3, 4})}; });

  // ---- nn ----
  primitive("matmul", [](const Inputs& x) { return ops::matmul(x[0], x[1]); },
            [](Draw& d) { return Inputs{d.uniform({2, 3, 4}), d.uniform({4, 2})}; });
  primitive("conv2d", [](const Inputs& x) { return ops::conv2d(x[0], x[1], x[2], {2, 1}, {1, 1}); },
            [](Draw& d) { return Inputs{d.uniform({2, 2, 5, 4}), d.uniform({3, 2, 3, 3}), d.uniform({3})}; });
  primitive("conv3d", [](const Inputs& x) { return ops::conv3d(x[0], x[1], x[2], {2, 2, 2}, {1, 1, 1}); },
            [](Draw& d) { return Inputs{d.uniform({1, 2, 3, 4, 4}), d.uniform({2, 2, 3, 3, 3}), d.uniform({2})}; });
  primitive("layer_norm", [](const Inputs& x) { return ops::layer_norm(x[0], x[1], x[2], 1e-5, 1); },
            [](Draw& d) { return Inputs{d.uniform({2, 4, 3}), d.uniform({4}, 0.5, 1.5), d.uniform({4})}; });
  primitive("softmax", [](const Inputs& x) { return ops::softmax(x[0], 1); },
            [](Draw& d) { return Inputs{d.uniform({3, 5, 2}, -2, 2)}; });
  primitive("grid_sample_bilinear", [](const Inputs& x) { return ops::grid_sample_bilinear(x[0], x[1]).output; },
            [](Draw& d) { return Inputs{d.uniform({1, 2, 4, 5}), d.coords({1, 3, 3, 2}, -1, 3)}; });
  primitive("upsample_bilinear", [](const Inputs& x) { return ops::upsample_bilinear(x[0], 2); },
            [](Draw& d) { return Inputs{d.uniform({2, 3, 3})}; });
  primitive("upsample_nearest", [](const Inputs& x) { return ops::upsample_nearest(x[0], 2, 3); },
            [](Draw& d) { return Inputs{d.uniform({1, 2, 2, 3})}; });
  primitive("linear_attention", [](const Inputs& x) { return linear_attention(x[0], x[1], x[2], 4); },
            [](Draw& d) { return Inputs{d.uniform({2, 6, 8}), d.uniform({2, 6, 8}), d.uniform({2, 6, 8})}; });
  primitive("groupwise_correlation",
            [](const Inputs& x) {
              auto valid = Tensor::from_vector({2, 3, 3}, {1, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1, 0, 1, 1, 1, 1, 0, 1}, kVerif);
              return groupwise_correlation(x[0], x[1], valid, 2);
            },
            [](Draw& d) { return Inputs{d.uniform({4, 3, 3}), d.uniform({4, 2, 3, 3})}; });
  primitive("warp_features",
            [](const Inputs& x) {
              Draw g(99);
              WarpGrid grid{g.coords({2, 3, 4, 2}, 0, 3), Tensor::ones({2, 3, 4}, kVerif)};
              return warp_features(x[0], grid);
            },
            [](Draw& d) { return Inputs{d.uniform({3, 5, 5})}; });
  primitive("soft_argmin",
            [](const Inputs& x) {
              auto r = soft_argmin(x[0], initial_hypotheses(1.0, 4.0, 5, kVerif));
              return r.depth.depth;
            },
            [](Draw& d) { return Inputs{d.uniform({5, 3, 2}, -2, 2)}; });

  // ---- composites ----
  auto block = [](ParamStore& store, int channels, std::uint64_t s) {
    std::mt19937_64 rng(s);
    TransformerConfig cfg;
    cfg.channels = channels;
    cfg.rounds = 1;
    cfg.pos_h = 4;
    cfg.pos_w = 4;
    return init_transformer(store, cfg, rng);
  };
  composite("layer_s", [block](std::uint64_t s) {
    ParamStore store(kVerif);
    auto p = block(store, 8, s);
    Draw d(s);
    const BlockParams& b = p.rounds[0].self;
    return gradcheck(
        [&](const Inputs& in) {
          BlockParams q = b;
          q.attn.q.w = in[1];
          q.ffn1.w = in[2];
          q.ln1_g = in[3];
          auto y = layer_s(in[0], q, 4);
          return ops::sum(ops::mul(y, y));
        },
        {d.uniform({9, 8}), b.attn.q.w, b.ffn1.w, b.ln1_g}, opts(true, s), "layer_s");
  });
  composite("layer_cr", [block](std::uint64_t s) {
    ParamStore store(kVerif);
    auto p = block(store, 8, s);
    Draw d(s);
    const BlockParams& b = p.rounds[0].cross_r;
    return gradcheck(
        [&](const Inputs& in) {
          BlockParams q = b;
          q.attn.v.w = in[3];
          q.ffn2.w = in[4];
          auto y = layer_cr(in[0], {in[1], in[2]}, {4, 2}, q, 4);
          return ops::sum(ops::mul(y, y));
        },
        {d.uniform({9, 8}), d.uniform({9, 8}), d.uniform({9, 8}), b.attn.v.w, b.ffn2.w}, opts(true, s), "layer_cr");
  });
  composite("layer_cs", [block](std::uint64_t s) {
    ParamStore store(kVerif);
    auto p = block(store, 8, s);
    Draw d(s);
    const BlockParams& b = p.rounds[0].cross_s;
    return gradcheck(
        [&](const Inputs& in) {
          BlockParams q = b;
          q.attn.k.w = in[2];
          q.ln2_g = in[3];
          auto y = layer_cs(in[0], in[1], q, 4);
          return ops::sum(ops::mul(y, y));
        },
        {d.uniform({2, 9, 8}), d.uniform({9, 8}), b.attn.k.w, b.ln2_g}, opts(true, s), "layer_cs");
  });
  composite("transformer_stack", [block](std::uint64_t s) {
    ParamStore store(kVerif);
    auto p = block(store, 8, s);
    Draw d(s);
    return gradcheck(
        [&](const Inputs& in) {
          auto q = p;
          q.pos = in[2];
          q.rounds[0].cross_r.attn.out.w = in[3];
          auto out = transformer_stack(in[0], in[1], {1, 2}, q);
          return ops::add(ops::sum(ops::mul(out.ref, out.ref)), ops::mean(out.sources));
        },
        {d.uniform({8, 4, 4}), d.uniform({2, 8, 4, 4}), p.pos, p.rounds[0].cross_r.attn.out.w}, opts(true, s, 24),
        "transformer_stack");
  });
  composite("feature_net", [](std::uint64_t s) {
    ParamStore store(kVerif);
    std::mt19937_64 rng(s);
    auto p = init_feature_net(store, {}, rng);
    Draw d(s);
    const std::uint64_t w = d.next();
    return gradcheck(
        [&](const Inputs& in) {
          auto q = p;
          q.weight[0] = in[1];
          q.ln_gamma[3] = in[2];
          q.weight[7] = in[3];
          auto f = extract_features(in[0], q);
          return ops::add(ops::add(probe(f.f1, w), probe(f.f2, w + 1)), probe(f.f4, w + 2));
        },
        {d.uniform({3, 8, 8}, 0, 1), p.weight[0], p.ln_gamma[3], p.weight[7]}, opts(true, s, 24), "feature_net");
  });
  composite("fuse_upsampled", [](std::uint64_t s) {
    ParamStore store(kVerif);
    std::mt19937_64 rng(s);
    auto p = init_fuse(store, 4, 3, 5, rng, "fuse");
    Draw d(s);
    const std::uint64_t w = d.next();
    return gradcheck(
        [&](const Inputs& in) { return probe(fuse_upsampled(in[0], in[1], FuseParams{in[2], in[3]}), w); },
        {d.uniform({4, 3, 3}), d.uniform({3, 6, 6}), p.weight, p.bias}, opts(true, s), "fuse_upsampled");
  });
  composite("build_cost_volume", [](std::uint64_t s) {
    Draw d(s);
    const int W = 6, H = 5;
    auto cam = [&](double deg) {
      PinholeCamera c;
      c.K << 7, 0, 2.5, 0, 7, 2, 0, 0, 1;
      c.width = W;
      c.height = H;
      const double a = deg * 3.14159265358979 / 180.0;
      look_at({3 * std::sin(a), 0.2, -3 * std::cos(a)}, Eigen::Vector3d::Zero(), {0, 1, 0}, c.R, c.t);
      return c;
    };
    const PinholeCamera ref = cam(0);
    const std::vector<PinholeCamera> srcs{cam(-8), cam(9)};
    const auto hyp = initial_hypotheses(2.0, 4.0, 3, kVerif);
    const std::uint64_t w = d.next();
    return gradcheck(
        [&](const Inputs& in) { return probe(build_cost_volume(in[0], in[1], ref, srcs, {0, 1}, hyp, 2).cost, w); },
        {d.uniform({4, H, W}), d.uniform({2, 4, H, W})}, opts(true, s), "build_cost_volume");
  });
  composite("unet3d+soft_argmin", [](std::uint64_t s) {
    ParamStore store(kVerif);
    std::mt19937_64 rng(s);
    auto p = init_unet3d(store, 2, {4, 1}, rng, "u");
    Draw d(s);
    const auto hyp = initial_hypotheses(1.0, 3.0, 4, kVerif);
    const Tensor target = d.uniform({4, 4}, 1.0, 3.0);
    return gradcheck(
        [&](const Inputs& in) {
          UNetParams q = p;
          q.stem.w = in[1];
          q.down[0].w = in[2];
          q.up[0].ln_g = in[3];
          q.head_w = in[4];
          auto e = ops::sub(soft_argmin(unet3d(in[0], q), hyp).depth.depth, target);
          return ops::sum(ops::mul(e, e));
        },
        {d.uniform({2, 4, 4, 4}), p.stem.w, p.down[0].w, p.up[0].ln_g, p.head_w}, opts(true, s, 40),
        "unet3d+soft_argmin");
  });
  composite("multiscale_loss", [](std::uint64_t s) {
    Draw d(s);
    const Tensor gt = d.uniform({8, 8}, 2, 3);
    auto mv = d.uniform({8, 8}, 0, 1).to_vector();
    for (auto& m : mv) m = m < 0.7 ? 1.0 : 0.0;
    mv[0] = 1.0;
    const Tensor mask = Tensor::from_vector({8, 8}, std::span<const double>(mv), kVerif);
    // Predictions sit 0.1..0.9 or 1.1..1.9 away from GT, clear of the smooth-L1 kink.
    auto shifted = [&](const Tensor& g) {
      auto a = d.away(g.shape()).to_vector();
      auto bump = d.uniform(g.shape()).to_vector();
      auto v = g.to_vector();
      for (std::size_t i = 0; i < v.size(); ++i) v[i] += a[i] + (bump[i] > 0 ? (a[i] > 0 ? 1.0 : -1.0) : 0.0);
      return Tensor::from_vector(g.shape(), std::span<const double>(v), kVerif);
    };
    Inputs pred{shifted(downsample_nearest(gt, 4)), shifted(downsample_nearest(gt, 2)), shifted(gt)};
    return gradcheck(
        [&](const Inputs& in) {
          std::vector<DepthMap> maps;
          for (int k = 0; k < 3; ++k) maps.push_back({in[static_cast<std::size_t>(k)], Tensor{}, k + 1});
          return multiscale_loss(maps, gt, mask);
        },
        pred, opts(true, s), "multiscale_loss");
  });
  composite("full_pipeline_2view_16x16", [](std::uint64_t s) {
    SceneSpec spec;
    spec.width = 16;
    spec.height = 16;
    spec.focal = 16;
    spec.num_views = 2;
    spec.num_sources = 1;
    spec.seed = s;
    const Scene scene = render_scene(spec, kVerif);
    ModelConfig cfg;
    cfg.image_h = 16;
    cfg.image_w = 16;
    ParamStore store(kVerif);
    const ModelParams params = init_model(store, cfg, s);
    const CameraView ref = scene.views[0].view;
    const std::vector<CameraView> srcs{scene.views[1].view};
    // Refinement windows follow a detached depth; freeze them at the
    // unperturbed placement so both sides see the same function.
    std::vector<DepthHypotheses> frozen;
    {
      NoGradGuard no_grad;
      for (auto& st : cascade_forward(ref, srcs, params)) frozen.push_back(st.hyp);
    }
    const auto& tf = params.transformer;
    Inputs in0{ref.image,
               params.features.weight[0],
               params.features.weight[7],
               tf.pos,
               tf.rounds.front().self.attn.q.w,
               tf.rounds.back().cross_s.ffn2.w,
               params.fuse2.weight,
               params.fuse3.weight,
               params.unet[0].stem.w,
               params.unet[1].down[0].w,
               params.unet[2].head_w};
    return gradcheck(
        [&](const Inputs& in) {
          ModelParams q = params;
          q.features.weight[0] = in[1];
          q.features.weight[7] = in[2];
          q.transformer.pos = in[3];
          q.transformer.rounds.front().self.attn.q.w = in[4];
          q.transformer.rounds.back().cross_s.ffn2.w = in[5];
          q.fuse2.weight = in[6];
          q.fuse3.weight = in[7];
          q.unet[0].stem.w = in[8];
          q.unet[1].down[0].w = in[9];
          q.unet[2].head_w = in[10];
          CameraView r = ref;
          r.image = in[0];
          std::vector<DepthMap> maps;
          for (auto& st : cascade_forward(r, srcs, q, frozen)) maps.push_back(st.reg.depth);
          return multiscale_loss(maps, scene.views[0].depth, scene.views[0].mask);
        },
        in0, opts(true, s, 12), "full_pipeline_2view_16x16");
  });
  return checks;
}

SuiteResult run_gradcheck_suite(std::uint64_t seed, std::ostream* out, const std::string& filter) {
  SuiteResult result;
  for (const auto& check : gradcheck_suite(seed)) {
    if (!filter.empty() && check.name.find(filter) == std::string::npos) continue;
    GradcheckReport r = check.run();
    r.name = check.name;
    result.passed = result.passed && r.passed;
    if (out) {
      char line[256];
      std::snprintf(line, sizeof line, "%s %s max_rel_err %.3e tol %.0e entries %zu\n", r.passed ? "PASS" : "FAIL",
                    r.name.c_str(), r.max_rel_error, r.tol, r.entries.size());
      *out << line << std::flush;
    }
    result.reports.push_back(std::move(r));
  }
  return result;
}

}  // namespace mvstr
