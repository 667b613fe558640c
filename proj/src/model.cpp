#include "mvstr/model.hpp"

#include "mvstr/errors.hpp"
#include "mvstr/ops.hpp"

namespace mvstr {

void validate(const ModelConfig& c) {
  for (int ch : c.features.channels) {
    if (ch <= 0 || ch % c.groups != 0) {
      throw ConfigError("feature channels must be positive multiples of groups (" + std::to_string(c.groups) +
                        ")");
    }
  }
  if (c.heads <= 0 || c.features.channels[2] % c.heads != 0) {
    throw ConfigError("quarter-scale channels must be divisible by heads");
  }
  if (c.rounds < 0) throw ConfigError("transformer rounds must be >= 0");
  if (c.hypotheses[0] < 2) throw ConfigError("stage 1 needs at least 2 hypotheses");
  for (int i = 0; i < 3; ++i) {
    if (c.hypotheses[i] < 1) throw ConfigError("hypothesis counts must be positive");
    if (!(c.interval_ratio[i] > 0)) throw ConfigError("interval ratios must be positive");
  }
  if (c.image_h <= 0 || c.image_w <= 0 || c.image_h % 4 != 0 || c.image_w % 4 != 0) {
    throw ConfigError("model image size must be positive and divisible by 4");
  }
}

ModelParams init_model(ParamStore& store, const ModelConfig& config, std::uint64_t seed) {
  validate(config);
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.config = config;
  const auto& ch = config.features.channels;
  p.features = init_feature_net(store, config.features, rng, "feat");
  TransformerConfig tc;
  tc.channels = ch[2];
  tc.heads = config.heads;
  tc.rounds = config.rounds;
  tc.pos_h = config.image_h / 4;
  tc.pos_w = config.image_w / 4;
  p.transformer = init_transformer(store, tc, rng, "tf");
  p.fuse2 = init_fuse(store, ch[2], ch[1], ch[1], rng, "fuse2");
  p.fuse3 = init_fuse(store, ch[1], ch[0], ch[0], rng, "fuse3");
  for (int s = 0; s < 3; ++s) {
    p.unet[static_cast<std::size_t>(s)] =
        init_unet3d(store, config.groups, config.unet, rng, "unet" + std::to_string(s + 1));
  }
  return p;
}

DepthBounds hypothesis_bounds(const CameraView& ref) {
  return {0.8 * ref.depth_min, 1.2 * ref.depth_max};
}

std::vector<StageResult> cascade_forward(const CameraView& ref, const std::vector<CameraView>& sources,
                                         const ModelParams& params, std::span<const DepthHypotheses> frozen) {
  if (sources.empty()) throw UsageError("cascade_forward needs at least one source view");
  if (!frozen.empty() && frozen.size() != 3) throw UsageError("frozen hypotheses must cover all three stages");
  validate_view(ref);
  const auto& cfg = params.config;
  const Precision prec = params.features.weight[0].precision();
  // Images already in the model precision stay on the tape.
  auto as_model = [prec](const Tensor& im) { return im.precision() == prec ? im : im.to(prec); };
  std::vector<Tensor> images{ops::unsqueeze(as_model(ref.image), 0)};
  std::vector<int> ids;
  for (const auto& s : sources) {
    validate_view(s);
    if (s.height() != ref.height() || s.width() != ref.width()) {
      throw DimensionError("source view size differs from the reference");
    }
    images.push_back(ops::unsqueeze(as_model(s.image), 0));
    ids.push_back(s.view_id);
  }
  const auto N = static_cast<std::int64_t>(sources.size());
  FeaturePyramid pyr = extract_features(ops::concat(images, 0), params.features);

  auto ref_part = [](const Tensor& t) { return ops::squeeze(ops::slice(t, 0, 0, 1), 0); };
  auto src_part = [N](const Tensor& t) { return ops::slice(t, 0, 1, N); };

  TransformerOutput tf = transformer_stack(ref_part(pyr.f4), src_part(pyr.f4), ids, params.transformer);
  Tensor feat = ops::concat({ops::unsqueeze(tf.ref, 0), tf.sources}, 0);

  const double base = (ref.depth_max - ref.depth_min) / (cfg.hypotheses[0] - 1);
  const DepthBounds bounds = hypothesis_bounds(ref);
  std::vector<StageResult> out;
  for (int s = 0; s < 3; ++s) {
    const double factor = 1.0 / static_cast<double>(1 << (2 - s));
    if (s == 1) feat = fuse_upsampled(feat, pyr.f2, params.fuse2);
    if (s == 2) feat = fuse_upsampled(feat, pyr.f1, params.fuse3);
    const PinholeCamera ref_cam = camera_at_scale(ref.camera, factor);
    std::vector<PinholeCamera> src_cams;
    for (const auto& v : sources) src_cams.push_back(camera_at_scale(v.camera, factor));

    StageResult r;
    if (s > 0 && !frozen.empty()) {
      r.hyp = frozen[static_cast<std::size_t>(s)];
    } else if (s == 0) {
      r.hyp = initial_hypotheses(ref.depth_min, ref.depth_max, cfg.hypotheses[0], prec);
    } else {
      Tensor prev;
      {
        NoGradGuard no_grad;
        prev = ops::upsample_bilinear(out.back().reg.depth.depth.detach(), 2);
      }
      r.hyp = refine_hypotheses(prev, cfg.hypotheses[static_cast<std::size_t>(s)],
                                base * cfg.interval_ratio[static_cast<std::size_t>(s)], bounds, s + 1);
    }
    r.cost = build_cost_volume(ref_part(feat), src_part(feat), ref_cam, src_cams, ids, r.hyp, cfg.groups);
    r.reg = soft_argmin(unet3d(r.cost.cost, params.unet[static_cast<std::size_t>(s)]), r.hyp);
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace mvstr
