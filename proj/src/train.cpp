#include "mvstr/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>

#include "mvstr/errors.hpp"
#include "mvstr/ops.hpp"

namespace mvstr {

Tensor downsample_nearest(const Tensor& map, int factor) {
  if (map.rank() != 2) throw DimensionError("downsample_nearest expects [H,W], got " + shape_str(map.shape()));
  if (factor < 1 || map.dim(0) % factor != 0 || map.dim(1) % factor != 0) {
    throw DimensionError("cannot downsample " + shape_str(map.shape()) + " by " + std::to_string(factor));
  }
  if (factor == 1) return map;
  const auto H = map.dim(0);
  const auto W = map.dim(1);
  const auto h = H / factor;
  const auto w = W / factor;
  return dispatch(map.precision(), [&]<class T>() {
    auto src = map.data<T>();
    std::vector<T> out(static_cast<std::size_t>(h * w));
    for (std::int64_t y = 0; y < h; ++y) {
      for (std::int64_t x = 0; x < w; ++x) {
        out[static_cast<std::size_t>(y * w + x)] = src[static_cast<std::size_t>(y * factor * W + x * factor)];
      }
    }
    return Tensor::from_buffer<T>({h, w}, std::move(out));
  });
}

Tensor multiscale_loss(const std::vector<DepthMap>& pred, const Tensor& gt, const Tensor& mask,
                       const LossWeights& weights) {
  if (pred.size() != weights.alpha.size()) {
    throw UsageError("multiscale_loss expects " + std::to_string(weights.alpha.size()) + " stages, got " +
                     std::to_string(pred.size()));
  }
  if (gt.rank() != 2 || gt.shape() != mask.shape()) {
    throw DimensionError("multiscale_loss: gt " + shape_str(gt.shape()) + ", mask " + shape_str(mask.shape()));
  }
  Tensor total;
  for (std::size_t m = 0; m < pred.size(); ++m) {
    const Tensor& d = pred[m].depth;
    if (d.rank() != 2 || gt.dim(0) % d.dim(0) != 0 || gt.dim(0) / d.dim(0) != gt.dim(1) / d.dim(1)) {
      throw DimensionError("stage depth " + shape_str(d.shape()) + " does not divide GT " + shape_str(gt.shape()));
    }
    const int factor = static_cast<int>(gt.dim(0) / d.dim(0));
    const Tensor mk = downsample_nearest(mask.detach(), factor).to(d.precision());
    const auto mv = mk.to_vector();
    // GT outside the mask is replaced by 0 so that its values (even NaN) never matter.
    auto gv = downsample_nearest(gt.detach(), factor).to_vector();
    for (std::size_t i = 0; i < gv.size(); ++i) {
      if (mv[i] == 0.0) gv[i] = 0.0;
    }
    const Tensor g = Tensor::from_vector(mk.shape(), std::span<const double>(gv), d.precision());
    const double count = std::accumulate(mv.begin(), mv.end(), 0.0);
    if (count <= 0) throw UsageError("multiscale_loss: empty mask at stage " + std::to_string(m + 1));
    for (double v : mv) {
      if (v != 0.0 && v != 1.0) throw UsageError("multiscale_loss: mask must be 0/1");
    }
    Tensor term = ops::mul_scalar(ops::sum(ops::mul(ops::smooth_l1(d, g), mk)), weights.alpha[m] / count);
    total = total.defined() ? ops::add(total, term) : term;
  }
  return total;
}

void adam_step(ParamStore& params, const Gradients& grads, AdamState& state, const AdamConfig& config, double lr) {
  const auto& items = params.items();
  if (state.m.empty()) {
    for (const auto& item : items) {
      state.m.push_back(Tensor::zeros(item.second.shape(), item.second.precision()));
      state.v.push_back(Tensor::zeros(item.second.shape(), item.second.precision()));
    }
  }
  if (state.m.size() != items.size()) throw UsageError("Adam state does not match the parameter store");
  ++state.t;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < items.size(); ++i) {
    Tensor p = items[i].second;
    const Tensor g = grads.get(p).to(p.precision());
    dispatch(p.precision(), [&]<class T>() {
      auto pv = p.mutable_data<T>();
      auto mv = state.m[i].mutable_data<T>();
      auto vv = state.v[i].mutable_data<T>();
      auto gv = g.data<T>();
      for (std::size_t k = 0; k < pv.size(); ++k) {
        const double gk = gv[k];
        const double m = config.beta1 * mv[k] + (1 - config.beta1) * gk;
        const double v = config.beta2 * vv[k] + (1 - config.beta2) * gk * gk;
        mv[k] = static_cast<T>(m);
        vv[k] = static_cast<T>(v);
        pv[k] = static_cast<T>(pv[k] - lr * (m / c1) / (std::sqrt(v / c2) + config.eps));
      }
    });
  }
}

std::vector<int> scaled_schedule(int steps) {
  return {steps * 10 / 16, steps * 12 / 16, steps * 14 / 16};
}

double learning_rate(const TrainConfig& config, int step) {
  double lr = config.lr;
  for (int s : config.halve_at) {
    if (step >= s) lr *= 0.5;
  }
  return lr;
}

std::vector<TrainSample> make_samples(const std::vector<Scene>& scenes, int sources) {
  if (sources < 1) throw ConfigError("training needs at least one source view");
  std::vector<TrainSample> out;
  for (const auto& scene : scenes) {
    auto find = [&](int id) -> const RenderedView& {
      for (const auto& v : scene.views) {
        if (v.view.view_id == id) return v;
      }
      throw UsageError("pairing references unknown view " + std::to_string(id));
    };
    for (const auto& pair : scene.pairs) {
      if (static_cast<int>(pair.srcs.size()) < sources) {
        throw ConfigError("view " + std::to_string(pair.ref) + " has " + std::to_string(pair.srcs.size()) +
                          " paired sources, " + std::to_string(sources) + " requested");
      }
      const auto& ref = find(pair.ref);
      if (!ref.depth.defined()) throw UsageError("view " + std::to_string(pair.ref) + " has no GT depth");
      TrainSample s;
      s.ref = ref.view;
      for (int k = 0; k < sources; ++k) s.sources.push_back(find(pair.srcs[static_cast<std::size_t>(k)]).view);
      s.gt = ref.depth;
      s.mask = ref.mask;
      out.push_back(std::move(s));
    }
  }
  return out;
}

TrainLog train_toy(const ModelParams& model, ParamStore& store, const std::vector<TrainSample>& samples,
                   const TrainConfig& config, std::ostream* log) {
  if (samples.empty()) throw UsageError("train_toy needs at least one sample");
  if (!(config.lr > 0)) throw ConfigError("learning rate must be positive");
  if (config.steps < 1) throw ConfigError("training needs at least one step");
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(samples.size());
  std::iota(order.begin(), order.end(), 0);
  std::size_t cursor = order.size();
  AdamState state;
  TrainLog out;
  for (int step = 0; step < config.steps; ++step) {
    if (cursor == order.size()) {
      std::shuffle(order.begin(), order.end(), rng);
      cursor = 0;
    }
    const auto& s = samples[order[cursor++]];
    const double lr = learning_rate(config, step);
    Tape tape;
    TapeScope scope(tape);
    auto stages = cascade_forward(s.ref, s.sources, model);
    std::vector<DepthMap> pred;
    for (const auto& st : stages) pred.push_back(st.reg.depth);
    Tensor loss = multiscale_loss(pred, s.gt, s.mask, config.loss);
    const double value = loss.item();
    if (!std::isfinite(value)) {
      throw NumericalError("training diverged: loss " + std::to_string(value) + " at step " + std::to_string(step + 1));
    }
    Gradients grads = tape.backward(loss);
    adam_step(store, grads, state, config.adam, lr);
    out.loss.push_back(value);
    out.lr.push_back(lr);
    if (log) *log << "step " << step + 1 << " loss " << value << " lr " << lr << "\n" << std::flush;
  }
  return out;
}

std::array<double, 3> stage_mae(const ModelParams& model, const TrainSample& sample) {
  NoGradGuard no_grad;
  auto stages = cascade_forward(sample.ref, sample.sources, model);
  std::array<double, 3> mae{};
  for (std::size_t m = 0; m < 3; ++m) {
    const auto& d = stages[m].reg.depth.depth;
    const int factor = static_cast<int>(sample.gt.dim(0) / d.dim(0));
    const auto g = downsample_nearest(sample.gt, factor).to_vector();
    const auto mk = downsample_nearest(sample.mask, factor).to_vector();
    const auto dv = d.to_vector();
    double acc = 0, n = 0;
    for (std::size_t i = 0; i < dv.size(); ++i) {
      if (mk[i] == 0) continue;
      acc += std::abs(dv[i] - g[i]);
      n += 1;
    }
    mae[m] = n > 0 ? acc / n : 0.0;
  }
  return mae;
}

}  // namespace mvstr
