#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

#include "mvstr/autograd.hpp"
#include "mvstr/model.hpp"
#include "mvstr/params.hpp"
#include "mvstr/synth.hpp"

namespace mvstr {

// alpha[m] weights stage m; the last entry belongs to the finest scale.
struct LossWeights {
  std::array<double, 3> alpha{0.5, 1.0, 2.0};
};

// Keeps map[i*factor, j*factor]. map [H,W] with H, W divisible by factor.
Tensor downsample_nearest(const Tensor& map, int factor);

// Sum over stages of alpha_m times the masked mean smooth-L1 between the
// stage depth and the GT sampled at that stage's resolution. GT values
// outside the mask never reach the result. Throws UsageError when a
// stage's mask is empty.
Tensor multiscale_loss(const std::vector<DepthMap>& pred, const Tensor& gt, const Tensor& mask,
                       const LossWeights& weights = {});

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<Tensor> m;
  std::vector<Tensor> v;
  std::int64_t t = 0;
};

// One bias-corrected Adam update of every parameter in the store, in place.
// Parameters without a gradient are treated as having a zero gradient.
void adam_step(ParamStore& params, const Gradients& grads, AdamState& state, const AdamConfig& config,
               double lr);

struct TrainConfig {
  double lr = 1e-3;
  AdamConfig adam;
  int steps = 2000;
  // Steps after which the learning rate halves (0-based step index).
  std::vector<int> halve_at{1250, 1500, 1750};
  int train_sources = 2;
  std::uint64_t seed = 1;
  LossWeights loss;
};

// Halving points at 10/16, 12/16 and 14/16 of the run.
std::vector<int> scaled_schedule(int steps);

double learning_rate(const TrainConfig& config, int step);

struct TrainSample {
  CameraView ref;
  std::vector<CameraView> sources;
  Tensor gt;    // [H,W]
  Tensor mask;  // [H,W]
};

// One sample per view of every scene, with the first `sources` entries of
// the scene pairing as source views.
std::vector<TrainSample> make_samples(const std::vector<Scene>& scenes, int sources);

struct TrainLog {
  std::vector<double> loss;
  std::vector<double> lr;
};

// Adam on the multiscale loss, one sample per step in a seeded shuffled
// order. Writes "step <k> loss <float> lr <float>" per step to `log` when
// given. Throws NumericalError when the loss is not finite.
TrainLog train_toy(const ModelParams& model, ParamStore& store, const std::vector<TrainSample>& samples,
                   const TrainConfig& config, std::ostream* log = nullptr);

// Mean absolute depth error over mask pixels, per stage (GT nearest
// downsampled to each stage).
std::array<double, 3> stage_mae(const ModelParams& model, const TrainSample& sample);

}  // namespace mvstr
