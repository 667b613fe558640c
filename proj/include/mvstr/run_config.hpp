#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvstr/fusion.hpp"
#include "mvstr/model.hpp"
#include "mvstr/synth.hpp"
#include "mvstr/train.hpp"

namespace mvstr {

// Every setting of a run. Plain-text form: one "dotted.key = value" per
// line, '#' starts a comment, lists are comma separated. `seed` drives the
// model initialisation, the training shuffle and the synthetic scene.
struct RunConfig {
  std::uint64_t seed = 1;
  Precision precision = Precision::standard;
  int threads = 0;  // 0 = available cores

  ModelConfig model;
  TrainConfig train;
  bool halve_auto = true;  // halving points from scaled_schedule(train.steps)
  int infer_sources = 4;
  FusionConfig fusion;
  double eval_outlier_dist = 0;  // 0 = 5 % of the GT cloud diagonal
  SceneSpec synth;

  // Training settings with the run seed and the resolved halving points.
  TrainConfig resolved_train() const;
};

struct ConfigKey {
  std::string key;
  std::string doc;
};

// All keys in serialisation order, each with a one-line description.
const std::vector<ConfigKey>& config_keys();

// Throws ConfigError for an unknown key or a malformed value.
void set_config_value(RunConfig& config, const std::string& key, const std::string& value);
std::string get_config_value(const RunConfig& config, const std::string& key);

// Throws ConfigError naming the origin and line on any error, including
// duplicate keys. Missing keys keep their defaults. Validates the result.
RunConfig parse_run_config(const std::string& text, const std::string& origin = "<string>");
RunConfig load_run_config(const std::string& path);

// Every key with its current value; `docs` adds a comment line per key.
// Floating-point values use the shortest form that parses back exactly.
std::string serialize_run_config(const RunConfig& config, bool docs = true);

// Throws ConfigError when any module configuration is invalid.
void validate(const RunConfig& config);

bool operator==(const RunConfig& a, const RunConfig& b);

}  // namespace mvstr
