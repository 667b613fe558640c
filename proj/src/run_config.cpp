#include "mvstr/run_config.hpp"

#include <charconv>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>

#include "mvstr/errors.hpp"

namespace mvstr {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

template <class T>
T parse_number(const std::string& raw, const std::string& key) {
  const std::string s = trim(raw);
  T v{};
  const char* first = s.data();
  if (!s.empty() && s[0] == '+') ++first;
  const auto [end, ec] = std::from_chars(first, s.data() + s.size(), v);
  if (s.empty() || ec != std::errc() || end != s.data() + s.size()) {
    throw ConfigError("bad value '" + s + "' for " + key);
  }
  return v;
}

template <class T>
std::string format_number(T v) {
  char buf[64];
  const auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

template <class T>
std::vector<T> parse_list(const std::string& raw, const std::string& key) {
  std::vector<T> out;
  const std::string s = trim(raw);
  if (s.empty()) return out;
  std::stringstream in(s);
  std::string item;
  while (std::getline(in, item, ',')) out.push_back(parse_number<T>(item, key));
  if (s.back() == ',') throw ConfigError("bad value '" + s + "' for " + key);
  return out;
}

template <class T>
std::string format_list(const T& values) {
  std::string out;
  for (const auto& v : values) {
    if (!out.empty()) out += ", ";
    out += format_number(v);
  }
  return out;
}

template <class T, std::size_t N>
std::array<T, N> parse_array(const std::string& raw, const std::string& key) {
  const auto v = parse_list<T>(raw, key);
  if (v.size() != N) throw ConfigError(key + " needs " + std::to_string(N) + " values, got " + std::to_string(v.size()));
  std::array<T, N> out{};
  std::copy(v.begin(), v.end(), out.begin());
  return out;
}

struct Field {
  ConfigKey name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

// Accessor-based fields keep the table below to one entry per key.
template <class T, class Ref>
Field num(const char* key, const char* doc, Ref ref) {
  return {{key, doc},
          [ref](const RunConfig& c) { return format_number<T>(ref(const_cast<RunConfig&>(c))); },
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_number<T>(v, key); }};
}

template <class T, std::size_t N, class Ref>
Field arr(const char* key, const char* doc, Ref ref) {
  return {{key, doc},
          [ref](const RunConfig& c) { return format_list(ref(const_cast<RunConfig&>(c))); },
          [ref, key](RunConfig& c, const std::string& v) { ref(c) = parse_array<T, N>(v, key); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    std::vector<Field> f;
    f.push_back(num<std::uint64_t>("seed", "model init, training shuffle and synthetic scene seed",
                                   [](RunConfig& c) -> auto& { return c.seed; }));
    f.push_back({{"precision", "standard (32-bit) or verify (64-bit)"},
                 [](const RunConfig& c) { return std::string(to_string(c.precision)); },
                 [](RunConfig& c, const std::string& v) { c.precision = precision_from_string(trim(v)); }});
    f.push_back(num<int>("threads", "worker threads, 0 = available cores", [](RunConfig& c) -> auto& { return c.threads; }));

    f.push_back(arr<int, 3>("model.feature_channels", "feature CNN widths at H, H/2, H/4",
                            [](RunConfig& c) -> auto& { return c.model.features.channels; }));
    f.push_back(num<int>("model.heads", "attention heads", [](RunConfig& c) -> auto& { return c.model.heads; }));
    f.push_back(num<int>("model.rounds", "transformer rounds Z", [](RunConfig& c) -> auto& { return c.model.rounds; }));
    f.push_back(num<int>("model.groups", "cost volume correlation groups G",
                         [](RunConfig& c) -> auto& { return c.model.groups; }));
    f.push_back(arr<int, 3>("model.hypotheses", "depth hypotheses per stage",
                            [](RunConfig& c) -> auto& { return c.model.hypotheses; }));
    f.push_back(arr<double, 3>("model.interval_ratio", "stage intervals as fractions of (d_max - d_min) / (D1 - 1)",
                               [](RunConfig& c) -> auto& { return c.model.interval_ratio; }));
    f.push_back(num<int>("model.unet_base", "3D U-Net base width",
                         [](RunConfig& c) -> auto& { return c.model.unet.base_channels; }));
    f.push_back(num<int>("model.unet_levels", "3D U-Net levels", [](RunConfig& c) -> auto& { return c.model.unet.levels; }));
    f.push_back(num<int>("model.image_h", "image height the positional table is built for",
                         [](RunConfig& c) -> auto& { return c.model.image_h; }));
    f.push_back(num<int>("model.image_w", "image width the positional table is built for",
                         [](RunConfig& c) -> auto& { return c.model.image_w; }));

    f.push_back(num<double>("train.lr", "Adam learning rate", [](RunConfig& c) -> auto& { return c.train.lr; }));
    f.push_back(num<double>("train.beta1", "Adam beta1", [](RunConfig& c) -> auto& { return c.train.adam.beta1; }));
    f.push_back(num<double>("train.beta2", "Adam beta2", [](RunConfig& c) -> auto& { return c.train.adam.beta2; }));
    f.push_back(num<double>("train.eps", "Adam epsilon", [](RunConfig& c) -> auto& { return c.train.adam.eps; }));
    f.push_back(num<int>("train.steps", "optimizer steps", [](RunConfig& c) -> auto& { return c.train.steps; }));
    f.push_back({{"train.halve_at", "steps at which the learning rate halves, or auto (10/16, 12/16, 14/16 of the run)"},
                 [](const RunConfig& c) { return c.halve_auto ? std::string("auto") : format_list(c.train.halve_at); },
                 [](RunConfig& c, const std::string& v) {
                   if (trim(v) == "auto") {
                     c.halve_auto = true;
                     c.train.halve_at = scaled_schedule(c.train.steps);
                   } else {
                     c.halve_auto = false;
                     c.train.halve_at = parse_list<int>(v, "train.halve_at");
                   }
                 }});
    f.push_back(num<int>("train.sources", "source views per training sample",
                         [](RunConfig& c) -> auto& { return c.train.train_sources; }));
    f.push_back(arr<double, 3>("train.alpha", "loss weight per stage, coarse to fine",
                               [](RunConfig& c) -> auto& { return c.train.loss.alpha; }));

    f.push_back(num<int>("infer.sources", "source views per reference at inference",
                         [](RunConfig& c) -> auto& { return c.infer_sources; }));

    f.push_back(num<double>("fusion.conf_threshold", "photometric filter: minimum confidence",
                            [](RunConfig& c) -> auto& { return c.fusion.conf_threshold; }));
    f.push_back(num<double>("fusion.reproj_px", "geometric filter: round-trip pixel error bound",
                            [](RunConfig& c) -> auto& { return c.fusion.reproj_px_threshold; }));
    f.push_back(num<double>("fusion.rel_depth", "geometric filter: relative depth error bound",
                            [](RunConfig& c) -> auto& { return c.fusion.rel_depth_threshold; }));
    f.push_back(num<int>("fusion.min_views", "geometric filter: agreeing sources needed",
                         [](RunConfig& c) -> auto& { return c.fusion.min_consistent_views; }));

    f.push_back(num<double>("eval.outlier_dist", "distances above this are discarded, 0 = 5 % of the GT diagonal",
                            [](RunConfig& c) -> auto& { return c.eval_outlier_dist; }));

    f.push_back({{"synth.geometry", "plane, two_planes or sphere"},
                 [](const RunConfig& c) { return to_string(c.synth.geometry); },
                 [](RunConfig& c, const std::string& v) { c.synth.geometry = geometry_from_string(trim(v)); }});
    f.push_back(num<int>("synth.views", "cameras on the ring", [](RunConfig& c) -> auto& { return c.synth.num_views; }));
    f.push_back(num<int>("synth.width", "image width", [](RunConfig& c) -> auto& { return c.synth.width; }));
    f.push_back(num<int>("synth.height", "image height", [](RunConfig& c) -> auto& { return c.synth.height; }));
    f.push_back(num<double>("synth.focal", "focal length in pixels", [](RunConfig& c) -> auto& { return c.synth.focal; }));
    f.push_back(num<double>("synth.ring_radius", "camera distance from the origin",
                            [](RunConfig& c) -> auto& { return c.synth.ring_radius; }));
    f.push_back(num<double>("synth.ring_spacing_deg", "angle between neighbouring cameras",
                            [](RunConfig& c) -> auto& { return c.synth.ring_spacing_deg; }));
    f.push_back(num<double>("synth.elevation", "camera height as a fraction of the radius",
                            [](RunConfig& c) -> auto& { return c.synth.elevation; }));
    f.push_back(num<double>("synth.depth_min", "depth range start, 0 = from the rendered depths",
                            [](RunConfig& c) -> auto& { return c.synth.depth_min; }));
    f.push_back(num<double>("synth.depth_max", "depth range end, 0 = from the rendered depths",
                            [](RunConfig& c) -> auto& { return c.synth.depth_max; }));
    f.push_back(num<double>("synth.plane_tilt_deg", "plane normal rotation about y",
                            [](RunConfig& c) -> auto& { return c.synth.plane_tilt_deg; }));
    f.push_back(num<double>("synth.step_offset", "two_planes: how much nearer the x >= 0 half is",
                            [](RunConfig& c) -> auto& { return c.synth.step_offset; }));
    f.push_back(num<double>("synth.sphere_radius", "sphere radius",
                            [](RunConfig& c) -> auto& { return c.synth.sphere_radius; }));
    f.push_back(num<double>("synth.backdrop_gap", "sphere: backdrop distance behind the sphere",
                            [](RunConfig& c) -> auto& { return c.synth.backdrop_gap; }));
    f.push_back(num<double>("synth.texture_period", "world units per checker period",
                            [](RunConfig& c) -> auto& { return c.synth.texture_period; }));
    f.push_back(num<int>("synth.sources", "pairing entries per reference",
                         [](RunConfig& c) -> auto& { return c.synth.num_sources; }));
    return f;
  }();
  return table;
}

const Field& field(const std::string& key) {
  for (const auto& f : fields()) {
    if (f.name.key == key) return f;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

}  // namespace

TrainConfig RunConfig::resolved_train() const {
  TrainConfig t = train;
  t.seed = seed;
  if (halve_auto) t.halve_at = scaled_schedule(t.steps);
  return t;
}

const std::vector<ConfigKey>& config_keys() {
  static const std::vector<ConfigKey> keys = [] {
    std::vector<ConfigKey> k;
    for (const auto& f : fields()) k.push_back(f.name);
    return k;
  }();
  return keys;
}

void set_config_value(RunConfig& config, const std::string& key, const std::string& value) {
  field(key).set(config, value);
}

std::string get_config_value(const RunConfig& config, const std::string& key) { return field(key).get(config); }

RunConfig parse_run_config(const std::string& text, const std::string& origin) {
  RunConfig c;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int n = 0;
  while (std::getline(in, line)) {
    ++n;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.resize(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    const std::string where = origin + ":" + std::to_string(n) + ": ";
    if (eq == std::string::npos) throw ConfigError(where + "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError(where + "duplicate key '" + key + "'");
    try {
      set_config_value(c, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  // Auto halving follows the final step count, whatever the key order.
  if (c.halve_auto) c.train.halve_at = scaled_schedule(c.train.steps);
  validate(c);
  return c;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str(), path);
}

std::string serialize_run_config(const RunConfig& config, bool docs) {
  std::string out;
  for (const auto& f : fields()) {
    if (docs) out += "# " + f.name.doc + "\n";
    out += f.name.key + " = " + f.get(config) + "\n";
  }
  return out;
}

void validate(const RunConfig& c) {
  validate(c.model);
  validate(c.fusion);
  validate(c.synth);
  const auto& t = c.train;
  if (!(t.lr > 0)) throw ConfigError("train.lr must be positive");
  if (!(t.adam.beta1 >= 0 && t.adam.beta1 < 1) || !(t.adam.beta2 >= 0 && t.adam.beta2 < 1)) {
    throw ConfigError("Adam betas must lie in [0, 1)");
  }
  if (!(t.adam.eps > 0)) throw ConfigError("train.eps must be positive");
  if (t.steps < 1) throw ConfigError("train.steps must be at least 1");
  if (t.train_sources < 1) throw ConfigError("train.sources must be at least 1");
  for (double a : t.loss.alpha) {
    if (!(a >= 0)) throw ConfigError("train.alpha entries must be non-negative");
  }
  if (c.infer_sources < 1) throw ConfigError("infer.sources must be at least 1");
  if (c.threads < 0) throw ConfigError("threads must be non-negative");
  if (!(c.eval_outlier_dist >= 0)) throw ConfigError("eval.outlier_dist must be non-negative");
}

bool operator==(const RunConfig& a, const RunConfig& b) {
  return serialize_run_config(a, false) == serialize_run_config(b, false);
}

}  // namespace mvstr
