#include <doctest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

#include "mvstr/commands.hpp"
#include "mvstr/errors.hpp"
#include "mvstr/io.hpp"
#include "mvstr/synth.hpp"

using namespace mvstr;
namespace fs = std::filesystem;

namespace {

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

fs::path temp_dir(const std::string& name) {
  auto p = fs::temp_directory_path() / ("mvstr_cli_" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

std::string all_files(const fs::path& root) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) files.push_back(e.path());
  }
  std::sort(files.begin(), files.end());
  std::string out;
  for (const auto& f : files) out += fs::relative(f, root).string() + "\n" + read_bytes(f);
  return out;
}

RunConfig small_config() {
  RunConfig c;
  c.model.hypotheses = {8, 8, 4};
  c.model.unet.base_channels = 4;
  c.model.rounds = 1;
  c.model.image_h = 32;
  c.model.image_w = 32;
  c.synth.width = 32;
  c.synth.height = 32;
  c.synth.focal = 32;
  c.train.steps = 4;
  c.train.halve_at = scaled_schedule(4);
  c.infer_sources = 2;
  return c;
}

int run_cli(const std::string& args) {
  const std::string cmd = std::string(MVSTR_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

double overall_from(const std::string& text) {
  std::istringstream in(text);
  std::string key;
  double v = NAN;
  while (in >> key) {
    if (key == "overall") in >> v;
  }
  return v;
}

}  // namespace

TEST_CASE("config text round trips through parse and serialize") {
  RunConfig c = small_config();
  c.seed = 77;
  c.precision = Precision::verification;
  c.fusion.rel_depth_threshold = 0.1 + 0.2;  // not exactly representable in short decimal
  c.synth.geometry = Geometry::sphere;
  c.model.interval_ratio = {1.0, 1.0 / 3.0, 0.2};
  const auto text = serialize_run_config(c);
  const auto back = parse_run_config(text);
  CHECK(back == c);
  CHECK(back.fusion.rel_depth_threshold == c.fusion.rel_depth_threshold);
  CHECK(back.model.interval_ratio[1] == c.model.interval_ratio[1]);
  CHECK(serialize_run_config(back) == text);
  CHECK(parse_run_config(serialize_run_config(RunConfig{})) == RunConfig{});
}

TEST_CASE("explicit halving points survive the round trip, auto follows the step count") {
  auto c = parse_run_config("train.halve_at = 3, 9\ntrain.steps = 12\n");
  CHECK_FALSE(c.halve_auto);
  CHECK(c.resolved_train().halve_at == std::vector<int>{3, 9});
  CHECK(parse_run_config(serialize_run_config(c)) == c);

  auto a = parse_run_config("train.halve_at = auto\ntrain.steps = 160\n");
  CHECK(a.resolved_train().halve_at == std::vector<int>{100, 120, 140});
  CHECK(get_config_value(a, "train.halve_at") == "auto");
}

TEST_CASE("unknown, duplicate and malformed keys are rejected with the line number") {
  CHECK_THROWS_AS(parse_run_config("model.heads = 4\nmodel.hedas = 4\n"), ConfigError);
  try {
    parse_run_config("seed = 3\n\nmodel.hedas = 4\n", "run.cfg");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("run.cfg:3") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_run_config("seed = 1\nseed = 2\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("model.heads four\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("model.heads = 4x\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("model.hypotheses = 8, 8\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("precision = half\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("train.lr = 0\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("train.beta2 = 1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("threads = -1\n"), ConfigError);
  CHECK_THROWS_AS(parse_run_config("fusion.conf_threshold = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(load_run_config("/nonexistent/run.cfg"), IoError);

  auto c = parse_run_config("# comment only\n  model.heads = 2   # trailing\n");
  CHECK(c.model.heads == 2);
}

TEST_CASE("every key is documented and every key appears in the serialized defaults") {
  const auto text = serialize_run_config(RunConfig{});
  std::set<std::string> keys;
  for (const auto& k : config_keys()) {
    CHECK_FALSE(k.doc.empty());
    CHECK(keys.insert(k.key).second);
    CHECK(text.find("# " + k.doc + "\n" + k.key + " = ") != std::string::npos);
  }
  CHECK(keys.size() >= 40);
  CHECK(keys.count("model.rounds"));
  CHECK(keys.count("fusion.rel_depth"));
  CHECK(keys.count("train.halve_at"));
}

TEST_CASE("synth: three cameras give three views on disk and identical bytes on repeat") {
  RunConfig c = small_config();
  c.synth.num_views = 3;
  c.synth.num_sources = 2;
  const auto a = temp_dir("synth_a");
  const auto b = temp_dir("synth_b");
  cmd_synth(c, a.string());
  cmd_synth(c, b.string());
  for (int id = 0; id < 3; ++id) {
    const auto s = std::to_string(id);
    CHECK(fs::exists(a / "images" / (s + ".ppm")));
    CHECK(fs::exists(a / "cams" / (s + ".txt")));
    CHECK(fs::exists(a / "depths" / (s + ".pfm")));
  }
  CHECK_FALSE(fs::exists(a / "images" / "3.ppm"));
  CHECK(all_files(a) == all_files(b));
  CHECK(read_pairs((a / "pair.txt").string()).size() == 3);

  c.synth.num_views = 1;
  CHECK_THROWS_AS(cmd_synth(c, temp_dir("synth_bad").string()), ConfigError);
}

TEST_CASE("eval of a cloud against itself prints overall 0") {
  const auto dir = temp_dir("eval");
  cmd_synth(small_config(), dir.string());
  const auto gt = (dir / "gt.ply").string();
  std::ostringstream out;
  const auto m = cmd_eval(small_config(), gt, gt, out);
  CHECK(m.overall == 0.0);
  CHECK(overall_from(out.str()) == 0.0);
}

TEST_CASE("fuse on GT depths reproduces the plane") {
  RunConfig c;
  const auto dir = temp_dir("fuse_gt");
  cmd_synth(c, dir.string());
  const auto ply = (dir / "fused.ply").string();
  const auto n = cmd_fuse(c, dir.string(), ply);
  const auto cloud = read_ply(ply);
  REQUIRE(cloud.size() == n);
  // Every view keeps most pixels.
  CHECK(n > static_cast<std::size_t>(0.9 * c.synth.num_views * c.synth.width * c.synth.height));
  const double a = c.synth.plane_tilt_deg * std::numbers::pi / 180.0;
  const Eigen::Vector3d normal(std::sin(a), 0, std::cos(a));
  double ss = 0;
  for (const auto& p : cloud.points) ss += std::pow(normal.dot(p), 2);
  // PLY stores float32, so the residual floor is float rounding.
  CHECK(std::sqrt(ss / n) < 1e-3);
  std::ostringstream out;
  CHECK(cmd_eval(c, ply, (dir / "gt.ply").string(), out).overall < 1e-2);
}

TEST_CASE("train, then infer: dims match the input and depths lie in the hypothesis range") {
  const RunConfig c = small_config();
  const auto data = temp_dir("pipe_data");
  const auto out = temp_dir("pipe_out");
  cmd_synth(c, data.string());
  const auto ckpt = (data / "m.ckpt").string();
  const auto log_path = (data / "train.log").string();
  const auto log = cmd_train(c, {data.string()}, ckpt, log_path);
  CHECK(log.loss.size() == 4);
  CHECK(read_bytes(log_path).find("step 4 loss") != std::string::npos);

  cmd_infer(c, data.string(), ckpt, out.string());
  const auto scene = load_dataset(data.string(), Precision::verification);
  for (const auto& v : scene.views) {
    const auto id = std::to_string(v.view.view_id);
    const auto depth = read_pfm((out / "depths" / (id + ".pfm")).string(), Precision::verification);
    const auto conf = read_pfm((out / "confidence" / (id + ".pfm")).string(), Precision::verification);
    CHECK(depth.shape() == Shape{c.synth.height, c.synth.width});
    CHECK(conf.shape() == depth.shape());
    const auto b = hypothesis_bounds(v.view);
    for (double d : depth.to_vector()) {
      CHECK(std::isfinite(d));
      CHECK(d >= b.lo * (1 - 1e-6));
      CHECK(d <= b.hi * (1 + 1e-6));
    }
    for (double q : conf.to_vector()) {
      CHECK(q >= 0);
      CHECK(q <= 1 + 1e-6);
    }
  }
  for (const auto& p : read_pairs((out / "pair.txt").string())) CHECK(p.srcs.size() == 2);

  // The inferred directory fuses without further preparation.
  CHECK_NOTHROW(cmd_fuse(c, out.string(), (out / "o.ply").string()));

  // Five views pair each reference with at most four sources.
  RunConfig greedy = c;
  greedy.infer_sources = 5;
  CHECK_THROWS_AS(cmd_infer(greedy, data.string(), ckpt, temp_dir("pipe_greedy").string()), ConfigError);
}

TEST_CASE("training twice with one seed writes the same checkpoint") {
  const RunConfig c = small_config();
  const auto data = temp_dir("repeat");
  cmd_synth(c, data.string());
  cmd_train(c, {data.string()}, (data / "a.ckpt").string());
  cmd_train(c, {data.string()}, (data / "b.ckpt").string());
  CHECK(read_bytes(data / "a.ckpt") == read_bytes(data / "b.ckpt"));
  RunConfig other = c;
  other.seed = 2;
  cmd_train(other, {data.string()}, (data / "c.ckpt").string());
  CHECK(read_bytes(data / "a.ckpt") != read_bytes(data / "c.ckpt"));
}

TEST_CASE("inference sources default to four") { CHECK(RunConfig{}.infer_sources == 4); }

TEST_CASE("guarded runner maps errors to exit codes") {
  std::ostringstream err;
  CHECK(run_guarded([] { return 0; }, err) == 0);
  CHECK(run_guarded([]() -> int { throw IoError("x"); }, err) == 1);
  CHECK(run_guarded([]() -> int { throw ConfigError("x"); }, err) == 1);
  CHECK(run_guarded([]() -> int { throw UsageError("x"); }, err) == 1);
  CHECK(run_guarded([]() -> int { throw DimensionError("x"); }, err) == 1);
  CHECK(run_guarded([]() -> int { throw NumericalError("x"); }, err) == 2);
  CHECK(err.str().find("numerical") != std::string::npos);
}

TEST_CASE("binary exit codes") {
  const auto dir = temp_dir("exit");
  const auto d = dir.string();
  CHECK(run_cli("synth " + d + "/data") == 0);
  CHECK(run_cli("train " + d + "/missing -o " + d + "/m.ckpt") == 1);
  CHECK(run_cli("frobnicate") == 1);
  CHECK(run_cli("") == 1);
  CHECK(run_cli("--set no.such.key=1 config") == 1);
  CHECK(run_cli("--precision half config") == 1);
  CHECK(run_cli("--config " + d + "/none.cfg config") == 1);
  CHECK(run_cli("eval " + d + "/data/gt.ply " + d + "/data/gt.ply") == 0);
  CHECK(run_cli("gradcheck --filter add") == 0);
  CHECK(run_cli("gradcheck --filter no_such_check") == 1);

  // Diverging training surfaces as a numerical failure.
  std::ofstream(dir / "wild.cfg") << "model.hypotheses = 8, 8, 4\nmodel.unet_base = 4\nmodel.rounds = 1\n"
                                     "train.steps = 30\ntrain.lr = 1e30\n";
  CHECK(run_cli("--config " + d + "/wild.cfg train " + d + "/data -o " + d + "/w.ckpt") == 2);
}

TEST_CASE("flags override the config file") {
  const auto dir = temp_dir("flags");
  std::ofstream(dir / "run.cfg") << "seed = 5\nthreads = 3\nmodel.heads = 2\n";
  const auto out = dir / "printed.cfg";
  const std::string cmd = std::string(MVSTR_CLI_PATH) + " --config " + (dir / "run.cfg").string() +
                          " --seed 9 --precision verify --set model.heads=1 config > " + out.string();
  REQUIRE(std::system(cmd.c_str()) == 0);
  const auto c = load_run_config(out.string());
  CHECK(c.seed == 9);
  CHECK(c.threads == 3);
  CHECK(c.precision == Precision::verification);
  CHECK(c.model.heads == 1);
}
