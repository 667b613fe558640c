#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "mvstr/commands.hpp"

using namespace mvstr;

int main(int argc, char** argv) {
  CLI::App app{"Depth estimation, fusion and evaluation for calibrated multi-view images"};
  app.require_subcommand(1);

  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> precision;
  std::vector<std::string> overrides;
  app.add_option("--config", config_path, "plain-text config file with dotted keys");
  app.add_option("--seed", seed, "overrides the config seed");
  app.add_option("--threads", threads, "worker threads, 0 = available cores");
  app.add_option("--precision", precision, "standard or verify")->check(CLI::IsMember({"standard", "verify"}));
  app.add_option("--set", overrides, "key=value override, repeatable");

  std::string out_dir;
  auto* synth = app.add_subcommand("synth", "render a synthetic dataset");
  synth->add_option("out_dir", out_dir)->required();

  std::vector<std::string> data_dirs;
  std::string checkpoint;
  std::string log_path;
  auto* train = app.add_subcommand("train", "train on one or more datasets and write a checkpoint");
  train->add_option("data_dirs", data_dirs)->required();
  train->add_option("-o,--out", checkpoint, "checkpoint path")->required();
  train->add_option("--log", log_path, "per-step loss log");

  std::string data_dir;
  auto* infer = app.add_subcommand("infer", "predict depth and confidence maps");
  infer->add_option("data_dir", data_dir)->required();
  infer->add_option("checkpoint", checkpoint)->required();
  infer->add_option("out_dir", out_dir)->required();

  std::string out_ply;
  auto* fuse = app.add_subcommand("fuse", "filter and fuse depth maps into a PLY");
  fuse->add_option("depth_dir", data_dir)->required();
  fuse->add_option("out_ply", out_ply)->required();

  std::string recon;
  std::string gt;
  auto* eval = app.add_subcommand("eval", "accuracy and completeness of a reconstruction");
  eval->add_option("recon_ply", recon)->required();
  eval->add_option("gt_ply", gt)->required();

  std::string filter;
  auto* gradcheck = app.add_subcommand("gradcheck", "finite-difference checks of every differentiable op");
  gradcheck->add_option("--filter", filter, "only checks whose name contains this");

  auto* config = app.add_subcommand("config", "print the effective configuration with documentation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 1;
  }

  return run_guarded(
      [&] {
        RunConfig cfg = config_path.empty() ? RunConfig{} : load_run_config(config_path);
        for (const auto& kv : overrides) {
          const auto eq = kv.find('=');
          if (eq == std::string::npos) throw UsageError("--set expects key=value, got '" + kv + "'");
          set_config_value(cfg, kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (seed) cfg.seed = *seed;
        if (threads) cfg.threads = *threads;
        if (precision) cfg.precision = precision_from_string(*precision);
        if (cfg.halve_auto) cfg.train.halve_at = scaled_schedule(cfg.train.steps);
        validate(cfg);

        if (*synth) {
          cmd_synth(cfg, out_dir);
        } else if (*train) {
          const auto log = cmd_train(cfg, data_dirs, checkpoint, log_path);
          std::cout << "steps " << log.loss.size() << " final_loss " << log.loss.back() << "\n";
        } else if (*infer) {
          cmd_infer(cfg, data_dir, checkpoint, out_dir);
        } else if (*fuse) {
          std::cout << "points " << cmd_fuse(cfg, data_dir, out_ply) << "\n";
        } else if (*eval) {
          cmd_eval(cfg, recon, gt, std::cout);
        } else if (*gradcheck) {
          return cmd_gradcheck(cfg, filter, std::cout);
        } else if (*config) {
          std::cout << serialize_run_config(cfg);
        }
        return 0;
      },
      std::cerr);
}
