#include "mvstr/commands.hpp"

#include <filesystem>
#include <fstream>
#include <map>
#include <ostream>

#include "mvstr/autograd.hpp"
#include "mvstr/checkpoint.hpp"
#include "mvstr/errors.hpp"
#include "mvstr/gradcheck_suite.hpp"
#include "mvstr/synth.hpp"

namespace fs = std::filesystem;

namespace mvstr {

namespace {

void check_image_size(const ModelConfig& model, const Scene& scene, const std::string& dir) {
  for (const auto& v : scene.views) {
    if (v.view.height() != model.image_h || v.view.width() != model.image_w) {
      throw ConfigError("model.image_h x model.image_w is " + std::to_string(model.image_h) + "x" +
                        std::to_string(model.image_w) + " but " + dir + " has " + std::to_string(v.view.height()) +
                        "x" + std::to_string(v.view.width()) + " images");
    }
  }
}

void make_dirs(const fs::path& root, std::initializer_list<const char*> subs) {
  for (const char* sub : subs) {
    std::error_code ec;
    fs::create_directories(root / sub, ec);
    if (ec) throw IoError("cannot create " + (root / sub).string() + ": " + ec.message());
  }
}

}  // namespace

void cmd_synth(const RunConfig& config, const std::string& out_dir) {
  validate(config);
  SceneSpec spec = config.synth;
  spec.seed = config.seed;
  export_dataset(render_scene(spec, config.precision), out_dir);
}

TrainLog cmd_train(const RunConfig& config, const std::vector<std::string>& data_dirs,
                   const std::string& checkpoint, const std::string& log_path) {
  validate(config);
  if (data_dirs.empty()) throw UsageError("train needs at least one dataset directory");
  std::vector<Scene> scenes;
  for (const auto& dir : data_dirs) {
    scenes.push_back(load_dataset(dir, config.precision));
    check_image_size(config.model, scenes.back(), dir);
  }
  const auto samples = make_samples(scenes, config.train.train_sources);

  ParamStore store(config.precision);
  const auto model = init_model(store, config.model, config.seed);

  std::ofstream log_file;
  if (!log_path.empty()) {
    log_file.open(log_path);
    if (!log_file) throw IoError("cannot write " + log_path);
  }
  auto log = train_toy(model, store, samples, config.resolved_train(), log_path.empty() ? nullptr : &log_file);
  save_checkpoint(store, checkpoint);
  return log;
}

void cmd_infer(const RunConfig& config, const std::string& data_dir, const std::string& checkpoint,
               const std::string& out_dir) {
  validate(config);
  const Scene scene = load_dataset(data_dir, config.precision);
  check_image_size(config.model, scene, data_dir);

  ParamStore store(config.precision);
  const auto model = init_model(store, config.model, config.seed);
  load_checkpoint(store, checkpoint);

  std::map<int, const CameraView*> by_id;
  for (const auto& v : scene.views) by_id[v.view.view_id] = &v.view;

  const fs::path root(out_dir);
  make_dirs(root, {"images", "cams", "depths", "confidence"});
  std::vector<Pairing> used;
  NoGradGuard no_grad;
  for (const auto& pr : scene.pairs) {
    if (static_cast<int>(pr.srcs.size()) < config.infer_sources) {
      throw ConfigError("view " + std::to_string(pr.ref) + " has " + std::to_string(pr.srcs.size()) +
                        " paired sources, infer.sources asks for " + std::to_string(config.infer_sources));
    }
    const CameraView& ref = *by_id.at(pr.ref);
    Pairing p{pr.ref, {pr.srcs.begin(), pr.srcs.begin() + config.infer_sources}};
    std::vector<CameraView> sources;
    for (int id : p.srcs) sources.push_back(*by_id.at(id));

    const auto stages = cascade_forward(ref, sources, model);
    const auto& finest = stages.back().reg.depth;
    const auto id = std::to_string(pr.ref);
    write_ppm((root / "images" / (id + ".ppm")).string(), ref.image);
    write_camera_file((root / "cams" / (id + ".txt")).string(),
                      CameraFile{ref.camera.K, ref.camera.R, ref.camera.t, ref.depth_min, ref.depth_max});
    write_pfm((root / "depths" / (id + ".pfm")).string(), finest.depth);
    write_pfm((root / "confidence" / (id + ".pfm")).string(), finest.confidence);
    used.push_back(std::move(p));
  }
  // Sources that are never a reference still need an image and a camera.
  for (const auto& p : used) {
    for (int id : p.srcs) {
      const auto cam = root / "cams" / (std::to_string(id) + ".txt");
      if (fs::exists(cam)) continue;
      const CameraView& v = *by_id.at(id);
      write_ppm((root / "images" / (std::to_string(id) + ".ppm")).string(), v.image);
      write_camera_file(cam.string(), CameraFile{v.camera.K, v.camera.R, v.camera.t, v.depth_min, v.depth_max});
    }
  }
  write_pairs((root / "pair.txt").string(), used);
}

std::size_t cmd_fuse(const RunConfig& config, const std::string& data_dir, const std::string& out_ply) {
  validate(config);
  const Scene scene = load_dataset(data_dir, Precision::verification);
  const fs::path conf_dir = fs::path(data_dir) / "confidence";
  std::vector<DepthView> views;
  for (const auto& v : scene.views) {
    if (!v.depth.defined()) continue;
    DepthView dv;
    dv.view_id = v.view.view_id;
    dv.camera = v.view.camera;
    dv.depth = v.depth;
    dv.image = v.view.image;
    const auto conf = conf_dir / (std::to_string(dv.view_id) + ".pfm");
    if (fs::exists(conf)) dv.confidence = read_pfm(conf.string(), Precision::verification);
    views.push_back(std::move(dv));
  }
  if (views.empty()) throw IoError(data_dir + " has no depth maps to fuse");
  // Only references with a depth map take part.
  std::vector<Pairing> pairs;
  for (const auto& pr : scene.pairs) {
    Pairing p{pr.ref, {}};
    bool has_ref = false;
    for (const auto& v : views) {
      if (v.view_id == pr.ref) has_ref = true;
    }
    if (!has_ref) continue;
    for (int s : pr.srcs) {
      for (const auto& v : views) {
        if (v.view_id == s) p.srcs.push_back(s);
      }
    }
    pairs.push_back(std::move(p));
  }
  const auto cloud = fuse_views(views, pairs, config.fusion);
  write_ply(out_ply, cloud);
  return cloud.size();
}

CloudMetrics cmd_eval(const RunConfig& config, const std::string& recon_ply, const std::string& gt_ply,
                      std::ostream& out) {
  validate(config);
  const auto recon = read_ply(recon_ply);
  const auto gt = read_ply(gt_ply);
  if (recon.size() == 0) throw UsageError(recon_ply + " has no points");
  if (gt.size() == 0) throw UsageError(gt_ply + " has no points");
  const double dist = config.eval_outlier_dist > 0 ? config.eval_outlier_dist : default_outlier_distance(gt);
  const auto m = accuracy_completeness(recon, gt, dist);
  out << "accuracy " << m.accuracy << "\n"
      << "completeness " << m.completeness << "\n"
      << "overall " << m.overall << "\n"
      << "outlier_dist " << dist << "\n";
  return m;
}

int cmd_gradcheck(const RunConfig& config, const std::string& filter, std::ostream& out) {
  validate(config);
  const auto result = run_gradcheck_suite(config.seed, &out, filter);
  if (result.reports.empty()) throw UsageError("no gradient check matches '" + filter + "'");
  return result.passed ? 0 : 2;
}

int run_guarded(const std::function<int()>& body, std::ostream& err) {
  try {
    return body();
  } catch (const NumericalError& e) {
    err << "numerical error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
  } catch (const UsageError& e) {
    err << "usage error: " << e.what() << "\n";
  } catch (const DimensionError& e) {
    err << "dimension error: " << e.what() << "\n";
  }
  return 1;
}

}  // namespace mvstr
