// Command-line front end: synth, reconstruct, fuse, evaluate, inspect,
// export-depth, export-ply, selftest.

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "pmvs/error.h"
#include "pmvs/evaluation.h"
#include "pmvs/fusion.h"
#include "pmvs/image_io.h"
#include "pmvs/maps.h"
#include "pmvs/pipeline.h"
#include "pmvs/synth.h"
#include "selftest.h"

namespace fs = std::filesystem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitData = 2;
constexpr int kExitInternal = 3;

int thread_count(int flag) {
  if (flag > 0) return flag;
  if (const char* env = std::getenv("PMVS_THREADS")) {
    const int n = std::atoi(env);
    if (n > 0) return n;
  }
  return 1;
}

std::vector<double> parse_thresholds(const std::string& text) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    std::size_t used = 0;
    const double v = std::stod(item, &used);
    if (used != item.size() || !(v > 0.0)) throw pmvs::ConfigError("bad threshold '" + item + "'");
    out.push_back(v);
  }
  if (out.empty()) throw pmvs::ConfigError("no thresholds given");
  return out;
}

void print_channel_stats(const pmvs::Grid<float>& g) {
  for (int c = 0; c < g.channels(); ++c) {
    double lo = INFINITY, hi = -INFINITY, sum = 0.0;
    std::size_t n = 0;
    for (int y = 0; y < g.height(); ++y) {
      for (int x = 0; x < g.width(); ++x) {
        const double v = g(x, y, c);
        lo = std::min(lo, v);
        hi = std::max(hi, v);
        sum += v;
        ++n;
      }
    }
    std::cout << "channel " << c << ": min " << lo << " max " << hi << " mean "
              << (n ? sum / static_cast<double>(n) : 0.0) << "\n";
  }
}

int cmd_inspect(const std::string& path) {
  const pmvs::RawMap raw = pmvs::load_raw_map(path);
  std::cout << "file: " << path << "\n"
            << "kind: " << pmvs::to_string(raw.kind) << "\n"
            << "size: " << raw.data.width() << "x" << raw.data.height() << "\n"
            << "channels: " << raw.data.channels() << "\n"
            << "crc32: " << std::hex << pmvs::file_crc32(path) << std::dec << "\n";
  if (raw.kind == pmvs::MapKind::kGeometry) {
    const auto map = pmvs::geometry_from_raw(raw);
    std::cout << "valid: " << map.valid_count() << " of "
              << static_cast<long>(map.width()) * map.height() << "\n";
  }
  print_channel_stats(raw.data);
  return kExitOk;
}

// Pyramid level of `map` relative to the full-resolution camera.
int level_of(const pmvs::GeometryMap& map, const pmvs::CameraView& camera) {
  for (int s = 0; s <= 8; ++s) {
    const auto c = camera.scaled(s);
    if (c.width() == map.width() && c.height() == map.height()) return s;
  }
  throw pmvs::ConfigError("map size does not match any level of the camera");
}

int cmd_export_ply(const std::string& map_path, const std::string& camera_path,
                   const std::string& out) {
  const auto map = pmvs::load_geometry_map(map_path);
  const auto full = pmvs::read_camera_file(camera_path);
  const auto camera = full.scaled(level_of(map, full));
  pmvs::FusedCloud cloud;
  for (int y = 0; y < map.height(); ++y) {
    for (int x = 0; x < map.width(); ++x) {
      if (!map.valid(x, y)) continue;
      const auto hyp = map.at(x, y);
      pmvs::FusedPoint p;
      p.position = pmvs::unproject(camera, pmvs::pixel_center(x, y), hyp).cast<float>();
      p.normal = (camera.R().transpose() * hyp.normal).cast<float>();
      p.support = 1;
      cloud.points.push_back(p);
    }
  }
  pmvs::write_ply(out, cloud);
  std::cout << "wrote " << cloud.size() << " points to " << out << "\n";
  return kExitOk;
}

std::vector<Eigen::Vector3d> load_gt_points(const std::string& gt) {
  fs::path path(gt);
  if (fs::is_directory(path)) {
    if (fs::exists(path / "gt" / "points.ply")) path = path / "gt" / "points.ply";
    else path = path / "points.ply";
  }
  return pmvs::positions(pmvs::read_ply(path.string()));
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"PatchMatch multi-view stereo"};
  app.require_subcommand(1);

  std::string scene_path, out_dir, map_path, camera_path, cloud_path, gt_path;
  std::string thresholds_text = "0.01,0.05";
  std::string kv_path, ply_path, recon_dir, config_path;
  bool resume = false, photometric_only = false;
  int stages = -1, threads = 0;

  auto* synth = app.add_subcommand("synth", "render a synthetic scene with ground truth");
  synth->add_option("scene", scene_path, "scene description")->required();
  synth->add_option("--out", out_dir, "output directory")->required();

  auto* recon = app.add_subcommand("reconstruct", "run the staged reconstruction");
  recon->add_option("config", scene_path, "reconstruction config")->required();
  recon->add_option("--out", out_dir, "output directory")->required();
  recon->add_flag("--resume", resume, "continue from the ledger in --out");
  recon->add_option("--stages", stages, "number of stages")->check(CLI::PositiveNumber);
  recon->add_option("--threads", threads, "worker threads (default $PMVS_THREADS or 1)");
  recon->add_flag("--photometric-only", photometric_only, "disable geometric consistency");

  auto* fuse = app.add_subcommand("fuse", "fuse the final depth maps of a reconstruction");
  fuse->add_option("config", scene_path, "reconstruction config")->required();
  fuse->add_option("--out", out_dir, "reconstruction directory")->required();
  fuse->add_option("--ply", ply_path, "output cloud (default OUT/fused.ply)");
  fuse->add_option("--threads", threads, "worker threads");

  auto* evaluate = app.add_subcommand("evaluate", "accuracy / completeness / F1 of a cloud");
  evaluate->add_option("cloud", cloud_path, "reconstructed PLY")->required();
  evaluate->add_option("--gt", gt_path, "ground-truth PLY or synth directory")->required();
  evaluate->add_option("--thresholds", thresholds_text, "comma separated distances");
  evaluate->add_option("--kv", kv_path, "also write a key=value report here");
  evaluate->add_option("--config", config_path, "config for the per-pixel reward");
  evaluate->add_option("--recon", recon_dir, "reconstruction directory for the reward");
  evaluate->add_option("--threads", threads, "worker threads");

  auto* inspect = app.add_subcommand("inspect", "print a map header and statistics");
  inspect->add_option("map", map_path, "PMVSMAP1 file")->required();

  auto* export_depth = app.add_subcommand("export-depth", "write the depth channel as PFM");
  export_depth->add_option("map", map_path, "geometry map")->required();
  export_depth->add_option("--out", out_dir, "output PFM file")->required();

  auto* export_ply = app.add_subcommand("export-ply", "unproject one geometry map to PLY");
  export_ply->add_option("map", map_path, "geometry map")->required();
  export_ply->add_option("--camera", camera_path, "full-resolution camera file")->required();
  export_ply->add_option("--out", out_dir, "output PLY file")->required();

  auto* selftest = app.add_subcommand("selftest", "run the built-in oracle checks");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (synth->parsed()) {
      const auto scene = pmvs::read_synth_scene(scene_path);
      const auto cameras = pmvs::write_synth_dataset(scene, out_dir);
      std::cout << "rendered " << cameras.size() << " views to " << out_dir << "\n";
      return kExitOk;
    }
    if (recon->parsed()) {
      const auto config = pmvs::read_scene_config(scene_path);
      pmvs::RunOptions options;
      options.out_dir = out_dir;
      options.resume = resume;
      options.stages = stages;
      options.threads = thread_count(threads);
      options.photometric_only = photometric_only;
      options.log = [](const std::string& m) { std::cerr << m << "\n"; };
      const auto result = pmvs::reconstruct(config, options);
      std::cout << "ran " << result.tasks_run << " tasks, skipped " << result.tasks_skipped
                << "; ledger " << pmvs::ledger_path(out_dir) << "\n";
      return kExitOk;
    }
    if (fuse->parsed()) {
      const auto config = pmvs::read_scene_config(scene_path);
      const auto cloud = pmvs::fuse_reconstruction(config, out_dir, thread_count(threads));
      const std::string out = ply_path.empty() ? (fs::path(out_dir) / "fused.ply").string() : ply_path;
      pmvs::write_ply(out, cloud);
      std::cout << "fused " << cloud.size() << " points into " << out << "\n";
      return kExitOk;
    }
    if (evaluate->parsed()) {
      const auto thresholds = parse_thresholds(thresholds_text);
      const auto cloud = pmvs::positions(pmvs::read_ply(cloud_path));
      const auto gt = load_gt_points(gt_path);
      auto report = pmvs::evaluate(cloud, gt, thresholds, thread_count(threads));
      if (!config_path.empty() && !recon_dir.empty()) {
        const auto config = pmvs::read_scene_config(config_path);
        const auto maps = pmvs::load_final_maps(config, recon_dir);
        const double sigma_d = pmvs::default_sigma_depth(config.depth_range.min, config.depth_range.max);
        std::vector<double> all;
        for (std::size_t v = 0; v < maps.size(); ++v) {
          const auto it = config.gt_maps.find(config.views[v].id);
          if (it == config.gt_maps.end()) continue;
          const auto full = pmvs::read_camera_file(config.views[v].camera);
          const auto gt_map = pmvs::ground_truth_at_level(pmvs::load_geometry_map(it->second), full,
                                                          level_of(maps[v], full));
          const auto field = pmvs::geometry_reward(maps[v], gt_map, sigma_d, pmvs::kDefaultSigmaNormal);
          for (int y = 0; y < field.reward.height(); ++y)
            for (int x = 0; x < field.reward.width(); ++x)
              if (field.mask(x, y)) all.push_back(field.reward(x, y));
        }
        report.has_reward = !all.empty();
        report.reward = pmvs::reward_stats(std::move(all));
      }
      std::cout << pmvs::format_report(report);
      if (!kv_path.empty()) {
        std::ofstream kv(kv_path);
        if (!kv) throw pmvs::FormatError("cannot write " + kv_path, 0);
        kv << pmvs::format_key_values(report);
      }
      return kExitOk;
    }
    if (inspect->parsed()) return cmd_inspect(map_path);
    if (export_depth->parsed()) {
      const auto map = pmvs::load_geometry_map(map_path);
      pmvs::write_pfm(out_dir, map.depth_grid());
      std::cout << "wrote " << out_dir << "\n";
      return kExitOk;
    }
    if (export_ply->parsed()) return cmd_export_ply(map_path, camera_path, out_dir);
    if (selftest->parsed()) return pmvs::tools::run_selftest(std::cout) ? kExitOk : kExitInternal;
  } catch (const pmvs::Error& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitData;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
  return kExitUsage;
}
