#include "pmvs/pipeline.h"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <set>
#include <sstream>

#include "pmvs/config_text.h"
#include "pmvs/error.h"

namespace pmvs {

namespace fs = std::filesystem;

namespace {

std::uint64_t splitmix(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::string resolve(const std::string& base, const std::string& path) {
  const fs::path p(path);
  return p.is_absolute() ? p.string() : (fs::path(base) / p).lexically_normal().string();
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open " + path);
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void log(const RunOptions& options, const std::string& message) {
  if (options.log) options.log(message);
}

std::string hex32(std::uint32_t v) {
  std::ostringstream out;
  out << std::hex << std::setw(8) << std::setfill('0') << v;
  return out.str();
}

std::uint32_t parse_hex32(const std::string& s) {
  try {
    std::size_t used = 0;
    const unsigned long v = std::stoul(s, &used, 16);
    if (used != s.size() || v > 0xffffffffUL) throw std::invalid_argument(s);
    return static_cast<std::uint32_t>(v);
  } catch (const std::exception&) {
    throw FormatError("ledger: bad checksum '" + s + "'", 0);
  }
}

GeometryMap to_scale(const GeometryMap& map, const CameraView& full, int from, int to) {
  if (from == to) return map;
  GeometryMap current = map;
  for (int s = from; s > to; --s) {
    current = upsample_nearest(current, full.scaled(s), full.scaled(s - 1));
  }
  return current;
}

bool record_valid(const TaskRecord& rec, const std::string& out_dir) {
  if (!rec.complete) return false;
  const std::string geo = (fs::path(out_dir) / rec.geometry_path).string();
  const std::string score = (fs::path(out_dir) / rec.score_path).string();
  if (!fs::exists(geo) || !fs::exists(score)) return false;
  return file_crc32(geo) == rec.geometry_crc && file_crc32(score) == rec.score_crc;
}

}  // namespace

GeometryMap ground_truth_at_level(const GeometryMap& gt, const CameraView& full, int level) {
  const CameraView cam = full.scaled(level);
  GeometryMap out(cam.width(), cam.height());
  const double f = std::ldexp(1.0, level);
  for (int y = 0; y < cam.height(); ++y) {
    for (int x = 0; x < cam.width(); ++x) {
      const Pixel p((x + 0.5) * f, (y + 0.5) * f);
      const int fx = static_cast<int>(p.x()), fy = static_cast<int>(p.y());
      if (!gt.in_bounds(fx, fy) || !gt.valid(fx, fy)) continue;
      const auto moved = propagate_hypothesis(pixel_center(fx, fy), p, gt.at(fx, fy), full);
      if (moved.ok()) out.set(x, y, moved.value);
    }
  }
  return out;
}

int SceneConfig::view_index(const std::string& id) const {
  for (std::size_t i = 0; i < views.size(); ++i) {
    if (views[i].id == id) return static_cast<int>(i);
  }
  return -1;
}

SceneConfig parse_scene_config(const std::string& text, const std::string& base_dir) {
  SceneConfig c;
  c.text = text;
  bool have_min = false, have_max = false;
  for (const auto& e : parse_key_values(text)) {
    const std::string what = "config line " + std::to_string(e.line) + " (" + e.key + ")";
    const auto w = split_words(e.value);
    if (w.empty()) throw ConfigError(what + ": empty value");
    auto num = [&] { return to_double(w[0], what); };
    auto integer = [&] { return static_cast<int>(to_integer(w[0], what)); };
    const std::string& k = e.key;
    if (k == "view") {
      if (w.size() != 3) throw ConfigError(what + ": expected ID IMAGE CAMERA");
      if (c.view_index(w[0]) >= 0) throw ConfigError(what + ": duplicate view " + w[0]);
      c.views.push_back({w[0], resolve(base_dir, w[1]), resolve(base_dir, w[2])});
    } else if (k == "sources") {
      c.sources[w[0]] = std::vector<std::string>(w.begin() + 1, w.end());
    } else if (k == "sources.auto") {
      c.auto_sources = integer();
    } else if (k == "depth_min") {
      c.depth_range.min = num();
      have_min = true;
    } else if (k == "depth_max") {
      c.depth_range.max = num();
      have_max = true;
    } else if (k == "stages") {
      c.stages = integer();
    } else if (k == "seed") {
      c.engine.seed = static_cast<std::uint64_t>(to_integer(w[0], what));
    } else if (k == "schedule") {
      if (w.size() != 3) throw ConfigError(what + ": expected three iteration counts");
      for (int i = 0; i < 3; ++i) {
        c.engine.schedule[3 - i] = static_cast<int>(to_integer(w[i], what));
        if (c.engine.schedule[3 - i] < 0) throw ConfigError(what + ": negative count");
      }
    } else if (k == "s_max") {
      c.engine.s_max = num();
    } else if (k == "g_max") {
      c.engine.g_max = num();
    } else if (k == "views.k") {
      c.engine.views_k = integer();
    } else if (k == "groups") {
      c.engine.groups = integer();
    } else if (k == "sampling.enabled") {
      c.engine.adaptive_sampling = to_bool(w[0], what);
    } else if (k == "sampling.m") {
      c.engine.sample_count = integer();
    } else if (k == "perturb.depth") {
      c.engine.depth_perturbation = num();
    } else if (k == "perturb.normal_deg") {
      c.engine.normal_perturbation_deg = num();
    } else if (k == "perturb.decay") {
      c.engine.perturbation_decay = num();
    } else if (k == "random_candidate") {
      c.engine.random_candidate = to_bool(w[0], what);
    } else if (k == "max_candidates") {
      c.engine.max_candidates = integer();
    } else if (k == "weights.provider") {
      if (w[0] != "bilateral" && w[0] != "gt" && w[0] != "file") {
        throw ConfigError(what + ": provider must be bilateral, gt or file");
      }
      c.weight_provider = w[0];
    } else if (k == "weights.map") {
      if (w.size() != 2) throw ConfigError(what + ": expected ID PATH");
      c.weight_maps[w[0]] = resolve(base_dir, w[1]);
    } else if (k == "weights.sigma_color") {
      c.sigma_color = num();
    } else if (k == "weights.sigma_distance") {
      c.sigma_distance = num();
    } else if (k == "weights.tau") {
      c.coplanar_tau = num();
    } else if (k == "gt") {
      if (w.size() != 2) throw ConfigError(what + ": expected ID PATH");
      c.gt_maps[w[0]] = resolve(base_dir, w[1]);
    } else if (k == "fusion.min_consistent") {
      c.fusion.min_consistent = integer();
    } else if (k == "fusion.depth") {
      c.fusion.relative_depth = num();
    } else if (k == "fusion.reprojection") {
      c.fusion.reprojection_px = num();
    } else if (k == "fusion.normal_deg") {
      c.fusion.normal_deg = num();
    } else {
      throw ConfigError(what + ": unknown key");
    }
  }
  if (c.views.empty()) throw ConfigError("config declares no views");
  if (!have_min || !have_max) throw ConfigError("config needs depth_min and depth_max");
  if (!(c.depth_range.min > 0.0) || !(c.depth_range.min < c.depth_range.max)) {
    throw ConfigError("depth range must satisfy 0 < depth_min < depth_max");
  }
  if (c.stages < 1) throw ConfigError("stages must be at least 1");
  if (c.engine.views_k < 1) throw ConfigError("views.k must be positive");
  if (c.engine.sample_count < 1 || c.engine.sample_count > 8) {
    throw ConfigError("sampling.m must be between 1 and 8");
  }
  if (c.engine.max_candidates < 1) throw ConfigError("max_candidates must be positive");
  if (c.fusion.min_consistent < 1) throw ConfigError("fusion.min_consistent must be positive");
  return c;
}

SceneConfig read_scene_config(const std::string& path) {
  return parse_scene_config(read_text_file(path), fs::path(path).parent_path().string().empty()
                                                      ? "."
                                                      : fs::path(path).parent_path().string());
}

std::vector<std::vector<int>> resolve_sources(const SceneConfig& config,
                                              const std::vector<CameraView>& cameras) {
  const int n = static_cast<int>(config.views.size());
  std::vector<std::vector<int>> out(n);
  for (const auto& [id, list] : config.sources) {
    const int v = config.view_index(id);
    if (v < 0) throw PlanError("sources given for unknown view " + id);
    for (const auto& s : list) {
      const int j = config.view_index(s);
      if (j < 0) throw PlanError("view " + id + " lists unknown source " + s);
      if (j == v) throw PlanError("view " + id + " lists itself as a source");
      if (std::find(out[v].begin(), out[v].end(), j) != out[v].end()) {
        throw PlanError("view " + id + " lists source " + s + " twice");
      }
      out[v].push_back(j);
    }
  }
  for (int v = 0; v < n; ++v) {
    if (config.sources.count(config.views[v].id)) continue;
    if (config.auto_sources > 0 && static_cast<int>(cameras.size()) == n) {
      // Frustum overlap: fraction of reference rays, sampled at three depths,
      // that land inside the other view.
      std::vector<std::pair<int, int>> scored;
      const CameraView& ref = cameras[v];
      for (int j = 0; j < n; ++j) {
        if (j == v || (cameras[j].center() - ref.center()).norm() < 1e-12) continue;
        int hits = 0;
        for (int gy = 0; gy < 12; ++gy) {
          for (int gx = 0; gx < 16; ++gx) {
            const Pixel p((gx + 0.5) * ref.width() / 16.0, (gy + 0.5) * ref.height() / 12.0);
            for (double t : {0.0, 0.5, 1.0}) {
              const double depth = config.depth_range.min + t * (config.depth_range.max - config.depth_range.min);
              const auto q = cameras[j].project(ref.to_world(depth * ref.ray(p)));
              if (q && cameras[j].contains(*q)) ++hits;
            }
          }
        }
        if (hits > 0) scored.emplace_back(-hits, j);
      }
      std::sort(scored.begin(), scored.end());
      for (int i = 0; i < std::min<int>(config.auto_sources, static_cast<int>(scored.size())); ++i) {
        out[v].push_back(scored[i].second);
      }
    } else {
      for (int j = 0; j < n; ++j) {
        if (j != v) out[v].push_back(j);
      }
    }
  }
  return out;
}

std::uint64_t view_seed(const SceneConfig& config, int view) {
  return splitmix(config.engine.seed ^ splitmix(static_cast<std::uint64_t>(view) + 1));
}

int stage_scale(int stage) { return std::max(kCoarsestScale - stage, kFinestEngineScale); }

StagePlan plan_stages(const SceneConfig& config,
                      const std::vector<std::vector<int>>& sources,
                      bool photometric_only) {
  const int n = static_cast<int>(config.views.size());
  if (static_cast<int>(sources.size()) != n) throw PlanError("source lists do not match the views");
  StagePlan plan;
  if (n == 1 && config.stages > 1) {
    plan.warnings.push_back("single view: geometric stages degenerate to photometric-only");
  }
  for (int v = 0; v < n; ++v) {
    for (int s : sources[v]) {
      if (s < 0 || s >= n || s == v) throw PlanError("unresolvable source of view " + config.views[v].id);
    }
    if (n > 1 && sources[v].empty()) {
      plan.warnings.push_back("view " + config.views[v].id + " has no source views");
    }
  }
  for (int k = 0; k < config.stages; ++k) {
    plan.barriers.push_back(plan.tasks.size());
    for (int v = 0; v < n; ++v) {
      StageTask task;
      task.id = {v, k};
      task.scale = stage_scale(k);
      task.geometric = k > 0 && !photometric_only && n > 1 && !sources[v].empty();
      if (k > 0) {
        for (int u = 0; u < n; ++u) task.deps.push_back({u, k - 1});
      }
      plan.tasks.push_back(std::move(task));
    }
  }
  return plan;
}

const TaskRecord* StageLedger::find(TaskId id) const {
  for (const auto& r : records_) {
    if (r.id == id) return &r;
  }
  return nullptr;
}

void StageLedger::record(const TaskRecord& rec) {
  for (auto& r : records_) {
    if (r.id == rec.id) {
      r = rec;
      return;
    }
  }
  records_.push_back(rec);
}

std::string StageLedger::serialize() const {
  std::ostringstream out;
  out << "PMVSLEDGER 1\n";
  out << "config " << hex32(config_hash_) << "\n";
  for (const auto& r : records_) {
    out << "task " << r.id.view << ' ' << r.id.stage << ' ' << (r.complete ? 1 : 0) << ' '
        << r.geometry_path << ' ' << hex32(r.geometry_crc) << ' ' << r.score_path << ' '
        << hex32(r.score_crc) << "\n";
  }
  return out.str();
}

StageLedger StageLedger::parse(const std::string& text) {
  StageLedger ledger;
  std::istringstream in(text);
  std::string line;
  bool header = false;
  while (std::getline(in, line)) {
    const auto w = split_words(line);
    if (w.empty()) continue;
    if (!header) {
      if (w.size() != 2 || w[0] != "PMVSLEDGER" || w[1] != "1") {
        throw FormatError("not a stage ledger", 0);
      }
      header = true;
    } else if (w[0] == "config" && w.size() == 2) {
      ledger.config_hash_ = parse_hex32(w[1]);
    } else if (w[0] == "task" && w.size() == 8) {
      TaskRecord r;
      r.id.view = static_cast<int>(to_integer(w[1], "ledger"));
      r.id.stage = static_cast<int>(to_integer(w[2], "ledger"));
      r.complete = w[3] == "1";
      r.geometry_path = w[4];
      r.geometry_crc = parse_hex32(w[5]);
      r.score_path = w[6];
      r.score_crc = parse_hex32(w[7]);
      ledger.record(r);
    } else {
      throw FormatError("ledger: unexpected line '" + line + "'", 0);
    }
  }
  return ledger;
}

void StageLedger::save(const std::string& path) const {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw StageIOError(tmp, "cannot write ledger");
    out << serialize();
    if (!out) throw StageIOError(tmp, "failed writing ledger");
  }
  fs::rename(tmp, path);
}

StageLedger StageLedger::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw StageIOError(path, "cannot read ledger");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

std::uint32_t config_hash(const SceneConfig& config, int stages, bool photometric_only) {
  std::vector<std::uint8_t> bytes(config.text.begin(), config.text.end());
  const std::string mode = "|stages=" + std::to_string(stages) +
                           "|photometric_only=" + (photometric_only ? "1" : "0");
  bytes.insert(bytes.end(), mode.begin(), mode.end());
  auto add_file = [&](const std::string& path) {
    const auto b = read_bytes(path);
    const std::uint32_t crc = crc32_of(b);
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(crc >> (8 * i)));
  };
  for (const auto& v : config.views) {
    add_file(v.image);
    add_file(v.camera);
  }
  if (config.weight_provider == "file") {
    for (const auto& [id, path] : config.weight_maps) add_file(path);
  }
  if (config.weight_provider == "gt") {
    for (const auto& [id, path] : config.gt_maps) add_file(path);
  }
  return crc32_of(bytes);
}

SceneInputs load_scene_inputs(const SceneConfig& config) {
  SceneInputs in;
  for (const auto& v : config.views) {
    in.cameras.push_back(read_camera_file(v.camera, v.id));
  }
  for (std::size_t i = 0; i < config.views.size(); ++i) {
    in.views.push_back(make_view_pyramid(in.cameras[i], read_image(config.views[i].image)));
    const auto& id = config.views[i].id;
    if (config.weight_provider == "file") {
      const auto it = config.weight_maps.find(id);
      if (it == config.weight_maps.end()) throw ConfigError("no coplanarity map for view " + id);
      in.weight_maps.emplace_back(load_coplanarity_map(it->second));
    } else {
      in.weight_maps.emplace_back();
    }
    if (config.weight_provider == "gt") {
      const auto it = config.gt_maps.find(id);
      if (it == config.gt_maps.end()) throw ConfigError("no ground truth for view " + id);
      in.gt.emplace_back(load_geometry_map(it->second));
    } else {
      in.gt.emplace_back();
    }
  }
  in.sources = resolve_sources(config, in.cameras);
  return in;
}

std::string stage_file(int stage, const std::string& view_id, const std::string& extension) {
  return "stage" + std::to_string(stage) + "/" + view_id + "." + extension;
}

StageOutcome run_stage(const StageTask& task, const SceneConfig& config,
                       const SceneInputs& inputs, StageLedger& ledger,
                       const RunOptions& options) {
  const int v = task.id.view;
  const int s = task.scale;
  const std::string& id = config.views[v].id;
  const fs::path out(options.out_dir);
  StageOutcome outcome;

  if (const TaskRecord* done = ledger.find(task.id); done && record_valid(*done, options.out_dir)) {
    outcome.record = *done;
    outcome.skipped = true;
    return outcome;
  }

  auto load_dep = [&](TaskId dep) {
    const TaskRecord* rec = ledger.find(dep);
    const std::string expected =
        (out / stage_file(dep.stage, config.views[dep.view].id, "geo")).string();
    if (!rec || !rec->complete) throw StageIOError(expected, "dependency has not completed");
    const std::string path = (out / rec->geometry_path).string();
    if (!fs::exists(path)) throw StageIOError(path, "dependency file is missing");
    if (file_crc32(path) != rec->geometry_crc) throw StageIOError(path, "checksum mismatch");
    outcome.files_read.push_back(path);
    try {
      return load_geometry_map(path);
    } catch (const Error& e) {
      throw StageIOError(path, e.what());
    }
  };
  for (const TaskId& dep : task.deps) {
    const TaskRecord* rec = ledger.find(dep);
    if (!rec || !rec->complete) {
      throw StageIOError((out / stage_file(dep.stage, config.views[dep.view].id, "geo")).string(),
                         "dependency has not completed");
    }
  }

  const CameraView& full = inputs.cameras[v];
  const CameraView cam = full.scaled(s);
  GeometryMap start;
  if (task.id.stage == 0) {
    start = initialize(cam, config.depth_range, view_seed(config, v));
  } else {
    const int prev_scale = stage_scale(task.id.stage - 1);
    start = to_scale(load_dep({v, task.id.stage - 1}), full, prev_scale, s);
  }

  std::vector<GeometryMap> src_geometry(inputs.sources[v].size());
  if (task.geometric) {
    const int prev_scale = stage_scale(task.id.stage - 1);
    for (std::size_t i = 0; i < inputs.sources[v].size(); ++i) {
      const int j = inputs.sources[v][i];
      src_geometry[i] = to_scale(load_dep({j, task.id.stage - 1}), inputs.cameras[j], prev_scale, s);
    }
  }

  std::optional<WeightProvider> weights;
  if (config.weight_provider == "file") {
    weights = WeightProvider::loaded(*inputs.weight_maps[v], cam.width(), cam.height());
  } else if (config.weight_provider == "gt") {
    weights = WeightProvider::ground_truth(ground_truth_at_level(*inputs.gt[v], full, s), cam, config.coplanar_tau);
  } else {
    weights = WeightProvider::bilateral(inputs.views[v].intensity.level(s), config.sigma_color,
                                        config.sigma_distance);
  }

  EngineInputs engine_inputs;
  engine_inputs.camera = cam;
  engine_inputs.features = &inputs.views[v].features.level(s);
  engine_inputs.weights = &*weights;
  engine_inputs.depth_range = config.depth_range;
  for (std::size_t i = 0; i < inputs.sources[v].size(); ++i) {
    const int j = inputs.sources[v][i];
    engine_inputs.sources.push_back({inputs.cameras[j].scaled(s), &inputs.views[j].features.level(s),
                                     task.geometric ? &src_geometry[i] : nullptr});
  }
  EngineConfig engine = config.engine;
  engine.threads = options.threads;
  EngineState state = make_state(std::move(start), s, static_cast<int>(inputs.sources[v].size()),
                                 view_seed(config, v));
  log(options, "stage " + std::to_string(task.id.stage) + " view " + id + ": scale " +
                   std::to_string(s) + (task.geometric ? ", geometric" : ", photometric"));
  run_scale(state, engine_inputs, engine, engine.schedule[s]);

  fs::create_directories(out / ("stage" + std::to_string(task.id.stage)));
  TaskRecord rec;
  rec.id = task.id;
  rec.geometry_path = stage_file(task.id.stage, id, "geo");
  rec.score_path = stage_file(task.id.stage, id, "score");
  const std::string geo_path = (out / rec.geometry_path).string();
  const std::string score_path = (out / rec.score_path).string();
  save_map(geo_path, state.geometry);
  save_map(score_path, state.score_field());
  rec.geometry_crc = file_crc32(geo_path);
  rec.score_crc = file_crc32(score_path);
  rec.complete = true;
  ledger.record(rec);
  outcome.record = rec;
  return outcome;
}

std::vector<StageTask> resume(const StageLedger& ledger, const StagePlan& plan,
                              std::uint32_t expected_hash, const std::string& out_dir) {
  if (ledger.records().empty()) return plan.tasks;
  if (ledger.config_hash() != expected_hash) {
    throw LedgerMismatch("ledger was written for a different config (" + hex32(ledger.config_hash()) +
                         " vs " + hex32(expected_hash) + ")");
  }
  std::vector<StageTask> todo;
  for (const auto& task : plan.tasks) {
    const TaskRecord* rec = ledger.find(task.id);
    if (!rec || !record_valid(*rec, out_dir)) todo.push_back(task);
  }
  return todo;
}

std::string ledger_path(const std::string& out_dir) {
  return (fs::path(out_dir) / "ledger.txt").string();
}

std::vector<StageTask> resume(const std::string& path, const SceneConfig& config,
                              const RunOptions& options) {
  SceneConfig c = config;
  if (options.stages >= 0) c.stages = options.stages;
  std::vector<CameraView> cameras;
  for (const auto& v : c.views) cameras.push_back(read_camera_file(v.camera, v.id));
  const StagePlan plan = plan_stages(c, resolve_sources(c, cameras), options.photometric_only);
  const std::string out_dir = fs::path(path).parent_path().string();
  return resume(StageLedger::load(path), plan, config_hash(c, c.stages, options.photometric_only),
                out_dir.empty() ? "." : out_dir);
}

ReconstructionResult reconstruct(const SceneConfig& config, const RunOptions& options) {
  SceneConfig c = config;
  if (options.stages >= 0) c.stages = options.stages;
  if (c.stages < 1) throw ConfigError("stages must be at least 1");
  if (options.out_dir.empty()) throw ConfigError("an output directory is required");
  const SceneInputs inputs = load_scene_inputs(c);
  ReconstructionResult result;
  result.plan = plan_stages(c, inputs.sources, options.photometric_only);
  for (const auto& w : result.plan.warnings) log(options, "warning: " + w);
  const std::uint32_t hash = config_hash(c, c.stages, options.photometric_only);

  fs::create_directories(options.out_dir);
  const std::string lpath = ledger_path(options.out_dir);
  std::vector<StageTask> todo;
  if (options.resume && fs::exists(lpath)) {
    result.ledger = StageLedger::load(lpath);
    todo = resume(result.ledger, result.plan, hash, options.out_dir);
    if (result.ledger.records().empty()) result.ledger = StageLedger(hash);
  } else {
    result.ledger = StageLedger(hash);
    todo = result.plan.tasks;
  }
  result.ledger.save(lpath);

  std::set<TaskId> pending;
  for (const auto& t : todo) pending.insert(t.id);
  for (std::size_t i = 0; i < result.plan.tasks.size(); ++i) {
    const StageTask& task = result.plan.tasks[i];
    if (!pending.count(task.id)) {
      ++result.tasks_skipped;
    } else {
      StageOutcome outcome = run_stage(task, c, inputs, result.ledger, options);
      result.ledger.save(lpath);
      result.files_read[task.id] = std::move(outcome.files_read);
      if (outcome.skipped) ++result.tasks_skipped;
      else ++result.tasks_run;
    }
    const bool stage_done = i + 1 == result.plan.tasks.size() ||
                            result.plan.tasks[i + 1].id.stage != task.id.stage;
    if (stage_done && options.stop_after_stage && *options.stop_after_stage == task.id.stage) {
      result.stopped = true;
      break;
    }
  }
  return result;
}

std::vector<GeometryMap> load_final_maps(const SceneConfig& config, const std::string& out_dir) {
  const std::string lpath = ledger_path(out_dir);
  if (!fs::exists(lpath)) throw StageIOError(lpath, "no reconstruction ledger");
  const StageLedger ledger = StageLedger::load(lpath);
  int last = -1;
  for (const auto& r : ledger.records()) {
    if (r.complete) last = std::max(last, r.id.stage);
  }
  if (last < 0) throw StageIOError(lpath, "reconstruction has no completed stage");
  std::vector<GeometryMap> maps;
  for (std::size_t v = 0; v < config.views.size(); ++v) {
    const TaskRecord* rec = ledger.find({static_cast<int>(v), last});
    const std::string expected = (fs::path(out_dir) / stage_file(last, config.views[v].id, "geo")).string();
    if (!rec || !rec->complete) throw StageIOError(expected, "final stage missing for this view");
    const std::string path = (fs::path(out_dir) / rec->geometry_path).string();
    if (!fs::exists(path)) throw StageIOError(path, "file is missing");
    if (file_crc32(path) != rec->geometry_crc) throw StageIOError(path, "checksum mismatch");
    maps.push_back(load_geometry_map(path));
  }
  return maps;
}

FusedCloud fuse_reconstruction(const SceneConfig& config, const std::string& out_dir, int threads) {
  const auto maps = load_final_maps(config, out_dir);
  std::vector<CameraView> cameras;
  for (const auto& v : config.views) cameras.push_back(read_camera_file(v.camera, v.id));
  const auto sources = resolve_sources(config, cameras);
  std::vector<FusionView> views;
  for (std::size_t v = 0; v < maps.size(); ++v) {
    views.push_back({cameras[v], prepare_fusion_map(maps[v], cameras[v]), sources[v]});
  }
  return fuse(views, config.fusion, threads);
}

}  // namespace pmvs
