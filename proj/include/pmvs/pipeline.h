#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "pmvs/engine.h"
#include "pmvs/fusion.h"
#include "pmvs/geometry.h"
#include "pmvs/maps.h"

namespace pmvs {

struct ViewSpec {
  std::string id;
  std::string image;   // resolved path
  std::string camera;  // resolved path
};

// Reconstruction config. Text format, one `key = value` per line:
//   view = ID IMAGE CAMERA       (repeatable; paths relative to the file)
//   sources = ID SRC...          (explicit source views of ID)
//   sources.auto = N             (pick N sources by frustum overlap)
//   depth_min, depth_max, stages, seed
//   schedule = N3 N2 N1          (iterations at scales 3, 2, 1)
//   s_max, g_max, views.k, groups, sampling.enabled, sampling.m
//   perturb.depth, perturb.normal_deg, perturb.decay, random_candidate
//   weights.provider = bilateral | gt | file
//   weights.map = ID PATH        (coplanarity map for the file provider)
//   weights.sigma_color, weights.sigma_distance, weights.tau
//   gt = ID PATH                 (ground-truth geometry, full resolution)
//   fusion.min_consistent, fusion.depth, fusion.reprojection, fusion.normal_deg
struct SceneConfig {
  std::vector<ViewSpec> views;
  std::map<std::string, std::vector<std::string>> sources;
  int auto_sources = 0;
  DepthRange depth_range;
  EngineConfig engine;
  int stages = 3;
  std::string weight_provider = "bilateral";
  std::map<std::string, std::string> weight_maps;
  std::map<std::string, std::string> gt_maps;
  double sigma_color = kDefaultSigmaColor;
  double sigma_distance = kDefaultSigmaDistance;
  double coplanar_tau = kDefaultCoplanarTolerance;
  FusionThresholds fusion;
  std::string text;  // the config file contents, for hashing

  int view_index(const std::string& id) const;  // -1 when unknown
};

SceneConfig parse_scene_config(const std::string& text,
                               const std::string& base_dir = ".");
SceneConfig read_scene_config(const std::string& path);

// Source view indices of every view: explicit lists, else the frustum-overlap
// heuristic, else all other views. Throws PlanError for unknown or self
// references.
std::vector<std::vector<int>> resolve_sources(const SceneConfig& config,
                                              const std::vector<CameraView>& cameras);

// Ground truth on a pyramid level: each level pixel takes the plane of the
// full-resolution pixel containing its centre.
GeometryMap ground_truth_at_level(const GeometryMap& gt, const CameraView& full,
                                  int level);

// Engine seed for one view.
std::uint64_t view_seed(const SceneConfig& config, int view);

struct TaskId {
  int view = 0;
  int stage = 0;
  auto operator<=>(const TaskId&) const = default;
};

struct StageTask {
  TaskId id;
  int scale = kCoarsestScale;
  bool geometric = false;
  std::vector<TaskId> deps;
};

struct StagePlan {
  std::vector<StageTask> tasks;      // in execution order
  std::vector<std::size_t> barriers;  // index of the first task of each stage
  std::vector<std::string> warnings;
  int stage_count() const { return static_cast<int>(barriers.size()); }
};

int stage_scale(int stage);

// Stage 0 is photometric at the coarsest scale for every view; stage k runs
// at max(3 - k, 1) and depends on every view's stage k - 1.
StagePlan plan_stages(const SceneConfig& config,
                      const std::vector<std::vector<int>>& sources,
                      bool photometric_only = false);

struct TaskRecord {
  TaskId id;
  std::string geometry_path;  // relative to the output directory
  std::string score_path;
  std::uint32_t geometry_crc = 0;
  std::uint32_t score_crc = 0;
  bool complete = false;
};

class StageLedger {
 public:
  StageLedger() = default;
  explicit StageLedger(std::uint32_t config_hash) : config_hash_(config_hash) {}

  std::uint32_t config_hash() const { return config_hash_; }
  const std::vector<TaskRecord>& records() const { return records_; }
  const TaskRecord* find(TaskId id) const;
  void record(const TaskRecord& rec);

  std::string serialize() const;
  static StageLedger parse(const std::string& text);
  // Atomic replace through a temporary file.
  void save(const std::string& path) const;
  static StageLedger load(const std::string& path);

 private:
  std::uint32_t config_hash_ = 0;
  std::vector<TaskRecord> records_;
};

// Hash of the config text, stage count, mode and every input file.
std::uint32_t config_hash(const SceneConfig& config, int stages,
                          bool photometric_only);

struct RunOptions {
  std::string out_dir;
  bool resume = false;
  int stages = -1;  // overrides the config when >= 0
  int threads = 1;
  bool photometric_only = false;
  // Stop (as if killed) once this stage has been written for every view.
  std::optional<int> stop_after_stage;
  std::function<void(const std::string&)> log;
};

// Everything the stages read that is not a stage output.
struct SceneInputs {
  std::vector<CameraView> cameras;
  std::vector<ViewPyramid> views;
  std::vector<std::vector<int>> sources;
  std::vector<std::optional<CoplanarityMap>> weight_maps;
  std::vector<std::optional<GeometryMap>> gt;
};

SceneInputs load_scene_inputs(const SceneConfig& config);

struct StageOutcome {
  TaskRecord record;
  bool skipped = false;                // checksum hit, nothing recomputed
  std::vector<std::string> files_read;  // stage files only
};

std::string stage_file(int stage, const std::string& view_id,
                       const std::string& extension);

// Runs one task. Dependencies are verified against the ledger checksums
// first; a missing or corrupt file raises StageIOError naming it.
StageOutcome run_stage(const StageTask& task, const SceneConfig& config,
                       const SceneInputs& inputs, StageLedger& ledger,
                       const RunOptions& options);

// Tasks of `plan` that still need to run under `ledger`. Throws
// LedgerMismatch when the ledger belongs to another config.
std::vector<StageTask> resume(const StageLedger& ledger, const StagePlan& plan,
                              std::uint32_t expected_hash,
                              const std::string& out_dir);
std::vector<StageTask> resume(const std::string& ledger_path,
                              const SceneConfig& config,
                              const RunOptions& options);

struct ReconstructionResult {
  StagePlan plan;
  StageLedger ledger;
  int tasks_run = 0;
  int tasks_skipped = 0;
  std::map<TaskId, std::vector<std::string>> files_read;
  bool stopped = false;
};

ReconstructionResult reconstruct(const SceneConfig& config,
                                 const RunOptions& options);

std::string ledger_path(const std::string& out_dir);

// Final-stage geometry of every view, read through the ledger.
std::vector<GeometryMap> load_final_maps(const SceneConfig& config,
                                         const std::string& out_dir);

// Fuses the final-stage maps of a finished run.
FusedCloud fuse_reconstruction(const SceneConfig& config,
                               const std::string& out_dir, int threads = 1);

}  // namespace pmvs
