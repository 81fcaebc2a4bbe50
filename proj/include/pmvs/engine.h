#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <random>
#include <span>
#include <vector>

#include "pmvs/geometry.h"
#include "pmvs/grid.h"
#include "pmvs/image_io.h"
#include "pmvs/maps.h"
#include "pmvs/scoring.h"

namespace pmvs {

struct DepthRange {
  double min = 0.0;
  double max = 0.0;
  bool contains(double depth) const { return depth >= min && depth <= max; }
};

struct EngineConfig {
  // PatchMatch iterations per scale, indexed by scale (0..3).
  std::array<int, 4> schedule{0, 3, 3, 8};
  int views_k = 3;
  double s_max = kDefaultSMax;
  double g_max = kDefaultGMax;
  int groups = 1;
  // Perturbation magnitudes at iteration 0 of a scale; multiplied by
  // decay^t afterwards.
  double depth_perturbation = 0.10;
  double normal_perturbation_deg = 10.0;
  double perturbation_decay = 0.5;
  bool random_candidate = true;
  int max_candidates = 12;
  bool adaptive_sampling = false;
  int sample_count = 3;
  std::uint64_t seed = 0;
  int threads = 1;

  int total_iterations() const {
    return schedule[1] + schedule[2] + schedule[3];
  }
};

// One source view at the working scale. `geometry` is the source's
// previous-stage map on the same grid; null in photometric-only mode.
struct SourceInput {
  CameraView camera;
  const Grid<float>* features = nullptr;
  const GeometryMap* geometry = nullptr;
};

struct EngineInputs {
  CameraView camera;
  const Grid<float>* features = nullptr;
  const WeightProvider* weights = nullptr;
  std::vector<SourceInput> sources;
  DepthRange depth_range;

  // True when every source carries geometry, i.e. candidates are ranked by
  // the geometric-consistency score.
  bool geometric() const;
  // Throws ConfigError when grids and cameras disagree.
  void validate() const;
};

struct EngineState {
  GeometryMap geometry;
  Grid<float> visibility;  // one channel per source view
  Grid<float> score;
  int scale = kCoarsestScale;
  int iteration = 0;  // within the current scale
  std::uint64_t seed = 0;

  ScoreField score_field() const;
};

EngineState make_state(GeometryMap geometry, int scale, int source_count,
                       std::uint64_t seed);

// Per-pixel generator; identical streams regardless of thread count.
std::mt19937_64 pixel_rng(std::uint64_t seed, int scale, int iteration, int x,
                          int y, std::uint64_t purpose);

// Uniform depth in the range and a normal uniform on the camera-facing
// hemisphere of each pixel ray. Throws ConfigError for an invalid range.
GeometryMap initialize(const CameraView& view, DepthRange range,
                       std::uint64_t seed);

PlaneHypothesis random_hypothesis(const CameraView& view, const Pixel& p,
                                  DepthRange range, std::mt19937_64& rng);

// Sets v = 1 for the k views with the lowest disbelief (ties to the lower
// index), 0 elsewhere.
void select_top_views(std::span<const double> disbelief, int k,
                      std::span<float> visibility);

// View-selection step for the whole map under the current hypotheses.
Grid<float> select_views(const EngineState& state, const EngineInputs& inputs,
                         const EngineConfig& config);

// Draws `m` distinct non-centre supporting pixels proportionally to their
// weights (sequential sampling without replacement). Falls back to uniform
// over `allowed` when fewer than m weights are positive. The centre is not
// part of the result.
SupportSet sample_support(const SupportWeights& weights, int m,
                          std::mt19937_64& rng,
                          SupportSet allowed = kFullSupport);

enum class CandidateOrigin {
  kCurrent,
  kSpatial,
  kDepthPerturbed,
  kNormalPerturbed,
  kRandom,
};

struct Candidate {
  PlaneHypothesis hyp;
  CandidateOrigin origin;
};

struct CandidateSet {
  std::vector<Candidate> candidates;  // [0] is always the current hypothesis
  std::size_t size() const { return candidates.size(); }
};

// Red-black propagation neighbours: offsets {+-1, +-5} along each axis, all
// of opposite checkerboard parity.
inline constexpr std::array<std::array<int, 2>, 8> kPropagationOffsets{{
    {-1, 0}, {1, 0}, {0, -1}, {0, 1}, {-5, 0}, {5, 0}, {0, -5}, {0, 5}}};

CandidateSet propose_candidates(int x, int y, const EngineState& state,
                                const EngineInputs& inputs,
                                const EngineConfig& config,
                                std::mt19937_64& rng);

// Index of the lowest score; index 0 (the incumbent) wins ties.
std::size_t select_candidate(std::span<const double> scores);

// Per-view photometric disbelief of one hypothesis at (x, y).
void score_views(int x, int y, const PlaneHypothesis& hyp,
                 const EngineInputs& inputs, const EngineConfig& config,
                 SupportSet support, std::span<double> disbelief);

// Selection score of a hypothesis: photometric, or geometric when the inputs
// carry source geometry.
double score_hypothesis(int x, int y, const PlaneHypothesis& hyp,
                        const EngineInputs& inputs, const EngineConfig& config,
                        std::span<const float> visibility, SupportSet support);

// Support set used at (x, y) for the current iteration.
SupportSet iteration_support(int x, int y, const EngineInputs& inputs,
                             const EngineConfig& config, std::mt19937_64& rng);

// One PatchMatch iteration: view selection, then candidate propagation,
// scoring and argmin selection in two checkerboard phases.
void run_iteration(EngineState& state, const EngineInputs& inputs,
                   const EngineConfig& config);

// Runs `iterations` iterations at the state's scale, restarting the
// perturbation decay. Invalid pixels are re-seeded first.
void run_scale(EngineState& state, const EngineInputs& inputs,
               const EngineConfig& config, int iterations);

// Everything the coarse-to-fine driver needs about one view.
struct ViewPyramid {
  CameraView camera;  // full resolution
  FeaturePyramid features;
  FeaturePyramid intensity;
};

ViewPyramid make_view_pyramid(const CameraView& camera, const Image& image);

struct CoarseToFineResult {
  EngineState state;                      // at the finest engine scale
  std::vector<GeometryMap> scale_results;  // after each scale, coarse first
  int iterations_run = 0;
};

using WeightFactory = std::function<WeightProvider(int scale)>;

// In-memory photometric coarse-to-fine run of one reference view: scales
// 3, 2, 1 with nearest-neighbour upsampling in between.
CoarseToFineResult run_coarse_to_fine(const ViewPyramid& ref,
                                      std::span<const ViewPyramid* const> sources,
                                      DepthRange range,
                                      const EngineConfig& config,
                                      const WeightFactory& weights = {});

}  // namespace pmvs
