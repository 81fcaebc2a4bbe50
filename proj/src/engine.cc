#include "pmvs/engine.h"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include <Eigen/Geometry>

#include "pmvs/error.h"

namespace pmvs {

namespace {

constexpr int kMaxSources = 64;
constexpr int kMaxGroups = 256;
constexpr std::uint64_t kPurposeSupport = 1;
constexpr std::uint64_t kPurposeCandidates = 2;
constexpr std::uint64_t kPurposeInit = 3;
constexpr std::uint64_t kPurposeReseed = 4;

std::uint64_t mix(std::uint64_t h, std::uint64_t v) {
  // splitmix64 finaliser over the running hash.
  std::uint64_t z = h ^ (v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2));
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

// Poses and configuration shared by every pixel of one run.
struct Context {
  const EngineInputs& inputs;
  const EngineConfig& config;
  std::vector<RelativePose> ref_to_src;
  std::vector<RelativePose> src_to_ref;
  bool geometric;

  Context(const EngineInputs& in, const EngineConfig& cfg)
      : inputs(in), config(cfg), geometric(in.geometric()) {
    for (const auto& src : in.sources) {
      ref_to_src.push_back(relative_pose(in.camera, src.camera));
      src_to_ref.push_back(relative_pose(src.camera, in.camera));
    }
  }
};

double view_score(const Context& ctx, int view, const Eigen::Vector2i& p,
                  const Pixel& center, const PlaneHypothesis& hyp,
                  SupportSet support, const SupportWeights& weights) {
  const auto& src = ctx.inputs.sources[view];
  const auto H = try_plane_homography(ctx.inputs.camera, src.camera,
                                      ctx.ref_to_src[view], center, hyp);
  if (!H.ok()) return ctx.config.s_max;
  float corr[kMaxGroups];
  const int groups = ctx.config.groups;
  if (!aggregate_support(p, H.value, *ctx.inputs.features, *src.features,
                         weights, support, groups,
                         {corr, static_cast<std::size_t>(groups)})) {
    return ctx.config.s_max;
  }
  return view_disbelief({corr, static_cast<std::size_t>(groups)}, ctx.config.s_max);
}

void score_all_views(const Context& ctx, int x, int y,
                     const PlaneHypothesis& hyp, SupportSet support,
                     std::span<double> disbelief) {
  const Eigen::Vector2i p(x, y);
  const Pixel center = pixel_center(x, y);
  const SupportWeights weights = ctx.inputs.weights->weights(x, y);
  for (std::size_t i = 0; i < ctx.inputs.sources.size(); ++i) {
    disbelief[i] = view_score(ctx, static_cast<int>(i), p, center, hyp, support, weights);
  }
}

double candidate_score(const Context& ctx, int x, int y,
                       const PlaneHypothesis& hyp,
                       std::span<const float> visibility, SupportSet support,
                       const SupportWeights& weights) {
  const Eigen::Vector2i p(x, y);
  const Pixel center = pixel_center(x, y);
  const std::size_t n = ctx.inputs.sources.size();
  double disbelief[kMaxSources];
  for (std::size_t i = 0; i < n; ++i) {
    disbelief[i] = visibility[i] > 0.0f
                       ? view_score(ctx, static_cast<int>(i), p, center, hyp, support, weights)
                       : ctx.config.s_max;
  }
  const double s_pho = combine_disbelief({disbelief, n}, visibility, ctx.config.s_max);
  if (!ctx.geometric) return s_pho;

  double errors[kMaxSources];
  for (std::size_t i = 0; i < n; ++i) {
    errors[i] = std::numeric_limits<double>::infinity();
    if (!(visibility[i] > 0.0f)) continue;
    const auto& src = ctx.inputs.sources[i];
    const auto e = reprojection_error(ctx.inputs.camera, src.camera,
                                      ctx.ref_to_src[i], ctx.src_to_ref[i],
                                      center, hyp, *src.geometry);
    if (e.ok()) errors[i] = e.value;
  }
  return geometric_score(s_pho, {errors, n}, visibility, ctx.config.g_max);
}

SupportSet in_bounds_support(int x, int y, int width, int height) {
  SupportSet allowed = 0;
  for (int k = 0; k < kSupportCount; ++k) {
    const Eigen::Vector2i q = Eigen::Vector2i(x, y) + support_offset(k);
    if (q.x() >= 0 && q.y() >= 0 && q.x() < width && q.y() < height) {
      allowed |= SupportSet{1} << k;
    }
  }
  return allowed;
}

SupportSet support_for(const Context& ctx, int x, int y, std::mt19937_64& rng) {
  if (!ctx.config.adaptive_sampling) return kFullSupport;
  const auto& cam = ctx.inputs.camera;
  const SupportSet allowed = in_bounds_support(x, y, cam.width(), cam.height());
  return sample_support(ctx.inputs.weights->weights(x, y),
                        ctx.config.sample_count, rng, allowed) |
         kCenterOnly;
}

// Rounds to float and nudges back inside the range if rounding left it.
bool fit_range(PlaneHypothesis& hyp, DepthRange range) {
  hyp = hyp.quantized();
  if (hyp.depth > range.max) {
    hyp.depth = std::nextafter(static_cast<float>(hyp.depth), -1.0f);
  } else if (hyp.depth < range.min) {
    hyp.depth = std::nextafter(static_cast<float>(hyp.depth), std::numeric_limits<float>::max());
  }
  return range.contains(hyp.depth);
}

bool acceptable(PlaneHypothesis& hyp, const CameraView& view,
                const Pixel& p, DepthRange range) {
  return fit_range(hyp, range) && faces_camera(view, p, hyp.normal);
}

int thread_count(const EngineConfig& config) {
  return std::max(1, config.threads);
}

}  // namespace

bool EngineInputs::geometric() const {
  if (sources.empty()) return false;
  return std::all_of(sources.begin(), sources.end(),
                     [](const SourceInput& s) { return s.geometry != nullptr; });
}

void EngineInputs::validate() const {
  if (features == nullptr || weights == nullptr) {
    throw ConfigError("engine inputs need reference features and weights");
  }
  if (features->width() != camera.width() || features->height() != camera.height()) {
    throw ConfigError("reference features do not match the camera size");
  }
  if (weights->width() != camera.width() || weights->height() != camera.height()) {
    throw ConfigError("supporting weights do not match the camera size");
  }
  if (sources.empty()) throw ConfigError("at least one source view is required");
  if (static_cast<int>(sources.size()) > kMaxSources) {
    throw ConfigError("too many source views");
  }
  if (!(depth_range.min > 0.0) || !(depth_range.min < depth_range.max)) {
    throw ConfigError("depth range must satisfy 0 < min < max");
  }
  for (const auto& src : sources) {
    if (src.features == nullptr || src.features->width() != src.camera.width() ||
        src.features->height() != src.camera.height()) {
      throw ConfigError("source features do not match the source camera " + src.camera.id());
    }
    if (src.features->channels() != features->channels()) {
      throw ConfigError("source feature channels differ from the reference");
    }
    if (src.geometry != nullptr && (src.geometry->width() != src.camera.width() ||
                                    src.geometry->height() != src.camera.height())) {
      throw ConfigError("source geometry does not match the source camera " + src.camera.id());
    }
  }
}

ScoreField EngineState::score_field() const {
  ScoreField field(score.width(), score.height(), visibility.channels());
  field.score = score;
  field.visibility = visibility;
  return field;
}

EngineState make_state(GeometryMap geometry, int scale, int source_count,
                       std::uint64_t seed) {
  EngineState state;
  const int w = geometry.width(), h = geometry.height();
  state.geometry = std::move(geometry);
  state.visibility = Grid<float>(w, h, std::max(1, source_count), 0.0f);
  state.score = Grid<float>(w, h, 1, 0.0f);
  state.scale = scale;
  state.iteration = 0;
  state.seed = seed;
  return state;
}

std::mt19937_64 pixel_rng(std::uint64_t seed, int scale, int iteration, int x,
                          int y, std::uint64_t purpose) {
  std::uint64_t h = mix(0x243f6a8885a308d3ull, seed);
  h = mix(h, static_cast<std::uint64_t>(scale));
  h = mix(h, static_cast<std::uint64_t>(static_cast<std::int64_t>(iteration)));
  h = mix(h, static_cast<std::uint64_t>(x));
  h = mix(h, static_cast<std::uint64_t>(y));
  h = mix(h, purpose);
  return std::mt19937_64(h);
}

PlaneHypothesis random_hypothesis(const CameraView& view, const Pixel& p,
                                  DepthRange range, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> depth_dist(range.min, range.max);
  std::normal_distribution<double> gauss(0.0, 1.0);
  const Eigen::Vector3d ray = view.ray(p);
  PlaneHypothesis hyp;
  for (;;) {
    hyp.depth = depth_dist(rng);
    Eigen::Vector3d n(gauss(rng), gauss(rng), gauss(rng));
    const double norm = n.norm();
    if (!(norm > 1e-12)) continue;
    n /= norm;
    if (n.dot(ray) > 0.0) n = -n;
    hyp.normal = n;
    if (acceptable(hyp, view, p, range)) return hyp;
  }
}

GeometryMap initialize(const CameraView& view, DepthRange range,
                       std::uint64_t seed) {
  if (!(range.min > 0.0) || !(range.min < range.max)) {
    throw ConfigError("depth range must satisfy 0 < min < max");
  }
  GeometryMap map(view.width(), view.height());
  for (int y = 0; y < view.height(); ++y) {
    for (int x = 0; x < view.width(); ++x) {
      auto rng = pixel_rng(seed, 0, -1, x, y, kPurposeInit);
      map.set(x, y, random_hypothesis(view, pixel_center(x, y), range, rng));
    }
  }
  return map;
}

void select_top_views(std::span<const double> disbelief, int k,
                      std::span<float> visibility) {
  const int n = static_cast<int>(disbelief.size());
  int order[kMaxSources];
  for (int i = 0; i < n; ++i) order[i] = i;
  std::stable_sort(order, order + n,
                   [&](int a, int b) { return disbelief[a] < disbelief[b]; });
  for (int i = 0; i < n; ++i) visibility[i] = 0.0f;
  for (int i = 0; i < std::min(k, n); ++i) visibility[order[i]] = 1.0f;
}

SupportSet sample_support(const SupportWeights& weights, int m,
                          std::mt19937_64& rng, SupportSet allowed) {
  std::array<double, kSupportCount> w{};
  int positive = 0;
  for (int k = 0; k < kSupportCount; ++k) {
    if (k == kSupportCenter || !in_support(allowed, k)) continue;
    w[k] = std::max(0.0f, weights[k]);
    if (w[k] > 0.0) ++positive;
  }
  if (positive < m) {
    for (int k = 0; k < kSupportCount; ++k) {
      w[k] = (k != kSupportCenter && in_support(allowed, k)) ? 1.0 : 0.0;
    }
  }
  SupportSet chosen = 0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (int draw = 0; draw < m; ++draw) {
    double total = 0.0;
    for (double v : w) total += v;
    if (!(total > 0.0)) break;
    double r = unit(rng) * total;
    int pick = -1;
    for (int k = 0; k < kSupportCount; ++k) {
      if (!(w[k] > 0.0)) continue;
      pick = k;
      if (r < w[k]) break;
      r -= w[k];
    }
    chosen |= SupportSet{1} << pick;
    w[pick] = 0.0;
  }
  return chosen;
}

CandidateSet propose_candidates(int x, int y, const EngineState& state,
                                const EngineInputs& inputs,
                                const EngineConfig& config,
                                std::mt19937_64& rng) {
  const auto& map = state.geometry;
  const CameraView& view = inputs.camera;
  const DepthRange range = inputs.depth_range;
  const Pixel center = pixel_center(x, y);

  CandidateSet set;
  set.candidates.reserve(12);
  const PlaneHypothesis current = map.at(x, y);
  set.candidates.push_back({current, CandidateOrigin::kCurrent});

  PlaneHypothesis seen[kPropagationOffsets.size()];
  std::size_t seen_count = 0;
  for (const auto& [dx, dy] : kPropagationOffsets) {
    const int nx = x + dx, ny = y + dy;
    if (!map.in_bounds(nx, ny) || !map.valid(nx, ny)) continue;
    const PlaneHypothesis neighbor = map.at(nx, ny);
    if (std::find(seen, seen + seen_count, neighbor) != seen + seen_count) continue;
    seen[seen_count++] = neighbor;
    auto moved = propagate_hypothesis(pixel_center(nx, ny), center, neighbor, view);
    if (!moved.ok() || !acceptable(moved.value, view, center, range)) continue;
    set.candidates.push_back({moved.value, CandidateOrigin::kSpatial});
  }

  const double decay = std::pow(config.perturbation_decay, state.iteration);
  const double depth_amp = config.depth_perturbation * decay;
  if (depth_amp > 0.0) {
    std::uniform_real_distribution<double> u(-depth_amp, depth_amp);
    PlaneHypothesis hyp = current;
    hyp.depth *= 1.0 + u(rng);
    if (acceptable(hyp, view, center, range)) {
      set.candidates.push_back({hyp, CandidateOrigin::kDepthPerturbed});
    }
  }
  const double angle_amp = config.normal_perturbation_deg * std::numbers::pi / 180.0 * decay;
  if (angle_amp > 0.0) {
    std::normal_distribution<double> gauss(0.0, 1.0);
    std::uniform_real_distribution<double> angle(0.0, angle_amp);
    const Eigen::Vector3d r(gauss(rng), gauss(rng), gauss(rng));
    const double theta = angle(rng);
    Eigen::Vector3d axis = current.normal.cross(r);
    if (axis.norm() > 1e-12) {
      axis.normalize();
      PlaneHypothesis hyp = current;
      hyp.normal = (Eigen::AngleAxisd(theta, axis) * current.normal).normalized();
      if (acceptable(hyp, view, center, range)) {
        set.candidates.push_back({hyp, CandidateOrigin::kNormalPerturbed});
      }
    }
  }
  if (config.random_candidate) {
    set.candidates.push_back({random_hypothesis(view, center, range, rng), CandidateOrigin::kRandom});
  }
  if (static_cast<int>(set.candidates.size()) > config.max_candidates) {
    set.candidates.resize(std::max(1, config.max_candidates));
  }
  return set;
}

std::size_t select_candidate(std::span<const double> scores) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < scores.size(); ++i) {
    if (scores[i] < scores[best]) best = i;
  }
  return best;
}

void score_views(int x, int y, const PlaneHypothesis& hyp,
                 const EngineInputs& inputs, const EngineConfig& config,
                 SupportSet support, std::span<double> disbelief) {
  const Context ctx(inputs, config);
  score_all_views(ctx, x, y, hyp, support, disbelief);
}

double score_hypothesis(int x, int y, const PlaneHypothesis& hyp,
                        const EngineInputs& inputs, const EngineConfig& config,
                        std::span<const float> visibility, SupportSet support) {
  const Context ctx(inputs, config);
  return candidate_score(ctx, x, y, hyp, visibility, support,
                         inputs.weights->weights(x, y));
}

SupportSet iteration_support(int x, int y, const EngineInputs& inputs,
                             const EngineConfig& config, std::mt19937_64& rng) {
  const Context ctx(inputs, config);
  return support_for(ctx, x, y, rng);
}

Grid<float> select_views(const EngineState& state, const EngineInputs& inputs,
                         const EngineConfig& config) {
  const Context ctx(inputs, config);
  const int w = state.geometry.width(), h = state.geometry.height();
  const int n = static_cast<int>(inputs.sources.size());
  Grid<float> visibility(w, h, n, 0.0f);
#pragma omp parallel for schedule(static) num_threads(thread_count(config))
  for (int y = 0; y < h; ++y) {
    double disbelief[kMaxSources];
    for (int x = 0; x < w; ++x) {
      if (!state.geometry.valid(x, y)) continue;
      auto rng = pixel_rng(state.seed, state.scale, state.iteration, x, y, kPurposeSupport);
      const SupportSet support = support_for(ctx, x, y, rng);
      score_all_views(ctx, x, y, state.geometry.at(x, y), support, {disbelief, static_cast<std::size_t>(n)});
      select_top_views({disbelief, static_cast<std::size_t>(n)}, config.views_k, visibility.pixel(x, y));
    }
  }
  return visibility;
}

void run_iteration(EngineState& state, const EngineInputs& inputs,
                   const EngineConfig& config) {
  inputs.validate();
  const Context ctx(inputs, config);
  const int w = state.geometry.width(), h = state.geometry.height();
  const int n = static_cast<int>(inputs.sources.size());
  if (w != inputs.camera.width() || h != inputs.camera.height()) {
    throw ConfigError("engine state does not match the reference camera");
  }
  if (config.groups < 1 || config.groups > kMaxGroups ||
      inputs.features->channels() % config.groups != 0) {
    throw ConfigError("feature channels must be divisible by the group count");
  }

  // Step 1: pixel-wise view selection under the current hypotheses. The
  // per-pixel support subset drawn here is reused for candidate scoring.
  Grid<std::uint16_t> supports(w, h, 1, kFullSupport);
  state.visibility = Grid<float>(w, h, std::max(1, n), 0.0f);
#pragma omp parallel for schedule(static) num_threads(thread_count(config))
  for (int y = 0; y < h; ++y) {
    double disbelief[kMaxSources];
    for (int x = 0; x < w; ++x) {
      auto rng = pixel_rng(state.seed, state.scale, state.iteration, x, y, kPurposeSupport);
      const SupportSet support = support_for(ctx, x, y, rng);
      supports(x, y) = support;
      if (!state.geometry.valid(x, y)) continue;
      score_all_views(ctx, x, y, state.geometry.at(x, y), support, {disbelief, static_cast<std::size_t>(n)});
      select_top_views({disbelief, static_cast<std::size_t>(n)}, config.views_k, state.visibility.pixel(x, y));
    }
  }

  // Steps 2-4 in two checkerboard phases. A phase writes only pixels of its
  // parity and reads only the opposite parity (plus its own pixel).
  for (int parity = 0; parity < 2; ++parity) {
#pragma omp parallel for schedule(static) num_threads(thread_count(config))
    for (int y = 0; y < h; ++y) {
      std::vector<double> scores;
      for (int x = (y + parity) % 2; x < w; x += 2) {
        if (!state.geometry.valid(x, y)) continue;
        auto rng = pixel_rng(state.seed, state.scale, state.iteration, x, y, kPurposeCandidates);
        const CandidateSet set = propose_candidates(x, y, state, inputs, config, rng);
        const auto visibility = state.visibility.pixel(x, y);
        const SupportWeights weights = inputs.weights->weights(x, y);
        scores.resize(set.size());
        for (std::size_t i = 0; i < set.size(); ++i) {
          scores[i] = candidate_score(ctx, x, y, set.candidates[i].hyp, visibility,
                                      supports(x, y), weights);
        }
        const std::size_t best = select_candidate(scores);
        if (best != 0) state.geometry.set(x, y, set.candidates[best].hyp);
        state.score(x, y) = static_cast<float>(scores[best]);
      }
    }
  }
}

void run_scale(EngineState& state, const EngineInputs& inputs,
               const EngineConfig& config, int iterations) {
  if (iterations <= 0) return;
  const int w = state.geometry.width(), h = state.geometry.height();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (state.geometry.valid(x, y)) continue;
      auto rng = pixel_rng(state.seed, state.scale, -1, x, y, kPurposeReseed);
      state.geometry.set(x, y, random_hypothesis(inputs.camera, pixel_center(x, y),
                                                 inputs.depth_range, rng));
    }
  }
  if (state.score.width() != w || state.score.height() != h) {
    state.score = Grid<float>(w, h, 1, 0.0f);
  }
  for (state.iteration = 0; state.iteration < iterations; ++state.iteration) {
    run_iteration(state, inputs, config);
  }
}

ViewPyramid make_view_pyramid(const CameraView& camera, const Image& image) {
  const Image gray = to_grayscale(image);
  if (gray.width() != camera.width() || gray.height() != camera.height()) {
    throw ConfigError("image size does not match camera " + camera.id());
  }
  return ViewPyramid{camera, matching_pyramid(gray),
                     build_pyramid(gray, FeatureSource::kRawIntensity)};
}

CoarseToFineResult run_coarse_to_fine(const ViewPyramid& ref,
                                      std::span<const ViewPyramid* const> sources,
                                      DepthRange range,
                                      const EngineConfig& config,
                                      const WeightFactory& weights) {
  CoarseToFineResult result;
  const int n = static_cast<int>(sources.size());
  for (int s = kCoarsestScale; s >= kFinestEngineScale; --s) {
    const CameraView camera = ref.camera.scaled(s);
    const WeightProvider provider =
        weights ? weights(s) : WeightProvider::bilateral(ref.intensity.level(s));
    EngineInputs inputs;
    inputs.camera = camera;
    inputs.features = &ref.features.level(s);
    inputs.weights = &provider;
    inputs.depth_range = range;
    for (const ViewPyramid* src : sources) {
      inputs.sources.push_back({src->camera.scaled(s), &src->features.level(s), nullptr});
    }
    if (s == kCoarsestScale) {
      result.state = make_state(initialize(camera, range, config.seed), s, n, config.seed);
    } else {
      const CameraView coarser = ref.camera.scaled(s + 1);
      result.state = make_state(upsample_nearest(result.state.geometry, coarser, camera),
                                s, n, config.seed);
    }
    run_scale(result.state, inputs, config, config.schedule[s]);
    result.iterations_run += std::max(0, config.schedule[s]);
    result.scale_results.push_back(result.state.geometry);
  }
  return result;
}

}  // namespace pmvs
