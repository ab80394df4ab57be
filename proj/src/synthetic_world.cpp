#include "scevo/synthetic_world.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "scevo/config_file.hpp"
#include "scevo/error.hpp"
#include "scevo/rng.hpp"

namespace scevo {

namespace {

// Stream ids: the upper bits name the purpose, the lower bits the entity.
constexpr std::uint64_t kFrameStream = 1ULL << 40;
constexpr std::uint64_t kPointStream = 2ULL << 40;
constexpr std::uint64_t kPatchStream = 3ULL << 40;
constexpr std::uint64_t kOracleStream = 4ULL << 40;

constexpr double kMinVisibleZ = 0.5;
constexpr double kBorder = 2.0;  // px

constexpr double kArcTurn = 0.03;  // rad per frame

Pose trajectory_pose(const WorldSpec& spec, int i) {
  double theta = 0.0;
  double radius = 0.0;
  switch (spec.trajectory) {
    case TrajectoryKind::kLine:
      return Pose(Mat3::Identity(), Vec3(0.0, 0.0, spec.step_length * i));
    case TrajectoryKind::kArc: {
      // Constant yaw rate, so short sequences keep overlapping views.
      const double turn = kArcTurn;
      theta = turn * i;
      radius = spec.step_length / turn;
      break;
    }
    case TrajectoryKind::kLoop: {
      const double turn = 2.0 * M_PI / spec.n_frames;
      theta = turn * i;
      radius = spec.step_length / turn;
      break;
    }
  }
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  Mat3 r;
  r.col(0) = Vec3(c, 0.0, -s);
  r.col(1) = Vec3(0.0, 1.0, 0.0);
  r.col(2) = Vec3(s, 0.0, c);
  return Pose(r, Vec3(radius * (1.0 - c), 0.0, radius * s));
}

bool visible(const WorldSpec& spec, const Pose& pose, const Vec3& x,
             Vec2* uv = nullptr) {
  const Vec3 xc = pose.rotation().transpose() * (x - pose.translation());
  if (xc.z() < kMinVisibleZ) return false;
  const Vec2 p = project(spec.camera, xc);
  if (p.x() < kBorder || p.x() > spec.width - kBorder || p.y() < kBorder ||
      p.y() > spec.height - kBorder)
    return false;
  if (uv) *uv = p;
  return true;
}

struct PhysicalPoint {
  Vec3 x;
  int birth_frame = 0;
  Eigen::VectorXd match_sig;
  Eigen::VectorXd ctx_sig;
};

Eigen::VectorXd gaussian_vector(CounterRng& rng, int dim, double scale) {
  Eigen::VectorXd v(dim);
  for (int i = 0; i < dim; ++i) v[i] = scale * rng.gaussian();
  return v;
}

Eigen::VectorXd to_float_precision(const Eigen::VectorXd& v) {
  Eigen::VectorXd out(v.size());
  for (Eigen::Index i = 0; i < v.size(); ++i)
    out[i] = static_cast<double>(static_cast<float>(v[i]));
  return out;
}

TrajectoryKind parse_kind(const std::string& s, const std::string& where) {
  if (s == "line") return TrajectoryKind::kLine;
  if (s == "arc") return TrajectoryKind::kArc;
  if (s == "loop") return TrajectoryKind::kLoop;
  raise(ErrorCode::kParse, where + ": unknown trajectory '" + s +
                               "' (expected line, arc or loop)");
}

}  // namespace

int WorldSpec::num_windows() const {
  return std::max(1, n_frames - window_length + 1);
}

void WorldSpec::validate() const {
  auto bad = [](const std::string& what) {
    raise(ErrorCode::kInfeasibleSpec, "world spec: " + what);
  };
  if (n_frames < 2) bad("n_frames must be at least 2");
  if (patches_per_frame < 1) bad("patches_per_frame must be positive");
  if (window_length < 2) bad("window_length must be at least 2");
  if (!(step_length > 0.0)) bad("step_length must be positive");
  if (!(min_depth >= kMinVisibleZ) || !(extent > min_depth))
    bad("need 0.5 <= min_depth < extent");
  if (pixel_noise_sigma < 0.0 || depth_init_error < 0.0 || feature_noise < 0.0)
    bad("noise parameters must be non-negative");
  if (redetect_fraction < 0.0 || redetect_fraction > 1.0)
    bad("redetect_fraction must lie in [0, 1]");
  if (width < 8 || height < 8) bad("image must be at least 8x8");
  if (match_dim < 1 || ctx_dim < 1) bad("feature dims must be positive");
  for (double m : drift_profile)
    if (!(m > 0.0)) bad("drift multipliers must be positive");
  if (!drift_profile.empty() &&
      static_cast<int>(drift_profile.size()) != num_windows())
    bad("drift profile has " + std::to_string(drift_profile.size()) +
        " multipliers, expected " + std::to_string(num_windows()));
  try {
    scevo::validate(camera);
  } catch (const Error& e) {
    bad(e.what());
  }
}

std::vector<double> drift_ramp(int num_windows, double target, int start,
                               int end) {
  std::vector<double> out(std::max(0, num_windows), 1.0);
  if (end <= start) end = start + 1;
  for (int w = 0; w < num_windows; ++w) {
    const double a = std::clamp(double(w - start) / (end - start), 0.0, 1.0);
    out[w] = 1.0 + a * (target - 1.0);
  }
  return out;
}

WorldSpec parse_world_spec(std::istream& in, const std::string& source) {
  const ConfigFile cfg = ConfigFile::parse(in, source);
  cfg.require_known({"world.seed", "world.n_frames", "world.patches_per_frame",
                     "world.trajectory", "world.step_length",
                     "world.min_depth", "world.extent", "world.window_length",
                     "world.redetect_fraction", "noise.pixel_sigma",
                     "noise.depth_init_error", "noise.feature_noise",
                     "drift.multipliers", "drift.ramp_to", "drift.ramp_start",
                     "drift.ramp_end", "camera.fx", "camera.fy", "camera.cx",
                     "camera.cy", "camera.width", "camera.height",
                     "features.match_dim", "features.ctx_dim"});
  WorldSpec s;
  s.seed = cfg.get_u64("world.seed", s.seed);
  s.n_frames = static_cast<int>(cfg.get_int("world.n_frames", s.n_frames));
  s.patches_per_frame = static_cast<int>(
      cfg.get_int("world.patches_per_frame", s.patches_per_frame));
  if (cfg.has("world.trajectory")) {
    const auto& e = cfg.entries().at("world.trajectory");
    s.trajectory = parse_kind(e.value, source + ":" + std::to_string(e.line));
  }
  s.step_length = cfg.get_double("world.step_length", s.step_length);
  s.min_depth = cfg.get_double("world.min_depth", s.min_depth);
  s.extent = cfg.get_double("world.extent", s.extent);
  s.window_length = static_cast<int>(
      cfg.get_int("world.window_length", s.window_length));
  s.redetect_fraction =
      cfg.get_double("world.redetect_fraction", s.redetect_fraction);
  s.pixel_noise_sigma = cfg.get_double("noise.pixel_sigma", 0.0);
  s.depth_init_error = cfg.get_double("noise.depth_init_error", 0.0);
  s.feature_noise = cfg.get_double("noise.feature_noise", s.feature_noise);
  s.camera.fx = cfg.get_double("camera.fx", s.camera.fx);
  s.camera.fy = cfg.get_double("camera.fy", s.camera.fy);
  s.camera.cx = cfg.get_double("camera.cx", s.camera.cx);
  s.camera.cy = cfg.get_double("camera.cy", s.camera.cy);
  s.width = static_cast<int>(cfg.get_int("camera.width", s.width));
  s.height = static_cast<int>(cfg.get_int("camera.height", s.height));
  s.match_dim = static_cast<int>(cfg.get_int("features.match_dim", 384));
  s.ctx_dim = static_cast<int>(cfg.get_int("features.ctx_dim", 384));

  if (cfg.has("drift.multipliers") && cfg.has("drift.ramp_to"))
    raise(ErrorCode::kParse,
          source + ": drift.multipliers and drift.ramp_to are exclusive");
  if (cfg.has("drift.multipliers")) {
    s.drift_profile = cfg.get_double_list("drift.multipliers");
  } else if (cfg.has("drift.ramp_to")) {
    const int n = s.num_windows();
    s.drift_profile = drift_ramp(
        n, cfg.get_double("drift.ramp_to", 1.0),
        static_cast<int>(cfg.get_int("drift.ramp_start", 0)),
        static_cast<int>(cfg.get_int("drift.ramp_end", n - 1)));
  }
  s.validate();
  return s;
}

WorldSpec load_world_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::kIo, "cannot open world spec '" + path + "'");
  return parse_world_spec(in, path);
}

const Vec3& GroundTruth::point(int patch_id) const {
  auto it = points.find(patch_id);
  if (it == points.end())
    raise(ErrorCode::kUnknownPatch,
          "no ground truth for patch " + std::to_string(patch_id));
  return it->second;
}

World generate(const WorldSpec& spec) {
  spec.validate();
  const int n = spec.n_frames;
  const int w = spec.window_length;

  World world;
  GroundTruth& gt = world.gt;
  for (int i = 0; i < n; ++i) {
    gt.poses.push_back(trajectory_pose(spec, i));
    gt.timestamps.push_back(0.1 * i);
  }
  world.tracks.timestamps = gt.timestamps;

  auto span_of = [&](int f) {
    return std::pair{std::max(0, f - w + 1), std::min(n - 1, f + w - 1)};
  };
  auto visible_count = [&](const Vec3& x, int f) {
    const auto [lo, hi] = span_of(f);
    int count = 0;
    for (int g = lo; g <= hi; ++g) count += visible(spec, gt.poses[g], x);
    return count;
  };

  std::vector<PhysicalPoint> physical;
  const double sig_scale = 1.0 / std::sqrt(double(spec.match_dim));
  const double ctx_scale = 1.0 / std::sqrt(double(spec.ctx_dim));

  for (int f = 0; f < n; ++f) {
    const auto [lo, hi] = span_of(f);
    const int required = std::min(3, hi - lo + 1);
    CounterRng frame_rng(spec.seed, kFrameStream | std::uint64_t(f));

    // Points born in earlier frames of the span that a new detection in f
    // may land on again.
    std::vector<int> candidates;
    for (int p = 0; p < static_cast<int>(physical.size()); ++p) {
      const auto& pp = physical[p];
      if (pp.birth_frame < lo) continue;
      if (!visible(spec, gt.poses[f], pp.x)) continue;
      if (visible_count(pp.x, f) < required) continue;
      candidates.push_back(p);
    }
    std::set<int> used;

    for (int k = 0; k < spec.patches_per_frame; ++k) {
      const int patch_id = f * spec.patches_per_frame + k;
      int phys = -1;
      if (!candidates.empty() &&
          frame_rng.uniform() < spec.redetect_fraction) {
        const int pick = static_cast<int>(frame_rng.uniform() *
                                          candidates.size());
        const int c = candidates[std::min<int>(pick, candidates.size() - 1)];
        if (used.insert(c).second) phys = c;
      }
      if (phys < 0) {
        bool found = false;
        Vec3 x;
        for (int attempt = 0; attempt < 1000 && !found; ++attempt) {
          const Vec2 uv(frame_rng.uniform(kBorder, spec.width - kBorder),
                        frame_rng.uniform(kBorder, spec.height - kBorder));
          const double depth = frame_rng.uniform(spec.min_depth, spec.extent);
          x = gt.poses[f] * backproject(spec.camera, uv, depth);
          found = visible_count(x, f) >= required;
        }
        if (!found)
          raise(ErrorCode::kInfeasibleSpec,
                "frame " + std::to_string(f) +
                    ": cannot place a point visible in " +
                    std::to_string(required) + " frames");
        PhysicalPoint pp;
        pp.x = x;
        pp.birth_frame = f;
        const std::uint64_t id = physical.size();
        CounterRng prng(spec.seed, kPointStream | id);
        pp.match_sig = gaussian_vector(prng, spec.match_dim, sig_scale);
        pp.ctx_sig = gaussian_vector(prng, spec.ctx_dim, ctx_scale);
        phys = static_cast<int>(physical.size());
        physical.push_back(std::move(pp));
      }

      const PhysicalPoint& pp = physical[phys];
      CounterRng rng(spec.seed, kPatchStream | std::uint64_t(patch_id));
      PatchTrack t;
      t.patch_id = patch_id;
      t.source_frame = f;
      const Vec3 xc =
          gt.poses[f].rotation().transpose() * (pp.x - gt.poses[f].translation());
      t.center = project(spec.camera, xc);
      const double true_depth = xc.z();
      t.score = rng.uniform(0.5, 1.0);
      t.init_depth =
          true_depth * std::exp(spec.depth_init_error * rng.gaussian());
      t.match_feature = to_float_precision(
          pp.match_sig +
          gaussian_vector(rng, spec.match_dim, spec.feature_noise * sig_scale));
      t.ctx_feature = to_float_precision(
          pp.ctx_sig +
          gaussian_vector(rng, spec.ctx_dim, spec.feature_noise * ctx_scale));
      const double weight = 1.0 / (1.0 + spec.pixel_noise_sigma);
      for (int g = lo; g <= hi; ++g) {
        if (g == f) continue;
        Vec2 uv;
        if (!visible(spec, gt.poses[g], pp.x, &uv)) continue;
        const double nu = rng.gaussian();
        const double nv = rng.gaussian();
        uv += spec.pixel_noise_sigma * Vec2(nu, nv);
        t.observations.push_back({g, uv, weight});
      }
      gt.points[patch_id] = pp.x;
      gt.source_depths[patch_id] = true_depth;
      gt.physical_ids[patch_id] = phys;
      world.tracks.tracks.push_back(std::move(t));
    }
  }
  return world;
}

PatchTrackSet inject_drift(const PatchTrackSet& tracks, const GroundTruth& gt,
                           std::span<const double> profile,
                           int window_length) {
  const int windows = std::max(1, tracks.num_frames() - window_length + 1);
  if (static_cast<int>(profile.size()) != windows)
    raise(ErrorCode::kInvalidArgument,
          "drift profile has " + std::to_string(profile.size()) +
              " multipliers for " + std::to_string(windows) + " windows");
  PatchTrackSet out = tracks;
  for (auto& t : out.tracks) {
    const int birth = std::max(0, t.source_frame - window_length + 1);
    double base = t.init_depth;
    if (!(base > 0.0)) {
      auto it = gt.source_depths.find(t.patch_id);
      if (it == gt.source_depths.end()) continue;
      base = it->second;
    }
    t.init_depth = base * profile[birth];
  }
  return out;
}

World build_world(const WorldSpec& spec) {
  World world = generate(spec);
  if (!spec.drift_profile.empty())
    world.tracks = inject_drift(world.tracks, world.gt, spec.drift_profile,
                                spec.window_length);
  return world;
}

CoordinatePrior oracle_sc_head(const Patch& patch, const GroundTruth& gt,
                               double noise_sigma, std::uint64_t seed) {
  const Vec3& x = gt.point(patch.id);
  CoordinatePrior out;
  out.weight = 1.0 / (1.0 + noise_sigma);
  if (noise_sigma == 0.0) {
    out.prior = x;
    return out;
  }
  CounterRng rng(seed, kOracleStream | std::uint64_t(patch.id));
  const double a = rng.gaussian();
  const double b = rng.gaussian();
  const double c = rng.gaussian();
  out.prior = x + noise_sigma * Vec3(a, b, c);
  return out;
}

CoordinatePrior OracleHead::decode(const Patch& patch) const {
  CoordinatePrior p = oracle_sc_head(patch, gt_, sigma_, seed_);
  p.prior = map_ * p.prior;
  return p;
}

}  // namespace scevo
