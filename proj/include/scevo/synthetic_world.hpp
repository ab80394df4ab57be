#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "scevo/geometry.hpp"
#include "scevo/patch_graph.hpp"
#include "scevo/scale_propagation.hpp"
#include "scevo/tracks.hpp"

namespace scevo {

enum class TrajectoryKind { kLine, kArc, kLoop };

struct WorldSpec {
  std::uint64_t seed = 1;
  int n_frames = 20;
  int patches_per_frame = 80;
  TrajectoryKind trajectory = TrajectoryKind::kLoop;
  double step_length = 0.5;  // m per frame
  double min_depth = 4.0;
  double extent = 25.0;      // max point depth in the source camera (m)
  double pixel_noise_sigma = 0.0;
  double depth_init_error = 0.0;  // log-normal sigma of init depth / true
  double feature_noise = 0.5;     // per-view noise relative to the signature
  double redetect_fraction = 0.25;
  int window_length = 10;  // observation span and drift window length
  std::vector<double> drift_profile;  // per window; empty means none
  CameraIntrinsics camera{320.0, 320.0, 320.0, 240.0};
  int width = 640;
  int height = 480;
  int match_dim = 384;
  int ctx_dim = 384;

  int num_windows() const;
  /// Throws InfeasibleSpec.
  void validate() const;
};

/// Flat INI. Sections and keys:
///   [world]    seed n_frames patches_per_frame trajectory(line|arc|loop)
///              step_length min_depth extent window_length redetect_fraction
///   [noise]    pixel_sigma depth_init_error feature_noise
///   [drift]    multipliers (comma list) | ramp_to ramp_start ramp_end
///   [camera]   fx fy cx cy width height
///   [features] match_dim ctx_dim
/// Unknown keys are parse errors naming key and line.
WorldSpec parse_world_spec(std::istream& in, const std::string& source);
WorldSpec load_world_spec(const std::string& path);

/// Multipliers 1 up to window `start`, linear to `target` at window `end`,
/// constant afterwards.
std::vector<double> drift_ramp(int num_windows, double target, int start,
                               int end);

struct GroundTruth {
  std::vector<Pose> poses;
  std::vector<double> timestamps;
  std::unordered_map<int, Vec3> points;         // per patch id
  std::unordered_map<int, double> source_depths;  // per patch id
  std::unordered_map<int, int> physical_ids;      // re-detections share one

  /// Throws UnknownPatch.
  const Vec3& point(int patch_id) const;
};

struct World {
  GroundTruth gt;
  PatchTrackSet tracks;
};

/// Deterministic in spec.seed. Drift is not applied here.
World generate(const WorldSpec& spec);

/// Init depth of each patch times profile[birth window], where the birth
/// window of a patch from frame f is max(0, f - W + 1).
PatchTrackSet inject_drift(const PatchTrackSet& tracks, const GroundTruth& gt,
                           std::span<const double> profile, int window_length);

/// generate() followed by inject_drift() with the spec's profile.
World build_world(const WorldSpec& spec);

/// X_prior = X_gt + N(0, sigma^2 I), w = 1 / (1 + sigma). The noise of a
/// patch is a fixed function of (seed, patch id).
CoordinatePrior oracle_sc_head(const Patch& patch, const GroundTruth& gt,
                               double noise_sigma, std::uint64_t seed = 0);

/// Oracle priors expressed in the estimate's frame: X -> to_canonical * X.
class OracleHead final : public CoordinateHead {
 public:
  OracleHead(const GroundTruth& gt, double noise_sigma, std::uint64_t seed,
             Sim3 to_canonical = {})
      : gt_(gt), sigma_(noise_sigma), seed_(seed), map_(to_canonical) {}

  CoordinatePrior decode(const Patch& patch) const override;
  void set_canonical(const Sim3& map) { map_ = map; }

 private:
  const GroundTruth& gt_;
  double sigma_;
  std::uint64_t seed_;
  Sim3 map_;
};

/// Constant-weight head, e.g. w = 0 to disable scene-coordinate residuals.
class ConstantHead final : public CoordinateHead {
 public:
  explicit ConstantHead(double weight) : weight_(weight) {}
  CoordinatePrior decode(const Patch& patch) const override {
    return {patch.world_point, weight_};
  }

 private:
  double weight_;
};

}  // namespace scevo
