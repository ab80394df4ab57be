#pragma once

#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "scevo/geometry.hpp"
#include "scevo/patch_graph.hpp"
#include "scevo/synthetic_world.hpp"

namespace scevo {

struct TrajectoryRecord {
  std::vector<double> timestamps;  // seconds, strictly increasing
  std::vector<Pose> poses;         // camera-to-world
  // Quaternions as read from text. format_tum reuses an entry while its
  // rotation still matches the pose bit for bit, so text round-trips exactly.
  std::vector<Eigen::Quaterniond> quaternions;

  std::size_t size() const { return poses.size(); }
  /// Throws InvalidArgument.
  void validate() const;
};

/// TUM format: `timestamp tx ty tz qx qy qz qw` per line, '#' comments.
/// Numbers are written in shortest round-trip form; quaternions are unit with
/// qw >= 0.
TrajectoryRecord parse_tum(std::istream& in, const std::string& source);
TrajectoryRecord read_tum(const std::string& path);
std::string format_tum(const TrajectoryRecord& record);
void write_tum(const std::string& path, const TrajectoryRecord& record);

enum class AlignMode { kNone, kSE3, kSim3 };

const char* to_string(AlignMode mode);

/// (est index, ref index) pairs, nearest timestamp within `tolerance`, in
/// est order. Throws NoAssociations when nothing matches.
std::vector<std::pair<int, int>> associate(const TrajectoryRecord& est,
                                           const TrajectoryRecord& ref,
                                           double tolerance = 0.02);

/// Least-squares transform with dst ~ T * src. Throws DegenerateConfiguration
/// for fewer than 3 points or collinear sets.
Sim3 umeyama_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                   AlignMode mode);

/// Aligns est positions onto ref using the first `frames` associated pairs
/// (0 = all). kNone returns identity.
Sim3 umeyama_align(const TrajectoryRecord& est, const TrajectoryRecord& ref,
                   AlignMode mode, int frames = 0);

double ate_rmse(const TrajectoryRecord& est, const TrajectoryRecord& ref,
                AlignMode mode);

struct ScaleProfile {
  std::vector<double> timestamps;  // est timestamps of associated frames
  std::vector<int> frames;         // est indices
  std::vector<double> scale;       // s_t, smoothed
  std::vector<double> log_bias;    // ln s_t
  int alignment_frames = 0;

  double max_abs_log_bias() const;
};

/// s_t = |p_t^est - p_{t-1}^est| / |p_t^ref - p_{t-1}^ref| after SE3
/// alignment over the first `anchor_frames`, averaged over a centered window
/// of `smoothing` frames (truncated at the ends). Steps where ref moves less
/// than 1 cm carry the previous value. Throws NoMotion, InvalidArgument.
ScaleProfile scale_profile(const TrajectoryRecord& est,
                           const TrajectoryRecord& ref, int anchor_frames = 20,
                           int smoothing = 11);

std::string format_scale_profile(const ScaleProfile& profile);

/// sum_k |align * X_k - X_k^GT|^2 over every patch in the graph, using the
/// stored world points. Throws MissingGroundTruth.
double sc_loss(const PatchGraph& graph, const GroundTruth& gt,
               const Sim3& align = {});

/// Mean unweighted endpoint error (px) over the current flow edges.
double flow_loss(const PatchGraph& graph);

/// Mean |log(dT_ref^-1 dT_est)| over consecutive associated frames.
double pose_loss(const TrajectoryRecord& est, const TrajectoryRecord& ref);

inline constexpr double kFlowLossWeight = 0.1;
inline constexpr double kPoseLossWeight = 10.0;

inline double total_loss(double flow, double pose, double sc) {
  return kFlowLossWeight * flow + kPoseLossWeight * pose + sc;
}

}  // namespace scevo
