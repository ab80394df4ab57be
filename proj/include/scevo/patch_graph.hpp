#pragma once

#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "scevo/geometry.hpp"
#include "scevo/tracks.hpp"

namespace scevo {

inline constexpr int kEmbeddingDim = 384;

struct Patch {
  int id = 0;
  int frame_id = 0;
  Vec2 center = Vec2::Zero();
  double depth = 1.0;
  double init_depth = 1.0;  // front-end initialization, restored per window
  Eigen::VectorXd match_feature;
  Eigen::VectorXd ctx_feature;
  Eigen::VectorXd embedding = Eigen::VectorXd::Zero(kEmbeddingDim);
  Vec3 world_point = Vec3::Zero();
  double last_residual = 0.0;
  // Scene-coordinate prior decoded from the embedding and its confidence.
  bool has_prior = false;
  Vec3 prior = Vec3::Zero();
  double confidence = 0.0;
};

struct FlowEdge {
  int src_frame = 0;  // source frame of the patch
  int dst_frame = 0;
  int patch_id = 0;
  Vec2 target = Vec2::Zero();
  Vec2 weight = Vec2::Ones();
};

struct Frame {
  int id = 0;
  double timestamp = 0.0;
  Pose pose;
  std::vector<int> patch_ids;
};

struct GraphOptions {
  int window_length = 10;
  int reference_span = 30;        // historical frames considered
  int reference_cap = 1200;
  double reference_keep_fraction = 0.5;
};

/// Frames, patches and flow edges of a sliding-window odometry problem.
///
/// Edges only ever join two frames of the active window; they are dropped as
/// soon as either frame leaves it. Patches and frames are kept for the whole
/// run: historical patches are the pool reference sets are drawn from.
class PatchGraph {
 public:
  PatchGraph(const CameraIntrinsics& camera, const GraphOptions& options);

  const CameraIntrinsics& camera() const { return camera_; }
  const GraphOptions& options() const { return options_; }

  /// Appends a frame, registers its patches and links it to the window.
  /// `tracks.frame` must equal the next frame id.
  int add_frame(const Pose& pose_init, const FrameTracks& tracks);

  /// Low-residual historical patches around `window_center`, sorted by
  /// (last_residual, id).
  std::vector<int> select_reference_patches(double window_center) const;

  /// world_point = T[frame] * backproject(center, depth) for every patch.
  void update_world_points();

  int num_frames() const { return static_cast<int>(frames_.size()); }
  int window_first() const { return window_first_; }
  int window_last() const { return num_frames() - 1; }
  double window_center() const {
    return 0.5 * (window_first_ + window_last());
  }
  bool in_window(int frame) const {
    return frame >= window_first_ && frame <= window_last();
  }

  std::vector<Frame>& frames() { return frames_; }
  const std::vector<Frame>& frames() const { return frames_; }
  std::vector<Patch>& patches() { return patches_; }
  const std::vector<Patch>& patches() const { return patches_; }
  const std::vector<FlowEdge>& edges() const { return edges_; }

  Patch& patch(int id);
  const Patch& patch(int id) const;
  bool has_patch(int id) const { return index_.count(id) != 0; }

  /// Ids of patches whose source frame is in the window, ascending.
  std::vector<int> active_patch_ids() const;

  const std::vector<int>& reference_set() const { return reference_set_; }
  void set_reference_set(std::vector<int> ids);

  bool initialized() const { return initialized_; }
  void set_initialized(bool v) { initialized_ = v; }

 private:
  CameraIntrinsics camera_;
  GraphOptions options_;
  std::vector<Frame> frames_;
  std::vector<Patch> patches_;
  std::unordered_map<int, std::size_t> index_;
  std::vector<FlowEdge> edges_;
  std::vector<int> reference_set_;
  int window_first_ = 0;
  bool initialized_ = false;
};

}  // namespace scevo
