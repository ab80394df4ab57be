#pragma once

#include <string>
#include <vector>

#include <Eigen/Core>

#include "scevo/geometry.hpp"

namespace scevo {

/// One tracked patch as delivered by a front end.
struct PatchTrack {
  struct Observation {
    int frame = 0;
    Vec2 uv = Vec2::Zero();
    double weight = 1.0;  // flow confidence for edges ending here
  };

  int patch_id = 0;
  int source_frame = 0;
  Vec2 center = Vec2::Zero();
  double score = 1.0;       // keypoint score of the source detection
  double init_depth = 0.0;  // <= 0 means "not provided"
  std::vector<Observation> observations;  // excludes the source detection
  Eigen::VectorXd match_feature;
  Eigen::VectorXd ctx_feature;
};

/// Everything add_frame needs for one frame: the patches born in it, and the
/// observations linking it to patches of other frames.
struct FrameTracks {
  struct NewPatch {
    int patch_id = 0;
    Vec2 center = Vec2::Zero();
    double init_depth = 0.0;
    double score = 1.0;
    Eigen::VectorXd match_feature;
    Eigen::VectorXd ctx_feature;
  };
  struct Link {
    int patch_id = 0;
    int frame = 0;  // frame the patch is observed in
    Vec2 uv = Vec2::Zero();
    double weight = 1.0;
  };

  int frame = 0;
  double timestamp = 0.0;
  std::vector<NewPatch> new_patches;
  std::vector<Link> links;
};

struct PatchTrackSet {
  std::vector<PatchTrack> tracks;  // ascending patch_id
  std::vector<double> timestamps;  // per frame; empty means 10 Hz

  int num_frames() const;
  double timestamp(int frame) const;
  const PatchTrack* find(int patch_id) const;

  /// Patches born in `frame`, observations in `frame` of older patches, and
  /// observations of the new patches in earlier frames.
  FrameTracks frame_slice(int frame) const;

  void sort_by_id();
};

/// Track file: one record per line, `frame_idx patch_id u v score [depth]`.
/// The first record of each patch id is its source detection and may carry an
/// initial depth. '#' starts a comment line.
PatchTrackSet read_track_file(const std::string& path);
void write_track_file(const std::string& path, const PatchTrackSet& set);

/// Feature sidecar: "SCEF", u32 count, u32 dim, then count rows of dim
/// little-endian f32. Row i belongs to the i-th track in id order; the first
/// dim/2 values are the match feature, the rest the context feature.
void read_feature_file(const std::string& path, PatchTrackSet& set);
void write_feature_file(const std::string& path, const PatchTrackSet& set);

}  // namespace scevo
