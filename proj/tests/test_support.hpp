#pragma once

#include <unistd.h>

#include <filesystem>
#include <optional>
#include <fstream>
#include <random>
#include <string>

#include "scevo/error.hpp"
#include "scevo/geometry.hpp"
#include "scevo/patch_graph.hpp"
#include "scevo/synthetic_world.hpp"

namespace scevo::test {

inline WorldSpec small_spec(int n_frames, int patches, double sigma = 0.0,
                            std::uint64_t seed = 3) {
  WorldSpec s;
  s.seed = seed;
  s.n_frames = n_frames;
  s.patches_per_frame = patches;
  s.pixel_noise_sigma = sigma;
  s.trajectory = TrajectoryKind::kArc;
  s.window_length = 10;
  s.match_dim = 384;
  s.ctx_dim = 384;
  return s;
}

/// Feeds the first `n_frames` frames of a world into a graph with ground-truth
/// poses and source depths.
inline PatchGraph graph_at_truth(const World& world,
                                 const CameraIntrinsics& camera,
                                 int n_frames, GraphOptions options = {}) {
  PatchGraph g(camera, options);
  for (int f = 0; f < n_frames; ++f) {
    FrameTracks slice = world.tracks.frame_slice(f);
    for (auto& p : slice.new_patches)
      p.init_depth = world.gt.source_depths.at(p.patch_id);
    g.add_frame(world.gt.poses[f], slice);
  }
  return g;
}

inline Pose random_pose(std::mt19937_64& rng, double max_angle = 1.0,
                        double max_trans = 2.0) {
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Vec3 axis(u(rng), u(rng), u(rng));
  axis.normalize();
  const double angle = max_angle * 0.999 * std::abs(u(rng));
  return Pose(so3_exp(angle * axis),
              Vec3(max_trans * u(rng), max_trans * u(rng), max_trans * u(rng)));
}

/// Error code thrown by `fn`, or nullopt if it returns normally.
template <typename F>
std::optional<ErrorCode> code_of(F&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  return std::nullopt;
}

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static int counter = 0;
    path_ = std::filesystem::temp_directory_path() /
            ("scevo_" + tag + "_" + std::to_string(::getpid()) + "_" +
             std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  std::string str() const { return path_.string(); }
  std::string file(const std::string& name) const {
    return (path_ / name).string();
  }

 private:
  std::filesystem::path path_;
};

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream(path, std::ios::binary) << text;
}

inline std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

}  // namespace scevo::test
