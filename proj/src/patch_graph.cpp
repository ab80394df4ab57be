#include "scevo/patch_graph.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <utility>

#include "scevo/error.hpp"

namespace scevo {
namespace {

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

PatchGraph::PatchGraph(const CameraIntrinsics& camera,
                       const GraphOptions& options)
    : camera_(camera), options_(options) {
  validate(camera_);
  if (options_.window_length < 2 || options_.reference_span < 0 ||
      options_.reference_cap <= 0 || options_.reference_keep_fraction < 0.0 ||
      options_.reference_keep_fraction > 1.0) {
    raise(ErrorCode::kInvalidArgument, "invalid patch graph options");
  }
}

Patch& PatchGraph::patch(int id) {
  auto it = index_.find(id);
  if (it == index_.end()) {
    raise(ErrorCode::kUnknownPatch, "unknown patch id " + std::to_string(id));
  }
  return patches_[it->second];
}

const Patch& PatchGraph::patch(int id) const {
  return const_cast<PatchGraph*>(this)->patch(id);
}

int PatchGraph::add_frame(const Pose& pose_init, const FrameTracks& tracks) {
  const int id = num_frames();
  if (tracks.frame != id) {
    std::ostringstream msg;
    msg << "add_frame: expected tracks for frame " << id << ", got frame "
        << tracks.frame;
    raise(ErrorCode::kInvalidArgument, msg.str());
  }
  if (tracks.new_patches.empty()) {
    raise(ErrorCode::kEmptyTracks,
          "add_frame: frame " + std::to_string(id) + " carries no patches");
  }
  if (!pose_init.is_valid(1e-6)) {
    raise(ErrorCode::kInvalidArgument, "add_frame: invalid initial pose");
  }

  std::vector<double> given;
  for (const auto& p : tracks.new_patches) {
    if (p.init_depth > 0.0) given.push_back(p.init_depth);
  }
  double fallback_depth = 1.0;
  if (!given.empty()) {
    fallback_depth = median(given);
  } else {
    std::vector<double> active;
    for (int pid : active_patch_ids()) active.push_back(patch(pid).depth);
    if (!active.empty()) fallback_depth = median(active);
  }

  Frame frame;
  frame.id = id;
  frame.timestamp = tracks.timestamp;
  frame.pose = pose_init;
  frames_.push_back(frame);

  for (const auto& np : tracks.new_patches) {
    if (index_.count(np.patch_id)) {
      raise(ErrorCode::kInvalidArgument,
            "add_frame: duplicate patch id " + std::to_string(np.patch_id));
    }
    Patch p;
    p.id = np.patch_id;
    p.frame_id = id;
    p.center = np.center;
    p.init_depth = np.init_depth > 0.0 ? np.init_depth : fallback_depth;
    p.depth = p.init_depth;
    p.match_feature = np.match_feature;
    p.ctx_feature = np.ctx_feature;
    index_[p.id] = patches_.size();
    patches_.push_back(std::move(p));
    frames_.back().patch_ids.push_back(np.patch_id);
  }

  window_first_ = std::max(0, id - options_.window_length + 1);
  std::erase_if(edges_, [&](const FlowEdge& e) {
    return !in_window(e.src_frame) || !in_window(e.dst_frame);
  });

  std::set<std::pair<int, int>> existing;
  for (const auto& e : edges_) existing.insert({e.patch_id, e.dst_frame});

  for (const auto& link : tracks.links) {
    const Patch& p = patch(link.patch_id);
    if (p.frame_id == link.frame) continue;
    if (!in_window(p.frame_id) || !in_window(link.frame)) continue;
    if (p.frame_id != id && link.frame != id) continue;
    if (!(link.weight >= 0.0)) {
      raise(ErrorCode::kInvalidArgument,
            "add_frame: negative flow weight for patch " +
                std::to_string(link.patch_id));
    }
    if (!existing.insert({link.patch_id, link.frame}).second) continue;
    FlowEdge e;
    e.src_frame = p.frame_id;
    e.dst_frame = link.frame;
    e.patch_id = link.patch_id;
    e.target = link.uv;
    e.weight = Vec2::Constant(link.weight);
    edges_.push_back(e);
  }
  return id;
}

std::vector<int> PatchGraph::active_patch_ids() const {
  std::vector<int> ids;
  for (int f = window_first_; f <= window_last(); ++f) {
    const auto& fp = frames_[f].patch_ids;
    ids.insert(ids.end(), fp.begin(), fp.end());
  }
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::vector<int> PatchGraph::select_reference_patches(
    double window_center) const {
  std::vector<int> history;
  for (int f = 0; f < window_first_; ++f) history.push_back(f);
  std::sort(history.begin(), history.end(), [&](int a, int b) {
    const double da = std::abs(a - window_center);
    const double db = std::abs(b - window_center);
    return da != db ? da < db : a < b;
  });
  if (static_cast<int>(history.size()) > options_.reference_span) {
    history.resize(options_.reference_span);
  }

  std::vector<const Patch*> pool;
  for (int f : history) {
    for (int pid : frames_[f].patch_ids) pool.push_back(&patch(pid));
  }
  std::sort(pool.begin(), pool.end(), [](const Patch* a, const Patch* b) {
    return a->last_residual != b->last_residual
               ? a->last_residual < b->last_residual
               : a->id < b->id;
  });
  std::size_t keep = static_cast<std::size_t>(
      std::floor(options_.reference_keep_fraction * pool.size()));
  keep = std::min<std::size_t>(keep, options_.reference_cap);

  std::vector<int> ids;
  ids.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) ids.push_back(pool[i]->id);
  return ids;
}

void PatchGraph::set_reference_set(std::vector<int> ids) {
  if (static_cast<int>(ids.size()) > options_.reference_cap) {
    raise(ErrorCode::kInvalidArgument, "reference set exceeds its cap");
  }
  for (int id : ids) {
    if (in_window(patch(id).frame_id)) {
      raise(ErrorCode::kInvalidArgument,
            "reference patch " + std::to_string(id) + " is in the window");
    }
  }
  reference_set_ = std::move(ids);
}

void PatchGraph::update_world_points() {
  for (auto& p : patches_) {
    if (!(p.depth > 0.0)) {
      std::ostringstream msg;
      msg << "patch " << p.id << " has non-positive depth " << p.depth;
      raise(ErrorCode::kNonPositiveDepth, msg.str());
    }
    p.world_point = transform_to_world(
        frames_[p.frame_id].pose, backproject(camera_, p.center, p.depth));
  }
}

}  // namespace scevo
