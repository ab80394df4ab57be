#include <algorithm>
#include <bit>
#include <cstdint>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>

#include "scevo/error.hpp"
#include "scevo/tracks.hpp"

namespace scevo {

int PatchTrackSet::num_frames() const {
  int n = 0;
  for (const auto& t : tracks) {
    n = std::max(n, t.source_frame + 1);
    for (const auto& o : t.observations) n = std::max(n, o.frame + 1);
  }
  return n;
}

double PatchTrackSet::timestamp(int frame) const {
  if (frame >= 0 && frame < static_cast<int>(timestamps.size())) {
    return timestamps[frame];
  }
  return 0.1 * frame;
}

const PatchTrack* PatchTrackSet::find(int patch_id) const {
  auto it = std::lower_bound(
      tracks.begin(), tracks.end(), patch_id,
      [](const PatchTrack& t, int id) { return t.patch_id < id; });
  return it != tracks.end() && it->patch_id == patch_id ? &*it : nullptr;
}

void PatchTrackSet::sort_by_id() {
  std::sort(tracks.begin(), tracks.end(),
            [](const PatchTrack& a, const PatchTrack& b) {
              return a.patch_id < b.patch_id;
            });
}

FrameTracks PatchTrackSet::frame_slice(int frame) const {
  FrameTracks out;
  out.frame = frame;
  out.timestamp = timestamp(frame);
  for (const auto& t : tracks) {
    if (t.source_frame == frame) {
      FrameTracks::NewPatch np;
      np.patch_id = t.patch_id;
      np.center = t.center;
      np.init_depth = t.init_depth;
      np.score = t.score;
      np.match_feature = t.match_feature;
      np.ctx_feature = t.ctx_feature;
      out.new_patches.push_back(std::move(np));
      for (const auto& o : t.observations) {
        if (o.frame < frame) {
          out.links.push_back({t.patch_id, o.frame, o.uv, o.weight});
        }
      }
    } else if (t.source_frame < frame) {
      for (const auto& o : t.observations) {
        if (o.frame == frame) {
          out.links.push_back({t.patch_id, o.frame, o.uv, o.weight});
        }
      }
    }
  }
  return out;
}

PatchTrackSet read_track_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::kIo, "cannot open track file '" + path + "'");
  std::map<int, PatchTrack> by_id;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    int frame = 0, id = 0;
    double u = 0, v = 0, score = 0;
    if (!(ss >> frame >> id >> u >> v >> score)) {
      raise(ErrorCode::kParse, path + ":" + std::to_string(line_no) +
                                   ": expected 'frame_idx patch_id u v score'");
    }
    double depth = 0.0;
    const bool has_depth = static_cast<bool>(ss >> depth);
    std::string rest;
    if (ss.clear(), ss >> rest) {
      raise(ErrorCode::kParse,
            path + ":" + std::to_string(line_no) + ": trailing fields");
    }
    if (frame < 0) {
      raise(ErrorCode::kParse,
            path + ":" + std::to_string(line_no) + ": negative frame index");
    }
    auto [it, inserted] = by_id.try_emplace(id);
    PatchTrack& t = it->second;
    if (inserted) {
      t.patch_id = id;
      t.source_frame = frame;
      t.center = {u, v};
      t.score = score;
      t.init_depth = has_depth ? depth : 0.0;
    } else {
      if (has_depth) {
        raise(ErrorCode::kParse, path + ":" + std::to_string(line_no) +
                                     ": depth only allowed on the first "
                                     "record of a patch");
      }
      t.observations.push_back({frame, {u, v}, score});
    }
  }
  PatchTrackSet set;
  for (auto& [id, t] : by_id) set.tracks.push_back(std::move(t));
  return set;
}

void write_track_file(const std::string& path, const PatchTrackSet& set) {
  std::FILE* f = std::fopen(path.c_str(), "w");
  if (!f) raise(ErrorCode::kIo, "cannot write track file '" + path + "'");
  std::fprintf(f, "# frame_idx patch_id u v score [depth]\n");
  for (const auto& t : set.tracks) {
    if (t.init_depth > 0.0) {
      std::fprintf(f, "%d %d %.17g %.17g %.17g %.17g\n", t.source_frame,
                   t.patch_id, t.center.x(), t.center.y(), t.score,
                   t.init_depth);
    } else {
      std::fprintf(f, "%d %d %.17g %.17g %.17g\n", t.source_frame, t.patch_id,
                   t.center.x(), t.center.y(), t.score);
    }
    for (const auto& o : t.observations) {
      std::fprintf(f, "%d %d %.17g %.17g %.17g\n", o.frame, t.patch_id,
                   o.uv.x(), o.uv.y(), o.weight);
    }
  }
  if (std::fclose(f) != 0) {
    raise(ErrorCode::kIo, "failed writing track file '" + path + "'");
  }
}

namespace {

constexpr char kFeatureMagic[4] = {'S', 'C', 'E', 'F'};

void put_u32(std::ostream& out, std::uint32_t v) {
  const char b[4] = {static_cast<char>(v & 0xff),
                     static_cast<char>((v >> 8) & 0xff),
                     static_cast<char>((v >> 16) & 0xff),
                     static_cast<char>((v >> 24) & 0xff)};
  out.write(b, 4);
}

std::uint32_t get_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) |
         (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) |
         (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write_feature_file(const std::string& path, const PatchTrackSet& set) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::kIo, "cannot write feature file '" + path + "'");
  std::uint32_t dim = 0;
  if (!set.tracks.empty()) {
    dim = static_cast<std::uint32_t>(set.tracks.front().match_feature.size() +
                                     set.tracks.front().ctx_feature.size());
  }
  out.write(kFeatureMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(set.tracks.size()));
  put_u32(out, dim);
  for (const auto& t : set.tracks) {
    if (t.match_feature.size() != t.ctx_feature.size() ||
        static_cast<std::uint32_t>(t.match_feature.size() +
                                   t.ctx_feature.size()) != dim) {
      raise(ErrorCode::kDimensionMismatch,
            "feature dims differ for patch " + std::to_string(t.patch_id));
    }
    for (const auto* vec : {&t.match_feature, &t.ctx_feature}) {
      for (Eigen::Index i = 0; i < vec->size(); ++i) {
        put_u32(out, std::bit_cast<std::uint32_t>(static_cast<float>((*vec)[i])));
      }
    }
  }
  if (!out) raise(ErrorCode::kIo, "failed writing feature file '" + path + "'");
}

void read_feature_file(const std::string& path, PatchTrackSet& set) {
  std::ifstream in(path, std::ios::binary);
  if (!in) raise(ErrorCode::kIo, "cannot open feature file '" + path + "'");
  char magic[4];
  in.read(magic, 4);
  if (!in || std::memcmp(magic, kFeatureMagic, 4) != 0) {
    raise(ErrorCode::kParse, path + ": bad magic, expected SCEF");
  }
  const std::uint32_t count = get_u32(in);
  const std::uint32_t dim = get_u32(in);
  if (!in) raise(ErrorCode::kParse, path + ": truncated header");
  if (count != set.tracks.size()) {
    raise(ErrorCode::kDimensionMismatch,
          path + ": feature rows (" + std::to_string(count) +
              ") do not match track count (" +
              std::to_string(set.tracks.size()) + ")");
  }
  if (dim % 2 != 0) {
    raise(ErrorCode::kDimensionMismatch, path + ": odd feature dimension");
  }
  const int half = static_cast<int>(dim / 2);
  for (auto& t : set.tracks) {
    t.match_feature.resize(half);
    t.ctx_feature.resize(half);
    for (int i = 0; i < static_cast<int>(dim); ++i) {
      const double v = std::bit_cast<float>(get_u32(in));
      (i < half ? t.match_feature[i] : t.ctx_feature[i - half]) = v;
    }
  }
  if (!in) raise(ErrorCode::kParse, path + ": truncated feature payload");
}

}  // namespace scevo
