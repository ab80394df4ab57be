#include "scevo/evaluation.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include <Eigen/Geometry>
#include <Eigen/SVD>

#include "scevo/bundle_adjustment.hpp"
#include "scevo/error.hpp"

namespace scevo {

void TrajectoryRecord::validate() const {
  if (timestamps.size() != poses.size())
    raise(ErrorCode::kInvalidArgument,
          "trajectory has " + std::to_string(timestamps.size()) +
              " timestamps but " + std::to_string(poses.size()) + " poses");
  for (std::size_t i = 1; i < timestamps.size(); ++i)
    if (!(timestamps[i] > timestamps[i - 1]))
      raise(ErrorCode::kInvalidArgument,
            "trajectory timestamps not strictly increasing at index " +
                std::to_string(i));
}

TrajectoryRecord parse_tum(std::istream& in, const std::string& source) {
  TrajectoryRecord rec;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    std::istringstream ss(line);
    double v[8];
    for (double& x : v) {
      if (!(ss >> x))
        raise(ErrorCode::kParse, source + ":" + std::to_string(line_no) +
                                     ": expected 8 numbers");
    }
    std::string extra;
    if (ss >> extra)
      raise(ErrorCode::kParse, source + ":" + std::to_string(line_no) +
                                   ": trailing field '" + extra + "'");
    Eigen::Quaterniond q(v[7], v[4], v[5], v[6]);
    const double norm = q.norm();
    if (!(norm > 1e-6) || !std::isfinite(norm))
      raise(ErrorCode::kParse, source + ":" + std::to_string(line_no) +
                                   ": invalid quaternion");
    if (std::abs(norm - 1.0) > 1e-15) q.coeffs() /= norm;
    if (!rec.timestamps.empty() && !(v[0] > rec.timestamps.back()))
      raise(ErrorCode::kParse, source + ":" + std::to_string(line_no) +
                                   ": timestamps must increase");
    rec.timestamps.push_back(v[0]);
    rec.poses.emplace_back(q.toRotationMatrix(), Vec3(v[1], v[2], v[3]));
    rec.quaternions.push_back(q);
  }
  return rec;
}

TrajectoryRecord read_tum(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::kIo, "cannot open trajectory '" + path + "'");
  return parse_tum(in, path);
}

namespace {

void append_number(std::string& out, double v) {
  char buf[64];
  const auto r = std::to_chars(buf, buf + sizeof(buf), v);
  out.append(buf, r.ptr);
}

}  // namespace

std::string format_tum(const TrajectoryRecord& rec) {
  rec.validate();
  std::string out = "# timestamp tx ty tz qx qy qz qw\n";
  for (std::size_t i = 0; i < rec.size(); ++i) {
    const Mat3& r = rec.poses[i].rotation();
    Eigen::Quaterniond q;
    if (rec.quaternions.size() == rec.size() &&
        rec.quaternions[i].toRotationMatrix() == r) {
      q = rec.quaternions[i];
    } else {
      q = Eigen::Quaterniond(r);
      q.normalize();
      if (q.w() < 0.0) q.coeffs() = -q.coeffs();
    }
    const Vec3& t = rec.poses[i].translation();
    const double fields[8] = {rec.timestamps[i], t.x(), t.y(), t.z(),
                              q.x(), q.y(), q.z(), q.w()};
    for (int k = 0; k < 8; ++k) {
      if (k) out += ' ';
      append_number(out, fields[k] == 0.0 ? 0.0 : fields[k]);
    }
    out += '\n';
  }
  return out;
}

void write_tum(const std::string& path, const TrajectoryRecord& rec) {
  std::ofstream out(path, std::ios::binary);
  if (!out) raise(ErrorCode::kIo, "cannot write trajectory '" + path + "'");
  out << format_tum(rec);
  if (!out) raise(ErrorCode::kIo, "write failed for '" + path + "'");
}

const char* to_string(AlignMode mode) {
  switch (mode) {
    case AlignMode::kNone: return "none";
    case AlignMode::kSE3: return "se3";
    case AlignMode::kSim3: return "sim3";
  }
  return "unknown";
}

std::vector<std::pair<int, int>> associate(const TrajectoryRecord& est,
                                           const TrajectoryRecord& ref,
                                           double tolerance) {
  std::vector<std::pair<int, int>> pairs;
  const auto& rt = ref.timestamps;
  for (int i = 0; i < static_cast<int>(est.size()); ++i) {
    const double t = est.timestamps[i];
    auto it = std::lower_bound(rt.begin(), rt.end(), t);
    int best = -1;
    double best_dt = tolerance;
    for (auto c : {it - 1, it}) {
      if (c < rt.begin() || c >= rt.end()) continue;
      const double dt = std::abs(*c - t);
      if (dt <= best_dt) {
        // Ties go to the earlier reference sample.
        if (best >= 0 && dt == best_dt) continue;
        best_dt = dt;
        best = static_cast<int>(c - rt.begin());
      }
    }
    if (best >= 0) pairs.emplace_back(i, best);
  }
  if (pairs.empty())
    raise(ErrorCode::kNoAssociations,
          "no timestamps within " + std::to_string(tolerance) +
              " s between trajectories");
  return pairs;
}

namespace {

void require_spread(const Eigen::Matrix3Xd& pts, const char* which) {
  const Eigen::Matrix3Xd centered = pts.colwise() - pts.rowwise().mean();
  const Eigen::Vector3d sv =
      Eigen::JacobiSVD<Eigen::Matrix3Xd>(centered).singularValues();
  if (!(sv[0] > 0.0) || sv[1] <= 1e-10 * sv[0])
    raise(ErrorCode::kDegenerateConfiguration,
          std::string(which) + " points are identical or collinear");
}

}  // namespace

Sim3 umeyama_align(const std::vector<Vec3>& src, const std::vector<Vec3>& dst,
                   AlignMode mode) {
  if (src.size() != dst.size())
    raise(ErrorCode::kInvalidArgument, "umeyama: point count mismatch");
  if (mode == AlignMode::kNone) return {};
  if (src.size() < 3)
    raise(ErrorCode::kDegenerateConfiguration,
          "umeyama: need at least 3 points, got " + std::to_string(src.size()));
  Eigen::Matrix3Xd a(3, src.size()), b(3, dst.size());
  for (std::size_t i = 0; i < src.size(); ++i) {
    a.col(i) = src[i];
    b.col(i) = dst[i];
  }
  require_spread(a, "source");
  require_spread(b, "target");
  const Eigen::Matrix4d m = Eigen::umeyama(a, b, mode == AlignMode::kSim3);
  Sim3 out;
  const Mat3 sr = m.topLeftCorner<3, 3>();
  out.scale = mode == AlignMode::kSim3 ? std::cbrt(sr.determinant()) : 1.0;
  out.pose = Pose(sr / out.scale, m.topRightCorner<3, 1>());
  return out;
}

Sim3 umeyama_align(const TrajectoryRecord& est, const TrajectoryRecord& ref,
                   AlignMode mode, int frames) {
  const auto pairs = associate(est, ref);
  const std::size_t n =
      frames > 0 ? std::min<std::size_t>(frames, pairs.size()) : pairs.size();
  std::vector<Vec3> src, dst;
  for (std::size_t k = 0; k < n; ++k) {
    src.push_back(est.poses[pairs[k].first].translation());
    dst.push_back(ref.poses[pairs[k].second].translation());
  }
  return umeyama_align(src, dst, mode);
}

double ate_rmse(const TrajectoryRecord& est, const TrajectoryRecord& ref,
                AlignMode mode) {
  const auto pairs = associate(est, ref);
  const Sim3 t = umeyama_align(est, ref, mode);
  double sum = 0.0;
  for (const auto& [i, j] : pairs)
    sum += (t * est.poses[i].translation() - ref.poses[j].translation())
               .squaredNorm();
  return std::sqrt(sum / pairs.size());
}

double ScaleProfile::max_abs_log_bias() const {
  double m = 0.0;
  for (double b : log_bias) m = std::max(m, std::abs(b));
  return m;
}

ScaleProfile scale_profile(const TrajectoryRecord& est,
                           const TrajectoryRecord& ref, int anchor_frames,
                           int smoothing) {
  if (anchor_frames < 3)
    raise(ErrorCode::kInvalidArgument, "anchor_frames must be at least 3");
  if (smoothing < 1)
    raise(ErrorCode::kInvalidArgument, "smoothing window must be positive");
  constexpr double kStationary = 0.01;

  const auto pairs = associate(est, ref);
  const int n = static_cast<int>(pairs.size());
  ScaleProfile out;
  out.alignment_frames = std::min(anchor_frames, n);
  std::vector<Vec3> pe(n), pr(n);
  bool moves = false;
  for (int k = 0; k < n; ++k) {
    pr[k] = ref.poses[pairs[k].second].translation();
    if (k > 0 && (pr[k] - pr[k - 1]).norm() >= kStationary) moves = true;
  }
  if (!moves)
    raise(ErrorCode::kNoMotion, "reference trajectory never moves 1 cm");
  const Sim3 align = umeyama_align(est, ref, AlignMode::kSE3, anchor_frames);
  for (int k = 0; k < n; ++k)
    pe[k] = align * est.poses[pairs[k].first].translation();

  std::vector<double> raw(n, 0.0);
  int first_valid = -1;
  for (int k = 1; k < n; ++k) {
    const double dr = (pr[k] - pr[k - 1]).norm();
    if (dr < kStationary) {
      raw[k] = first_valid >= 0 ? raw[k - 1] : 0.0;
      continue;
    }
    raw[k] = (pe[k] - pe[k - 1]).norm() / dr;
    if (first_valid < 0) first_valid = k;
  }
  for (int k = 0; k < first_valid; ++k) raw[k] = raw[first_valid];

  const int half = smoothing / 2;
  for (int k = 0; k < n; ++k) {
    const int lo = std::max(0, k - half);
    const int hi = std::min(n - 1, k + half);
    double s = 0.0;
    for (int m = lo; m <= hi; ++m) s += raw[m];
    s /= (hi - lo + 1);
    if (!(s > 0.0))
      raise(ErrorCode::kDegenerateConfiguration,
            "estimated trajectory is stationary around frame " +
                std::to_string(pairs[k].first));
    out.frames.push_back(pairs[k].first);
    out.timestamps.push_back(est.timestamps[pairs[k].first]);
    out.scale.push_back(s);
    out.log_bias.push_back(std::log(s));
  }
  return out;
}

std::string format_scale_profile(const ScaleProfile& p) {
  std::string out = "frame\ttimestamp\ts_t\tlog_bias\n";
  char buf[160];
  for (std::size_t k = 0; k < p.scale.size(); ++k) {
    std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.9f\t%.9f\n", p.frames[k],
                  p.timestamps[k], p.scale[k], p.log_bias[k]);
    out += buf;
  }
  return out;
}

double sc_loss(const PatchGraph& graph, const GroundTruth& gt,
               const Sim3& align) {
  if (gt.points.empty())
    raise(ErrorCode::kMissingGroundTruth, "no ground-truth points available");
  double sum = 0.0;
  for (const Patch& p : graph.patches()) {
    auto it = gt.points.find(p.id);
    if (it == gt.points.end())
      raise(ErrorCode::kMissingGroundTruth,
            "no ground truth for patch " + std::to_string(p.id));
    sum += (align * p.world_point - it->second).squaredNorm();
  }
  return sum;
}

double flow_loss(const PatchGraph& graph) {
  double sum = 0.0;
  int count = 0;
  for (FlowEdge e : graph.edges()) {
    e.weight = Vec2::Ones();
    const FlowResidual r = flow_residual(e, graph);
    if (!r.valid) continue;
    sum += r.value.norm();
    ++count;
  }
  return count ? sum / count : 0.0;
}

double pose_loss(const TrajectoryRecord& est, const TrajectoryRecord& ref) {
  const auto pairs = associate(est, ref);
  if (pairs.size() < 2) return 0.0;
  double sum = 0.0;
  for (std::size_t k = 1; k < pairs.size(); ++k) {
    const Pose de = est.poses[pairs[k - 1].first].inverse() *
                    est.poses[pairs[k].first];
    const Pose dr = ref.poses[pairs[k - 1].second].inverse() *
                    ref.poses[pairs[k].second];
    sum += se3_log(dr.inverse() * de).vector().norm();
  }
  return sum / (pairs.size() - 1);
}

}  // namespace scevo
