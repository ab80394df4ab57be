#include "scevo/bundle_adjustment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <sstream>

#include <Eigen/Cholesky>

#include "scevo/error.hpp"
#include "scevo/parallel.hpp"

namespace scevo {

const char* to_string(ResidualMode mode) {
  switch (mode) {
    case ResidualMode::kFlowOnly: return "flow_only";
    case ResidualMode::kScOnly: return "sc_only";
    case ResidualMode::kBoth: return "both";
  }
  return "unknown";
}

FlowResidual flow_residual(const FlowEdge& edge, const PatchGraph& graph) {
  const Patch& patch = graph.patch(edge.patch_id);
  const CameraIntrinsics& cam = graph.camera();
  const Pose& ti = graph.frames()[edge.src_frame].pose;
  const Pose& tj = graph.frames()[edge.dst_frame].pose;

  FlowResidual out;
  out.src_frame = edge.src_frame;
  out.dst_frame = edge.dst_frame;
  out.patch_id = edge.patch_id;
  out.weight = edge.weight;

  const Vec3 n = cam.ray(patch.center);
  const Vec3 xw = ti.rotation() * (patch.depth * n) + ti.translation();
  const Mat3 rjt = tj.rotation().transpose();
  const Vec3 xc = rjt * (xw - tj.translation());
  if (!(xc.z() > 0.0)) {
    out.valid = false;
    return out;
  }

  const double iz = 1.0 / xc.z();
  const Vec2 proj(cam.fx * xc.x() * iz + cam.cx, cam.fy * xc.y() * iz + cam.cy);
  out.value = edge.weight.cwiseProduct(edge.target - proj);

  Mat23 jpi;
  jpi << cam.fx * iz, 0.0, -cam.fx * xc.x() * iz * iz,
         0.0, cam.fy * iz, -cam.fy * xc.y() * iz * iz;
  // r = -diag(w) * Jpi * dXc
  const Mat23 a = -(edge.weight.asDiagonal() * jpi) * rjt;
  const Mat3 sx = skew(xw);
  out.jac_pose_i.leftCols<3>() = a;
  out.jac_pose_i.rightCols<3>() = -a * sx;
  out.jac_pose_j.leftCols<3>() = -a;
  out.jac_pose_j.rightCols<3>() = a * sx;
  out.jac_depth = a * (ti.rotation() * n);
  return out;
}

ScResidual sc_residual(const Patch& patch, const PatchGraph& graph) {
  if (!(patch.depth > 0.0))
    raise(ErrorCode::kNonPositiveDepth,
          "patch " + std::to_string(patch.id) + " has depth " +
              std::to_string(patch.depth));
  const Pose& t = graph.frames()[patch.frame_id].pose;
  const Vec3 n = graph.camera().ray(patch.center);
  const Vec3 xw = t.rotation() * (patch.depth * n) + t.translation();
  const double w = patch.confidence;

  ScResidual out;
  out.patch_id = patch.id;
  out.frame = patch.frame_id;
  out.weight = w;
  out.value = w * (patch.prior - xw);
  out.jac_pose.leftCols<3>() = -w * Mat3::Identity();
  out.jac_pose.rightCols<3>() = w * skew(xw);
  out.jac_depth = -w * (t.rotation() * n);
  return out;
}

double ResidualSet::cost() const {
  double c = 0.0;
  for (const auto& r : flow)
    if (r.valid) c += r.value.squaredNorm();
  for (const auto& r : sc) c += r.value.squaredNorm();
  return c;
}

ResidualSet evaluate_residuals(const PatchGraph& graph, ResidualMode mode,
                               int threads) {
  ResidualSet out;
  if (mode != ResidualMode::kScOnly) {
    const auto& edges = graph.edges();
    out.flow.resize(edges.size());
    parallel_for(edges.size(), threads, [&](std::size_t i) {
      out.flow[i] = flow_residual(edges[i], graph);
      out.flow[i].edge_index = static_cast<int>(i);
    });
  }
  if (mode != ResidualMode::kFlowOnly) {
    for (int id : graph.active_patch_ids()) {
      const Patch& p = graph.patch(id);
      if (!p.has_prior) continue;
      out.sc.push_back(sc_residual(p, graph));
    }
  }
  return out;
}

VariableLayout VariableLayout::for_window(const PatchGraph& graph,
                                          const std::vector<int>& fixed_frames,
                                          bool with_depths) {
  VariableLayout layout;
  for (int f = graph.window_first(); f <= graph.window_last(); ++f) {
    if (std::find(fixed_frames.begin(), fixed_frames.end(), f) !=
        fixed_frames.end())
      continue;
    layout.pose_slot[f] = layout.num_poses();
    layout.pose_frames.push_back(f);
  }
  if (with_depths) {
    for (int id : graph.active_patch_ids()) {
      layout.depth_slot[id] = layout.num_depths();
      layout.depth_patches.push_back(id);
    }
  }
  return layout;
}

NormalEquations::NormalEquations(int num_poses, int num_depths)
    : pose_block(Eigen::MatrixXd::Zero(6 * num_poses, 6 * num_poses)),
      depth_diag(Eigen::VectorXd::Zero(num_depths)),
      coupling(num_depths),
      pose_rhs(Eigen::VectorXd::Zero(6 * num_poses)),
      depth_rhs(Eigen::VectorXd::Zero(num_depths)) {}

void NormalEquations::add_coupling(int depth, int pose, const Vec6& value) {
  auto& row = coupling[depth];
  for (auto& [slot, e] : row) {
    if (slot == pose) {
      e += value;
      return;
    }
  }
  row.emplace_back(pose, value);
}

Eigen::MatrixXd NormalEquations::dense_matrix() const {
  const int np = 6 * num_poses();
  const int nd = num_depths();
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(np + nd, np + nd);
  h.topLeftCorner(np, np) = pose_block;
  for (int k = 0; k < nd; ++k) {
    h(np + k, np + k) = depth_diag[k];
    for (const auto& [slot, e] : coupling[k]) {
      h.block<6, 1>(6 * slot, np + k) = e;
      h.block<1, 6>(np + k, 6 * slot) = e.transpose();
    }
  }
  h.diagonal().array() += damping;
  return h;
}

Eigen::VectorXd NormalEquations::dense_rhs() const {
  Eigen::VectorXd b(pose_rhs.size() + depth_rhs.size());
  b << pose_rhs, depth_rhs;
  return b;
}

namespace {

// IRLS factor sqrt(rho'(|r|^2)) for the Huber loss.
double huber_scale(double norm, const HuberOptions& h) {
  if (!h.enabled || norm <= h.delta) return 1.0;
  return std::sqrt(h.delta / norm);
}

template <int Rows>
void accumulate(NormalEquations& ne, const Eigen::Matrix<double, Rows, 1>& r,
                int slot_a, const Eigen::Matrix<double, Rows, 6>& ja,
                int slot_b, const Eigen::Matrix<double, Rows, 6>& jb,
                int depth, const Eigen::Matrix<double, Rows, 1>& jd) {
  const int slots[2] = {slot_a, slot_b};
  const Eigen::Matrix<double, Rows, 6>* jacs[2] = {&ja, &jb};
  for (int a = 0; a < 2; ++a) {
    if (slots[a] < 0) continue;
    const auto& j1 = *jacs[a];
    ne.pose_rhs.segment<6>(6 * slots[a]) -= j1.transpose() * r;
    for (int b = 0; b < 2; ++b) {
      if (slots[b] < 0) continue;
      ne.pose_block.block<6, 6>(6 * slots[a], 6 * slots[b]) +=
          j1.transpose() * (*jacs[b]);
    }
    if (depth >= 0) ne.add_coupling(depth, slots[a], j1.transpose() * jd);
  }
  if (depth >= 0) {
    ne.depth_diag[depth] += jd.squaredNorm();
    ne.depth_rhs[depth] -= jd.dot(r);
  }
}

int slot_of(const std::unordered_map<int, int>& map, int key) {
  auto it = map.find(key);
  return it == map.end() ? -1 : it->second;
}

}  // namespace

NormalEquations build_normal_equations(const ResidualSet& residuals,
                                       const VariableLayout& layout,
                                       double damping,
                                       const HuberOptions& huber) {
  NormalEquations ne(layout.num_poses(), layout.num_depths());
  ne.damping = damping;
  for (const auto& r : residuals.flow) {
    if (!r.valid || (r.weight.array() == 0.0).all()) continue;
    const double s = huber_scale(r.value.norm(), huber);
    accumulate<2>(ne, s * r.value, slot_of(layout.pose_slot, r.src_frame),
                  s * r.jac_pose_i, slot_of(layout.pose_slot, r.dst_frame),
                  s * r.jac_pose_j, slot_of(layout.depth_slot, r.patch_id),
                  s * r.jac_depth);
  }
  for (const auto& r : residuals.sc) {
    if (r.weight == 0.0) continue;
    const double s = huber_scale(r.value.norm(), huber);
    const Mat36 none = Mat36::Zero();
    accumulate<3>(ne, s * r.value, slot_of(layout.pose_slot, r.frame),
                  s * r.jac_pose, -1, none,
                  slot_of(layout.depth_slot, r.patch_id), s * r.jac_depth);
  }
  return ne;
}

double LinearUpdate::norm() const {
  double s = depths.squaredNorm();
  for (const auto& t : poses) s += t.vector().squaredNorm();
  return std::sqrt(s);
}

LinearUpdate schur_solve(const NormalEquations& ne) {
  const int np = ne.num_poses();
  const int nd = ne.num_depths();
  const double lambda = ne.damping;

  Eigen::VectorXd c_inv(nd);
  for (int k = 0; k < nd; ++k) {
    const double c = ne.depth_diag[k] + lambda;
    if (!(c > 0.0))
      raise(ErrorCode::kSingularSystem,
            "depth block " + std::to_string(k) + " is not invertible");
    c_inv[k] = 1.0 / c;
  }

  LinearUpdate out;
  out.poses.resize(np);
  out.depths = Eigen::VectorXd::Zero(nd);

  Eigen::VectorXd dx = Eigen::VectorXd::Zero(6 * np);
  if (np > 0) {
    Eigen::MatrixXd s = ne.pose_block;
    s.diagonal().array() += lambda;
    Eigen::VectorXd rhs = ne.pose_rhs;
    for (int k = 0; k < nd; ++k) {
      const auto& row = ne.coupling[k];
      for (const auto& [a, ea] : row) {
        rhs.segment<6>(6 * a) -= ea * (ne.depth_rhs[k] * c_inv[k]);
        for (const auto& [b, eb] : row)
          s.block<6, 6>(6 * a, 6 * b) -= ea * (eb.transpose() * c_inv[k]);
      }
    }
    Eigen::LDLT<Eigen::MatrixXd> ldlt(s);
    const Eigen::VectorXd d = ldlt.vectorD();
    const double dmax = d.cwiseAbs().maxCoeff();
    // Damping makes S positive definite in exact arithmetic; undamped, a
    // near-zero pivot means an unconstrained gauge.
    const double floor = lambda > 0.0 ? 0.0 : 1e-12 * dmax;
    if (ldlt.info() != Eigen::Success || !(dmax > 0.0) ||
        !(d.minCoeff() > floor))
      raise(ErrorCode::kSingularSystem,
            "reduced pose system is rank deficient");
    dx = ldlt.solve(rhs);
    if (!dx.allFinite())
      raise(ErrorCode::kSingularSystem, "reduced pose solve is not finite");
    for (int a = 0; a < np; ++a)
      out.poses[a] = Twist(Vec6(dx.segment<6>(6 * a)));
  }
  for (int k = 0; k < nd; ++k) {
    double r = ne.depth_rhs[k];
    for (const auto& [a, ea] : ne.coupling[k]) r -= ea.dot(dx.segment<6>(6 * a));
    out.depths[k] = r * c_inv[k];
  }
  return out;
}

std::string ConvergenceReport::to_text() const {
  std::ostringstream os;
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.9e", v);
    return std::string(buf);
  };
  os << "label=" << label << "\n"
     << "mode=" << to_string(mode) << "\n"
     << "window=" << window << "\n"
     << "iterations=" << iterations << "\n"
     << "initial_cost=" << num(initial_cost) << "\n"
     << "final_cost=" << num(final_cost) << "\n"
     << "final_damping=" << num(final_damping) << "\n"
     << "converged=" << (converged ? 1 : 0) << "\n"
     << "step_norms=";
  for (std::size_t i = 0; i < step_norms.size(); ++i)
    os << (i ? "," : "") << num(step_norms[i]);
  os << "\n";
  return os.str();
}

namespace {

struct SavedState {
  std::vector<Pose> poses;
  std::vector<double> depths;
};

SavedState save(const PatchGraph& graph, const VariableLayout& layout) {
  SavedState s;
  for (int f : layout.pose_frames) s.poses.push_back(graph.frames()[f].pose);
  for (int id : layout.depth_patches) s.depths.push_back(graph.patch(id).depth);
  return s;
}

void restore(PatchGraph& graph, const VariableLayout& layout,
             const SavedState& s) {
  for (int a = 0; a < layout.num_poses(); ++a)
    graph.frames()[layout.pose_frames[a]].pose = s.poses[a];
  for (int k = 0; k < layout.num_depths(); ++k)
    graph.patch(layout.depth_patches[k]).depth = s.depths[k];
}

// Flow residuals behind camera j when a solve starts stay out of it; a step
// that pushes a participating residual behind its camera is rejected. This
// keeps the cost continuous within one solve.
std::vector<char> validity_mask(const ResidualSet& res) {
  std::vector<char> mask(res.flow.size());
  for (std::size_t i = 0; i < res.flow.size(); ++i) mask[i] = res.flow[i].valid;
  return mask;
}

bool apply_mask(ResidualSet& res, const std::vector<char>& mask) {
  bool intact = true;
  for (std::size_t i = 0; i < res.flow.size(); ++i) {
    if (!mask[i]) res.flow[i].valid = false;
    else if (!res.flow[i].valid) intact = false;
  }
  return intact;
}

void apply(PatchGraph& graph, const VariableLayout& layout,
           const LinearUpdate& upd, double depth_min) {
  for (int a = 0; a < layout.num_poses(); ++a) {
    const Twist& xi = upd.poses[a];
    if (xi.vector().isZero(0.0)) continue;
    Pose& pose = graph.frames()[layout.pose_frames[a]].pose;
    pose = retract(pose, xi).orthonormalized();
  }
  for (int k = 0; k < layout.num_depths(); ++k) {
    Patch& p = graph.patch(layout.depth_patches[k]);
    p.depth = std::max(p.depth + upd.depths[k], depth_min);
  }
}

}  // namespace

ConvergenceReport optimize(PatchGraph& graph, ResidualMode mode,
                           const SolverConfig& config) {
  ConvergenceReport report;
  report.mode = mode;
  report.window = graph.window_first();

  const VariableLayout layout = VariableLayout::for_window(
      graph, config.fixed_frames, config.optimize_depths);
  ResidualSet res = evaluate_residuals(graph, mode, config.threads);
  const std::vector<char> mask = validity_mask(res);
  double cost = res.cost();
  report.initial_cost = cost;
  report.final_cost = cost;

  double lambda = config.damping_init;
  if (layout.num_poses() + layout.num_depths() == 0 ||
      (res.flow.empty() && res.sc.empty())) {
    report.converged = true;
    report.final_damping = lambda;
    return report;
  }

  for (int iter = 0; iter < config.max_iters; ++iter) {
    NormalEquations ne =
        build_normal_equations(res, layout, 0.0, config.huber);
    const double grad = std::max(
        ne.pose_rhs.size() ? ne.pose_rhs.cwiseAbs().maxCoeff() : 0.0,
        ne.depth_rhs.size() ? ne.depth_rhs.cwiseAbs().maxCoeff() : 0.0);
    if (grad == 0.0) {
      report.converged = true;
      break;
    }

    const SavedState saved = save(graph, layout);
    bool accepted = false;
    double step = 0.0;
    double new_cost = cost;
    ResidualSet new_res;
    for (int attempt = 0; attempt <= config.max_backoff; ++attempt) {
      ne.damping = lambda;
      const LinearUpdate upd = schur_solve(ne);
      step = upd.norm();
      apply(graph, layout, upd, config.depth_min);
      new_res = evaluate_residuals(graph, mode, config.threads);
      new_cost = apply_mask(new_res, mask)
                     ? new_res.cost()
                     : std::numeric_limits<double>::infinity();
      if (new_cost <= cost) {
        accepted = true;
        lambda = std::max(lambda * config.damping_shrink, config.damping_min);
        break;
      }
      restore(graph, layout, saved);
      lambda *= config.damping_growth;
    }
    ++report.iterations;
    report.step_norms.push_back(step);

    if (!accepted) {
      // No damping level decreased the cost: fine at a minimum, fatal
      // otherwise.
      if (step < config.convergence_tol ||
          new_cost <= cost * (1.0 + 1e-9) + 1e-24) {
        report.converged = true;
        break;
      }
      report.final_cost = cost;
      raise(ErrorCode::kDivergedCost,
            std::string(to_string(mode)) + " cost rose from " +
                std::to_string(cost) + " to " + std::to_string(new_cost) +
                " after " + std::to_string(config.max_backoff) +
                " damping increases");
    }

    const double decrease = cost - new_cost;
    res = std::move(new_res);
    cost = new_cost;
    report.final_cost = cost;
    if (step < config.convergence_tol ||
        decrease <= config.relative_cost_tol * cost) {
      report.converged = true;
      break;
    }
  }
  report.final_cost = cost;
  report.final_damping = lambda;
  return report;
}

void update_patch_residuals(PatchGraph& graph, int threads) {
  const ResidualSet res =
      evaluate_residuals(graph, ResidualMode::kFlowOnly, threads);
  std::unordered_map<int, double> sum;
  for (int id : graph.active_patch_ids()) sum[id] = 0.0;
  for (const auto& r : res.flow) {
    auto it = sum.find(r.patch_id);
    if (it == sum.end()) continue;
    // A point behind the target camera counts as a large residual.
    it->second += r.valid ? r.value.squaredNorm() : 1e12;
  }
  for (const auto& [id, s] : sum) graph.patch(id).last_residual = std::sqrt(s);
}

double normalize_window_scale(PatchGraph& graph) {
  const std::vector<int> ids = graph.active_patch_ids();
  double log_sum = 0.0;
  int n = 0;
  for (int id : ids) {
    const Patch& p = graph.patch(id);
    if (!(p.init_depth > 0.0) || !(p.depth > 0.0)) continue;
    log_sum += std::log(p.depth / p.init_depth);
    ++n;
  }
  if (n == 0) return 1.0;
  const double factor = std::exp(-log_sum / n);
  for (int id : ids) graph.patch(id).depth *= factor;
  const Vec3 anchor = graph.frames()[graph.window_first()].pose.translation();
  for (int f = graph.window_first() + 1; f <= graph.window_last(); ++f) {
    Pose& pose = graph.frames()[f].pose;
    pose = Pose(pose.rotation(), anchor + factor * (pose.translation() - anchor));
  }
  return factor;
}

std::vector<ConvergenceReport> run_schedule(PatchGraph& graph,
                                            const WeightBundle& weights,
                                            const CoordinateHead& head,
                                            const ScheduleConfig& config) {
  std::vector<ConvergenceReport> reports;
  SolverConfig solver = config.solver;
  if (solver.fixed_frames.empty()) solver.fixed_frames = {graph.window_first()};

  if (!graph.initialized()) {
    SolverConfig s1 = solver;
    s1.max_iters = config.stage1_max_iters;
    reports.push_back(optimize(graph, ResidualMode::kFlowOnly, s1));
    reports.back().label = "stage1";
    if (config.normalize_stage1_scale) normalize_window_scale(graph);
    update_patch_residuals(graph, solver.threads);
    if (graph.num_frames() >= config.init_frames) graph.set_initialized(true);
    return reports;
  }

  for (int it = 0; it < config.stage2_iterations; ++it) {
    graph.set_reference_set(
        graph.select_reference_patches(graph.window_center()));
    graph.update_world_points();
    propagate(graph, weights, head, config.propagation);

    if (config.joint_stage2) {
      reports.push_back(optimize(graph, ResidualMode::kBoth, solver));
      reports.back().label = "stage2_joint";
    } else {
      for (int r = 0; r < solver.sc_rounds_per_iter; ++r) {
        reports.push_back(optimize(graph, ResidualMode::kScOnly, solver));
        reports.back().label = "stage2_sc";
      }
      for (int r = 0; r < solver.flow_rounds_per_iter; ++r) {
        reports.push_back(optimize(graph, ResidualMode::kFlowOnly, solver));
        reports.back().label = "stage2_flow";
      }
    }
    update_patch_residuals(graph, solver.threads);
  }
  return reports;
}

}  // namespace scevo
