#pragma once

#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "scevo/patch_graph.hpp"
#include "scevo/scale_propagation.hpp"

namespace scevo {

enum class ResidualMode { kFlowOnly, kScOnly, kBoth };

const char* to_string(ResidualMode mode);

/// r = w * (target - pi(T_j^-1 * T_i * backproject(u_i, d_i))), poses being
/// camera-to-world. Jacobians are w.r.t. left perturbations of T_i and T_j and
/// w.r.t. the depth d_i.
struct FlowResidual {
  int edge_index = -1;
  int src_frame = 0;
  int dst_frame = 0;
  int patch_id = 0;
  Vec2 value = Vec2::Zero();
  Mat26 jac_pose_i = Mat26::Zero();
  Mat26 jac_pose_j = Mat26::Zero();
  Vec2 jac_depth = Vec2::Zero();
  Vec2 weight = Vec2::Zero();
  bool valid = true;  // false when the point lands behind camera j
};

/// r = w * (X_prior - T * backproject(u, d)).
struct ScResidual {
  int patch_id = 0;
  int frame = 0;
  Vec3 value = Vec3::Zero();
  Mat36 jac_pose = Mat36::Zero();
  Vec3 jac_depth = Vec3::Zero();
  double weight = 0.0;
};

FlowResidual flow_residual(const FlowEdge& edge, const PatchGraph& graph);

/// Uses patch.prior and patch.confidence. Throws NonPositiveDepth.
ScResidual sc_residual(const Patch& patch, const PatchGraph& graph);

struct ResidualSet {
  std::vector<FlowResidual> flow;
  std::vector<ScResidual> sc;

  double cost() const;  // sum of squared residual norms
};

ResidualSet evaluate_residuals(const PatchGraph& graph, ResidualMode mode,
                               int threads = 1);

/// Maps optimized frames to 6-wide pose blocks and patches to depth slots.
struct VariableLayout {
  std::vector<int> pose_frames;  // ascending
  std::vector<int> depth_patches;  // ascending
  std::unordered_map<int, int> pose_slot;
  std::unordered_map<int, int> depth_slot;

  int num_poses() const { return static_cast<int>(pose_frames.size()); }
  int num_depths() const { return static_cast<int>(depth_patches.size()); }

  /// Window frames minus `fixed_frames`; depths of active patches when
  /// `with_depths`.
  static VariableLayout for_window(const PatchGraph& graph,
                                   const std::vector<int>& fixed_frames,
                                   bool with_depths);
};

/// H = J^T J split into pose block B, per-depth diagonal C and coupling E,
/// with right-hand sides v = -J_pose^T r and w = -J_depth^T r. Residual
/// values and Jacobians already carry their weights.
struct NormalEquations {
  Eigen::MatrixXd pose_block;  // B, 6F x 6F
  Eigen::VectorXd depth_diag;  // C, P
  std::vector<std::vector<std::pair<int, Vec6>>> coupling;  // E, per depth
  Eigen::VectorXd pose_rhs;    // v
  Eigen::VectorXd depth_rhs;   // w
  double damping = 0.0;

  NormalEquations() = default;
  NormalEquations(int num_poses, int num_depths);

  int num_poses() const { return static_cast<int>(pose_block.rows() / 6); }
  int num_depths() const { return static_cast<int>(depth_diag.size()); }

  void add_coupling(int depth, int pose, const Vec6& value);

  /// Full (6F + P) damped system, poses first.
  Eigen::MatrixXd dense_matrix() const;
  Eigen::VectorXd dense_rhs() const;
};

struct HuberOptions {
  bool enabled = false;
  double delta = 1.0;
};

NormalEquations build_normal_equations(const ResidualSet& residuals,
                                       const VariableLayout& layout,
                                       double damping,
                                       const HuberOptions& huber = {});

struct LinearUpdate {
  std::vector<Twist> poses;  // one per pose slot
  Eigen::VectorXd depths;

  double norm() const;
};

/// Eliminates depths: (B - E C^-1 E^T) dx = v - E C^-1 w, then
/// dd = C^-1 (w - E^T dx), with damping added to B and C.
LinearUpdate schur_solve(const NormalEquations& system);

struct SolverConfig {
  int max_iters = 20;
  double damping_init = 1e-4;
  double damping_growth = 10.0;
  double damping_shrink = 0.1;
  double damping_min = 1e-6;
  int max_backoff = 12;
  double convergence_tol = 1e-10;  // update norm
  double relative_cost_tol = 1e-12;
  double depth_min = 1e-3;
  int sc_rounds_per_iter = 1;
  int flow_rounds_per_iter = 2;
  std::vector<int> fixed_frames;  // gauge anchors
  bool optimize_depths = true;
  HuberOptions huber;
  int threads = 1;
};

struct ConvergenceReport {
  std::string label;
  ResidualMode mode = ResidualMode::kFlowOnly;
  int window = -1;
  int iterations = 0;
  double initial_cost = 0.0;
  double final_cost = 0.0;
  double final_damping = 0.0;
  bool converged = false;
  std::vector<double> step_norms;

  /// key=value lines.
  std::string to_text() const;
};

/// Damped Gauss-Newton over the window. Poses are retracted with
/// T <- exp(dx) * T, depths clamped to depth_min. Throws SingularSystem,
/// DivergedCost.
ConvergenceReport optimize(PatchGraph& graph, ResidualMode mode,
                           const SolverConfig& config);

/// sqrt of the summed squared flow residuals over each active patch's edges.
void update_patch_residuals(PatchGraph& graph, int threads = 1);

/// Rescales the window about its first frame so the geometric mean of
/// depth / init_depth over active patches is 1. Flow residuals are unchanged;
/// this picks the scale gauge flow residuals leave free. Returns the factor
/// applied to depths and translations.
double normalize_window_scale(PatchGraph& graph);

struct ScheduleConfig {
  SolverConfig solver;
  int stage1_max_iters = 50;
  int stage2_iterations = 1;
  int init_frames = 8;  // Stage 1 ends once the graph holds this many frames
  bool joint_stage2 = false;  // one Both round instead of alternating
  bool normalize_stage1_scale = true;
  PropagationOptions propagation;
};

/// Stage 1 until the graph is initialized: FlowOnly to convergence with the
/// first window frame fixed, then normalize_window_scale. Stage 2 afterwards: per iteration, select
/// references, propagate, sc_rounds ScOnly rounds, then flow_rounds FlowOnly
/// rounds.
std::vector<ConvergenceReport> run_schedule(PatchGraph& graph,
                                            const WeightBundle& weights,
                                            const CoordinateHead& head,
                                            const ScheduleConfig& config);

}  // namespace scevo
