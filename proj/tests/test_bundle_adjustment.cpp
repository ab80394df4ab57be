#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "checks.hpp"
#include "scevo/bundle_adjustment.hpp"
#include "scevo/error.hpp"
#include "scevo/evaluation.hpp"
#include "test_support.hpp"

using namespace scevo;
using namespace scevo::test;

namespace {

const CameraIntrinsics kCam{320.0, 320.0, 320.0, 240.0};

PatchGraph single_patch_graph(const Vec2& center, double depth) {
  PatchGraph g(kCam, {});
  FrameTracks t;
  t.frame = 0;
  t.new_patches.push_back({0, center, depth, 1.0, {}, {}});
  g.add_frame(Pose(), t);
  return g;
}

double sim3_scale(const PatchGraph& g, const GroundTruth& gt) {
  std::vector<Vec3> est, ref;
  for (const auto& f : g.frames()) {
    est.push_back(f.pose.translation());
    ref.push_back(gt.poses[f.id].translation());
  }
  return umeyama_align(est, ref, AlignMode::kSim3).scale;
}

}  // namespace

TEST(FlowResidual, NoMotionPerfectFlowIsZero) {
  PatchGraph g = single_patch_graph(Vec2(100.0, 50.0), 4.0);
  FrameTracks t;
  t.frame = 1;
  t.new_patches.push_back({1, Vec2(1.0, 1.0), 1.0, 1.0, {}, {}});
  t.links.push_back({0, 1, Vec2(100.0, 50.0), 1.0});
  g.add_frame(Pose(), t);
  ASSERT_EQ(g.edges().size(), 1u);
  const FlowResidual r = flow_residual(g.edges()[0], g);
  EXPECT_TRUE(r.valid);
  EXPECT_LT(r.value.norm(), 1e-12);
}

TEST(FlowResidual, NoiselessSceneAtTruth) {
  const WorldSpec spec = small_spec(10, 60);
  const World world = generate(spec);
  const PatchGraph g = graph_at_truth(world, spec.camera, 10);
  const ResidualSet res = evaluate_residuals(g, ResidualMode::kFlowOnly);
  ASSERT_FALSE(res.flow.empty());
  for (const auto& r : res.flow) {
    ASSERT_TRUE(r.valid);
    EXPECT_LT(r.value.cwiseAbs().maxCoeff(), 1e-9);
  }
}

TEST(FlowResidual, BehindCameraIsFlagged) {
  PatchGraph g = single_patch_graph(Vec2(320.0, 240.0), 2.0);
  FrameTracks t;
  t.frame = 1;
  t.new_patches.push_back({1, Vec2(1.0, 1.0), 1.0, 1.0, {}, {}});
  t.links.push_back({0, 1, Vec2(320.0, 240.0), 1.0});
  g.add_frame(Pose(Mat3::Identity(), Vec3(0.0, 0.0, 5.0)), t);
  const FlowResidual r = flow_residual(g.edges()[0], g);
  EXPECT_FALSE(r.valid);
  EXPECT_EQ(evaluate_residuals(g, ResidualMode::kFlowOnly).cost(), 0.0);
}

TEST(FlowResidual, JacobiansMatchFiniteDifferences) {
  EXPECT_LT(flow_jacobian_error(100, 1), 1e-5);
}

TEST(ScResidual, PriorAtPointIsZero) {
  PatchGraph g = single_patch_graph(Vec2(10.0, 300.0), 3.5);
  g.update_world_points();
  Patch& p = g.patch(0);
  p.prior = p.world_point;
  p.confidence = 0.7;
  EXPECT_LT(sc_residual(p, g).value.norm(), 1e-15);
}

TEST(ScResidual, DepthJacobianOnAxis) {
  PatchGraph g = single_patch_graph(Vec2(320.0, 240.0), 2.0);
  Patch& p = g.patch(0);
  p.confidence = 1.0;
  EXPECT_EQ(sc_residual(p, g).jac_depth, Vec3(0.0, 0.0, -1.0));
}

TEST(ScResidual, JacobiansMatchFiniteDifferences) {
  EXPECT_LT(sc_jacobian_error(100, 2), 1e-6);
}

TEST(ScResidual, NonPositiveDepthIsRejected) {
  PatchGraph g = single_patch_graph(Vec2(320.0, 240.0), 2.0);
  g.patch(0).depth = -1.0;
  EXPECT_EQ(code_of([&] { sc_residual(g.patch(0), g); }),
            ErrorCode::kNonPositiveDepth);
}

TEST(ScResidual, ScalingChangesScButNotFlow) {
  for (double s : {0.5, 2.0, 10.0}) {
    const GaugeCheck c = scale_gauge_check(s);
    EXPECT_LT(c.max_flow_change, 1e-12) << "s=" << s;
    EXPECT_LT(c.sc_mean_before, 1e-12);
    EXPECT_NEAR(c.sc_mean_after, c.predicted_sc_mean,
                1e-9 * c.predicted_sc_mean);
  }
}

TEST(NormalEquations, EmptyResidualsGiveZeroSystem) {
  VariableLayout layout;
  layout.pose_frames = {1};
  layout.pose_slot[1] = 0;
  const NormalEquations ne = build_normal_equations({}, layout, 0.0);
  EXPECT_TRUE(ne.pose_block.isZero(0.0));
  EXPECT_TRUE(ne.pose_rhs.isZero(0.0));
  const LinearUpdate u = schur_solve([&] {
    NormalEquations d = ne;
    d.damping = 1.0;
    return d;
  }());
  EXPECT_TRUE(u.poses[0].vector().isZero(0.0));
}

TEST(NormalEquations, ZeroWeightScResidualContributesNothing) {
  std::mt19937_64 rng(3);
  RandomSystem s = random_system(rng, 3, 6);
  const VariableLayout& layout = s.layout;
  const NormalEquations base = build_normal_equations(s.residuals, layout, 0.0);
  ResidualSet extra = s.residuals;
  ScResidual dead;
  dead.patch_id = 2;
  dead.frame = 1;
  dead.weight = 0.0;  // jac and value are zero as they carry the weight
  extra.sc.push_back(dead);
  EXPECT_TRUE(same_system(base, build_normal_equations(extra, layout, 0.0)));
}

TEST(NormalEquations, BlockAssemblyMatchesDenseOracle) {
  std::mt19937_64 rng(4);
  const RandomSystem s = random_system(rng, 3, 10);
  const NormalEquations ne = build_normal_equations(s.residuals, s.layout, 0.0);
  const Eigen::MatrixXd h = s.jacobian.transpose() * s.jacobian;
  const Eigen::VectorXd g = -(s.jacobian.transpose() * s.values);
  EXPECT_LT((ne.dense_matrix() - h).cwiseAbs().maxCoeff(), 1e-12);
  EXPECT_LT((ne.dense_rhs() - g).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(SchurSolve, MatchesDenseSolve) {
  const SchurCheck c = schur_check(20, 5);
  EXPECT_LT(c.max_solve_error, 1e-8);
  EXPECT_LT(c.max_assembly_error, 1e-12);
}

TEST(SchurSolve, AllFramesFixedSolvesDepthsAlone) {
  std::mt19937_64 rng(6);
  RandomSystem s = random_system(rng, 4, 12);
  VariableLayout depths_only;
  depths_only.depth_patches = s.layout.depth_patches;
  depths_only.depth_slot = s.layout.depth_slot;
  NormalEquations ne = build_normal_equations(s.residuals, depths_only, 0.01);
  const LinearUpdate u = schur_solve(ne);
  EXPECT_TRUE(u.poses.empty());
  for (int k = 0; k < ne.num_depths(); ++k) {
    EXPECT_NEAR(u.depths[k], ne.depth_rhs[k] / (ne.depth_diag[k] + 0.01),
                1e-15);
  }
}

TEST(SchurSolve, ZeroGradientGivesZeroUpdate) {
  std::mt19937_64 rng(7);
  RandomSystem s = random_system(rng, 4, 12);
  for (auto& r : s.residuals.flow) r.value.setZero();
  for (auto& r : s.residuals.sc) r.value.setZero();
  const LinearUpdate u =
      schur_solve(build_normal_equations(s.residuals, s.layout, 1e-3));
  EXPECT_EQ(u.norm(), 0.0);
}

TEST(SchurSolve, UnfixedGaugeIsSingular) {
  const WorldSpec spec = small_spec(4, 30);
  const World world = generate(spec);
  const PatchGraph g = graph_at_truth(world, spec.camera, 4);
  const ResidualSet res = evaluate_residuals(g, ResidualMode::kFlowOnly);
  const VariableLayout free_gauge = VariableLayout::for_window(g, {}, true);
  EXPECT_EQ(code_of([&] {
              schur_solve(build_normal_equations(res, free_gauge, 0.0));
            }),
            ErrorCode::kSingularSystem);
}

TEST(Optimize, GroundTruthConvergesImmediately) {
  const WorldSpec spec = small_spec(8, 80);
  const World world = generate(spec);
  PatchGraph g = graph_at_truth(world, spec.camera, 8);
  SolverConfig cfg;
  cfg.fixed_frames = {0};
  const ConvergenceReport rep = optimize(g, ResidualMode::kFlowOnly, cfg);
  EXPECT_TRUE(rep.converged);
  EXPECT_EQ(rep.iterations, 1);
  EXPECT_LT(rep.final_cost, 1e-12);
}

TEST(Optimize, RecoversPerturbedPosesUpToSimilarity) {
  const ConvergenceCheck c = convergence_check(8, 15);
  EXPECT_TRUE(c.converged);
  EXPECT_LE(c.iterations, 15);
  EXPECT_LT(c.ate_sim3, 1e-6);
}

TEST(Optimize, AcceptedStepsNeverRaiseCost) {
  PerturbedWindow w = perturbed_window(9, 0.05, 0.1);
  SolverConfig cfg;
  cfg.fixed_frames = {0};
  cfg.max_iters = 1;
  double cost = evaluate_residuals(w.graph, ResidualMode::kFlowOnly).cost();
  for (int i = 0; i < 10; ++i) {
    const ConvergenceReport rep = optimize(w.graph, ResidualMode::kFlowOnly, cfg);
    EXPECT_LE(rep.final_cost, cost);
    cost = rep.final_cost;
  }
}

TEST(Optimize, FlowCannotFixScaleButPriorsCan) {
  PerturbedWindow flow = perturbed_window(10, 0.05, 0.0, 1.2);
  PerturbedWindow both = perturbed_window(10, 0.05, 0.0, 1.2);
  SolverConfig cfg;
  cfg.fixed_frames = {0};
  cfg.max_iters = 50;

  const ConvergenceReport rf = optimize(flow.graph, ResidualMode::kFlowOnly, cfg);
  EXPECT_LT(rf.final_cost, 1e-12);
  EXPECT_GT(std::abs(sim3_scale(flow.graph, flow.world.gt) - 1.0), 0.01);

  for (auto& p : both.graph.patches()) {
    const CoordinatePrior c = oracle_sc_head(p, both.world.gt, 0.0);
    p.prior = c.prior;
    p.confidence = c.weight;
    p.has_prior = true;
  }
  optimize(both.graph, ResidualMode::kBoth, cfg);
  EXPECT_NEAR(sim3_scale(both.graph, both.world.gt), 1.0, 1e-4);
}

TEST(Optimize, ZeroWeightPriorsMatchFlowOnlyBitwise) {
  const ZeroWeightCheck c = zero_weight_check();
  EXPECT_TRUE(c.same_normal_equations);
  EXPECT_TRUE(c.same_optimize);
  EXPECT_TRUE(c.same_schedule);
}

TEST(Schedule, StageOneRecoversWindowUpToSimilarity) {
  PerturbedWindow w = perturbed_window(11, 0.05, 0.1);
  ScheduleConfig cfg;
  cfg.init_frames = 8;
  const auto reports =
      run_schedule(w.graph, WeightBundle::random(1, {}), ConstantHead(0.0), cfg);
  ASSERT_EQ(reports.size(), 1u);
  EXPECT_EQ(reports[0].label, "stage1");
  EXPECT_TRUE(w.graph.initialized());
  EXPECT_LT(ate_rmse(window_trajectory(w.graph),
                     truth_trajectory(w.world.gt, 8), AlignMode::kSim3),
            1e-6);
  // Stage 1 pins the scale gauge: geometric mean of depth / init_depth is 1.
  double log_sum = 0.0;
  for (const auto& p : w.graph.patches()) log_sum += std::log(p.depth / p.init_depth);
  EXPECT_NEAR(log_sum, 0.0, 1e-9);
}

TEST(Schedule, WindowScaleNormalizationKeepsFlowResiduals) {
  PerturbedWindow w = perturbed_window(13, 0.0, 0.0);
  for (auto& p : w.graph.patches()) p.init_depth = p.depth / 1.3;
  const double factor = normalize_window_scale(w.graph);
  EXPECT_NEAR(factor, 1.0 / 1.3, 1e-12);
  for (const auto& p : w.graph.patches()) {
    EXPECT_NEAR(p.depth, p.init_depth, 1e-12 * p.depth);
  }
  EXPECT_EQ(w.graph.frames()[0].pose.translation(),
            w.world.gt.poses[0].translation());
  EXPECT_LT(evaluate_residuals(w.graph, ResidualMode::kFlowOnly).cost(), 1e-18);
}

TEST(Report, KeyValueText) {
  ConvergenceReport r;
  r.label = "stage1";
  r.iterations = 2;
  r.step_norms = {0.5, 0.25};
  const std::string t = r.to_text();
  EXPECT_NE(t.find("label=stage1\n"), std::string::npos);
  EXPECT_NE(t.find("mode=flow_only\n"), std::string::npos);
  EXPECT_NE(t.find("iterations=2\n"), std::string::npos);
  EXPECT_NE(t.find("step_norms=5.000000000e-01,2.500000000e-01\n"),
            std::string::npos);
}
