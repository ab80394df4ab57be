#include "scevo/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <optional>
#include <set>
#include <sstream>

#include "scevo/error.hpp"
#include "scevo/synthetic_world.hpp"
#include "scevo/tracks.hpp"
#include "scevo/weight_bundle.hpp"

namespace fs = std::filesystem;

namespace scevo {

namespace {

std::string resolve(const std::string& path, const std::string& base) {
  if (path.empty() || base.empty() || fs::path(path).is_absolute()) return path;
  return (fs::path(base) / path).lexically_normal().string();
}

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.9g", v);
  return buf;
}

template <typename Fn>
void atomic_replace(const std::string& path, Fn&& write_to) {
  const std::string tmp = path + ".tmp";
  try {
    write_to(tmp);
    fs::rename(tmp, path);
  } catch (const fs::filesystem_error& e) {
    std::error_code ignored;
    fs::remove(tmp, ignored);
    raise(ErrorCode::kIo, "cannot write '" + path + "': " + e.what());
  } catch (...) {
    std::error_code ignored;
    fs::remove(tmp, ignored);
    throw;
  }
}

void ensure_dir(const std::string& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec || !fs::is_directory(dir))
    raise(ErrorCode::kIo, "cannot create output directory '" + dir + "'");
}

}  // namespace

void write_file_atomic(const std::string& path, const std::string& content) {
  atomic_replace(path, [&](const std::string& tmp) {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) raise(ErrorCode::kIo, "cannot write '" + tmp + "'");
    out << content;
    out.close();
    if (!out) raise(ErrorCode::kIo, "write failed for '" + tmp + "'");
  });
}

RunConfig run_config_from(const ConfigFile& cfg, const std::string& base_dir) {
  cfg.require_known(
      {"input.world", "input.tracks", "input.features", "input.ground_truth",
       "camera.fx", "camera.fy", "camera.cx", "camera.cy", "run.mode",
       "run.window_length", "run.patches_per_frame", "run.init_frames",
       "run.stage2_iterations", "run.reinit_depths", "run.motion_presolve",
       "run.anchor_frames", "run.threads", "reference.span", "reference.cap",
       "reference.keep_fraction", "solver.max_iters", "solver.stage1_max_iters",
       "solver.damping_init", "solver.damping_growth", "solver.damping_shrink",
       "solver.damping_min", "solver.max_backoff", "solver.convergence_tol",
       "solver.sc_rounds", "solver.flow_rounds", "solver.joint", "solver.huber",
       "solver.huber_delta", "propagation.normalization", "head.source",
       "head.seed", "head.weights", "head.oracle_sigma", "output.dir"});

  auto where = [&](const std::string& key) {
    const auto& e = cfg.entries().at(key);
    return e.line > 0 ? cfg.source() + ":" + std::to_string(e.line)
                      : "override " + key;
  };
  auto bad = [&](const std::string& key, const std::string& why) {
    raise(ErrorCode::kParse, where(key) + ": " + key + ": " + why);
  };

  RunConfig c;
  c.world_path = resolve(cfg.get_string("input.world", ""), base_dir);
  c.tracks_path = resolve(cfg.get_string("input.tracks", ""), base_dir);
  c.features_path = resolve(cfg.get_string("input.features", ""), base_dir);
  c.ground_truth_path =
      resolve(cfg.get_string("input.ground_truth", ""), base_dir);
  c.camera.fx = cfg.get_double("camera.fx", c.camera.fx);
  c.camera.fy = cfg.get_double("camera.fy", c.camera.fy);
  c.camera.cx = cfg.get_double("camera.cx", c.camera.cx);
  c.camera.cy = cfg.get_double("camera.cy", c.camera.cy);

  if (cfg.has("run.mode")) {
    const std::string m = cfg.get_string("run.mode", "");
    if (m == "flow_only") c.mode = RunMode::kFlowOnly;
    else if (m == "full") c.mode = RunMode::kFull;
    else bad("run.mode", "expected flow_only or full, got '" + m + "'");
  }
  c.graph.window_length =
      static_cast<int>(cfg.get_int("run.window_length", 10));
  c.patches_per_frame =
      static_cast<int>(cfg.get_int("run.patches_per_frame", 80));
  c.init_frames = static_cast<int>(cfg.get_int("run.init_frames", 0));
  c.schedule.stage2_iterations =
      static_cast<int>(cfg.get_int("run.stage2_iterations", 1));
  c.reinit_depths = cfg.get_bool("run.reinit_depths", true);
  c.motion_presolve = cfg.get_bool("run.motion_presolve", true);
  c.anchor_frames = static_cast<int>(cfg.get_int("run.anchor_frames", 20));
  c.threads = static_cast<int>(cfg.get_int("run.threads", 1));

  c.graph.reference_span = static_cast<int>(cfg.get_int("reference.span", 30));
  c.graph.reference_cap = static_cast<int>(cfg.get_int("reference.cap", 1200));
  c.graph.reference_keep_fraction =
      cfg.get_double("reference.keep_fraction", 0.5);

  SolverConfig& s = c.schedule.solver;
  s.max_iters = static_cast<int>(cfg.get_int("solver.max_iters", s.max_iters));
  c.schedule.stage1_max_iters = static_cast<int>(
      cfg.get_int("solver.stage1_max_iters", c.schedule.stage1_max_iters));
  s.damping_init = cfg.get_double("solver.damping_init", s.damping_init);
  s.damping_growth = cfg.get_double("solver.damping_growth", s.damping_growth);
  s.damping_shrink = cfg.get_double("solver.damping_shrink", s.damping_shrink);
  s.damping_min = cfg.get_double("solver.damping_min", s.damping_min);
  s.max_backoff =
      static_cast<int>(cfg.get_int("solver.max_backoff", s.max_backoff));
  s.convergence_tol =
      cfg.get_double("solver.convergence_tol", s.convergence_tol);
  s.sc_rounds_per_iter =
      static_cast<int>(cfg.get_int("solver.sc_rounds", s.sc_rounds_per_iter));
  s.flow_rounds_per_iter = static_cast<int>(
      cfg.get_int("solver.flow_rounds", s.flow_rounds_per_iter));
  c.schedule.joint_stage2 = cfg.get_bool("solver.joint", false);
  s.huber.enabled = cfg.get_bool("solver.huber", false);
  s.huber.delta = cfg.get_double("solver.huber_delta", s.huber.delta);

  if (cfg.has("propagation.normalization")) {
    const std::string n = cfg.get_string("propagation.normalization", "");
    if (n == "softmax")
      c.schedule.propagation.normalization = AttentionNormalization::kSoftmax;
    else if (n == "raw")
      c.schedule.propagation.normalization = AttentionNormalization::kRawLogits;
    else bad("propagation.normalization", "expected softmax or raw");
  }

  if (cfg.has("head.source")) {
    const std::string h = cfg.get_string("head.source", "");
    if (h == "oracle") c.head = HeadSource::kOracle;
    else if (h == "random") c.head = HeadSource::kRandom;
    else if (h == "weights") c.head = HeadSource::kWeights;
    else if (h == "zero") c.head = HeadSource::kZero;
    else bad("head.source", "expected oracle, random, weights or zero");
  }
  c.head_seed = cfg.get_u64("head.seed", c.head_seed);
  c.weights_path = resolve(cfg.get_string("head.weights", ""), base_dir);
  c.oracle_sigma = cfg.get_double("head.oracle_sigma", c.oracle_sigma);
  c.out_dir = resolve(cfg.get_string("output.dir", c.out_dir), base_dir);

  // Invariants.
  auto positive = [&](const char* key, double v) {
    if (!(v > 0.0) && cfg.has(key)) bad(key, "must be positive");
    if (!(v > 0.0))
      raise(ErrorCode::kInvalidArgument, std::string(key) + " must be positive");
  };
  positive("run.window_length", c.graph.window_length);
  positive("run.patches_per_frame", c.patches_per_frame);
  positive("run.threads", c.threads);
  positive("reference.span", c.graph.reference_span);
  positive("reference.cap", c.graph.reference_cap);
  positive("reference.keep_fraction", c.graph.reference_keep_fraction);
  positive("solver.max_iters", s.max_iters);
  positive("solver.convergence_tol", s.convergence_tol);
  positive("solver.damping_growth", s.damping_growth);
  positive("solver.damping_shrink", s.damping_shrink);
  if (s.sc_rounds_per_iter < 0 || s.flow_rounds_per_iter < 0 ||
      c.schedule.stage2_iterations < 0)
    raise(ErrorCode::kInvalidArgument, "schedule counts must be >= 0");
  if (c.anchor_frames < 3)
    raise(ErrorCode::kInvalidArgument, "run.anchor_frames must be >= 3");
  if (c.world_path.empty() && c.tracks_path.empty())
    raise(ErrorCode::kInvalidArgument,
          cfg.source() + ": set input.world or input.tracks");
  if (!c.world_path.empty() && !c.tracks_path.empty())
    raise(ErrorCode::kInvalidArgument,
          cfg.source() + ": input.world and input.tracks are exclusive");
  if (!c.tracks_path.empty() && c.features_path.empty())
    raise(ErrorCode::kInvalidArgument,
          cfg.source() + ": input.tracks needs input.features");
  if (c.head == HeadSource::kWeights && c.weights_path.empty())
    raise(ErrorCode::kInvalidArgument,
          cfg.source() + ": head.source = weights needs head.weights");
  return c;
}

RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides) {
  ConfigFile cfg = ConfigFile::load(path);
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos || eq == 0)
      raise(ErrorCode::kParse, "override '" + o + "' is not key=value");
    cfg.set(o.substr(0, eq), o.substr(eq + 1));
  }
  return run_config_from(cfg, fs::path(path).parent_path().string());
}

std::string RunResult::summary_text() const {
  std::string out;
  for (const auto& [k, v] : summary) out += k + "=" + v + "\n";
  return out;
}

const std::string* RunResult::summary_value(const std::string& key) const {
  for (const auto& [k, v] : summary)
    if (k == key) return &v;
  return nullptr;
}

namespace {

struct Inputs {
  CameraIntrinsics camera;
  PatchTrackSet tracks;
  std::optional<World> world;
  TrajectoryRecord ground_truth;
};

Inputs load_inputs(const RunConfig& c) {
  Inputs in;
  if (!c.world_path.empty()) {
    const WorldSpec spec = load_world_spec(c.world_path);
    in.world = build_world(spec);
    in.camera = spec.camera;
    in.tracks = in.world->tracks;
    in.ground_truth.timestamps = in.world->gt.timestamps;
    in.ground_truth.poses = in.world->gt.poses;
  } else {
    in.camera = c.camera;
    validate(in.camera);
    in.tracks = read_track_file(c.tracks_path);
    read_feature_file(c.features_path, in.tracks);
  }
  if (!c.ground_truth_path.empty())
    in.ground_truth = read_tum(c.ground_truth_path);
  if (in.tracks.num_frames() < 2)
    raise(ErrorCode::kEmptyTracks, "input has fewer than 2 frames");
  return in;
}

// Keeps the best-scored `cap` new patches and the links that still refer to
// patches the graph knows about.
FrameTracks select_patches(FrameTracks slice, int cap,
                           const PatchGraph& graph) {
  if (static_cast<int>(slice.new_patches.size()) > cap) {
    std::stable_sort(slice.new_patches.begin(), slice.new_patches.end(),
                     [](const auto& a, const auto& b) {
                       if (a.score != b.score) return a.score > b.score;
                       return a.patch_id < b.patch_id;
                     });
    slice.new_patches.resize(cap);
    std::sort(slice.new_patches.begin(), slice.new_patches.end(),
              [](const auto& a, const auto& b) {
                return a.patch_id < b.patch_id;
              });
  }
  std::set<int> fresh;
  for (const auto& p : slice.new_patches) fresh.insert(p.patch_id);
  std::erase_if(slice.links, [&](const FrameTracks::Link& l) {
    return !fresh.count(l.patch_id) && !graph.has_patch(l.patch_id);
  });
  return slice;
}

Pose predict_pose(const PatchGraph& graph) {
  const int n = graph.num_frames();
  if (n == 0) return Pose::identity();
  const Pose& last = graph.frames()[n - 1].pose;
  if (n == 1) return last;
  const Pose& prev = graph.frames()[n - 2].pose;
  return (last * (prev.inverse() * last)).orthonormalized();
}

// Active patches' world points paired with ground truth.
std::pair<std::vector<Vec3>, std::vector<Vec3>> window_points(
    const PatchGraph& graph, const GroundTruth& gt) {
  std::vector<Vec3> est, ref;
  for (int id : graph.active_patch_ids()) {
    auto it = gt.points.find(id);
    if (it == gt.points.end()) continue;
    est.push_back(graph.patch(id).world_point);
    ref.push_back(it->second);
  }
  return {std::move(est), std::move(ref)};
}

}  // namespace

RunResult run_pipeline(const RunConfig& config) {
  Inputs in = load_inputs(config);
  const GroundTruth* gt = in.world ? &in.world->gt : nullptr;

  WeightBundle weights;
  if (config.head == HeadSource::kWeights)
    weights = load_weight_bundle(config.weights_path);
  else
    weights = WeightBundle::random(config.head_seed, {});

  std::unique_ptr<CoordinateHead> head;
  OracleHead* oracle = nullptr;
  switch (config.head) {
    case HeadSource::kOracle: {
      if (!gt)
        raise(ErrorCode::kMissingGroundTruth,
              "head.source = oracle needs input.world");
      auto h = std::make_unique<OracleHead>(*gt, config.oracle_sigma,
                                            config.head_seed);
      oracle = h.get();
      head = std::move(h);
      break;
    }
    case HeadSource::kRandom:
    case HeadSource::kWeights:
      head = std::make_unique<LearnedHead>(weights.head);
      break;
    case HeadSource::kZero:
      head = std::make_unique<ConstantHead>(0.0);
      break;
  }

  ScheduleConfig schedule = config.schedule;
  schedule.solver.threads = config.threads;
  schedule.propagation.threads = config.threads;
  schedule.init_frames =
      config.init_frames > 0 ? config.init_frames : config.graph.window_length;

  PatchGraph graph(in.camera, config.graph);
  RunResult result;
  const int n = in.tracks.num_frames();
  const int w = config.graph.window_length;

  for (int j = 0; j < n; ++j) {
    try {
      FrameTracks slice =
          select_patches(in.tracks.frame_slice(j), config.patches_per_frame,
                         graph);
      graph.add_frame(predict_pose(graph), slice);
      if (j == 0) continue;

      if (config.reinit_depths)
        for (int id : graph.active_patch_ids()) {
          Patch& p = graph.patch(id);
          p.depth = p.init_depth;
        }
      SolverConfig anchored = schedule.solver;
      anchored.fixed_frames = {graph.window_first()};
      if (config.motion_presolve) {
        SolverConfig motion = anchored;
        motion.optimize_depths = false;
        result.reports.push_back(
            optimize(graph, ResidualMode::kFlowOnly, motion));
        result.reports.back().label = "motion_presolve";
      }

      std::vector<ConvergenceReport> reps;
      if (config.mode == RunMode::kFlowOnly) {
        SolverConfig flow = anchored;
        flow.max_iters = schedule.stage1_max_iters;
        reps.push_back(optimize(graph, ResidualMode::kFlowOnly, flow));
        reps.back().label = "flow_only";
        if (schedule.normalize_stage1_scale) normalize_window_scale(graph);
        update_patch_residuals(graph, config.threads);
        if (graph.num_frames() >= schedule.init_frames)
          graph.set_initialized(true);
      } else {
        const bool was_initialized = graph.initialized();
        reps = run_schedule(graph, weights, *head, schedule);
        if (!was_initialized && graph.initialized() && oracle) {
          // Oracle priors live in the scale Stage 1 settled on.
          graph.update_world_points();
          auto [est, ref] = window_points(graph, *gt);
          oracle->set_canonical(umeyama_align(ref, est, AlignMode::kSim3));
        }
      }
      for (auto& r : reps) result.reports.push_back(std::move(r));

      if (gt && j >= w - 1) {
        graph.update_world_points();
        auto [est, ref] = window_points(graph, *gt);
        const Sim3 s = umeyama_align(est, ref, AlignMode::kSim3);
        result.window_scales.push_back({graph.window_first(), j, s.scale});
      }
    } catch (const Error& e) {
      raise(e.code(), "frame " + std::to_string(j) + " (window " +
                          std::to_string(graph.window_first()) +
                          "): " + e.what());
    }
  }

  for (const Frame& f : graph.frames()) {
    result.trajectory.timestamps.push_back(f.timestamp);
    result.trajectory.poses.push_back(f.pose);
  }
  graph.update_world_points();

  auto& sum = result.summary;
  sum.emplace_back("mode", config.mode == RunMode::kFull ? "full" : "flow_only");
  const char* head_names[] = {"oracle", "random", "weights", "zero"};
  sum.emplace_back("head", head_names[static_cast<int>(config.head)]);
  sum.emplace_back("frames", std::to_string(n));
  sum.emplace_back("window_length", std::to_string(w));
  sum.emplace_back("patches", std::to_string(graph.patches().size()));
  int iterations = 0;
  for (const auto& r : result.reports) iterations += r.iterations;
  sum.emplace_back("solver_rounds", std::to_string(result.reports.size()));
  sum.emplace_back("solver_iterations", std::to_string(iterations));
  sum.emplace_back("flow_loss", fmt(flow_loss(graph)));

  if (!in.ground_truth.poses.empty()) {
    result.ground_truth = in.ground_truth;
    const TrajectoryRecord& ref = in.ground_truth;
    const double ate_sim3 = ate_rmse(result.trajectory, ref, AlignMode::kSim3);
    const double ate_se3 = ate_rmse(result.trajectory, ref, AlignMode::kSE3);
    sum.emplace_back("ate_sim3", fmt(ate_sim3));
    sum.emplace_back("ate_se3", fmt(ate_se3));
    sum.emplace_back("anchor_frames",
                     std::to_string(std::min<std::size_t>(
                         config.anchor_frames,
                         associate(result.trajectory, ref).size())));
    try {
      result.profile =
          scale_profile(result.trajectory, ref, config.anchor_frames);
      result.has_profile = true;
      sum.emplace_back("max_abs_log_bias",
                       fmt(result.profile.max_abs_log_bias()));
    } catch (const Error& e) {
      if (e.code() != ErrorCode::kNoMotion &&
          e.code() != ErrorCode::kDegenerateConfiguration)
        throw;
      sum.emplace_back("max_abs_log_bias", "nan");
    }
    const double pose = pose_loss(result.trajectory, ref);
    sum.emplace_back("pose_loss", fmt(pose));
    if (gt) {
      const Sim3 align =
          umeyama_align(result.trajectory, ref, AlignMode::kSim3);
      const double sc = sc_loss(graph, *gt, align) /
                        std::max<std::size_t>(1, graph.patches().size());
      sum.emplace_back("sc_loss_mean", fmt(sc));
      sum.emplace_back("total_loss",
                       fmt(total_loss(flow_loss(graph), pose, sc)));
    }
  }
  if (!result.window_scales.empty()) {
    const double s0 = result.window_scales.front().scale;
    double dev = 0.0;
    for (const auto& ws : result.window_scales)
      dev = std::max(dev, std::abs(ws.scale / s0 - 1.0));
    sum.emplace_back("windows", std::to_string(result.window_scales.size()));
    sum.emplace_back("window_scale_max_rel_dev", fmt(dev));
  }
  return result;
}

void write_artifacts(const RunResult& result, const std::string& out_dir) {
  ensure_dir(out_dir);
  const fs::path dir(out_dir);
  write_file_atomic((dir / "trajectory.tum").string(),
                    format_tum(result.trajectory));
  write_file_atomic((dir / "summary.txt").string(), result.summary_text());
  std::string reports;
  for (const auto& r : result.reports) reports += r.to_text() + "\n";
  write_file_atomic((dir / "reports.txt").string(), reports);
  if (!result.ground_truth.poses.empty())
    write_file_atomic((dir / "ground_truth.tum").string(),
                      format_tum(result.ground_truth));
  if (result.has_profile)
    write_file_atomic((dir / "scale_profile.tsv").string(),
                      format_scale_profile(result.profile));
  if (!result.window_scales.empty()) {
    std::string t = "window\tframe\tscale\trelative\n";
    const double s0 = result.window_scales.front().scale;
    char buf[128];
    for (const auto& ws : result.window_scales) {
      std::snprintf(buf, sizeof(buf), "%d\t%d\t%.9f\t%.9f\n", ws.window,
                    ws.frame, ws.scale, ws.scale / s0);
      t += buf;
    }
    write_file_atomic((dir / "window_scales.tsv").string(), t);
  }
}

void cmd_generate(const std::string& spec_path, const std::string& out_dir) {
  const WorldSpec spec = load_world_spec(spec_path);
  const World world = build_world(spec);
  ensure_dir(out_dir);
  const fs::path dir(out_dir);
  atomic_replace((dir / "tracks.txt").string(), [&](const std::string& tmp) {
    write_track_file(tmp, world.tracks);
  });
  atomic_replace((dir / "features.bin").string(), [&](const std::string& tmp) {
    write_feature_file(tmp, world.tracks);
  });
  TrajectoryRecord gt;
  gt.timestamps = world.gt.timestamps;
  gt.poses = world.gt.poses;
  write_file_atomic((dir / "ground_truth.tum").string(), format_tum(gt));
}

RunResult cmd_run(const RunConfig& config) {
  // Fail on an unwritable destination before spending time on the run.
  ensure_dir(config.out_dir);
  RunResult result = run_pipeline(config);
  write_artifacts(result, config.out_dir);
  return result;
}

std::string EvalSummary::text() const {
  std::string out;
  out += "ate_se3=" + fmt(ate_se3) + "\n";
  out += "ate_sim3=" + fmt(ate_sim3) + "\n";
  out += "sim3_scale=" + fmt(sim3_scale) + "\n";
  out += "associated=" + std::to_string(associated) + "\n";
  out += "anchor_frames=" + std::to_string(anchor_frames) + "\n";
  if (has_profile) out += "max_abs_log_bias=" + fmt(max_abs_log_bias) + "\n";
  return out;
}

EvalSummary cmd_eval(const std::string& est_path, const std::string& ref_path,
                     int anchor_frames, const std::string& profile_out) {
  const TrajectoryRecord est = read_tum(est_path);
  const TrajectoryRecord ref = read_tum(ref_path);
  EvalSummary s;
  s.associated = static_cast<int>(associate(est, ref).size());
  s.anchor_frames = std::min(anchor_frames, s.associated);  // frames used
  s.ate_se3 = ate_rmse(est, ref, AlignMode::kSE3);
  s.ate_sim3 = ate_rmse(est, ref, AlignMode::kSim3);
  s.sim3_scale = umeyama_align(est, ref, AlignMode::kSim3).scale;
  if (!profile_out.empty()) {
    const ScaleProfile p = scale_profile(est, ref, anchor_frames);
    s.has_profile = true;
    s.max_abs_log_bias = p.max_abs_log_bias();
    const fs::path parent = fs::path(profile_out).parent_path();
    if (!parent.empty()) ensure_dir(parent.string());
    write_file_atomic(profile_out, format_scale_profile(p));
  }
  return s;
}

}  // namespace scevo
