#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "scevo/bundle_adjustment.hpp"
#include "scevo/config_file.hpp"
#include "scevo/evaluation.hpp"
#include "scevo/patch_graph.hpp"

namespace scevo {

enum class RunMode { kFlowOnly, kFull };
enum class HeadSource { kOracle, kRandom, kWeights, kZero };

struct RunConfig {
  // Either a world spec (generated in memory, ground truth available) or a
  // track file plus feature sidecar.
  std::string world_path;
  std::string tracks_path;
  std::string features_path;
  std::string ground_truth_path;  // optional TUM file for evaluation
  CameraIntrinsics camera{320.0, 320.0, 320.0, 240.0};

  RunMode mode = RunMode::kFull;
  GraphOptions graph;
  int patches_per_frame = 80;
  int init_frames = 0;  // 0: window length
  bool reinit_depths = true;
  bool motion_presolve = true;
  ScheduleConfig schedule;

  HeadSource head = HeadSource::kOracle;
  std::uint64_t head_seed = 7;
  std::string weights_path;
  double oracle_sigma = 0.02;

  int anchor_frames = 20;
  std::string out_dir = "out";
  int threads = 1;
};

/// Keys: [input] world tracks features ground_truth
///       [camera] fx fy cx cy
///       [run] mode(flow_only|full) window_length patches_per_frame
///             init_frames stage2_iterations reinit_depths motion_presolve
///             anchor_frames threads
///       [reference] span cap keep_fraction
///       [solver] max_iters stage1_max_iters damping_init damping_growth
///                damping_shrink damping_min max_backoff convergence_tol
///                sc_rounds flow_rounds joint huber huber_delta
///       [propagation] normalization(softmax|raw)
///       [head] source(oracle|random|weights|zero) seed weights oracle_sigma
///       [output] dir
/// Relative paths are resolved against `base_dir`.
RunConfig run_config_from(const ConfigFile& cfg, const std::string& base_dir);
RunConfig load_run_config(const std::string& path,
                          const std::vector<std::string>& overrides = {});

struct WindowScale {
  int window = 0;
  int frame = 0;  // newest frame when the window was solved
  double scale = 1.0;  // Sim3 scale mapping estimated points onto ground truth
};

struct RunResult {
  TrajectoryRecord trajectory;
  TrajectoryRecord ground_truth;  // empty without ground truth
  std::vector<ConvergenceReport> reports;
  std::vector<WindowScale> window_scales;
  bool has_profile = false;
  ScaleProfile profile;
  std::vector<std::pair<std::string, std::string>> summary;

  std::string summary_text() const;
  const std::string* summary_value(const std::string& key) const;
};

/// Runs the odometry pipeline in memory.
RunResult run_pipeline(const RunConfig& config);

/// Writes trajectory.tum, summary.txt, reports.txt and, with ground truth,
/// ground_truth.tum, scale_profile.tsv and window_scales.tsv. Each file is
/// written to a temporary name and renamed into place.
void write_artifacts(const RunResult& result, const std::string& out_dir);

/// tracks.txt, features.bin and ground_truth.tum from a world spec.
void cmd_generate(const std::string& spec_path, const std::string& out_dir);

RunResult cmd_run(const RunConfig& config);

struct EvalSummary {
  double ate_se3 = 0.0;
  double ate_sim3 = 0.0;
  double sim3_scale = 1.0;
  int associated = 0;
  int anchor_frames = 0;
  bool has_profile = false;
  double max_abs_log_bias = 0.0;

  std::string text() const;
};

/// ATE in both modes; writes the scale profile to `profile_out` when given.
EvalSummary cmd_eval(const std::string& est_path, const std::string& ref_path,
                     int anchor_frames, const std::string& profile_out);

/// Writes `content` to `path` through a temporary file and rename.
void write_file_atomic(const std::string& path, const std::string& content);

}  // namespace scevo
