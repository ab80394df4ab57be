#include "scevo/scevo.h"

#include <filesystem>
#include <new>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Geometry>

#include "scevo/config_file.hpp"
#include "scevo/error.hpp"
#include "scevo/pipeline.hpp"

struct scevo_config {
  scevo::ConfigFile file;
  std::string base_dir;
};

struct scevo_run_result {
  scevo::RunResult result;
  std::string summary;
  std::string reports;
  std::string out_dir;
};

namespace {

thread_local std::string g_last_error;

scevo_status status_of(scevo::ErrorCode code) {
  using scevo::ErrorCode;
  switch (code) {
    case ErrorCode::kInvalidArgument: return SCEVO_INVALID_ARGUMENT;
    case ErrorCode::kNonPositiveDepth: return SCEVO_NON_POSITIVE_DEPTH;
    case ErrorCode::kBehindCamera: return SCEVO_BEHIND_CAMERA;
    case ErrorCode::kEmptyTracks: return SCEVO_EMPTY_TRACKS;
    case ErrorCode::kEmptyReferenceSet: return SCEVO_EMPTY_REFERENCE_SET;
    case ErrorCode::kDimensionMismatch: return SCEVO_DIMENSION_MISMATCH;
    case ErrorCode::kEmptyFrame: return SCEVO_EMPTY_FRAME;
    case ErrorCode::kSingularSystem: return SCEVO_SINGULAR_SYSTEM;
    case ErrorCode::kDivergedCost: return SCEVO_DIVERGED_COST;
    case ErrorCode::kInfeasibleSpec: return SCEVO_INFEASIBLE_SPEC;
    case ErrorCode::kUnknownPatch: return SCEVO_UNKNOWN_PATCH;
    case ErrorCode::kDegenerateConfiguration:
      return SCEVO_DEGENERATE_CONFIGURATION;
    case ErrorCode::kNoAssociations: return SCEVO_NO_ASSOCIATIONS;
    case ErrorCode::kNoMotion: return SCEVO_NO_MOTION;
    case ErrorCode::kMissingGroundTruth: return SCEVO_MISSING_GROUND_TRUTH;
    case ErrorCode::kChecksumMismatch: return SCEVO_CHECKSUM_MISMATCH;
    case ErrorCode::kParse: return SCEVO_PARSE_ERROR;
    case ErrorCode::kIo: return SCEVO_IO_ERROR;
  }
  return SCEVO_INTERNAL_ERROR;
}

template <typename Fn>
scevo_status guarded(Fn&& fn) {
  g_last_error.clear();
  try {
    fn();
    return SCEVO_OK;
  } catch (const scevo::Error& e) {
    g_last_error = e.what();
    return status_of(e.code());
  } catch (const std::bad_alloc&) {
    g_last_error = "out of memory";
  } catch (const std::exception& e) {
    g_last_error = e.what();
  } catch (...) {
    g_last_error = "unknown error";
  }
  return SCEVO_INTERNAL_ERROR;
}

scevo_status null_argument(const char* name) {
  g_last_error = std::string(name) + " is null";
  return SCEVO_INVALID_ARGUMENT;
}

}  // namespace

extern "C" {

const char* scevo_status_string(scevo_status status) {
  switch (status) {
    case SCEVO_OK: return "ok";
    case SCEVO_INVALID_ARGUMENT: return "invalid_argument";
    case SCEVO_NON_POSITIVE_DEPTH: return "non_positive_depth";
    case SCEVO_BEHIND_CAMERA: return "behind_camera";
    case SCEVO_EMPTY_TRACKS: return "empty_tracks";
    case SCEVO_EMPTY_REFERENCE_SET: return "empty_reference_set";
    case SCEVO_DIMENSION_MISMATCH: return "dimension_mismatch";
    case SCEVO_EMPTY_FRAME: return "empty_frame";
    case SCEVO_SINGULAR_SYSTEM: return "singular_system";
    case SCEVO_DIVERGED_COST: return "diverged_cost";
    case SCEVO_INFEASIBLE_SPEC: return "infeasible_spec";
    case SCEVO_UNKNOWN_PATCH: return "unknown_patch";
    case SCEVO_DEGENERATE_CONFIGURATION: return "degenerate_configuration";
    case SCEVO_NO_ASSOCIATIONS: return "no_associations";
    case SCEVO_NO_MOTION: return "no_motion";
    case SCEVO_MISSING_GROUND_TRUTH: return "missing_ground_truth";
    case SCEVO_CHECKSUM_MISMATCH: return "checksum_mismatch";
    case SCEVO_PARSE_ERROR: return "parse_error";
    case SCEVO_IO_ERROR: return "io_error";
    case SCEVO_INTERNAL_ERROR: return "internal_error";
  }
  return "unknown_status";
}

const char* scevo_last_error_message(void) { return g_last_error.c_str(); }

const char* scevo_version(void) { return "0.1.0"; }

scevo_status scevo_generate(const char* spec_path, const char* out_dir) {
  if (!spec_path) return null_argument("spec_path");
  if (!out_dir) return null_argument("out_dir");
  return guarded([&] { scevo::cmd_generate(spec_path, out_dir); });
}

scevo_status scevo_config_load(const char* path, scevo_config** out) {
  if (!path) return null_argument("path");
  if (!out) return null_argument("out");
  *out = nullptr;
  return guarded([&] {
    auto* c = new scevo_config{scevo::ConfigFile::load(path),
                               std::filesystem::path(path)
                                   .parent_path()
                                   .string()};
    *out = c;
  });
}

scevo_status scevo_config_set(scevo_config* config, const char* key,
                              const char* value) {
  if (!config) return null_argument("config");
  if (!key) return null_argument("key");
  if (!value) return null_argument("value");
  return guarded([&] { config->file.set(key, value); });
}

void scevo_config_free(scevo_config* config) { delete config; }

scevo_status scevo_run(const scevo_config* config, scevo_run_result** out) {
  if (!config) return null_argument("config");
  if (!out) return null_argument("out");
  *out = nullptr;
  return guarded([&] {
    const scevo::RunConfig rc =
        scevo::run_config_from(config->file, config->base_dir);
    auto* r = new scevo_run_result;
    try {
      r->result = scevo::cmd_run(rc);
    } catch (...) {
      delete r;
      throw;
    }
    r->summary = r->result.summary_text();
    for (const auto& rep : r->result.reports) r->reports += rep.to_text() + "\n";
    r->out_dir = rc.out_dir;
    *out = r;
  });
}

const char* scevo_run_result_summary(const scevo_run_result* result) {
  return result ? result->summary.c_str() : "";
}

const char* scevo_run_result_reports(const scevo_run_result* result) {
  return result ? result->reports.c_str() : "";
}

const char* scevo_run_result_output_dir(const scevo_run_result* result) {
  return result ? result->out_dir.c_str() : "";
}

size_t scevo_run_result_num_frames(const scevo_run_result* result) {
  return result ? result->result.trajectory.size() : 0;
}

scevo_status scevo_run_result_pose(const scevo_run_result* result,
                                   size_t index, double* timestamp,
                                   double pose[7]) {
  if (!result) return null_argument("result");
  if (!pose) return null_argument("pose");
  const auto& traj = result->result.trajectory;
  if (index >= traj.size()) {
    g_last_error = "frame index " + std::to_string(index) + " out of range";
    return SCEVO_INVALID_ARGUMENT;
  }
  const scevo::Pose& p = traj.poses[index];
  Eigen::Quaterniond q(p.rotation());
  q.normalize();
  if (q.w() < 0.0) q.coeffs() = -q.coeffs();
  if (timestamp) *timestamp = traj.timestamps[index];
  pose[0] = p.translation().x();
  pose[1] = p.translation().y();
  pose[2] = p.translation().z();
  pose[3] = q.x();
  pose[4] = q.y();
  pose[5] = q.z();
  pose[6] = q.w();
  return SCEVO_OK;
}

void scevo_run_result_free(scevo_run_result* result) { delete result; }

scevo_status scevo_evaluate(const char* est_path, const char* ref_path,
                            int anchor_frames, const char* profile_out,
                            scevo_eval_summary* out) {
  if (!est_path) return null_argument("est_path");
  if (!ref_path) return null_argument("ref_path");
  if (!out) return null_argument("out");
  return guarded([&] {
    const scevo::EvalSummary s = scevo::cmd_eval(
        est_path, ref_path, anchor_frames, profile_out ? profile_out : "");
    out->ate_se3 = s.ate_se3;
    out->ate_sim3 = s.ate_sim3;
    out->sim3_scale = s.sim3_scale;
    out->associated = s.associated;
    out->anchor_frames = s.anchor_frames;
    out->has_profile = s.has_profile ? 1 : 0;
    out->max_abs_log_bias = s.max_abs_log_bias;
  });
}

}  // extern "C"
