#ifndef SCEVO_SCEVO_H
#define SCEVO_SCEVO_H

#include <stddef.h>

#if defined(SCEVO_BUILDING_LIBRARY)
#define SCEVO_API __attribute__((visibility("default")))
#else
#define SCEVO_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum scevo_status {
  SCEVO_OK = 0,
  SCEVO_INVALID_ARGUMENT,
  SCEVO_NON_POSITIVE_DEPTH,
  SCEVO_BEHIND_CAMERA,
  SCEVO_EMPTY_TRACKS,
  SCEVO_EMPTY_REFERENCE_SET,
  SCEVO_DIMENSION_MISMATCH,
  SCEVO_EMPTY_FRAME,
  SCEVO_SINGULAR_SYSTEM,
  SCEVO_DIVERGED_COST,
  SCEVO_INFEASIBLE_SPEC,
  SCEVO_UNKNOWN_PATCH,
  SCEVO_DEGENERATE_CONFIGURATION,
  SCEVO_NO_ASSOCIATIONS,
  SCEVO_NO_MOTION,
  SCEVO_MISSING_GROUND_TRUTH,
  SCEVO_CHECKSUM_MISMATCH,
  SCEVO_PARSE_ERROR,
  SCEVO_IO_ERROR,
  SCEVO_INTERNAL_ERROR
} scevo_status;

/* Static name of a status, e.g. "io_error". */
SCEVO_API const char* scevo_status_string(scevo_status status);

/* Message of the last failure on the calling thread ("" if none). The
   pointer stays valid until the next library call on this thread. */
SCEVO_API const char* scevo_last_error_message(void);

SCEVO_API const char* scevo_version(void);

/* Writes tracks.txt, features.bin and ground_truth.tum. */
SCEVO_API scevo_status scevo_generate(const char* spec_path,
                                      const char* out_dir);

typedef struct scevo_config scevo_config;

SCEVO_API scevo_status scevo_config_load(const char* path,
                                         scevo_config** out);
/* Overrides one "section.key". Validated on the next scevo_run. */
SCEVO_API scevo_status scevo_config_set(scevo_config* config, const char* key,
                                        const char* value);
SCEVO_API void scevo_config_free(scevo_config* config);

typedef struct scevo_run_result scevo_run_result;

/* Runs the pipeline and writes artifacts to the configured output dir. */
SCEVO_API scevo_status scevo_run(const scevo_config* config,
                                 scevo_run_result** out);
/* key=value lines, owned by the result. */
SCEVO_API const char* scevo_run_result_summary(const scevo_run_result* result);
/* Convergence reports, key=value blocks separated by blank lines. */
SCEVO_API const char* scevo_run_result_reports(const scevo_run_result* result);
SCEVO_API const char* scevo_run_result_output_dir(
    const scevo_run_result* result);
SCEVO_API size_t scevo_run_result_num_frames(const scevo_run_result* result);
/* Writes timestamp and [tx ty tz qx qy qz qw] of frame `index`. */
SCEVO_API scevo_status scevo_run_result_pose(const scevo_run_result* result,
                                             size_t index, double* timestamp,
                                             double pose[7]);
SCEVO_API void scevo_run_result_free(scevo_run_result* result);

typedef struct scevo_eval_summary {
  double ate_se3;
  double ate_sim3;
  double sim3_scale;
  int associated;
  int anchor_frames;
  int has_profile;
  double max_abs_log_bias;
} scevo_eval_summary;

/* profile_out may be NULL or "" to skip the scale profile. */
SCEVO_API scevo_status scevo_evaluate(const char* est_path,
                                      const char* ref_path, int anchor_frames,
                                      const char* profile_out,
                                      scevo_eval_summary* out);

#ifdef __cplusplus
}
#endif

#endif
