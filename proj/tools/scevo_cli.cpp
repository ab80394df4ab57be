// Command-line front end. Talks to the library only through scevo.h.
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "scevo/scevo.h"

namespace {

enum Exit {
  kExitOk = 0,
  kExitInternal = 1,
  kExitUsage = 2,
  kExitIo = 3,
  kExitParse = 4,
  kExitSolver = 5,
  kExitEval = 6,
  kExitInput = 7,
};

int exit_code(scevo_status s) {
  switch (s) {
    case SCEVO_OK: return kExitOk;
    case SCEVO_IO_ERROR: return kExitIo;
    case SCEVO_PARSE_ERROR:
    case SCEVO_CHECKSUM_MISMATCH: return kExitParse;
    case SCEVO_SINGULAR_SYSTEM:
    case SCEVO_DIVERGED_COST:
    case SCEVO_NON_POSITIVE_DEPTH:
    case SCEVO_BEHIND_CAMERA: return kExitSolver;
    case SCEVO_NO_ASSOCIATIONS:
    case SCEVO_DEGENERATE_CONFIGURATION:
    case SCEVO_NO_MOTION:
    case SCEVO_MISSING_GROUND_TRUTH: return kExitEval;
    case SCEVO_INVALID_ARGUMENT:
    case SCEVO_INFEASIBLE_SPEC:
    case SCEVO_EMPTY_TRACKS:
    case SCEVO_EMPTY_REFERENCE_SET:
    case SCEVO_DIMENSION_MISMATCH:
    case SCEVO_EMPTY_FRAME:
    case SCEVO_UNKNOWN_PATCH: return kExitInput;
    case SCEVO_INTERNAL_ERROR: break;
  }
  return kExitInternal;
}

int fail(scevo_status s) {
  std::fprintf(stderr, "scevo: %s: %s\n", scevo_status_string(s),
               scevo_last_error_message());
  return exit_code(s);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Scale-anchored patch-graph visual odometry"};
  app.require_subcommand(1);
  app.set_version_flag("--version", scevo_version());

  std::string spec_path, gen_out;
  auto* gen = app.add_subcommand("generate", "Generate a synthetic world");
  gen->add_option("spec", spec_path, "World spec file")->required();
  gen->add_option("-o,--out", gen_out, "Output directory")->required();

  std::string config_path, mode, run_out, report_path;
  int threads = 0;
  std::vector<std::string> overrides;
  auto* run = app.add_subcommand("run", "Run odometry on a config");
  run->add_option("config", config_path, "Run config file")->required();
  run->add_option("--mode", mode, "Residual mode")
      ->check(CLI::IsMember({"flow_only", "full"}));
  run->add_option("-o,--out", run_out, "Output directory (output.dir)");
  run->add_option("-j,--threads", threads, "Worker threads (run.threads)")
      ->check(CLI::PositiveNumber);
  run->add_option("--set", overrides, "Override section.key=value")
      ->allow_extra_args(false);
  run->add_option("--report", report_path,
                  "Also write convergence reports to this file");

  std::string est_path, ref_path, profile_path;
  int anchor_frames = 20;
  auto* eval = app.add_subcommand("eval", "Evaluate a trajectory");
  eval->add_option("estimate", est_path, "Estimated TUM trajectory")
      ->required();
  eval->add_option("reference", ref_path, "Reference TUM trajectory")
      ->required();
  eval->add_option("--anchor-frames", anchor_frames,
                   "Frames used to anchor the scale profile")
      ->capture_default_str();
  eval->add_option("--profile", profile_path, "Write scale profile TSV");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  if (*gen) {
    const scevo_status s = scevo_generate(spec_path.c_str(), gen_out.c_str());
    if (s != SCEVO_OK) return fail(s);
    std::printf("wrote %s\n", gen_out.c_str());
    return kExitOk;
  }

  if (*run) {
    scevo_config* cfg = nullptr;
    scevo_status s = scevo_config_load(config_path.c_str(), &cfg);
    if (s != SCEVO_OK) return fail(s);
    std::vector<std::pair<std::string, std::string>> sets;
    for (const std::string& o : overrides) {
      const auto eq = o.find('=');
      if (eq == std::string::npos || eq == 0) {
        std::fprintf(stderr, "scevo: --set expects section.key=value, got '%s'\n",
                     o.c_str());
        scevo_config_free(cfg);
        return kExitUsage;
      }
      sets.emplace_back(o.substr(0, eq), o.substr(eq + 1));
    }
    if (!mode.empty()) sets.emplace_back("run.mode", mode);
    // Paths in the file are relative to the file; -o is relative to the cwd.
    if (!run_out.empty())
      sets.emplace_back("output.dir", std::filesystem::absolute(run_out).string());
    if (threads > 0) sets.emplace_back("run.threads", std::to_string(threads));
    for (const auto& [k, v] : sets) {
      s = scevo_config_set(cfg, k.c_str(), v.c_str());
      if (s != SCEVO_OK) {
        scevo_config_free(cfg);
        return fail(s);
      }
    }
    scevo_run_result* result = nullptr;
    s = scevo_run(cfg, &result);
    scevo_config_free(cfg);
    if (s != SCEVO_OK) return fail(s);
    std::fputs(scevo_run_result_summary(result), stdout);
    int code = kExitOk;
    if (!report_path.empty()) {
      std::ofstream out(report_path, std::ios::binary);
      out << scevo_run_result_reports(result);
      if (!out) {
        std::fprintf(stderr, "scevo: io_error: cannot write report '%s'\n",
                     report_path.c_str());
        code = kExitIo;
      }
    }
    scevo_run_result_free(result);
    return code;
  }

  scevo_eval_summary summary{};
  const scevo_status s =
      scevo_evaluate(est_path.c_str(), ref_path.c_str(), anchor_frames,
                     profile_path.c_str(), &summary);
  if (s != SCEVO_OK) return fail(s);
  std::printf("ate_se3=%.6f\n", summary.ate_se3);
  std::printf("ate_sim3=%.6f\n", summary.ate_sim3);
  std::printf("sim3_scale=%.9g\n", summary.sim3_scale);
  std::printf("associated=%d\n", summary.associated);
  std::printf("anchor_frames=%d\n", summary.anchor_frames);
  if (summary.has_profile)
    std::printf("max_abs_log_bias=%.9g\n", summary.max_abs_log_bias);
  return kExitOk;
}
