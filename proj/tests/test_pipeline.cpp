#include <cmath>
#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "scevo/error.hpp"
#include "scevo/pipeline.hpp"
#include "test_support.hpp"

using namespace scevo;
namespace fs = std::filesystem;

namespace {

const char* kCamera =
    "[camera]\nfx = 320\nfy = 320\ncx = 320\ncy = 240\n";

std::string world_text(int frames, int patches, const std::string& extra = "") {
  return "[world]\nseed = 4\nn_frames = " + std::to_string(frames) +
         "\npatches_per_frame = " + std::to_string(patches) +
         "\ntrajectory = arc\nwindow_length = 6\n\n" + kCamera + extra;
}

std::string run_text(const std::string& world, const std::string& extra = "") {
  return "[input]\nworld = " + world +
         "\n\n[run]\nmode = flow_only\nwindow_length = 6\n"
         "patches_per_frame = 24\n" + extra;
}

double summary_number(const RunResult& r, const std::string& key) {
  const std::string* v = r.summary_value(key);
  if (!v) throw std::runtime_error("summary has no " + key);
  return std::stod(*v);
}

}  // namespace

TEST(Generate, MinimalSpecWritesThreeFiles) {
  test::TempDir dir("gen");
  test::write_text(dir.file("w.ini"), world_text(2, 10));
  cmd_generate(dir.file("w.ini"), dir.file("a"));
  for (const char* f : {"tracks.txt", "features.bin", "ground_truth.tum"})
    EXPECT_TRUE(fs::exists(dir.file(std::string("a/") + f))) << f;
  EXPECT_EQ(read_tum(dir.file("a/ground_truth.tum")).size(), 2u);
  std::size_t lines = 0;
  for (char c : test::read_text(dir.file("a/ground_truth.tum"))) lines += c == '\n';
  EXPECT_EQ(lines, 3u);  // header plus two poses
}

TEST(Generate, SameSpecTwiceIsByteIdentical) {
  test::TempDir dir("gen2");
  test::write_text(dir.file("w.ini"), world_text(8, 20));
  cmd_generate(dir.file("w.ini"), dir.file("a"));
  cmd_generate(dir.file("w.ini"), dir.file("b"));
  for (const char* f : {"tracks.txt", "features.bin", "ground_truth.tum"}) {
    const std::string a = test::read_text(dir.file(std::string("a/") + f));
    EXPECT_FALSE(a.empty());
    EXPECT_EQ(a, test::read_text(dir.file(std::string("b/") + f))) << f;
  }
}

TEST(Generate, MalformedKeyNamesKeyAndLine) {
  test::TempDir dir("gen3");
  test::write_text(dir.file("w.ini"), "[world]\nn_frames = 2\nn_framez = 3\n");
  try {
    cmd_generate(dir.file("w.ini"), dir.file("a"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParse);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("n_framez"), std::string::npos) << msg;
    EXPECT_NE(msg.find(":3"), std::string::npos) << msg;
  }
  test::write_text(dir.file("v.ini"), "[world]\nn_frames = two\n");
  EXPECT_EQ(test::code_of([&] { cmd_generate(dir.file("v.ini"), dir.file("b")); }),
            ErrorCode::kParse);
}

TEST(RunConfig, DefaultsAndOverrides) {
  test::TempDir dir("cfg");
  test::write_text(dir.file("r.cfg"), "[input]\nworld = w.ini\n");
  const RunConfig c = load_run_config(dir.file("r.cfg"));
  EXPECT_EQ(c.mode, RunMode::kFull);
  EXPECT_EQ(c.patches_per_frame, 80);
  EXPECT_EQ(c.graph.reference_cap, 1200);
  EXPECT_EQ(c.graph.reference_span, 30);
  EXPECT_EQ(c.schedule.solver.sc_rounds_per_iter, 1);
  EXPECT_EQ(c.schedule.solver.flow_rounds_per_iter, 2);
  EXPECT_EQ(c.anchor_frames, 20);
  EXPECT_EQ(fs::path(c.world_path), fs::path(dir.file("w.ini")));

  const RunConfig o =
      load_run_config(dir.file("r.cfg"), {"run.mode=flow_only", "reference.cap=50"});
  EXPECT_EQ(o.mode, RunMode::kFlowOnly);
  EXPECT_EQ(o.graph.reference_cap, 50);

  EXPECT_EQ(test::code_of([&] { load_run_config(dir.file("r.cfg"), {"reference.cap=0"}); }),
            ErrorCode::kParse);
  EXPECT_EQ(test::code_of([&] { load_run_config(dir.file("r.cfg"), {"run.mode=fast"}); }),
            ErrorCode::kParse);
  EXPECT_EQ(test::code_of([&] { load_run_config(dir.file("missing.cfg")); }),
            ErrorCode::kIo);
}

TEST(Run, NoiselessFlowOnlyRecoversTrajectory) {
  test::TempDir dir("run");
  test::write_text(dir.file("w.ini"), world_text(20, 30));
  test::write_text(dir.file("r.cfg"), run_text("w.ini"));
  RunConfig c = load_run_config(dir.file("r.cfg"));
  c.out_dir = dir.file("out");
  const RunResult r = cmd_run(c);
  EXPECT_EQ(r.trajectory.size(), 20u);
  EXPECT_LT(summary_number(r, "ate_sim3"), 1e-6);
  EXPECT_LT(ate_rmse(r.trajectory, r.ground_truth, AlignMode::kSim3), 1e-6);
  for (const char* f : {"trajectory.tum", "summary.txt", "reports.txt",
                        "ground_truth.tum", "scale_profile.tsv",
                        "window_scales.tsv"})
    EXPECT_TRUE(fs::exists(dir.file(std::string("out/") + f))) << f;
  EXPECT_EQ(test::read_text(dir.file("out/summary.txt")), r.summary_text());
  EXPECT_EQ(*r.summary_value("anchor_frames"), "20");
  const std::string tsv = test::read_text(dir.file("out/scale_profile.tsv"));
  EXPECT_EQ(tsv.rfind("frame\ttimestamp\ts_t\tlog_bias\n", 0), 0u);
  for (const auto& entry : fs::directory_iterator(dir.file("out")))
    EXPECT_EQ(entry.path().filename().string().find(".tmp"), std::string::npos);
}

TEST(Run, GeneratedFilesMatchInMemoryWorld) {
  test::TempDir dir("run2");
  test::write_text(dir.file("w.ini"), world_text(12, 24));
  cmd_generate(dir.file("w.ini"), dir.file("gen"));
  test::write_text(dir.file("a.cfg"), run_text("w.ini") + "\n[head]\nsource = zero\n");
  test::write_text(dir.file("b.cfg"),
                   std::string("[input]\ntracks = gen/tracks.txt\n"
                               "features = gen/features.bin\n"
                               "ground_truth = gen/ground_truth.tum\n\n") +
                       kCamera +
                       "\n[run]\nmode = flow_only\nwindow_length = 6\n"
                       "patches_per_frame = 24\n\n[head]\nsource = zero\n");
  const RunResult a = run_pipeline(load_run_config(dir.file("a.cfg")));
  const RunResult b = run_pipeline(load_run_config(dir.file("b.cfg")));
  EXPECT_EQ(format_tum(a.trajectory), format_tum(b.trajectory));
  EXPECT_EQ(*a.summary_value("ate_sim3"), *b.summary_value("ate_sim3"));
}

TEST(Run, DeterministicAcrossThreadCounts) {
  test::TempDir dir("det");
  test::write_text(dir.file("w.ini"),
                   world_text(16, 30, "\n[noise]\npixel_sigma = 0.5\n"
                                      "depth_init_error = 0.1\n"));
  test::write_text(dir.file("r.cfg"), run_text("w.ini") + "\n[head]\nsource = random\n");
  const std::string mode[] = {"run.mode=full", "run.mode=flow_only"};
  for (const std::string& m : mode) {
    RunConfig one = load_run_config(dir.file("r.cfg"), {m, "run.threads=1"});
    RunConfig four = load_run_config(dir.file("r.cfg"), {m, "run.threads=4"});
    one.out_dir = dir.file("one");
    four.out_dir = dir.file("four");
    cmd_run(one);
    cmd_run(four);
    for (const auto& entry : fs::directory_iterator(dir.file("one"))) {
      const std::string name = entry.path().filename().string();
      EXPECT_EQ(test::read_text(entry.path().string()),
                test::read_text(dir.file("four/" + name)))
          << m << " " << name;
    }
  }
}

TEST(Run, MissingFeatureFileIsIoErrorNamingPath) {
  test::TempDir dir("io");
  test::write_text(dir.file("w.ini"), world_text(4, 10));
  cmd_generate(dir.file("w.ini"), dir.file("gen"));
  test::write_text(dir.file("r.cfg"),
                   std::string("[input]\ntracks = gen/tracks.txt\n"
                               "features = gen/nope.bin\n") + kCamera +
                       "\n[head]\nsource = zero\n");
  try {
    run_pipeline(load_run_config(dir.file("r.cfg")));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kIo);
    EXPECT_NE(std::string(e.what()).find("nope.bin"), std::string::npos);
  }
}

TEST(Run, OracleHeadNeedsGroundTruthWorld) {
  test::TempDir dir("oracle");
  test::write_text(dir.file("w.ini"), world_text(4, 10));
  cmd_generate(dir.file("w.ini"), dir.file("gen"));
  test::write_text(dir.file("r.cfg"),
                   std::string("[input]\ntracks = gen/tracks.txt\n"
                               "features = gen/features.bin\n") + kCamera);
  EXPECT_EQ(test::code_of([&] { run_pipeline(load_run_config(dir.file("r.cfg"))); }),
            ErrorCode::kMissingGroundTruth);
}

TEST(Eval, IdenticalAndScaledTrajectories) {
  test::TempDir dir("eval");
  TrajectoryRecord ref;
  for (int i = 0; i < 30; ++i) {
    ref.timestamps.push_back(0.1 * i);
    ref.poses.push_back(Pose(so3_exp(Vec3(0, 0.05 * i, 0)),
                             Vec3(std::cos(0.2 * i), 0.3 * i, std::sin(0.2 * i))));
  }
  write_tum(dir.file("ref.tum"), ref);
  const EvalSummary same =
      cmd_eval(dir.file("ref.tum"), dir.file("ref.tum"), 20, dir.file("p.tsv"));
  EXPECT_LT(same.ate_se3, 1e-12);
  EXPECT_LT(same.ate_sim3, 1e-12);
  EXPECT_EQ(same.anchor_frames, 20);
  EXPECT_EQ(same.associated, 30);
  EXPECT_TRUE(fs::exists(dir.file("p.tsv")));
  EXPECT_NE(same.text().find("anchor_frames=20"), std::string::npos);

  TrajectoryRecord scaled = ref;
  for (auto& p : scaled.poses) p = Pose(p.rotation(), 2.0 * p.translation());
  write_tum(dir.file("est.tum"), scaled);
  const EvalSummary s = cmd_eval(dir.file("est.tum"), dir.file("ref.tum"), 20, "");
  EXPECT_LT(s.ate_sim3, 1e-9);
  EXPECT_GT(s.ate_se3, 0.1);
  EXPECT_NEAR(s.sim3_scale, 0.5, 1e-9);

  TrajectoryRecord shifted = ref;
  for (auto& t : shifted.timestamps) t += 100.0;
  write_tum(dir.file("far.tum"), shifted);
  EXPECT_EQ(test::code_of([&] {
              cmd_eval(dir.file("far.tum"), dir.file("ref.tum"), 20, "");
            }),
            ErrorCode::kNoAssociations);
}

TEST(WriteFileAtomic, ReplacesContent) {
  test::TempDir dir("atomic");
  write_file_atomic(dir.file("x.txt"), "one");
  write_file_atomic(dir.file("x.txt"), "two");
  EXPECT_EQ(test::read_text(dir.file("x.txt")), "two");
  EXPECT_EQ(test::code_of([&] { write_file_atomic(dir.file("no/such/x"), "a"); }),
            ErrorCode::kIo);
}
