#include <sstream>

#include <gtest/gtest.h>

#include "scevo/config_file.hpp"
#include "scevo/error.hpp"
#include "scevo/tracks.hpp"
#include "test_support.hpp"

using namespace scevo;

namespace {

ConfigFile parse(const std::string& text) {
  std::istringstream in(text);
  return ConfigFile::parse(in, "test.cfg");
}

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an error";
  return ErrorCode::kInvalidArgument;
}

PatchTrackSet two_patch_set() {
  PatchTrackSet set;
  PatchTrack a;
  a.patch_id = 3;
  a.source_frame = 1;
  a.center = {10.25, 20.5};
  a.score = 0.75;
  a.init_depth = 4.5;
  a.observations = {{0, {11.0, 21.0}, 0.5}, {2, {9.0, 19.0}, 1.0}};
  a.match_feature = Eigen::VectorXd::LinSpaced(4, 0.0, 3.0);
  a.ctx_feature = Eigen::VectorXd::LinSpaced(4, -1.0, 2.0);
  PatchTrack b;
  b.patch_id = 7;
  b.source_frame = 2;
  b.center = {1.0, 2.0};
  b.observations = {{1, {1.5, 2.5}, 1.0}};
  b.match_feature = Eigen::VectorXd::Constant(4, 0.25);
  b.ctx_feature = Eigen::VectorXd::Constant(4, -0.5);
  set.tracks = {a, b};
  return set;
}

}  // namespace

TEST(ConfigFile, SectionsAndComments) {
  const ConfigFile c = parse(
      "# leading comment\n[run]\nmode = full ; trailing\nthreads=2\n\n"
      "[solver]\nmax_iters = 7\nratio = 0.5\nlist = 1, 2.5 ,3\nflag = yes\n");
  EXPECT_EQ(c.get_string("run.mode", ""), "full");
  EXPECT_EQ(c.get_int("run.threads", 0), 2);
  EXPECT_EQ(c.get_int("solver.max_iters", 0), 7);
  EXPECT_EQ(c.get_double("solver.ratio", 0.0), 0.5);
  EXPECT_EQ(c.get_double_list("solver.list"), (std::vector<double>{1, 2.5, 3}));
  EXPECT_TRUE(c.get_bool("solver.flag", false));
  EXPECT_EQ(c.get_int("solver.missing", 42), 42);
}

TEST(ConfigFile, UnknownKeyNamesKeyAndLine) {
  const ConfigFile c = parse("[run]\nmode = full\nbogus_key = 3\n");
  try {
    c.require_known({"run.mode"});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParse);
    const std::string msg = e.what();
    EXPECT_NE(msg.find("test.cfg:3"), std::string::npos) << msg;
    EXPECT_NE(msg.find("run.bogus_key"), std::string::npos) << msg;
  }
}

TEST(ConfigFile, MalformedInputIsParseError) {
  EXPECT_EQ(code_of([] { parse("[run\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { parse("[run]\nno equals sign\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { parse("[run]\na = 1\na = 2\n"); }), ErrorCode::kParse);
  EXPECT_EQ(code_of([] { parse("[run]\na = x\n").get_double("run.a", 0); }),
            ErrorCode::kParse);
  EXPECT_EQ(code_of([] { parse("[run]\na = 1.5\n").get_int("run.a", 0); }),
            ErrorCode::kParse);
  EXPECT_EQ(code_of([] { ConfigFile::load("/nonexistent/file.cfg"); }),
            ErrorCode::kIo);
}

TEST(ConfigFile, OverridesReplaceValues) {
  ConfigFile c = parse("[run]\nmode = full\n");
  c.set("run.mode", "flow_only");
  EXPECT_EQ(c.get_string("run.mode", ""), "flow_only");
}

TEST(TrackFile, RoundTripIsExact) {
  test::TempDir dir("tracks");
  const PatchTrackSet set = two_patch_set();
  write_track_file(dir.file("t.txt"), set);
  write_feature_file(dir.file("f.bin"), set);
  PatchTrackSet back = read_track_file(dir.file("t.txt"));
  read_feature_file(dir.file("f.bin"), back);
  ASSERT_EQ(back.tracks.size(), 2u);
  for (std::size_t i = 0; i < 2; ++i) {
    const auto& a = set.tracks[i];
    const auto& b = back.tracks[i];
    EXPECT_EQ(a.patch_id, b.patch_id);
    EXPECT_EQ(a.source_frame, b.source_frame);
    EXPECT_EQ(a.center, b.center);
    EXPECT_EQ(a.score, b.score);
    EXPECT_EQ(a.init_depth, b.init_depth);
    ASSERT_EQ(a.observations.size(), b.observations.size());
    for (std::size_t k = 0; k < a.observations.size(); ++k) {
      EXPECT_EQ(a.observations[k].frame, b.observations[k].frame);
      EXPECT_EQ(a.observations[k].uv, b.observations[k].uv);
      EXPECT_EQ(a.observations[k].weight, b.observations[k].weight);
    }
    EXPECT_EQ(a.match_feature, b.match_feature);
    EXPECT_EQ(a.ctx_feature, b.ctx_feature);
  }
}

TEST(TrackFile, ParseErrorsCarryLineNumbers) {
  test::TempDir dir("badtracks");
  test::write_text(dir.file("t.txt"), "# header\n0 1 2 3 0.5\n1 1 x 3 1\n");
  try {
    read_track_file(dir.file("t.txt"));
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kParse);
    EXPECT_NE(std::string(e.what()).find(":3:"), std::string::npos) << e.what();
  }
  EXPECT_EQ(code_of([&] { read_track_file(dir.file("missing.txt")); }),
            ErrorCode::kIo);
}

TEST(FeatureFile, CountMismatchAndBadMagicRejected) {
  test::TempDir dir("features");
  PatchTrackSet set = two_patch_set();
  write_feature_file(dir.file("f.bin"), set);
  set.tracks.pop_back();
  EXPECT_THROW(read_feature_file(dir.file("f.bin"), set), Error);
  test::write_text(dir.file("g.bin"), "XXXX");
  EXPECT_THROW(read_feature_file(dir.file("g.bin"), set), Error);
}

TEST(TrackSet, FrameSliceSplitsNewPatchesAndLinks) {
  const PatchTrackSet set = two_patch_set();
  const FrameTracks f1 = set.frame_slice(1);
  ASSERT_EQ(f1.new_patches.size(), 1u);
  EXPECT_EQ(f1.new_patches[0].patch_id, 3);
  EXPECT_EQ(f1.new_patches[0].init_depth, 4.5);
  // Patch 3 is seen in frame 0 (earlier); patch 7 is born later.
  ASSERT_EQ(f1.links.size(), 1u);
  EXPECT_EQ(f1.links[0].frame, 0);

  const FrameTracks f2 = set.frame_slice(2);
  ASSERT_EQ(f2.new_patches.size(), 1u);
  EXPECT_EQ(f2.new_patches[0].patch_id, 7);
  // Patch 3 observed in frame 2, and patch 7 observed in frame 1.
  ASSERT_EQ(f2.links.size(), 2u);
  EXPECT_EQ(set.num_frames(), 3);
  EXPECT_DOUBLE_EQ(set.timestamp(2), 0.2);
}
