#include <gtest/gtest.h>

#include "psv/config.hpp"

using namespace psv;

TEST(Config, DefaultsRoundTrip) {
  const RunConfig defaults;
  const std::string text = dump_config(defaults);
  EXPECT_NE(text.find("[scene]"), std::string::npos);
  EXPECT_NE(text.find("[stream]"), std::string::npos);
  const RunConfig back = parse_config(text);
  EXPECT_EQ(dump_config(back), text);
  EXPECT_EQ(config_hash(back), config_hash(defaults));
  EXPECT_EQ(back.pipeline.vog_scene.camera_offset_v, 10.0);
  EXPECT_EQ(back.pipeline.psog_scene.camera_offset_v, 0.0);
}

TEST(Config, OverlayChangesOnlyGivenKeys) {
  const RunConfig c = parse_config(
      "[stream]\nma_window = 5\nshift_gate_mm = 0.2\n[scenario]\namplitudes = 5, 10\n"
      "[scene]\nlights = -14,10,30;14,10,30\n[scan]\nseparable_eye = true\n");
  EXPECT_EQ(c.pipeline.stream.ma_window, 5u);
  EXPECT_EQ(c.pipeline.stream.shift_gate_mm, 0.2);
  EXPECT_EQ(c.scenario.hv.amplitudes, (std::vector<double>{5, 10}));
  ASSERT_EQ(c.pipeline.psog_scene.light_positions.size(), 2u);
  EXPECT_EQ(c.pipeline.psog_scene.light_positions[1].y, 10.0);
  EXPECT_EQ(c.pipeline.vog_scene.light_positions[1].y, 10.0);  // VOG scene follows the PSOG scene
  EXPECT_TRUE(c.scan.separable_eye);
  EXPECT_EQ(c.pipeline.stream.f_psog, 1000.0);
  EXPECT_NE(config_hash(c), config_hash(RunConfig{}));
}

TEST(Config, UnknownKeysAndBadValuesAreRejected) {
  EXPECT_THROW(parse_config("[stream]\nma_windw = 3\n"), InvalidArgument);
  EXPECT_THROW(parse_config("[nope]\nx = 1\n"), InvalidArgument);
  EXPECT_THROW(parse_config("[stream]\nma_window = three\n"), InvalidArgument);
  EXPECT_THROW(parse_config("[stream]\nma_window = 2.5\n"), InvalidArgument);
  EXPECT_THROW(parse_config("[stream]\nsmooth_psog = maybe\n"), InvalidArgument);
  EXPECT_THROW(parse_config("[stream]\nf_vog = 3\n"), InvalidArgument);
  EXPECT_THROW(parse_config("[psog]\nwindow_centers = 1,2,3\n"), InvalidArgument);
  EXPECT_THROW(parse_config("[scenario]\nkind = movie\n"), InvalidArgument);
  EXPECT_THROW(parse_config("[shifts]\ngrid = 2.5\n"), InvalidArgument);
  EXPECT_THROW(parse_config("[scene]\nlights = 1,2\n"), InvalidArgument);
}

TEST(Config, HashIsStableAndSixteenHexDigits) {
  const std::string h = config_hash(RunConfig{});
  EXPECT_EQ(h.size(), 16u);
  EXPECT_EQ(h.find_first_not_of("0123456789abcdef"), std::string::npos);
  EXPECT_EQ(h, config_hash(RunConfig{}));
  EXPECT_EQ(fnv1a(""), 14695981039346656037ull);
  EXPECT_EQ(fnv1a("a"), 0xaf63dc4c8601ec8cull);
}

TEST(Config, MissingFileIsAnError) { EXPECT_THROW(load_config("/nonexistent/psv.ini"), Error); }
