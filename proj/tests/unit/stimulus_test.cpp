#include <gtest/gtest.h>

#include <sstream>

#include "dualrl/stimulus.hpp"

using namespace dualrl;

TEST(Stimulus, FillUnitsAtKnownSteps) {
  EXPECT_EQ(render_frame(0, true).fill_units, 0);
  EXPECT_EQ(render_frame(5, true).fill_units, 1);
  EXPECT_EQ(render_frame(24, true).fill_units, 4);
  EXPECT_EQ(render_frame(25, true).fill_units, 0);
}

TEST(Stimulus, FillUnitsFollowFloorModRule) {
  for (int k = 0; k < 200; ++k) EXPECT_EQ(fill_units_at_step(k, {}), (k / 5) % 5);
}

TEST(Stimulus, BlankWhenPressureOff) {
  for (const auto& f : frame_sequence(50, false)) {
    for (double v : f.image) ASSERT_EQ(v, 0.0);
  }
  EXPECT_EQ(frame_sequence(50, false).size(), 50u);
}

TEST(Stimulus, PeriodicWithPeriodOfTwentyFiveFrames) {
  for (int k = 0; k < 100; ++k) {
    const auto a = render_frame(k, true), b = render_frame(k + 25, true);
    ASSERT_EQ(a.image, b.image) << k;
    ASSERT_EQ(a.fill_units, b.fill_units);
  }
}

TEST(Stimulus, ConstantShapeAndMonotoneLitFraction) {
  StimulusConfig cfg;
  double prev = -1.0;
  for (int units = 0; units < 5; ++units) {
    const auto f = render_frame(units * 5, true, cfg);
    EXPECT_EQ(f.image.size(), cfg.pixel_count());
    EXPECT_EQ(f.width, 64);
    EXPECT_EQ(f.height, 8);
    EXPECT_GT(lit_fraction(f), prev);
    prev = lit_fraction(f);
  }
  EXPECT_EQ(render_frame(3, false).image.size(), cfg.pixel_count());
}

TEST(Stimulus, PressureFrameDistinctFromBlankEvenWhenEmpty) {
  EXPECT_GT(lit_fraction(render_frame(0, true)), 0.0);
  EXPECT_EQ(lit_fraction(render_frame(0, false)), 0.0);
}

TEST(Stimulus, ClockFormulaAgreesWithFrameFormula) {
  StimulusConfig cfg;
  for (int k = 0; k < 100; ++k) EXPECT_EQ(fill_units_at_time(k / 5.0, cfg), fill_units_at_step(k, cfg));
  EXPECT_EQ(fill_units_at_time(2.9999999999, cfg), 3);
  EXPECT_EQ(fill_units_at_time(7.2, cfg), 2);
}

TEST(Stimulus, FillFixtureRows) {
  std::ostringstream out;
  write_fill_fixture(out, 6.0, 0.5);
  const auto s = out.str();
  EXPECT_EQ(s.rfind("t,fill_units\n0.0,0\n0.5,0\n1.0,1\n", 0), 0u);
  EXPECT_NE(s.find("5.0,0\n"), std::string::npos);
  EXPECT_NE(s.find("5.5,0\n6.0,1\n"), std::string::npos);
}

TEST(Stimulus, PgmHeader) {
  std::ostringstream out;
  write_pgm(out, render_frame(12, true));
  const auto s = out.str();
  EXPECT_EQ(s.rfind("P5\n64 8\n255\n", 0), 0u);
  EXPECT_EQ(s.size(), std::string("P5\n64 8\n255\n").size() + 512);
}

TEST(Stimulus, InvalidConfigRejected) {
  StimulusConfig bad;
  bad.units = 4;
  EXPECT_THROW(bad.validate(), std::invalid_argument);
  EXPECT_THROW(render_frame(-1, true), std::invalid_argument);
}
