#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "dualrl/user_sim_env.hpp"

using namespace dualrl;

namespace {

SimTrialSpec spec_for(double boundary, double baseline_rt, double true_rt, bool pressure = false) {
  SimTrialSpec s;
  s.question = make_question(57, 23, 5);
  s.prediction.choice = true;
  s.prediction.confidence = boundary;
  s.prediction.rt = baseline_rt;
  s.true_rt = true_rt;
  s.pressure = pressure;
  s.trial = 12;
  return s;
}

}  // namespace

TEST(SimReward, HandEvaluatedExamples) {
  EXPECT_NEAR(compute_sim_reward({0.1, 0.2, 0.0}), 0.5, 1e-12);
  EXPECT_NEAR(compute_sim_reward({0.1, 0.2, -1.0}), -0.5, 1e-12);
  EXPECT_EQ(compute_sim_reward({0.2, 0.2, 0.0}), 0.0);
  EXPECT_EQ(compute_sim_reward({0.3, 0.2, 0.0}), 0.0);
  EXPECT_EQ(compute_sim_reward({0.0, 0.0, 0.0}), 1.0);
  EXPECT_EQ(compute_sim_reward({0.1, 0.0, 0.0}), 0.0);
}

TEST(SimReward, RelativeErrorDefinition) {
  EXPECT_NEAR(relative_error(2.5, 2.0), 0.25, 1e-15);
  EXPECT_NEAR(relative_error(1.5, 2.0), 0.25, 1e-15);
  EXPECT_THROW(relative_error(1.0, 0.0), std::invalid_argument);
}

TEST(UserSimEnv, ResetStartsAtHalfWithBlankFrameWhenUnpressured) {
  UserSimEnv env;
  const auto obs = env.reset(spec_for(0.8, 2.0, 2.0));
  EXPECT_EQ(env.evidence(), 0.5);
  EXPECT_EQ(env.steps(), 0);
  const Eigen::Index off = static_cast<Eigen::Index>(kEncodedLength) * kVocabSize;
  const auto pixels = env.config().stimulus.pixel_count();
  EXPECT_EQ(obs.segment(off, static_cast<Eigen::Index>(pixels)).sum(), 0.0);
  EXPECT_EQ(obs.size(), env.observation_size());
  EXPECT_NEAR(obs[obs.size() - 1], 0.12, 1e-15);
  EXPECT_EQ(obs.head(off).sum(), double(kEncodedLength));
}

TEST(UserSimEnv, ZeroActionReproducesBaselineRt) {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> rp(0.5001, 1.0), rt(0.05, 10.0);
  for (int k = 0; k < 1000; ++k) {
    const double b = rp(rng), t = rt(rng);
    const auto r = run_trial(zero_action_policy(), spec_for(b, t, t));
    EXPECT_LE(std::abs(r.simulated_rt - t), 0.2 + 1e-12) << b << " " << t;
    EXPECT_EQ(r.steps, static_cast<int>(std::ceil(t * 5.0 - 1e-9)));
    EXPECT_FALSE(r.timed_out);
  }
}

TEST(UserSimEnv, FullPushHalvesSteps) {
  std::mt19937_64 rng(2);
  std::uniform_real_distribution<double> rp(0.5001, 1.0), rt(0.05, 10.0);
  for (int k = 0; k < 1000; ++k) {
    const double b = rp(rng), t = rt(rng);
    const int n0 = run_trial(zero_action_policy(), spec_for(b, t, t)).steps;
    const int n1 = run_trial(constant_action_policy(1.0), spec_for(b, t, t)).steps;
    EXPECT_LE(std::abs(2.0 * n1 - n0), 2.0) << n0 << " " << n1;
  }
}

TEST(UserSimEnv, FullBrakeTimesOutWithPenalty) {
  // Baseline 2.5 s against truth 2.0 s: E_svm = 0.25. Timeout at 10 s: E_rl = 4.
  const auto r = run_trial(constant_action_policy(-1.0), spec_for(0.9, 2.5, 2.0));
  EXPECT_TRUE(r.timed_out);
  EXPECT_EQ(r.steps, 50);
  EXPECT_EQ(r.total_reward, 0.0);
  // A timeout that still beats the baseline keeps the -1 penalty.
  const auto s = run_trial(constant_action_policy(-1.0), spec_for(0.9, 0.5, 9.5));
  const double e_rl = 0.5 / 9.5, e_svm = 9.0 / 9.5;
  EXPECT_NEAR(s.total_reward, (e_svm - e_rl) / e_svm - 1.0, 1e-12);
}

TEST(UserSimEnv, RewardIsZeroBeforeTerminal) {
  UserSimEnv env;
  env.reset(spec_for(0.7, 3.0, 2.0));
  for (;;) {
    const auto s = env.step(0.3);
    if (s.done) {
      const double e_rl = std::abs(env.simulated_rt() - 2.0) / 2.0;
      EXPECT_NEAR(s.reward, compute_sim_reward({e_rl, 0.5, 0.0}), 1e-12);
      break;
    }
    EXPECT_EQ(s.reward, 0.0);
  }
  EXPECT_THROW(env.step(0.0), std::logic_error);
}

TEST(UserSimEnv, PushingHarderNeverSlowsTheTrial) {
  for (double t : {0.7, 2.3, 6.1}) {
    int last = 1 << 20;
    for (double a = -0.9; a <= 1.0; a += 0.1) {
      const int n = run_trial(constant_action_policy(a), spec_for(0.75, t, t)).steps;
      EXPECT_LE(n, last);
      last = n;
    }
  }
}

TEST(UserSimEnv, ActionsAreClampedAndRtIsQuantised) {
  const auto a = run_trial(constant_action_policy(7.0), spec_for(0.8, 3.0, 3.0));
  const auto b = run_trial(constant_action_policy(1.0), spec_for(0.8, 3.0, 3.0));
  EXPECT_EQ(a.steps, b.steps);
  EXPECT_DOUBLE_EQ(a.simulated_rt, a.steps / 5.0);
}

TEST(UserSimEnv, RejectsInvalidInputs) {
  UserSimEnv env;
  EXPECT_THROW(env.reset(spec_for(0.8, 2.0, 0.0)), std::invalid_argument);
  EXPECT_THROW(env.reset(spec_for(0.8, 2.0, 11.0)), std::invalid_argument);
  EXPECT_THROW(env.reset(spec_for(0.8, 0.0, 2.0)), std::invalid_argument);
  EXPECT_THROW(env.reset(spec_for(0.4, 2.0, 2.0)), std::invalid_argument);
  SimEnvConfig bad;
  bad.kappa = 0.0;
  EXPECT_THROW(UserSimEnv{bad}, std::invalid_argument);
  bad = {};
  bad.max_steps = 40;
  EXPECT_THROW(UserSimEnv{bad}, std::invalid_argument);
}

TEST(UserSimEnv, UnknownTruthGivesNoReward) {
  const auto r = run_trial(zero_action_policy(), spec_for(0.8, 2.0, std::nan("")));
  EXPECT_EQ(r.total_reward, 0.0);
  EXPECT_EQ(r.steps, 10);
}

TEST(SimTrialSpecs, HistoryTracksPressurePerUser) {
  std::vector<DatasetRow> rows;
  for (int u = 0; u < 2; ++u)
    for (int t = 1; t <= 12; ++t) {
      DatasetRow r;
      r.user_id = u;
      r.trial = t;
      r.question = make_question(40 + t, 20, 3);
      r.pressure = (t % 3) == 0;
      r.rt = 1.5;
      rows.push_back(r);
    }
  const auto specs = build_trial_specs(rows, [](const MathQuestion&, int) {
    BaselinePrediction p;
    p.confidence = 0.7;
    p.rt = 2.0;
    return p;
  });
  ASSERT_EQ(specs.size(), rows.size());
  EXPECT_EQ(specs[0].history, (std::array<std::uint8_t, kSimHistory>{}));
  // Trial 4 of user 0 sees trials 1..3: only trial 3 was pressured.
  EXPECT_EQ(specs[3].history[kSimHistory - 1], 1);
  EXPECT_EQ(specs[3].history[kSimHistory - 2], 0);
  EXPECT_EQ(specs[12].history, (std::array<std::uint8_t, kSimHistory>{}));
  for (std::size_t i = 0; i < specs.size(); ++i) EXPECT_EQ(specs[i].pressure, rows[i].pressure);
}
