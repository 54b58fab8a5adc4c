#include <gtest/gtest.h>

#include <numeric>
#include <sstream>

#include "dualrl/regulation_env.hpp"

using namespace dualrl;

namespace {

// Replays a fixed list of response times.
class ScriptedUser final : public UserModel {
 public:
  explicit ScriptedUser(std::vector<double> rts, double initial = 3.0) : rts_(std::move(rts)), initial_(initial) {}
  void begin_episode(std::uint64_t) override { next_ = 0; }
  double measure_initial_rt(int) override { return initial_; }
  double respond(bool pressure) override {
    pressures.push_back(pressure);
    return rts_.at(next_++);
  }
  std::vector<bool> pressures;

 private:
  std::vector<double> rts_;
  double initial_;
  std::size_t next_ = 0;
};

}  // namespace

TEST(RegulationReward, HandEvaluatedExamples) {
  EXPECT_NEAR(step_reward(3.0, 2.5), 0.5, 1e-12);
  EXPECT_NEAR(end_reward(0.2108, 0.1054), 1.0, 1e-12);
  EXPECT_NEAR(end_reward(0.0, 0.1054), -1.0, 1e-12);
  EXPECT_EQ(end_reward(0.1054, 0.1054), 0.0);
  EXPECT_NEAR(relative_reduction(3.0, 2.7), 0.1, 1e-12);
}

TEST(RegulationTracker, BufferSlidesAndMeanIsExact) {
  RegulationConfig cfg;
  cfg.trials = 15;
  RegulationTracker t(cfg);
  t.reset(3.0);
  EXPECT_EQ(t.observation(), Eigen::VectorXd::Ones(kRegulationObservationSize));
  std::vector<double> seen;
  for (int i = 0; i < 15; ++i) {
    const double rt = 1.0 + 0.1 * i;
    const auto p = t.record(rt);
    seen.push_back(rt);
    const double mean = std::accumulate(seen.begin(), seen.end(), 0.0) / double(seen.size());
    EXPECT_NEAR(p.ru_hat, mean, 1e-12);
    EXPECT_NEAR(t.recomputed_r_hat(), mean, 1e-12);
    EXPECT_NEAR(p.r_s, 3.0 - rt, 1e-12);
    if (i + 1 < 15) EXPECT_EQ(p.r_e, 0.0);
    else EXPECT_NEAR(p.r_e, ((3.0 - mean) / 3.0 - kTargetReduction) / kTargetReduction, 1e-12);
    const auto obs = t.observation();
    for (int k = 0; k < kRtBufferSize; ++k) {
      const int src = i - (kRtBufferSize - 1 - k);
      const double want = src < 0 ? 3.0 : 1.0 + 0.1 * src;
      EXPECT_NEAR(obs[k] * 3.0, want, 1e-12);
    }
    EXPECT_NEAR(obs[kRtBufferSize] * 3.0, mean, 1e-12);
  }
  EXPECT_TRUE(t.done());
  EXPECT_THROW(t.record(2.0), std::logic_error);
}

TEST(RegulationTracker, InvalidRtsAreExcluded) {
  RegulationConfig cfg;
  cfg.trials = 4;
  RegulationTracker t(cfg);
  t.reset(2.0);
  t.record(1.5);
  const auto fast = t.record(0.5);
  EXPECT_TRUE(fast.excluded);
  EXPECT_EQ(fast.r_s, 0.0);
  EXPECT_NEAR(fast.ru_hat, 1.5, 1e-15);
  EXPECT_TRUE(t.record(10.5).excluded);
  EXPECT_NEAR(t.observation()[kRtBufferSize - 1] * 2.0, 1.5, 1e-15);
  t.record(2.5);
  EXPECT_EQ(t.valid_rts(), (std::vector<double>{1.5, 2.5}));
  EXPECT_NEAR(t.recomputed_r_hat(), 2.0, 1e-15);
  EXPECT_THROW(t.reset(0.0), std::invalid_argument);
}

TEST(RegulationEnv, ReturnDecomposesIntoStepAndEndRewards) {
  const std::vector<double> rts{2.5, 2.0, 3.5, 2.8, 2.2};
  auto user = std::make_shared<ScriptedUser>(rts);
  RegulationConfig cfg;
  cfg.trials = 5;
  RegulationEnv env(user, cfg, 1);
  env.reset();
  EXPECT_DOUBLE_EQ(env.r_init(), 3.0);
  double ret = 0.0;
  for (int i = 0; i < 5; ++i) {
    const auto s = env.step(i % 2);
    ret += s.reward;
    EXPECT_EQ(s.done, i == 4);
  }
  const double mean = std::accumulate(rts.begin(), rts.end(), 0.0) / 5.0;
  double steps = 0.0;
  for (double r : rts) steps += 3.0 - r;
  EXPECT_NEAR(ret, steps + ((3.0 - mean) / 3.0 - kTargetReduction) / kTargetReduction, 1e-12);
  EXPECT_EQ(user->pressures, (std::vector<bool>{false, true, false, true, false}));
  EXPECT_THROW(env.step(0), std::logic_error);
  ASSERT_EQ(env.log().size(), 5u);
  EXPECT_EQ(env.log()[1].action, 1);
  std::ostringstream csv;
  write_episode_log(csv, env.log());
  EXPECT_EQ(csv.str().substr(0, csv.str().find('\n')), "trial_index,action,ru_i,r_s,r_e,r_hat");
}

TEST(RegulationEnv, FixedRInitOverridesMeasurement) {
  auto user = std::make_shared<ScriptedUser>(std::vector<double>{2.0}, 9.0);
  RegulationConfig cfg;
  cfg.trials = 1;
  cfg.r_init = 4.0;
  RegulationEnv env(user, cfg, 1);
  env.reset();
  EXPECT_EQ(env.r_init(), 4.0);
  EXPECT_THROW(RegulationEnv(nullptr, cfg, 1), std::invalid_argument);
}

TEST(SyntheticUserModel, FixedUserMatchesDirectSimulation) {
  const auto user_cfg = SyntheticUserConfig{}.deterministic();
  auto model = std::make_shared<SyntheticUserModel>(user_cfg);
  RegulationConfig cfg;
  cfg.trials = 10;
  RegulationEnv env(model, cfg, 5);
  env.reset();
  EXPECT_NEAR(env.r_init(), schedule_mean_rt(user_cfg, std::vector<bool>(200, false)), 1e-12);
  const std::vector<bool> schedule{true, false, true, false, true, false, true, false, true, true};
  for (bool p : schedule) env.step(p ? 1.0 : 0.0);
  double sum = 0.0;
  for (const auto& row : env.log()) sum += row.rt;
  EXPECT_NEAR(sum / 10.0, schedule_mean_rt(user_cfg, schedule), 1e-12);
}

TEST(Deployment, PairedControlAndBootstrap) {
  PopulationConfig pop;
  const auto none = deploy_on_synthetic_users(constant_pressure_policy(false), pop, 5, 30, 9);
  for (const auto& ep : none) EXPECT_NEAR(ep.reduction, 0.0, 1e-12);
  const auto on = deploy_on_synthetic_users(constant_pressure_policy(true), pop, 5, 30, 9);
  for (std::size_t i = 0; i < on.size(); ++i) {
    EXPECT_EQ(on[i].no_pressure_mean_rt, none[i].no_pressure_mean_rt);
    for (const auto& t : on[i].trials) EXPECT_TRUE(t.pressure);
  }
  EXPECT_EQ(bootstrap_positive_fraction({1, 2, 3}, {0, 0, 0}, 200, 1), 1.0);
  EXPECT_EQ(bootstrap_positive_fraction({0, 0, 0}, {1, 2, 3}, 200, 1), 0.0);
  EXPECT_THROW(bootstrap_positive_fraction({1}, {}, 10, 1), std::invalid_argument);
  EXPECT_THROW(deploy_on_synthetic_users(constant_pressure_policy(true), pop, 0, 30, 9), std::invalid_argument);
}
