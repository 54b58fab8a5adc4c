#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <sstream>

#include "dualrl/answer_agent.hpp"

using namespace dualrl;

namespace {

std::vector<MathQuestion> sample_bank(std::size_t n, std::uint64_t seed) {
  QuestionGenerator gen(seed);
  return gen.take(n);
}

AnswerAgentConfig tiny(std::uint64_t seed = 1) {
  AnswerAgentConfig c;
  c.hidden = 3;
  c.embed = 2;
  c.seed = seed;
  return c;
}

}  // namespace

TEST(AuxTargets, FinalStepCarriesTheDifference) {
  for (const auto& q : sample_bank(500, 11)) {
    const auto t = aux_targets(q);
    const int d = q.ab - q.cd;
    for (int m = 0; m < kAuxModuli; ++m) {
      const int mod = m + 2;
      EXPECT_EQ(t.residue[kEncodedLength - 1][static_cast<std::size_t>(m)], ((d % mod) + mod) % mod);
      EXPECT_EQ(t.residue[1][static_cast<std::size_t>(m)], q.ab % mod);
    }
    const int want = d < 0 ? 0 : (d == 0 ? 1 : 2);
    EXPECT_EQ(t.sign[kEncodedLength - 1], want);
    EXPECT_EQ(t.sign[0], kAuxIgnore);
    EXPECT_EQ(t.sign[2], kAuxIgnore);
  }
}

TEST(AnswerAgent, LstmGradientMatchesCentralDifferences) {
  AnswerAgentT<double> agent(tiny());
  const auto qs = sample_bank(4, 5);
  auto& ps = agent.params();
  ps.zero_grad();
  agent.loss(qs, 0.7, true);
  const Eigen::VectorXd analytic = ps.flat_grads();
  const Eigen::VectorXd theta = ps.flat_values();
  const double h = 1e-6;
  double worst = 0.0;
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    auto t = theta;
    t[i] += h;
    ps.set_flat_values(t);
    const double up = agent.loss(qs, 0.7, false).total;
    t[i] -= 2 * h;
    ps.set_flat_values(t);
    const double down = agent.loss(qs, 0.7, false).total;
    const double fd = (up - down) / (2 * h);
    worst = std::max(worst, std::abs(fd - analytic[i]) / std::max(1e-3, std::abs(fd)));
  }
  ps.set_flat_values(theta);
  EXPECT_LT(worst, 1e-5);
}

TEST(AnswerAgent, ProbabilitiesAreNormalisedAndAnswerIsArgmax) {
  AnswerAgent agent(tiny(3));
  for (const auto& q : sample_bank(20, 2)) {
    const auto p = agent.probabilities(q);
    ASSERT_EQ(p.size(), kNumAnswerClasses);
    EXPECT_NEAR(p.sum(), 1.0, 1e-5);
    Eigen::Index arg;
    p.maxCoeff(&arg);
    EXPECT_EQ(agent.answer(q), static_cast<int>(arg));
  }
  const auto bank = sample_bank(50, 4);
  const auto batch = agent.answer_batch(bank);
  for (std::size_t k = 0; k < bank.size(); ++k) EXPECT_EQ(batch[k], agent.answer(bank[k]));
}

TEST(AnswerAgent, FeaturesHaveHiddenWidth) {
  AnswerAgentConfig c = tiny();
  c.hidden = 7;
  AnswerAgent agent(c);
  const auto bank = sample_bank(5, 9);
  EXPECT_EQ(agent.extract_features(bank[0]).size(), 7);
  const auto f = agent.extract_features(bank);
  EXPECT_EQ(f.rows(), 7);
  EXPECT_EQ(f.cols(), 5);
  EXPECT_NEAR((f.col(2) - agent.extract_features(bank[2])).norm(), 0.0, 1e-6);
}

TEST(AnswerAgent, CheckpointRoundTripPreservesOutputs) {
  AnswerAgent agent(tiny(8));
  agent.set_training_metadata(4, 0.5);
  std::stringstream s;
  agent.to_checkpoint().save(s);
  const auto back = AnswerAgent::from_checkpoint(Checkpoint::load(s));
  EXPECT_EQ(back.trained_epochs(), 4);
  EXPECT_DOUBLE_EQ(back.final_train_accuracy(), 0.5);
  for (const auto& q : sample_bank(20, 6)) EXPECT_EQ((back.probabilities(q) - agent.probabilities(q)).norm(), 0.0);
  Checkpoint wrong;
  wrong.meta["kind"] = "other";
  EXPECT_THROW(AnswerAgent::from_checkpoint(wrong), std::runtime_error);
}

TEST(AnswerAgent, TrainingLowersLossAndEnforcesFloor) {
  const auto bank = sample_bank(256, 21);
  AnswerAgentConfig c;
  c.hidden = 16;
  c.epochs = 6;
  c.lr = 5e-3;
  c.accuracy_floor = 0.0;
  int calls = 0;
  const auto r = train_answer_agent(bank, c, [&](int, double, double) { ++calls; });
  EXPECT_EQ(calls, 6);
  EXPECT_LT(r.report.epoch_loss.back(), r.report.epoch_loss.front());
  EXPECT_EQ(r.model.trained_epochs(), 6);
  c.epochs = 1;
  c.accuracy_floor = 1.01;
  EXPECT_THROW(train_answer_agent(bank, c), TrainingFailure);
  EXPECT_THROW(train_answer_agent({}, c), std::invalid_argument);
}
