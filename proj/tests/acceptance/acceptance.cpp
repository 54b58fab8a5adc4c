// Acceptance suite: one PASS/FAIL line per criterion P1..P9.
//
// Usage: acceptance [--only P1,P3] [--work DIR]
// Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "../support/headless_client.hpp"
#include "dualrl/pipeline.hpp"
#include "dualrl/session_service.hpp"

#include <CLI11.hpp>

using namespace dualrl;
namespace fs = std::filesystem;

namespace {

// Tolerances and targets.
constexpr double kRewardTol = 1e-12;
constexpr double kDdmTol = 0.2;  // one frame at 5 Hz
constexpr int kDdmPairs = 1000;
constexpr double kGradStep = 1e-5;
constexpr double kGradRelTol = 1e-4;
constexpr double kTrainAccuracy = 0.99;
constexpr double kHeldoutAccuracy = 0.97;
constexpr int kBankSize = 5000;
constexpr double kSimMapeMax = 0.30;
constexpr double kBootstrapMin = 0.95;
constexpr double kTargetDelta = 0.1054;
constexpr int kDeployUsers = 100;
constexpr int kDeployTrials = 100;
constexpr double kOptimumSlack = 0.05;
constexpr double kFeedbackLo = 0.45, kFeedbackHi = 0.55;
constexpr double kMetricTol = 1e-12;

struct Outcome {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

struct Checks {
  bool ok = true;
  std::vector<std::string> failures;
  void expect(bool cond, const std::string& what) {
    if (!cond) {
      ok = false;
      failures.push_back(what);
    }
  }
  std::string summary() const {
    std::string s;
    for (std::size_t i = 0; i < failures.size() && i < 3; ++i) s += (i ? "; " : "") + failures[i];
    if (failures.size() > 3) s += fmt("; +%zu more", failures.size() - 3);
    return s;
  }
};

// ---------------------------------------------------------------------------
// P1 reward formulas
// ---------------------------------------------------------------------------

Outcome p1_rewards() {
  Checks c;
  auto near = [&](double got, double want, const std::string& what) {
    c.expect(std::abs(got - want) <= kRewardTol, fmt("%s: %.17g != %.17g", what.c_str(), got, want));
  };
  near(compute_sim_reward({0.1, 0.2, 0.0}), 0.5, "sim reward (0.1, 0.2, 0)");
  near(compute_sim_reward({0.1, 0.2, -1.0}), -0.5, "sim reward (0.1, 0.2, -1)");
  near(compute_sim_reward({0.2, 0.2, 0.0}), 0.0, "sim reward at E_rl == E_svm");
  near(compute_sim_reward({0.2, 0.2, -1.0}), 0.0, "sim reward at E_rl == E_svm with penalty");
  near(compute_sim_reward({0.25, 0.2, 0.0}), 0.0, "sim reward E_rl > E_svm");
  near(compute_sim_reward({0.0, 0.0, 0.0}), 1.0, "exact-baseline fallback, exact agent");
  near(compute_sim_reward({0.1, 0.0, 0.0}), 0.0, "exact-baseline fallback, inexact agent");
  near(step_reward(3.0, 2.5), 0.5, "r_s(3.0, 2.5)");
  near(end_reward(0.2108, 0.1054), 1.0, "r_e(0.2108)");
  near(end_reward(0.0, 0.1054), -1.0, "r_e(0)");
  near(end_reward(0.1054, 0.1054), 0.0, "r_e at target");
  near(end_reward(0.1054 * 2, 0.1054), 1.0, "r_e(2 * target)");

  // Terminal-only rewards inside a regulation episode.
  RegulationConfig rc;
  rc.trials = 3;
  RegulationTracker t(rc);
  t.reset(3.0);
  const auto a = t.record(2.5), b = t.record(3.5), e = t.record(2.0);
  near(a.r_s, 0.5, "tracker r_s trial 1");
  near(a.r_e + b.r_e, 0.0, "r_e before the last trial");
  near(b.r_s, -0.5, "tracker r_s trial 2");
  const double delta = (3.0 - (2.5 + 3.5 + 2.0) / 3.0) / 3.0;
  near(e.r_e, (delta - kTargetReduction) / kTargetReduction, "tracker r_e at N");

  // Non-terminal simulation steps pay nothing.
  UserSimEnv env;
  SimTrialSpec s;
  s.question = make_question(57, 23, 5);
  s.prediction.confidence = 0.8;
  s.prediction.rt = 2.0;
  s.true_rt = 1.5;
  env.reset(s);
  for (;;) {
    const auto st = env.step(0.5);
    if (st.done) {
      const double e_rl = std::abs(env.simulated_rt() - 1.5) / 1.5, e_svm = 0.5 / 1.5;
      near(st.reward, compute_sim_reward({e_rl, e_svm, 0.0}), "terminal sim reward");
      break;
    }
    c.expect(st.reward == 0.0, "non-terminal sim reward");
  }
  return {c.ok, c.ok ? "18 hand-evaluated reward cases exact to 1e-12" : c.summary()};
}

// ---------------------------------------------------------------------------
// P2 drift-diffusion identity
// ---------------------------------------------------------------------------

Outcome p2_ddm() {
  std::mt19937_64 rng(2024);
  std::uniform_real_distribution<double> boundary(0.5 + 1e-6, 1.0), rt(0.05, 10.0);
  double worst = 0.0;
  int halving_violations = 0;
  for (int k = 0; k < kDdmPairs; ++k) {
    SimTrialSpec s;
    s.question = make_question(57, 23, 5);
    s.prediction.confidence = boundary(rng);
    s.prediction.rt = rt(rng);
    s.true_rt = s.prediction.rt;
    const auto zero = run_trial(zero_action_policy(), s);
    const auto push = run_trial(constant_action_policy(1.0), s);
    worst = std::max(worst, std::abs(zero.simulated_rt - s.prediction.rt));
    const double half = zero.steps / 2.0;
    if (push.steps < half - 1.0 || push.steps > half + 1.0) ++halving_violations;
  }
  const bool pass = worst <= kDdmTol + 1e-12 && halving_violations == 0;
  return {pass, fmt("max |R_rl - R_t| = %.4f s over %d pairs (tol %.1f); +1 halving violations %d", worst, kDdmPairs,
                    kDdmTol, halving_violations)};
}

// ---------------------------------------------------------------------------
// P3 PPO gradient oracle
// ---------------------------------------------------------------------------

double ppo_gradient_error(ppo::ActionKind kind, std::uint64_t seed) {
  ppo::PolicyConfig pc;
  pc.obs_size = 5;
  pc.kind = kind;
  pc.hidden = {8, 8};
  pc.init_log_std = -0.4;
  pc.seed = seed;
  ppo::ActorCritic policy(pc);
  std::mt19937_64 rng(seed + 1);
  std::normal_distribution<double> g(0.0, 1.0);
  Eigen::VectorXd theta = policy.params().flat_values();
  for (Eigen::Index i = 0; i < theta.size(); ++i) theta[i] += 0.3 * g(rng);
  policy.params().set_flat_values(theta);

  // Toy trajectory: a short rollout on a random linear environment.
  const int n = 48;
  ppo::Batch b;
  b.obs.resize(pc.obs_size, n);
  b.actions.resize(n);
  b.old_log_probs.resize(n);
  b.advantages.resize(n);
  b.returns.resize(n);
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd o(pc.obs_size);
    for (auto& v : o) v = g(rng);
    const auto s = policy.act(o, rng);
    b.obs.col(i) = o;
    b.actions[i] = s.action;
    b.old_log_probs[i] = s.log_prob + 0.25 * g(rng);  // behaviour policy differs, some ratios clip
    b.advantages[i] = g(rng);
    b.returns[i] = s.value + g(rng);
  }
  policy.params().zero_grad();
  ppo::ppo_loss(policy, b, 0.2, 0.5, 0.01, true);
  const Eigen::VectorXd analytic = policy.params().flat_grads();
  Eigen::VectorXd fd(theta.size());
  for (Eigen::Index i = 0; i < theta.size(); ++i) {
    Eigen::VectorXd t = theta;
    t[i] += kGradStep;
    policy.params().set_flat_values(t);
    const double up = ppo::ppo_loss(policy, b, 0.2, 0.5, 0.01, false).total;
    t[i] -= 2 * kGradStep;
    policy.params().set_flat_values(t);
    const double down = ppo::ppo_loss(policy, b, 0.2, 0.5, 0.01, false).total;
    fd[i] = (up - down) / (2 * kGradStep);
  }
  return (analytic - fd).norm() / fd.norm();
}

Outcome p3_gradient() {
  const double bin = ppo_gradient_error(ppo::ActionKind::Binary, 11);
  const double cont = ppo_gradient_error(ppo::ActionKind::ContinuousBounded, 12);
  const bool pass = bin <= kGradRelTol && cont <= kGradRelTol;
  return {pass, fmt("relative error binary %.2e, continuous %.2e (tol %.0e, h=%.0e)", bin, cont, kGradRelTol,
                    kGradStep)};
}

// ---------------------------------------------------------------------------
// P4 answer agent
// ---------------------------------------------------------------------------

struct AnswerRun {
  std::shared_ptr<const AnswerAgent> agent;
  double train_accuracy = 0.0;
  double heldout_accuracy = 0.0;
};

std::optional<AnswerRun> g_answer;

const AnswerRun& answer_run(const fs::path& work) {
  if (g_answer) return *g_answer;
  QuestionGenerator gen(1);
  const auto bank = gen.take(kBankSize);
  std::set<std::tuple<int, int, int>> seen;
  for (const auto& q : bank) seen.insert({q.ab, q.cd, q.e});
  auto pool = all_questions();
  std::mt19937_64 rng(99);
  std::shuffle(pool.begin(), pool.end(), rng);
  std::vector<MathQuestion> heldout;
  for (const auto& q : pool) {
    if (seen.count({q.ab, q.cd, q.e})) continue;
    heldout.push_back(q);
    if (heldout.size() == static_cast<std::size_t>(kBankSize)) break;
  }
  AnswerAgentConfig cfg;
  cfg.lr = 2e-3;
  cfg.accuracy_floor = 0.0;  // judged below
  cfg.seed = 1;
  std::ofstream curve(work / "answer_curve.csv");
  curve << "epoch,loss,train_accuracy\n";
  auto r = train_answer_agent(bank, cfg, [&](int e, double l, double a) { curve << e << ',' << l << ',' << a << '\n'; });
  r.model.to_checkpoint().save_file((work / "answer.ckpt").string());
  // Held-out agreement with the brute-force oracle.
  const auto predicted = r.model.answer_batch(heldout);
  int agree = 0;
  for (std::size_t i = 0; i < heldout.size(); ++i) {
    const auto& q = heldout[i];
    const int oracle = (q.ab - q.cd) % q.e + 8;
    agree += predicted[i] == oracle ? 1 : 0;
  }
  g_answer = AnswerRun{std::make_shared<const AnswerAgent>(std::move(r.model)), r.report.final_train_accuracy,
                       double(agree) / double(heldout.size())};
  return *g_answer;
}

Outcome p4_answer(const fs::path& work) {
  const auto& r = answer_run(work);
  const bool pass = r.train_accuracy >= kTrainAccuracy && r.heldout_accuracy >= kHeldoutAccuracy;
  return {pass, fmt("train %.4f (>= %.2f), held-out %.4f (>= %.2f) on %d questions", r.train_accuracy, kTrainAccuracy,
                    r.heldout_accuracy, kHeldoutAccuracy, kBankSize)};
}

// ---------------------------------------------------------------------------
// P5 simulation agent, P6 regulation agent
// ---------------------------------------------------------------------------

struct SimRun {
  std::shared_ptr<const ppo::ActorCritic> policy;
  BaselineLookup lookup;
  double sim_mape = 0.0, baseline_mape = 0.0, validation_mape = 0.0;
  long long selected_step = 0;
};

std::optional<SimRun> g_sim;

const SimRun& sim_run(const fs::path& work) {
  if (g_sim) return *g_sim;
  const auto& answer = answer_run(work);
  const auto rows = generate_dataset(50, 500, PopulationConfig{}, 7);
  const auto [fit_rows, test_rows] = split_by_user(rows, 40);
  const auto [train_rows, val_rows] = split_by_user(fit_rows, 35);
  auto cache = std::make_shared<FeatureCache>(answer.agent);
  const auto fit = fit_baseline(baseline_rows(train_rows, *cache));
  auto model = std::make_shared<const BaselineModel>(fit.model);
  auto lookup = make_baseline_lookup(model, cache);
  const auto train = build_trial_specs(train_rows, lookup);
  const auto val = build_trial_specs(val_rows, lookup);
  const auto test = build_trial_specs(test_rows, lookup);
  auto cfg = sim_ppo_config();
  cfg.seed = 3;
  const auto sel = train_sim_agent_selected(train, val, cfg);
  std::ofstream curve(work / "sim_curve.csv");
  ppo::write_learning_curve(curve, sel.run.curve);
  sel.policy.to_checkpoint().save_file((work / "sim.ckpt").string());
  const auto ev = evaluate_sim_agent(greedy_policy(sel.policy), test);
  g_sim = SimRun{std::make_shared<const ppo::ActorCritic>(sel.policy), lookup, ev.sim_mape, ev.baseline_mape,
                 sel.validation_mape, sel.selected_step};
  return *g_sim;
}

Outcome p5_sim(const fs::path& work) {
  const auto& s = sim_run(work);
  const bool pass = s.sim_mape <= kSimMapeMax && s.sim_mape < s.baseline_mape;
  return {pass, fmt("held-out MAPE %.4f (<= %.2f), baseline %.4f; checkpoint at step %lld (validation %.4f)",
                    s.sim_mape, kSimMapeMax, s.baseline_mape, s.selected_step, s.validation_mape)};
}

std::shared_ptr<const ppo::ActorCritic> g_regulation;
std::shared_ptr<const ppo::ActorCritic> g_short_horizon;

Outcome p6_regulation(const fs::path& work) {
  const auto& sim = sim_run(work);
  auto cfg = regulation_ppo_config();
  cfg.seed = 5;
  const auto run = train_regulation_agent(
      [&] { return std::make_shared<SimAgentUserModel>(sim.policy, sim.lookup); }, RegulationConfig{}, cfg);
  std::ofstream curve(work / "reg_curve.csv");
  ppo::write_learning_curve(curve, run.curve);
  run.policy.to_checkpoint().save_file((work / "reg.ckpt").string());
  g_regulation = std::make_shared<const ppo::ActorCritic>(run.policy);

  const PopulationConfig pop;
  const auto rl = deploy_on_synthetic_users(greedy_pressure_policy(g_regulation), pop, kDeployUsers, kDeployTrials, 99);
  const auto rnd = deploy_on_synthetic_users(random_pressure_policy(), pop, kDeployUsers, kDeployTrials, 99);
  std::vector<double> a, b;
  double on = 0.0;
  for (const auto& e : rl) {
    a.push_back(e.reduction);
    for (const auto& t : e.trials) on += t.pressure ? 1.0 : 0.0;
  }
  for (const auto& e : rnd) b.push_back(e.reduction);
  const double mean_a = std::accumulate(a.begin(), a.end(), 0.0) / double(a.size());
  const double mean_b = std::accumulate(b.begin(), b.end(), 0.0) / double(b.size());
  const double boot = bootstrap_positive_fraction(a, b, 2000, 7);
  const bool beats = mean_a > mean_b && boot >= kBootstrapMin;
  const bool target = mean_a >= kTargetDelta;
  return {beats && target,
          fmt("RL mean reduction %+.4f vs random %+.4f, bootstrap %.3f (>= %.2f) [%s]; target %.4f [%s]; "
              "pressure rate %.2f",
              mean_a, mean_b, boot, kBootstrapMin, beats ? "met" : "not met", kTargetDelta,
              target ? "met" : "not met", on / double(kDeployUsers * kDeployTrials))};
}

// ---------------------------------------------------------------------------
// P7 brute-force policy oracle
// ---------------------------------------------------------------------------

double recurrence_mean(const SyntheticUserConfig& c, unsigned mask, int horizon) {
  double x = 0.0, sum = 0.0;
  for (int i = 0; i < horizon; ++i) {
    const bool on = (mask >> i) & 1u;
    const double rt = std::clamp(c.base_rt + c.fatigue * i - (on ? c.arousal_gain : 0.0) + c.anxiety_gain * x, 0.8,
                                 10.0);
    sum += rt;
    x = on ? x + 1.0 : std::max(0.0, x - c.recovery);
  }
  return sum / horizon;
}

Outcome p7_oracle() {
  const SyntheticUserConfig user;
  const int h = 10;
  double best = 1e9;
  for (unsigned m = 0; m < (1u << h); ++m) best = std::min(best, recurrence_mean(user, m, h));
  const double all_off = recurrence_mean(user, 0u, h), all_on = recurrence_mean(user, (1u << h) - 1u, h);

  RegulationConfig rc;
  rc.trials = h;
  auto cfg = regulation_ppo_config();
  cfg.total_steps = 30000;
  cfg.seed = 3;
  const auto det = user.deterministic();
  const auto run = train_regulation_agent([&] { return std::make_shared<SyntheticUserModel>(det); }, rc, cfg);
  std::vector<bool> schedule;
  const double got = policy_mean_rt_on_user(run.policy, user, h, &schedule);
  g_short_horizon = std::make_shared<const ppo::ActorCritic>(run.policy);
  std::string bits;
  for (bool b : schedule) bits += b ? '1' : '0';
  const bool pass = got <= best * (1.0 + kOptimumSlack) && got < all_off && got < all_on;
  return {pass, fmt("policy %s mean RT %.4f; optimum %.4f (+%.0f%% = %.4f); all-off %.4f, all-on %.4f", bits.c_str(),
                    got, best, kOptimumSlack * 100, best * (1.0 + kOptimumSlack), all_off, all_on)};
}

// ---------------------------------------------------------------------------
// P8 metrics
// ---------------------------------------------------------------------------

std::vector<TrialOutcome> metrics_fixture(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> rt(0.9, 6.0);
  std::vector<TrialOutcome> t;
  for (int i = 0; i < 100; ++i) t.push_back({rt(rng), rng() % 5 != 0, rng() % 2 == 0});
  t[3].rt = 0.5;
  t[17].rt = 12.0;
  t[41].rt = 0.8;
  t[77].rt = 10.0;
  t[78].rt = 10.01;
  return t;
}

Outcome p8_metrics() {
  Checks c;
  auto near = [&](double got, double want, const std::string& what) {
    c.expect(std::abs(got - want) <= kMetricTol, fmt("%s: %.17g != %.17g", what.c_str(), got, want));
  };
  near(mape(std::vector<double>{2, 4}, std::vector<double>{2, 5}), 0.1, "mape [2,4]/[2,5]");
  near(mape(std::vector<double>{3}, std::vector<double>{2}), 0.5, "mape [3]/[2]");

  // Spreadsheet-style: filter rows into a new table, then average columns.
  const auto control = metrics_fixture(1), feedback = metrics_fixture(2);
  auto sheet = [](const std::vector<TrialOutcome>& t, std::size_t from, std::size_t to) {
    std::vector<double> rts, acc;
    for (std::size_t i = from; i < to; ++i)
      if (!(t[i].rt < 0.8) && !(t[i].rt > 10.0)) rts.push_back(t[i].rt), acc.push_back(t[i].correct);
    return std::pair{std::accumulate(rts.begin(), rts.end(), 0.0) / rts.size(),
                     std::accumulate(acc.begin(), acc.end(), 0.0) / acc.size()};
  };
  const auto [c_rt, c_acc] = sheet(control, 0, 100);
  const auto [f_rt, f_acc] = sheet(feedback, 0, 100);
  const auto sc = summarize_session(control, 4.0, 3.0), sf = summarize_session(feedback, 5.0, 2.0);
  c.expect(sc.excluded_trials == 3, "validity filter count");
  near(sc.rt, c_rt, "control rt");
  near(sf.accuracy, f_acc, "feedback accuracy");
  const auto d = session_delta(sc, sf);
  near(*d.accuracy.absolute, f_acc - c_acc, "accuracy absolute");
  near(*d.accuracy.relative, (f_acc - c_acc) / c_acc, "accuracy relative");
  near(*d.rt.absolute, f_rt - c_rt, "rt absolute");
  near(*d.rt.relative, (f_rt - c_rt) / c_rt, "rt relative");
  near(*d.attention.absolute, 1.0, "attention absolute");
  near(*d.attention.relative, 0.25, "attention relative");
  near(*d.anxiety.absolute, -1.0, "anxiety absolute");
  near(*d.anxiety.relative, -1.0 / 3.0, "anxiety relative");

  const auto blocks = block_stats(feedback);
  c.expect(blocks.blocks.size() == 5, "five blocks");
  const auto [b1_rt, b1_acc] = sheet(feedback, 0, 20);
  for (std::size_t b = 0; b < blocks.blocks.size(); ++b) {
    const auto [rt, acc] = sheet(feedback, b * 20, b * 20 + 20);
    near(blocks.blocks[b].rt, rt, fmt("block %zu rt", b + 1));
    near(blocks.blocks[b].accuracy, acc, fmt("block %zu accuracy", b + 1));
    double fb = 0.0;
    for (std::size_t i = b * 20; i < b * 20 + 20; ++i) fb += feedback[i].pressure;
    near(blocks.blocks[b].feedback_fraction, fb / 20.0, fmt("block %zu feedback", b + 1));
    if (b > 0) near(blocks.relative_rt[b - 1], (rt - b1_rt) / b1_rt, fmt("block %zu relative rt", b + 1));
  }

  // Random policy over 100 users x 100 trials: per-block feedback share.
  const auto eps = deploy_on_synthetic_users(random_pressure_policy(), PopulationConfig{}, 100, 100, 8);
  std::vector<double> share(5, 0.0);
  for (const auto& e : eps) {
    const auto b = block_stats(e.trials);
    for (std::size_t i = 0; i < 5; ++i) share[i] += b.blocks[i].feedback_fraction / 100.0;
  }
  std::string shares;
  for (double s : share) {
    c.expect(s >= kFeedbackLo && s <= kFeedbackHi, fmt("random feedback share %.4f", s));
    shares += fmt("%s%.3f", shares.empty() ? "" : " ", s);
  }
  return {c.ok, c.ok ? "MAPE, 8 deltas, blocks and validity filter exact; random feedback per block " + shares
                     : c.summary()};
}

// ---------------------------------------------------------------------------
// P9 service protocol
// ---------------------------------------------------------------------------

struct SessionCheck {
  int flags = 0;
  std::size_t bytes = 0;
};

SessionCheck run_checked_session(const std::shared_ptr<const ppo::ActorCritic>& policy, const fs::path& dir,
                                 std::uint64_t seed, Checks& c) {
  fs::remove_all(dir);
  harness::FakeClock clock;
  session::ServiceConfig sc;
  sc.data_dir = dir;
  sc.clock = clock.fn();
  sc.protocol.rest1_s = sc.protocol.rest2_s = sc.protocol.rest3_s = 0.0;
  std::string first, id;
  harness::ClientTally tally;
  {
    session::SessionService svc(sc, policy);
    id = svc.create_session("ACC-" + std::to_string(seed), session::Group::RL, session::Order::ControlFirst, seed);
    tally = harness::run_headless_session(svc, id, clock, seed);
    c.expect(svc.phase(id) == session::Phase::Done, "session did not reach done");
    c.expect(tally.trials == 220, fmt("served %d trials", tally.trials));
    c.expect(tally.questionnaires == 2, "two questionnaires");
    c.expect(svc.replay_mismatches(id).empty(), "replay reproduces every pressure flag");
    first = svc.export_session(id);
    c.expect(first == svc.export_session(id), "repeated export differs");
  }
  session::SessionService reloaded(sc, policy);
  c.expect(reloaded.export_session(id) == first, "export after reload differs");
  c.expect(reloaded.replay_mismatches(id).empty(), "replay after reload");
  std::ofstream(dir / "export.json") << first;
  return {tally.feedback_pressured, first.size()};
}

Outcome p9_service(const fs::path& work) {
  // Sessions run with each trained regulation policy available; a policy that
  // never pressures makes replay vacuous, so at least one flag is required overall.
  std::vector<std::pair<std::string, std::shared_ptr<const ppo::ActorCritic>>> policies;
  if (g_regulation) policies.emplace_back("sim-trained", g_regulation);
  if (g_short_horizon) policies.emplace_back("short-horizon", g_short_horizon);
  if (policies.empty()) {
    auto pc = regulation_policy_config();
    pc.seed = 9;
    auto p = std::make_shared<ppo::ActorCritic>(pc);
    p->params().set_flat_values(p->params().flat_values() * 40.0);
    policies.emplace_back("scaled-random", p);
  }
  Checks c;
  std::string detail;
  int flags = 0;
  std::uint64_t seed = 2024;
  for (const auto& [name, policy] : policies) {
    const auto r = run_checked_session(policy, work / ("sessions_" + name), seed++, c);
    flags += r.flags;
    detail += fmt("%s%s: %d RL flags, export %zu bytes", detail.empty() ? "" : "; ", name.c_str(), r.flags, r.bytes);
  }
  c.expect(flags > 0, "no pressured trial to replay");
  return {c.ok, c.ok ? "220 trials, 2 questionnaires, 3 rests, replay and export stable per session; " + detail
                     : c.summary()};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria P1-P9"};
  std::string only;
  std::string work = "acceptance_work";
  app.add_option("--only", only, "comma-separated subset, e.g. P1,P3");
  app.add_option("--work", work, "directory for curves and checkpoints");
  CLI11_PARSE(app, argc, argv);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"P1", p1_rewards},
      {"P2", p2_ddm},
      {"P3", p3_gradient},
      {"P4", [&] { return p4_answer(work); }},
      {"P5", [&] { return p5_sim(work); }},
      {"P6", [&] { return p6_regulation(work); }},
      {"P7", p7_oracle},
      {"P8", p8_metrics},
      {"P9", [&] { return p9_service(work); }},
  };
  std::set<std::string> selected;
  for (std::stringstream ss(only); ss.good();) {
    std::string id;
    std::getline(ss, id, ',');
    if (!id.empty()) selected.insert(id);
  }

  int failed = 0;
  for (const auto& [id, run] : criteria) {
    if (!selected.empty() && !selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = run();
    } catch (const std::exception& e) {
      o = {false, std::string("error: ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    std::cout << id << ' ' << (o.pass ? "PASS" : "FAIL") << "  " << o.detail << fmt("  (%.1f s)", secs) << std::endl;
    failed += o.pass ? 0 : 1;
  }
  return failed == 0 ? 0 : 1;
}
