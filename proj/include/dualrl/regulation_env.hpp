#pragma once

// Regulation environment: one step is one math trial, the binary action turns
// time pressure on or off, and the reward is the per-trial speed-up relative to
// R_init plus a terminal bonus relative to the target reduction.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualrl/metrics.hpp"
#include "dualrl/ppo.hpp"
#include "dualrl/synthetic_user.hpp"
#include "dualrl/task_core.hpp"
#include "dualrl/user_sim_env.hpp"

namespace dualrl {

inline constexpr int kRtBufferSize = 10;
inline constexpr double kTargetReduction = 0.1054;
inline constexpr int kRegulationObservationSize = kRtBufferSize + 1;

struct RegulationConfig {
  int trials = 100;                      // N
  double r_init = 0.0;                   // seconds; <= 0 means "measure from the user model"
  double delta_target = kTargetReduction;
  int init_trials = 200;                 // no-pressure trials used to measure R_init
  bool exclude_invalid = true;           // drop RTs outside [0.8, 10] s from r_hat and the buffer

  void validate() const {
    if (trials < 1) throw std::invalid_argument("regulation trials must be >= 1");
    if (!(delta_target > 0.0)) throw std::invalid_argument("delta_target must be positive");
    if (init_trials < 1) throw std::invalid_argument("init_trials must be >= 1");
  }
};

struct RegulationState {
  double r_hat = 0.0;
  std::array<double, kRtBufferSize> buffer{};  // oldest first
  int trial = 0;
};

struct RegulationRewardParts {
  double r_s = 0.0;
  double r_e = 0.0;
  double delta_ru = 0.0;
  double ru_hat = 0.0;
  bool excluded = false;
};

/// r_s = R_init - Ru_i
inline double step_reward(double r_init, double rt) { return r_init - rt; }

/// r_e = (delta_ru - delta_target) / delta_target
inline double end_reward(double delta_ru, double delta_target) { return (delta_ru - delta_target) / delta_target; }

inline double relative_reduction(double r_init, double ru_hat) { return (r_init - ru_hat) / r_init; }

/// State and reward bookkeeping shared by simulated and live episodes.
class RegulationTracker {
 public:
  explicit RegulationTracker(RegulationConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  void reset(double r_init) {
    if (!(r_init > 0.0)) throw std::invalid_argument("R_init must be positive");
    r_init_ = r_init;
    state_ = {};
    state_.r_hat = r_init;
    state_.buffer.fill(r_init);
    sum_ = 0.0;
    valid_rts_.clear();
  }

  /// Books one answered trial and returns its reward parts.
  RegulationRewardParts record(double rt) {
    if (state_.trial >= cfg_.trials) throw std::logic_error("regulation episode already finished");
    RegulationRewardParts p;
    p.excluded = cfg_.exclude_invalid && !is_valid_rt(rt);
    if (!p.excluded) {
      valid_rts_.push_back(rt);
      sum_ += rt;
      state_.r_hat = sum_ / double(valid_rts_.size());
      std::rotate(state_.buffer.begin(), state_.buffer.begin() + 1, state_.buffer.end());
      state_.buffer.back() = rt;
      p.r_s = step_reward(r_init_, rt);
    }
    ++state_.trial;
    p.ru_hat = state_.r_hat;
    p.delta_ru = relative_reduction(r_init_, state_.r_hat);
    if (state_.trial == cfg_.trials) p.r_e = end_reward(p.delta_ru, cfg_.delta_target);
    return p;
  }

  /// Buffer and running mean scaled by R_init.
  Eigen::VectorXd observation() const {
    Eigen::VectorXd obs(kRegulationObservationSize);
    for (int i = 0; i < kRtBufferSize; ++i) obs[i] = state_.buffer[static_cast<std::size_t>(i)] / r_init_;
    obs[kRtBufferSize] = state_.r_hat / r_init_;
    return obs;
  }

  const RegulationState& state() const { return state_; }
  const RegulationConfig& config() const { return cfg_; }
  double r_init() const { return r_init_; }
  bool done() const { return state_.trial >= cfg_.trials; }
  const std::vector<double>& valid_rts() const { return valid_rts_; }

  /// Mean of the logged valid RTs recomputed from scratch.
  double recomputed_r_hat() const {
    if (valid_rts_.empty()) return r_init_;
    return std::accumulate(valid_rts_.begin(), valid_rts_.end(), 0.0) / double(valid_rts_.size());
  }

 private:
  RegulationConfig cfg_;
  RegulationState state_{};
  double r_init_ = 1.0;
  double sum_ = 0.0;
  std::vector<double> valid_rts_;
};

// ---------------------------------------------------------------------------
// User models
// ---------------------------------------------------------------------------

/// The "user" behind the regulation environment.
class UserModel {
 public:
  virtual ~UserModel() = default;
  /// Starts a new episode; may draw a new user.
  virtual void begin_episode(std::uint64_t seed) = 0;
  /// Mean no-pressure response time of the current user over `trials` trials.
  virtual double measure_initial_rt(int trials) = 0;
  /// Response time for the next trial under the given pressure flag.
  virtual double respond(bool pressure) = 0;
};

/// Synthetic-user oracle; either a fixed user or a fresh draw from a population each episode.
class SyntheticUserModel final : public UserModel {
 public:
  explicit SyntheticUserModel(SyntheticUserConfig fixed) : fixed_(fixed) {}
  explicit SyntheticUserModel(PopulationConfig population) : population_(population) {}

  void begin_episode(std::uint64_t seed) override {
    std::mt19937_64 rng(seed);
    current_ = fixed_ ? *fixed_ : population_->sample(rng);
    user_seed_ = rng();
    question_seed_ = rng();
    user_ = std::make_unique<SyntheticUser>(current_, user_seed_);
    questions_ = std::make_unique<QuestionGenerator>(question_seed_);
  }

  double measure_initial_rt(int trials) override {
    require_episode();
    SyntheticUser probe(current_, user_seed_ ^ 0xa5a5a5a5a5a5a5a5ULL);
    QuestionGenerator q(question_seed_ ^ 0x5a5a5a5a5a5a5a5aULL);
    double sum = 0.0;
    for (int i = 0; i < trials; ++i) sum += probe.respond(q.next(), false).rt;
    return sum / double(trials);
  }

  double respond(bool pressure) override {
    require_episode();
    return user_->respond(questions_->next(), pressure).rt;
  }

  const SyntheticUserConfig& current() const { return current_; }

 private:
  void require_episode() const {
    if (!user_) throw std::logic_error("begin_episode must be called first");
  }

  std::optional<SyntheticUserConfig> fixed_;
  std::optional<PopulationConfig> population_;
  SyntheticUserConfig current_{};
  std::uint64_t user_seed_ = 0, question_seed_ = 0;
  std::unique_ptr<SyntheticUser> user_;
  std::unique_ptr<QuestionGenerator> questions_;
};

/// The trained simulation agent acting as a virtual user: each trial is a DDM
/// episode whose boundary and drift come from the baseline predictor.
class SimAgentUserModel final : public UserModel {
 public:
  SimAgentUserModel(std::shared_ptr<const ppo::ActorCritic> policy, BaselineLookup baseline, SimEnvConfig cfg = {})
      : policy_(std::move(policy)), baseline_(std::move(baseline)), cfg_(cfg) {
    if (!policy_) throw std::invalid_argument("simulation policy is required");
    cfg_.validate();
  }

  void begin_episode(std::uint64_t seed) override {
    question_seed_ = seed;
    questions_ = std::make_unique<QuestionGenerator>(seed);
    trial_ = 0;
    history_.fill(0);
  }

  double measure_initial_rt(int trials) override {
    QuestionGenerator q(question_seed_ ^ 0x5a5a5a5a5a5a5a5aULL);
    std::array<std::uint8_t, kSimHistory> none{};
    double sum = 0.0;
    for (int i = 0; i < trials; ++i) sum += simulate(q.next(), i, false, none);
    return sum / double(trials);
  }

  double respond(bool pressure) override {
    if (!questions_) throw std::logic_error("begin_episode must be called first");
    const double rt = simulate(questions_->next(), trial_, pressure, history_);
    std::rotate(history_.begin(), history_.begin() + 1, history_.end());
    history_.back() = pressure ? 1 : 0;
    ++trial_;
    return rt;
  }

 private:
  double simulate(const MathQuestion& q, int trial, bool pressure,
                  const std::array<std::uint8_t, kSimHistory>& history) const {
    SimTrialSpec spec;
    spec.question = q;
    spec.prediction = baseline_(q, trial);
    spec.pressure = pressure;
    spec.trial = trial;
    spec.history = history;
    return run_trial(greedy_policy(*policy_), spec, cfg_).simulated_rt;
  }

  std::shared_ptr<const ppo::ActorCritic> policy_;
  BaselineLookup baseline_;
  SimEnvConfig cfg_;
  std::uint64_t question_seed_ = 0;
  std::unique_ptr<QuestionGenerator> questions_;
  int trial_ = 0;
  std::array<std::uint8_t, kSimHistory> history_{};
};

// ---------------------------------------------------------------------------
// Environment
// ---------------------------------------------------------------------------

struct EpisodeLogRow {
  int trial_index = 0;
  int action = 0;
  double rt = 0.0;
  double r_s = 0.0;
  double r_e = 0.0;
  double r_hat = 0.0;
};

inline void write_episode_log(std::ostream& out, const std::vector<EpisodeLogRow>& rows) {
  out << "trial_index,action,ru_i,r_s,r_e,r_hat\n";
  char buf[200];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%d,%d,%.9g,%.9g,%.9g,%.9g\n", r.trial_index, r.action, r.rt, r.r_s, r.r_e,
                  r.r_hat);
    out << buf;
  }
}

class RegulationEnv {
 public:
  RegulationEnv(std::shared_ptr<UserModel> user, RegulationConfig cfg, std::uint64_t seed)
      : user_(std::move(user)), tracker_(cfg), rng_(seed) {
    if (!user_) throw std::invalid_argument("regulation env needs a user model");
  }

  int observation_size() const { return kRegulationObservationSize; }

  Eigen::VectorXd reset() {
    user_->begin_episode(rng_());
    const auto& cfg = tracker_.config();
    tracker_.reset(cfg.r_init > 0.0 ? cfg.r_init : user_->measure_initial_rt(cfg.init_trials));
    log_.clear();
    return tracker_.observation();
  }

  ppo::EnvStep step(double action) {
    if (tracker_.done()) throw std::logic_error("step past the end of the regulation episode");
    const bool pressure = action > 0.5;
    const double rt = user_->respond(pressure);
    const auto parts = tracker_.record(rt);
    log_.push_back({tracker_.state().trial, pressure ? 1 : 0, rt, parts.r_s, parts.r_e, parts.ru_hat});
    last_ = parts;
    return {tracker_.observation(), parts.r_s + parts.r_e, tracker_.done()};
  }

  const RegulationState& state() const { return tracker_.state(); }
  const RegulationTracker& tracker() const { return tracker_; }
  const RegulationRewardParts& last_parts() const { return last_; }
  const std::vector<EpisodeLogRow>& log() const { return log_; }
  double r_init() const { return tracker_.r_init(); }

 private:
  std::shared_ptr<UserModel> user_;
  RegulationTracker tracker_;
  std::mt19937_64 rng_;
  std::vector<EpisodeLogRow> log_;
  RegulationRewardParts last_{};
};

// ---------------------------------------------------------------------------
// Deployment on synthetic users
// ---------------------------------------------------------------------------

/// Maps the current observation and trial index to a pressure decision.
using PressurePolicy = std::function<bool(const Eigen::VectorXd& obs, int trial, std::mt19937_64& rng)>;

inline PressurePolicy greedy_pressure_policy(std::shared_ptr<const ppo::ActorCritic> policy) {
  return [policy](const Eigen::VectorXd& obs, int, std::mt19937_64&) { return policy->act_deterministic(obs) > 0.5; };
}

inline PressurePolicy random_pressure_policy(double p = 0.5) {
  return [p](const Eigen::VectorXd&, int, std::mt19937_64& rng) { return std::bernoulli_distribution(p)(rng); };
}

inline PressurePolicy constant_pressure_policy(bool on) {
  return [on](const Eigen::VectorXd&, int, std::mt19937_64&) { return on; };
}

struct UserEpisode {
  SyntheticUserConfig traits{};
  std::vector<TrialOutcome> trials;
  double mean_rt = 0.0;
  double no_pressure_mean_rt = 0.0;  // same user, same noise, all trials unpressured
  double reduction = 0.0;            // (no_pressure_mean_rt - mean_rt) / no_pressure_mean_rt
};

/// Runs `policy` on `n_users` fresh synthetic users. User i is identical across
/// calls with the same seed, so different policies can be compared pairwise.
inline std::vector<UserEpisode> deploy_on_synthetic_users(const PressurePolicy& policy,
                                                          const PopulationConfig& population, int n_users,
                                                          int trials, std::uint64_t seed,
                                                          const RegulationConfig& reg_cfg = {}) {
  if (n_users < 1 || trials < 1) throw std::invalid_argument("deployment needs at least one user and trial");
  std::mt19937_64 master(seed);
  std::vector<UserEpisode> out;
  RegulationConfig cfg = reg_cfg;
  cfg.trials = trials;
  for (int u = 0; u < n_users; ++u) {
    UserEpisode ep;
    ep.traits = population.sample(master);
    const std::uint64_t user_seed = master(), question_seed = master(), policy_seed = master();
    SyntheticUser user(ep.traits, user_seed), control(ep.traits, user_seed);
    QuestionGenerator questions(question_seed), control_questions(question_seed);
    std::mt19937_64 policy_rng(policy_seed);

    // Same user without pressure gives the per-user reference and R_init.
    double control_sum = 0.0;
    for (int t = 0; t < trials; ++t) control_sum += control.respond(control_questions.next(), false).rt;
    ep.no_pressure_mean_rt = control_sum / double(trials);

    RegulationTracker tracker(cfg);
    tracker.reset(ep.no_pressure_mean_rt);
    double sum = 0.0;
    for (int t = 0; t < trials; ++t) {
      const bool pressure = policy(tracker.observation(), t, policy_rng);
      const auto q = questions.next();
      const auto r = user.respond(q, pressure);
      tracker.record(r.rt);
      ep.trials.push_back({r.rt, r.choice == q.truth, pressure});
      sum += r.rt;
    }
    ep.mean_rt = sum / double(trials);
    ep.reduction = relative_reduction(ep.no_pressure_mean_rt, ep.mean_rt);
    out.push_back(std::move(ep));
  }
  return out;
}

/// Fraction of bootstrap resamples (over users) in which mean(a - b) > 0.
inline double bootstrap_positive_fraction(const std::vector<double>& a, const std::vector<double>& b, int resamples,
                                          std::uint64_t seed) {
  if (a.size() != b.size() || a.empty()) throw std::invalid_argument("bootstrap needs paired non-empty samples");
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, a.size() - 1);
  int positive = 0;
  for (int r = 0; r < resamples; ++r) {
    double s = 0.0;
    for (std::size_t k = 0; k < a.size(); ++k) {
      const auto i = pick(rng);
      s += a[i] - b[i];
    }
    positive += s > 0.0 ? 1 : 0;
  }
  return double(positive) / double(resamples);
}

}  // namespace dualrl
