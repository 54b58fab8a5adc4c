#pragma once

// Drift-diffusion trial environment for the simulation agent.
//
// Evidence starts at 0.5 and moves by v * (1 + kappa * a) per frame, where
// v = (R_p - 0.5) / (R_t * f) makes the zero-action episode cross the boundary
// R_p after ceil(R_t * f) frames. The simulated response time is S_n / f.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <ostream>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualrl/baseline_predictor.hpp"
#include "dualrl/ppo.hpp"
#include "dualrl/stimulus.hpp"
#include "dualrl/synthetic_user.hpp"
#include "dualrl/task_core.hpp"

namespace dualrl {

struct SimEnvConfig {
  int frame_rate_hz = 5;
  double rt_max_s = 10.0;
  int max_steps = 50;
  double start_evidence = 0.5;
  double kappa = 1.0;
  double pixel_scale = 1.0 / 16.0;  // keeps a lit bar from swamping the first layer
  StimulusConfig stimulus{};

  void validate() const {
    if (frame_rate_hz < 1) throw std::invalid_argument("frame_rate_hz must be >= 1");
    if (!(kappa > 0.0)) throw std::invalid_argument("kappa must be positive");
    if (!(pixel_scale > 0.0)) throw std::invalid_argument("pixel_scale must be positive");
    if (std::abs(rt_max_s * frame_rate_hz - max_steps) > 1e-9)
      throw std::invalid_argument("max_steps must equal rt_max_s * frame_rate_hz");
    if (stimulus.frame_rate_hz != frame_rate_hz) throw std::invalid_argument("stimulus frame rate differs from env");
    stimulus.validate();
  }
};

/// Number of past pressure flags visible to the simulation policy.
inline constexpr int kSimHistory = 10;
inline constexpr double kSimTrialScale = 100.0;

/// Everything one simulated trial needs.
struct SimTrialSpec {
  MathQuestion question{};
  BaselinePrediction prediction{};
  double true_rt = std::numeric_limits<double>::quiet_NaN();  // R_u; NaN when unknown (deployment)
  bool pressure = false;
  int trial = 0;
  int user_id = 0;
  std::array<std::uint8_t, kSimHistory> history{};  // most recent last
};

struct SimRewardInputs {
  double e_rl = 0.0;
  double e_svm = 0.0;
  double p_star = 0.0;
};

/// |E_rl - E_svm| / E_svm + P* when E_rl < E_svm, else 0. An exact baseline
/// (E_svm == 0) yields 1 when the agent is exact too, else 0.
inline double compute_sim_reward(const SimRewardInputs& in) {
  if (in.e_svm == 0.0) return in.e_rl == 0.0 ? 1.0 : 0.0;
  if (in.e_rl < in.e_svm) return std::abs(in.e_rl - in.e_svm) / in.e_svm + in.p_star;
  return 0.0;
}

inline double relative_error(double predicted, double truth) {
  if (!(truth > 0.0)) throw std::invalid_argument("true response time must be positive");
  return std::abs(predicted - truth) / truth;
}

inline int sim_observation_size(const SimEnvConfig& cfg = {}) {
  return static_cast<int>(kEncodedLength) * kVocabSize + static_cast<int>(cfg.stimulus.pixel_count()) + kSimHistory +
         1;
}

/// [one-hot tokens | scaled frame pixels | recent pressure flags | trial / 100]
inline Eigen::VectorXd sim_observation(const SimTrialSpec& spec, const StimulusFrame& frame, const SimEnvConfig& cfg) {
  Eigen::VectorXd obs = Eigen::VectorXd::Zero(sim_observation_size(cfg));
  const auto tokens = encode_question(spec.question);
  for (std::size_t i = 0; i < kEncodedLength; ++i) obs[static_cast<Eigen::Index>(i) * kVocabSize + tokens[i]] = 1.0;
  Eigen::Index off = static_cast<Eigen::Index>(kEncodedLength) * kVocabSize;
  for (std::size_t p = 0; p < frame.image.size(); ++p) obs[off + static_cast<Eigen::Index>(p)] = cfg.pixel_scale * frame.image[p];
  off += static_cast<Eigen::Index>(frame.image.size());
  for (int k = 0; k < kSimHistory; ++k) obs[off + k] = spec.history[static_cast<std::size_t>(k)];
  obs[off + kSimHistory] = spec.trial / kSimTrialScale;
  return obs;
}

/// One math trial as an episode.
class UserSimEnv {
 public:
  explicit UserSimEnv(SimEnvConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const SimEnvConfig& config() const { return cfg_; }
  int observation_size() const { return sim_observation_size(cfg_); }

  Eigen::VectorXd reset(const SimTrialSpec& spec) {
    if (!std::isnan(spec.true_rt) && !(spec.true_rt > 0.0 && spec.true_rt <= cfg_.rt_max_s))
      throw std::invalid_argument("true response time must lie in (0, rt_max]");
    if (!(spec.prediction.rt > 0.0)) throw std::invalid_argument("baseline response time must be positive");
    if (!(spec.prediction.confidence >= 0.5 && spec.prediction.confidence <= 1.0))
      throw std::invalid_argument("baseline confidence must lie in [0.5, 1]");
    spec_ = spec;
    evidence_ = cfg_.start_evidence;
    boundary_ = spec.prediction.confidence;
    drift_ = (boundary_ - cfg_.start_evidence) / (spec.prediction.rt * cfg_.frame_rate_hz);
    steps_ = 0;
    done_ = false;
    timed_out_ = false;
    reward_ = 0.0;
    return observe();
  }

  ppo::EnvStep step(double action) {
    if (done_) throw std::logic_error("step called on a finished trial");
    const double a = std::clamp(action, -1.0, 1.0);
    evidence_ = std::max(0.0, evidence_ + drift_ * (1.0 + cfg_.kappa * a));
    ++steps_;
    const bool crossed = evidence_ >= boundary_ - 1e-9 * std::max(1.0, std::abs(boundary_));
    ppo::EnvStep out;
    if (crossed || steps_ >= cfg_.max_steps) {
      done_ = true;
      timed_out_ = !crossed;
      if (!std::isnan(spec_.true_rt)) {
        SimRewardInputs in;
        in.e_rl = relative_error(simulated_rt(), spec_.true_rt);
        in.e_svm = relative_error(spec_.prediction.rt, spec_.true_rt);
        in.p_star = timed_out_ ? -1.0 : 0.0;
        if (in.e_svm == 0.0) ++exact_baseline_events_;
        reward_ = compute_sim_reward(in);
      }
      out.reward = reward_;
      out.done = true;
    }
    out.obs = observe();
    return out;
  }

  double evidence() const { return evidence_; }
  double boundary() const { return boundary_; }
  double drift() const { return drift_; }
  int steps() const { return steps_; }
  bool done() const { return done_; }
  bool timed_out() const { return timed_out_; }
  double terminal_reward() const { return reward_; }
  double simulated_rt() const { return double(steps_) / cfg_.frame_rate_hz; }
  long long exact_baseline_events() const { return exact_baseline_events_; }
  const SimTrialSpec& spec() const { return spec_; }

 private:
  Eigen::VectorXd observe() const {
    return sim_observation(spec_, render_frame(steps_, spec_.pressure, cfg_.stimulus), cfg_);
  }

  SimEnvConfig cfg_;
  SimTrialSpec spec_{};
  double evidence_ = 0.5, boundary_ = 0.5, drift_ = 0.0, reward_ = 0.0;
  int steps_ = 0;
  bool done_ = true, timed_out_ = false;
  long long exact_baseline_events_ = 0;
};

using SimPolicy = std::function<double(const Eigen::VectorXd& obs)>;

inline SimPolicy zero_action_policy() {
  return [](const Eigen::VectorXd&) { return 0.0; };
}

inline SimPolicy constant_action_policy(double a) {
  return [a](const Eigen::VectorXd&) { return a; };
}

/// Greedy (mean) action of a continuous actor-critic.
inline SimPolicy greedy_policy(const ppo::ActorCritic& policy) {
  return [&policy](const Eigen::VectorXd& obs) { return policy.act_deterministic(obs); };
}

struct SimTrialResult {
  double simulated_rt = 0.0;
  double total_reward = 0.0;
  int steps = 0;
  bool timed_out = false;
};

inline SimTrialResult run_trial(const SimPolicy& policy, const SimTrialSpec& spec, const SimEnvConfig& cfg = {}) {
  UserSimEnv env(cfg);
  Eigen::VectorXd obs = env.reset(spec);
  SimTrialResult r;
  while (!env.done()) {
    auto s = env.step(policy(obs));
    r.total_reward += s.reward;
    obs = std::move(s.obs);
  }
  r.simulated_rt = env.simulated_rt();
  r.steps = env.steps();
  r.timed_out = env.timed_out();
  return r;
}

/// Samples a fresh trial from a fixed pool at every reset; suits ppo::train.
class SimTrainingEnv {
 public:
  SimTrainingEnv(std::vector<SimTrialSpec> pool, std::uint64_t seed, SimEnvConfig cfg = {})
      : pool_(std::move(pool)), env_(cfg), rng_(seed) {
    if (pool_.empty()) throw std::invalid_argument("SimTrainingEnv needs at least one trial");
    for (const auto& s : pool_)
      if (std::isnan(s.true_rt)) throw std::invalid_argument("training trials need a true response time");
  }

  int observation_size() const { return env_.observation_size(); }

  Eigen::VectorXd reset() {
    std::uniform_int_distribution<std::size_t> pick(0, pool_.size() - 1);
    return env_.reset(pool_[pick(rng_)]);
  }

  ppo::EnvStep step(double action) { return env_.step(action); }

  const UserSimEnv& inner() const { return env_; }

 private:
  std::vector<SimTrialSpec> pool_;
  UserSimEnv env_;
  std::mt19937_64 rng_;
};

using BaselineLookup = std::function<BaselinePrediction(const MathQuestion&, int trial)>;

/// Turns dataset rows into trial specs; pressure history is tracked per user in row order.
inline std::vector<SimTrialSpec> build_trial_specs(const std::vector<DatasetRow>& rows, const BaselineLookup& baseline) {
  std::vector<SimTrialSpec> out;
  out.reserve(rows.size());
  int current_user = std::numeric_limits<int>::min();
  std::array<std::uint8_t, kSimHistory> history{};
  for (const auto& r : rows) {
    if (r.user_id != current_user) {
      current_user = r.user_id;
      history.fill(0);
    }
    SimTrialSpec s;
    s.question = r.question;
    s.prediction = baseline(r.question, r.trial);
    s.true_rt = r.rt;
    s.pressure = r.pressure;
    s.trial = r.trial;
    s.user_id = r.user_id;
    s.history = history;
    out.push_back(s);
    std::rotate(history.begin(), history.begin() + 1, history.end());
    history.back() = r.pressure ? 1 : 0;
  }
  return out;
}

struct SimTraceRecord {
  SimTrialSpec spec;
  SimTrialResult result;
};

inline void write_sim_trace(std::ostream& out, const std::vector<SimTraceRecord>& records) {
  out << "ab,cd,e,pressure,r_t,r_u,r_rl,reward\n";
  char buf[200];
  for (const auto& t : records) {
    std::snprintf(buf, sizeof buf, "%d,%d,%d,%d,%.9g,%.9g,%.9g,%.9g\n", t.spec.question.ab, t.spec.question.cd,
                  t.spec.question.e, t.spec.pressure ? 1 : 0, t.spec.prediction.rt, t.spec.true_rt,
                  t.result.simulated_rt, t.result.total_reward);
    out << buf;
  }
}

}  // namespace dualrl
