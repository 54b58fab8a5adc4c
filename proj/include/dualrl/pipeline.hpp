#pragma once

// End-to-end stages shared by the command-line tool and the acceptance suite:
// dataset -> answer agent -> baseline -> simulation agent -> regulation agent.

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <tuple>
#include <type_traits>
#include <vector>

#include "dualrl/answer_agent.hpp"
#include "dualrl/baseline_predictor.hpp"
#include "dualrl/metrics.hpp"
#include "dualrl/ppo.hpp"
#include "dualrl/regulation_env.hpp"
#include "dualrl/synthetic_user.hpp"
#include "dualrl/user_sim_env.hpp"

namespace dualrl {

// ---------------------------------------------------------------------------
// Run configuration: "key = value" lines, '#' starts a comment.
// ---------------------------------------------------------------------------

inline std::uint64_t fnv1a64(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

class RunConfig {
 public:
  static RunConfig parse(std::istream& in) {
    RunConfig cfg;
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto trim = [](std::string s) {
        const auto a = s.find_first_not_of(" \t\r");
        if (a == std::string::npos) return std::string{};
        return s.substr(a, s.find_last_not_of(" \t\r") - a + 1);
      };
      line = trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos)
        throw std::invalid_argument("config line " + std::to_string(lineno) + ": expected key = value");
      const auto key = trim(line.substr(0, eq));
      if (key.empty()) throw std::invalid_argument("config line " + std::to_string(lineno) + ": empty key");
      cfg.values_[key] = trim(line.substr(eq + 1));
    }
    return cfg;
  }

  static RunConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::invalid_argument("cannot open config file " + path);
    return parse(in);
  }

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get(const std::string& key, const std::string& fallback) {
    auto [it, inserted] = values_.try_emplace(key, fallback);
    return it->second;
  }

  std::string get(const std::string& key, const char* fallback) { return get(key, std::string(fallback)); }

  template <class T>
  T get(const std::string& key, T fallback) {
    std::ostringstream def;
    def.precision(17);
    def << fallback;
    const std::string raw = get(key, def.str());
    std::istringstream in(raw);
    T v{};
    if constexpr (std::is_same_v<T, bool>) {
      if (raw == "true" || raw == "1") return true;
      if (raw == "false" || raw == "0") return false;
      throw std::invalid_argument("config key " + key + " expects a boolean, got '" + raw + "'");
    } else {
      if (!(in >> v) || !(in >> std::ws).eof())
        throw std::invalid_argument("config key " + key + " has invalid value '" + raw + "'");
    }
    return v;
  }

  /// Fully resolved configuration, one sorted "key = value" per line.
  std::string resolved() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  std::string hash_hex() const {
    char buf[24];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(fnv1a64(resolved())));
    return buf;
  }

  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
};

/// Provenance stamped into every artifact.
struct Provenance {
  std::string command;
  std::string config_hash;
  std::uint64_t seed = 0;

  void write_comment(std::ostream& out) const {
    out << "# command: " << command << "\n# config_hash: " << config_hash << "\n# seed: " << seed << '\n';
  }

  void stamp(Checkpoint& ck) const {
    ck.meta["command"] = command;
    ck.meta["config_hash"] = config_hash;
    ck.meta["seed"] = std::to_string(seed);
  }
};

// ---------------------------------------------------------------------------
// Baseline features
// ---------------------------------------------------------------------------

/// Memoizes answer-agent features per question (the question space is small).
class FeatureCache {
 public:
  explicit FeatureCache(std::shared_ptr<const AnswerAgent> agent) : agent_(std::move(agent)) {
    if (!agent_) throw std::invalid_argument("feature cache needs an answer agent");
  }

  const Eigen::VectorXd& features(const MathQuestion& q) {
    const int key = (q.ab * 100 + q.cd) * 10 + q.e;
    auto it = cache_.find(key);
    if (it == cache_.end()) it = cache_.emplace(key, agent_->extract_features(q)).first;
    return it->second;
  }

  void prefetch(const std::vector<MathQuestion>& qs) {
    std::vector<MathQuestion> missing;
    for (const auto& q : qs)
      if (!cache_.count((q.ab * 100 + q.cd) * 10 + q.e)) missing.push_back(q);
    std::sort(missing.begin(), missing.end(), [](const auto& a, const auto& b) {
      return std::tie(a.ab, a.cd, a.e) < std::tie(b.ab, b.cd, b.e);
    });
    missing.erase(std::unique(missing.begin(), missing.end()), missing.end());
    if (missing.empty()) return;
    const Eigen::MatrixXd f = agent_->extract_features(missing);
    for (std::size_t i = 0; i < missing.size(); ++i) {
      const auto& q = missing[i];
      cache_.emplace((q.ab * 100 + q.cd) * 10 + q.e, f.col(static_cast<Eigen::Index>(i)));
    }
  }

 private:
  std::shared_ptr<const AnswerAgent> agent_;
  std::map<int, Eigen::VectorXd> cache_;
};

/// Rows of unpressured trials, the no-pressure condition the baseline describes.
inline std::vector<BaselineRow> baseline_rows(const std::vector<DatasetRow>& rows, FeatureCache& features) {
  std::vector<MathQuestion> qs;
  for (const auto& r : rows)
    if (!r.pressure) qs.push_back(r.question);
  features.prefetch(qs);
  std::vector<BaselineRow> out;
  for (const auto& r : rows)
    if (!r.pressure) out.push_back({features.features(r.question), r.trial, r.choice, r.rt});
  return out;
}

inline BaselineLookup make_baseline_lookup(std::shared_ptr<const BaselineModel> model,
                                           std::shared_ptr<FeatureCache> features) {
  return [model, features](const MathQuestion& q, int trial) {
    return model->predict(features->features(q), trial);
  };
}

/// Splits rows by user: users below `first_holdout_user` train, the rest are held out.
inline std::pair<std::vector<DatasetRow>, std::vector<DatasetRow>> split_by_user(const std::vector<DatasetRow>& rows,
                                                                                 int first_holdout_user) {
  std::pair<std::vector<DatasetRow>, std::vector<DatasetRow>> out;
  for (const auto& r : rows) (r.user_id < first_holdout_user ? out.first : out.second).push_back(r);
  return out;
}

// ---------------------------------------------------------------------------
// Simulation agent
// ---------------------------------------------------------------------------

inline ppo::PolicyConfig sim_policy_config(const SimEnvConfig& env = {}) {
  ppo::PolicyConfig pc;
  pc.obs_size = sim_observation_size(env);
  pc.kind = ppo::ActionKind::ContinuousBounded;
  pc.hidden = {64, 64};
  pc.init_log_std = -0.5;
  return pc;
}

struct SimEvaluation {
  double sim_mape = 0.0;
  double baseline_mape = 0.0;
  std::vector<SimTraceRecord> trace;
};

inline SimEvaluation evaluate_sim_agent(const SimPolicy& policy, const std::vector<SimTrialSpec>& specs,
                                        const SimEnvConfig& env = {}) {
  if (specs.empty()) throw std::invalid_argument("no trials to evaluate");
  SimEvaluation out;
  std::vector<double> sim, base, truth;
  for (const auto& s : specs) {
    const auto r = run_trial(policy, s, env);
    sim.push_back(r.simulated_rt);
    base.push_back(s.prediction.rt);
    truth.push_back(s.true_rt);
    out.trace.push_back({s, r});
  }
  out.sim_mape = mape(sim, truth);
  out.baseline_mape = mape(base, truth);
  return out;
}

inline ppo::TrainResult train_sim_agent(const std::vector<SimTrialSpec>& pool, const ppo::PpoConfig& cfg,
                                        const SimEnvConfig& env = {},
                                        const ppo::CheckpointCallback& on_checkpoint = {}) {
  return ppo::train([&](std::uint64_t seed) { return SimTrainingEnv(pool, seed, env); }, sim_policy_config(env), cfg,
                    on_checkpoint);
}

/// Recommended PPO settings for the simulation agent.
inline ppo::PpoConfig sim_ppo_config() {
  ppo::PpoConfig cfg;
  cfg.lr = 1e-3;
  cfg.total_steps = 150000;
  cfg.checkpoint_every = 4;
  return cfg;
}

struct SelectedSimAgent {
  ppo::ActorCritic policy;
  long long selected_step = 0;
  double validation_mape = 0.0;
  ppo::TrainResult run;
};

/// Trains on `pool` and keeps the checkpoint with the lowest greedy MAPE on
/// `validation`. Checkpoints are taken every cfg.checkpoint_every updates.
inline SelectedSimAgent train_sim_agent_selected(const std::vector<SimTrialSpec>& pool,
                                                 const std::vector<SimTrialSpec>& validation, ppo::PpoConfig cfg,
                                                 const SimEnvConfig& env = {},
                                                 const ppo::CheckpointCallback& on_checkpoint = {}) {
  if (validation.empty()) throw std::invalid_argument("validation trials required for checkpoint selection");
  if (cfg.checkpoint_every <= 0) cfg.checkpoint_every = 4;
  std::optional<ppo::ActorCritic> best;
  double best_mape = std::numeric_limits<double>::infinity();
  long long best_step = 0;
  auto run = ppo::train([&](std::uint64_t seed) { return SimTrainingEnv(pool, seed, env); }, sim_policy_config(env),
                        cfg, [&](long long step, const ppo::ActorCritic& p) {
                          const double m = evaluate_sim_agent(greedy_policy(p), validation, env).sim_mape;
                          if (m < best_mape) {
                            best_mape = m;
                            best_step = step;
                            best = p;
                          }
                          if (on_checkpoint) on_checkpoint(step, p);
                        });
  const double final_mape = evaluate_sim_agent(greedy_policy(run.policy), validation, env).sim_mape;
  if (!best || final_mape < best_mape) {
    best_mape = final_mape;
    best_step = run.curve.empty() ? 0 : run.curve.back().step;
    best = run.policy;
  }
  return {std::move(*best), best_step, best_mape, std::move(run)};
}

// ---------------------------------------------------------------------------
// Regulation agent
// ---------------------------------------------------------------------------

inline ppo::PolicyConfig regulation_policy_config() {
  ppo::PolicyConfig pc;
  pc.obs_size = kRegulationObservationSize;
  pc.kind = ppo::ActionKind::Binary;
  pc.hidden = {64, 64};
  return pc;
}

/// Recommended PPO settings for the regulation agent. Undiscounted GAE lets the
/// anxiety cost of a pressured trial reach the decision that caused it.
inline ppo::PpoConfig regulation_ppo_config() {
  ppo::PpoConfig cfg;
  cfg.gamma = 1.0;
  cfg.use_gae = true;
  cfg.gae_lambda = 0.95;
  cfg.rollout_len = 500;
  cfg.total_steps = 50000;
  return cfg;
}

inline ppo::TrainResult train_regulation_agent(std::function<std::shared_ptr<UserModel>()> make_user,
                                               const RegulationConfig& reg, const ppo::PpoConfig& cfg,
                                               const ppo::CheckpointCallback& on_checkpoint = {}) {
  return ppo::train([&](std::uint64_t seed) { return RegulationEnv(make_user(), reg, seed); },
                    regulation_policy_config(), cfg, on_checkpoint);
}

/// Mean RT of a greedy regulation policy on a noise-free user over `horizon` trials.
inline double policy_mean_rt_on_user(const ppo::ActorCritic& policy, const SyntheticUserConfig& user, int horizon,
                                     std::vector<bool>* schedule = nullptr) {
  const auto det = user.deterministic();
  RegulationConfig rc;
  rc.trials = horizon;
  RegulationTracker tracker(rc);
  // A noise-free user's no-pressure mean is its R_init.
  std::vector<bool> off(static_cast<std::size_t>(rc.init_trials), false);
  tracker.reset(schedule_mean_rt(det, off));
  SyntheticUser u(det, 0);
  const auto q = make_question(50, 50, 2);
  double sum = 0.0;
  for (int t = 0; t < horizon; ++t) {
    const bool p = policy.act_deterministic(tracker.observation()) > 0.5;
    if (schedule) schedule->push_back(p);
    const double rt = u.respond(q, p).rt;
    tracker.record(rt);
    sum += rt;
  }
  return sum / horizon;
}

// ---------------------------------------------------------------------------
// Policy comparison
// ---------------------------------------------------------------------------

struct PolicyReport {
  std::string name;
  double mean_reduction = 0.0;
  std::vector<double> reductions;
  SessionDelta pooled_delta{};
  BlockStats pooled_blocks{};
};

/// Runs each named policy on the same `n_users` synthetic users. The delta is
/// computed between pooled no-pressure sessions and pooled policy sessions; block
/// statistics use the concatenation of all users' sessions split per user.
inline std::vector<PolicyReport> compare_policies(const std::vector<std::pair<std::string, PressurePolicy>>& policies,
                                                  const PopulationConfig& population, int n_users, int trials,
                                                  std::uint64_t seed) {
  std::vector<PolicyReport> out;
  const auto none = deploy_on_synthetic_users(constant_pressure_policy(false), population, n_users, trials, seed);
  std::vector<TrialOutcome> control;
  for (const auto& ep : none) control.insert(control.end(), ep.trials.begin(), ep.trials.end());
  const auto control_summary = summarize_session(control);
  for (const auto& [name, policy] : policies) {
    PolicyReport r;
    r.name = name;
    const auto eps = deploy_on_synthetic_users(policy, population, n_users, trials, seed);
    std::vector<TrialOutcome> all;
    for (const auto& ep : eps) {
      r.reductions.push_back(ep.reduction);
      all.insert(all.end(), ep.trials.begin(), ep.trials.end());
    }
    r.mean_reduction = std::accumulate(r.reductions.begin(), r.reductions.end(), 0.0) / double(r.reductions.size());
    r.pooled_delta = session_delta(control_summary, summarize_session(all));
    // Average per-user block statistics, block by block.
    BlockStats avg;
    avg.blocks.resize(static_cast<std::size_t>(kDefaultBlocks));
    for (const auto& ep : eps) {
      const auto b = block_stats(ep.trials);
      for (std::size_t i = 0; i < b.blocks.size(); ++i) {
        avg.blocks[i].first_trial = b.blocks[i].first_trial;
        avg.blocks[i].trial_count += b.blocks[i].trial_count;
        avg.blocks[i].valid_trials += b.blocks[i].valid_trials;
        avg.blocks[i].rt += b.blocks[i].rt / n_users;
        avg.blocks[i].accuracy += b.blocks[i].accuracy / n_users;
        avg.blocks[i].feedback_fraction += b.blocks[i].feedback_fraction / n_users;
      }
    }
    for (std::size_t i = 1; i < avg.blocks.size(); ++i) {
      avg.relative_rt.push_back((avg.blocks[i].rt - avg.blocks[0].rt) / avg.blocks[0].rt);
      avg.relative_accuracy.push_back((avg.blocks[i].accuracy - avg.blocks[0].accuracy) / avg.blocks[0].accuracy);
    }
    r.pooled_blocks = avg;
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace dualrl
