#pragma once

// Proximal policy optimization with separate actor and critic MLPs.
//
// Objective per transition: min(ratio * A, clip(ratio, 1 - eps, 1 + eps) * A)
// with ratio = pi(a|s) / pi_old(a|s). The default advantage is the one-step
// temporal difference r + gamma * V(s') - V(s); generalized advantage
// estimation is available behind `PpoConfig::use_gae`.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <concepts>
#include <cstdint>
#include <functional>
#include <limits>
#include <numbers>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualrl/checkpoint.hpp"
#include "dualrl/nn.hpp"

namespace dualrl::ppo {

using Eigen::MatrixXd;
using Eigen::VectorXd;

enum class ActionKind { ContinuousBounded, Binary };

inline std::string to_string(ActionKind k) { return k == ActionKind::Binary ? "binary" : "continuous"; }

inline ActionKind action_kind_from_string(const std::string& s) {
  if (s == "binary") return ActionKind::Binary;
  if (s == "continuous") return ActionKind::ContinuousBounded;
  throw std::invalid_argument("unknown action kind: " + s);
}

struct PolicyConfig {
  int obs_size = 1;
  ActionKind kind = ActionKind::Binary;
  std::vector<int> hidden{64, 64};
  double init_log_std = 0.0;
  std::uint64_t seed = 0;
};

inline double softplus(double x) { return x > 0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }
inline double sigmoid(double x) {
  return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}

inline constexpr double kLogSqrt2Pi = 0.91893853320467274178;

/// Actor-critic pair. The continuous head is a Gaussian whose mean is tanh of the
/// actor output and whose log-scale is a free, state-independent parameter; the
/// binary head is a Bernoulli on sigmoid(actor output).
class ActorCritic {
 public:
  struct Sample {
    double action = 0.0;   // stored action (raw Gaussian draw, or 0/1)
    double applied = 0.0;  // what the environment receives (clipped to [-1, 1], or 0/1)
    double log_prob = 0.0;
    double value = 0.0;
  };

  ActorCritic() = default;

  explicit ActorCritic(const PolicyConfig& cfg) : cfg_(cfg) {
    if (cfg.obs_size < 1) throw std::invalid_argument("obs_size must be >= 1");
    std::mt19937_64 rng(cfg.seed);
    std::vector<int> sizes{cfg.obs_size};
    sizes.insert(sizes.end(), cfg.hidden.begin(), cfg.hidden.end());
    sizes.push_back(1);
    actor_ = nn::Mlp<double>(params_, "actor", sizes, rng, 0.01);
    critic_ = nn::Mlp<double>(params_, "critic", sizes, rng, 1.0);
    if (cfg.kind == ActionKind::ContinuousBounded) {
      log_std_ = params_.add("actor.log_std", 1, 1);
      params_[*log_std_].value(0, 0) = cfg.init_log_std;
    }
  }

  const PolicyConfig& config() const { return cfg_; }
  ActionKind kind() const { return cfg_.kind; }
  int obs_size() const { return cfg_.obs_size; }

  nn::ParameterSet<double>& params() { return params_; }
  const nn::ParameterSet<double>& params() const { return params_; }
  const nn::Mlp<double>& actor() const { return actor_; }
  const nn::Mlp<double>& critic() const { return critic_; }
  std::optional<std::size_t> log_std_index() const { return log_std_; }

  double log_std() const { return log_std_ ? params_[*log_std_].value(0, 0) : 0.0; }

  /// Raw actor output (pre-tanh mean or logit) for a batch of observations.
  MatrixXd actor_output(const MatrixXd& obs, nn::Mlp<double>::Tape* tape = nullptr) const {
    return actor_.forward(params_, obs, tape);
  }

  MatrixXd values(const MatrixXd& obs, nn::Mlp<double>::Tape* tape = nullptr) const {
    return critic_.forward(params_, obs, tape);
  }

  double value(const VectorXd& obs) const { return values(obs)(0, 0); }

  /// Continuous: mean action in [-1, 1]. Binary: probability of action 1.
  double head(const VectorXd& obs) const {
    const double u = actor_output(obs)(0, 0);
    return cfg_.kind == ActionKind::Binary ? sigmoid(u) : std::tanh(u);
  }

  double log_prob(const VectorXd& obs, double action) const {
    return log_prob_from_output(actor_output(obs)(0, 0), action);
  }

  double log_prob_from_output(double u, double action) const {
    if (cfg_.kind == ActionKind::Binary) return action > 0.5 ? -softplus(-u) : -softplus(u);
    const double mu = std::tanh(u), ls = log_std(), z = (action - mu) / std::exp(ls);
    return -0.5 * z * z - ls - kLogSqrt2Pi;
  }

  Sample act(const VectorXd& obs, std::mt19937_64& rng) const {
    Sample s;
    const double u = actor_output(obs)(0, 0);
    if (cfg_.kind == ActionKind::Binary) {
      s.action = std::bernoulli_distribution(sigmoid(u))(rng) ? 1.0 : 0.0;
      s.applied = s.action;
    } else {
      s.action = std::normal_distribution<double>(std::tanh(u), std::exp(log_std()))(rng);
      s.applied = std::clamp(s.action, -1.0, 1.0);
    }
    s.log_prob = log_prob_from_output(u, s.action);
    s.value = value(obs);
    return s;
  }

  /// Greedy action: the squashed mean, or 1 iff p >= 0.5.
  double act_deterministic(const VectorXd& obs) const {
    const double h = head(obs);
    return cfg_.kind == ActionKind::Binary ? (h >= 0.5 ? 1.0 : 0.0) : h;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.meta["kind"] = "policy";
    ck.meta["action_kind"] = to_string(cfg_.kind);
    ck.meta["obs_size"] = std::to_string(cfg_.obs_size);
    std::string hidden;
    for (std::size_t i = 0; i < cfg_.hidden.size(); ++i) hidden += (i ? "," : "") + std::to_string(cfg_.hidden[i]);
    ck.meta["hidden"] = hidden;
    params_.export_to(ck);
    return ck;
  }

  static ActorCritic from_checkpoint(const Checkpoint& ck) {
    PolicyConfig cfg;
    cfg.kind = action_kind_from_string(ck.require_meta("action_kind"));
    cfg.obs_size = std::stoi(ck.require_meta("obs_size"));
    cfg.hidden.clear();
    const std::string hidden = ck.require_meta("hidden");
    std::size_t pos = 0;
    while (pos < hidden.size()) {
      const auto comma = hidden.find(',', pos);
      cfg.hidden.push_back(std::stoi(hidden.substr(pos, comma - pos)));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    ActorCritic ac(cfg);
    ac.params_.import_from(ck);
    return ac;
  }

 private:
  PolicyConfig cfg_;
  nn::ParameterSet<double> params_;
  nn::Mlp<double> actor_, critic_;
  std::optional<std::size_t> log_std_;
};

// ---------------------------------------------------------------------------
// Environments and rollouts
// ---------------------------------------------------------------------------

struct EnvStep {
  VectorXd obs;
  double reward = 0.0;
  bool done = false;
};

template <class E>
concept Environment = requires(E& env, double action) {
  { env.reset() } -> std::convertible_to<VectorXd>;
  { env.step(action) } -> std::convertible_to<EnvStep>;
  { env.observation_size() } -> std::convertible_to<int>;
};

struct Trajectory {
  MatrixXd obs;  // observation_size x n
  std::vector<double> actions, log_probs, values, rewards;
  std::vector<std::uint8_t> dones;
  double bootstrap_value = 0.0;  // V of the state following the last transition (0 if it ended an episode)
  std::vector<double> episode_returns;

  std::size_t size() const { return actions.size(); }
};

/// Carries the live observation between successive rollouts.
struct RolloutCursor {
  VectorXd obs;
  bool started = false;
  double episode_return = 0.0;
};

template <Environment Env>
Trajectory collect_rollout(Env& env, const ActorCritic& policy, int n_steps, std::mt19937_64& rng,
                           RolloutCursor& cursor) {
  if (n_steps < 1) throw std::invalid_argument("collect_rollout: n_steps must be >= 1");
  if (!cursor.started) {
    cursor.obs = env.reset();
    cursor.started = true;
    cursor.episode_return = 0.0;
  }
  Trajectory t;
  t.obs.resize(policy.obs_size(), n_steps);
  for (int i = 0; i < n_steps; ++i) {
    if (cursor.obs.size() != policy.obs_size()) throw std::runtime_error("observation size mismatch");
    const auto s = policy.act(cursor.obs, rng);
    t.obs.col(i) = cursor.obs;
    EnvStep step = env.step(s.applied);
    t.actions.push_back(s.action);
    t.log_probs.push_back(s.log_prob);
    t.values.push_back(s.value);
    t.rewards.push_back(step.reward);
    t.dones.push_back(step.done ? 1 : 0);
    cursor.episode_return += step.reward;
    if (step.done) {
      t.episode_returns.push_back(cursor.episode_return);
      cursor.episode_return = 0.0;
      cursor.obs = env.reset();
    } else {
      cursor.obs = std::move(step.obs);
    }
  }
  t.bootstrap_value = t.dones.back() ? 0.0 : policy.value(cursor.obs);
  return t;
}

template <Environment Env>
Trajectory collect_rollout(Env& env, const ActorCritic& policy, int n_steps, std::mt19937_64& rng) {
  RolloutCursor cursor;
  return collect_rollout(env, policy, n_steps, rng, cursor);
}

/// A_t = r_t + gamma * V(s_{t+1}) - V(s_t), with V(s_{t+1}) = 0 when the episode ended at t.
inline std::vector<double> td_advantages(const Trajectory& t, double gamma) {
  const std::size_t n = t.size();
  std::vector<double> adv(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double next = t.dones[i] ? 0.0 : (i + 1 < n ? t.values[i + 1] : t.bootstrap_value);
    adv[i] = t.rewards[i] + gamma * next - t.values[i];
  }
  return adv;
}

inline std::vector<double> gae_advantages(const Trajectory& t, double gamma, double lambda) {
  const std::size_t n = t.size();
  std::vector<double> adv(n);
  double running = 0.0;
  for (std::size_t i = n; i-- > 0;) {
    const double next = t.dones[i] ? 0.0 : (i + 1 < n ? t.values[i + 1] : t.bootstrap_value);
    const double delta = t.rewards[i] + gamma * next - t.values[i];
    running = delta + (t.dones[i] ? 0.0 : gamma * lambda * running);
    adv[i] = running;
  }
  return adv;
}

// ---------------------------------------------------------------------------
// Loss and update
// ---------------------------------------------------------------------------

struct PpoConfig {
  double gamma = 0.99;
  double clip = 0.2;
  double lr = 3e-4;
  int rollout_len = 2048;
  int epochs = 10;
  int minibatch = 64;
  double value_coef = 0.5;
  double entropy_coef = 0.0;
  double max_grad_norm = 0.5;
  bool normalize_advantage = true;
  bool use_gae = false;
  double gae_lambda = 0.95;
  long long total_steps = 50000;
  std::uint64_t seed = 0;
  int checkpoint_every = 0;     // in updates; 0 disables the callback
  int collapse_patience = 10;   // consecutive collapsed updates before stopping; 0 disables
  double collapse_margin = 1.0;  // collapse when avg return < best - margin * max(|best|, 1)

  void validate() const {
    if (!(gamma > 0.0 && gamma <= 1.0)) throw std::invalid_argument("gamma must lie in (0, 1]");
    if (!(clip > 0.0 && clip < 1.0)) throw std::invalid_argument("clip must lie in (0, 1)");
    if (rollout_len < 1 || epochs < 1 || minibatch < 1) throw std::invalid_argument("PPO sizes must be >= 1");
    if (!(lr > 0.0)) throw std::invalid_argument("lr must be positive");
  }
};

/// One minibatch worth of transitions.
struct Batch {
  MatrixXd obs;
  VectorXd actions, old_log_probs, advantages, returns;
};

struct LossTerms {
  double surrogate = 0.0;  // mean clipped objective (to be maximized)
  double value_loss = 0.0;  // mean squared error of the critic
  double entropy = 0.0;
  double total = 0.0;      // -surrogate + value_coef * value_loss - entropy_coef * entropy
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
};

/// Per-transition clipped objective.
inline double clipped_objective(double ratio, double advantage, double eps) {
  return std::min(ratio * advantage, std::clamp(ratio, 1.0 - eps, 1.0 + eps) * advantage);
}

/// Evaluates the loss on a batch; when `accumulate` is set, adds d(total)/d(params) to the gradients.
inline LossTerms ppo_loss(ActorCritic& policy, const Batch& b, double eps, double value_coef, double entropy_coef,
                          bool accumulate) {
  const auto n = b.obs.cols();
  if (n == 0) throw std::invalid_argument("empty batch");
  nn::Mlp<double>::Tape actor_tape, critic_tape;
  const MatrixXd u = policy.actor_output(b.obs, &actor_tape);
  const MatrixXd v = policy.values(b.obs, &critic_tape);
  const bool binary = policy.kind() == ActionKind::Binary;
  const double ls = policy.log_std(), sigma = std::exp(ls);

  MatrixXd d_u(1, n), d_v(1, n);
  double d_log_std = 0.0;
  LossTerms out;
  const double inv_n = 1.0 / double(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const double ui = u(0, i), a = b.actions[i];
    const double logp = policy.log_prob_from_output(ui, a);
    const double ratio = std::exp(logp - b.old_log_probs[i]);
    const double adv = b.advantages[i];
    const double unclipped = ratio * adv;
    const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps) * adv;
    const bool grad_flows = unclipped <= clipped;
    out.surrogate += std::min(unclipped, clipped) * inv_n;
    out.mean_ratio += ratio * inv_n;
    out.clip_fraction += (std::abs(ratio - 1.0) > eps ? 1.0 : 0.0) * inv_n;
    out.approx_kl += ((ratio - 1.0) - (logp - b.old_log_probs[i])) * inv_n;
    // d(-surrogate)/d(logp)
    const double g_logp = grad_flows ? -adv * ratio * inv_n : 0.0;

    double entropy_i = 0.0;
    if (binary) {
      const double p = sigmoid(ui);
      const double logp1 = -softplus(-ui), logp0 = -softplus(ui);
      entropy_i = -(p * logp1 + (1.0 - p) * logp0);
      const double dlogp_du = (a > 0.5 ? 1.0 : 0.0) - p;
      const double dent_du = -ui * p * (1.0 - p);
      d_u(0, i) = g_logp * dlogp_du - entropy_coef * dent_du * inv_n;
    } else {
      const double mu = std::tanh(ui), z = (a - mu) / sigma;
      entropy_i = 0.5 + kLogSqrt2Pi + ls;
      d_u(0, i) = g_logp * (z / sigma) * (1.0 - mu * mu);
      d_log_std += g_logp * (z * z - 1.0) - entropy_coef * inv_n;
    }
    out.entropy += entropy_i * inv_n;
    const double err = v(0, i) - b.returns[i];
    out.value_loss += err * err * inv_n;
    d_v(0, i) = value_coef * 2.0 * err * inv_n;
  }
  out.total = -out.surrogate + value_coef * out.value_loss - entropy_coef * out.entropy;
  if (accumulate) {
    policy.actor().backward(policy.params(), actor_tape, d_u);
    policy.critic().backward(policy.params(), critic_tape, d_v);
    if (auto idx = policy.log_std_index()) policy.params()[*idx].grad(0, 0) += d_log_std;
  }
  return out;
}

struct UpdateDiagnostics {
  double policy_objective = 0.0;  // mean surrogate over all minibatches
  double value_loss = 0.0;
  double entropy = 0.0;
  double mean_ratio = 0.0;
  double clip_fraction = 0.0;
  double approx_kl = 0.0;
  double first_surrogate = 0.0;       // surrogate of the very first minibatch
  double first_mean_advantage = 0.0;  // its mean (normalized) advantage
  int minibatches = 0;
  bool aborted = false;
  std::string abort_reason;
};

inline Batch make_batch(const Trajectory& t, std::span<const std::size_t> idx, const std::vector<double>& adv,
                        const std::vector<double>& returns, bool normalize) {
  Batch b;
  const auto m = static_cast<Eigen::Index>(idx.size());
  b.obs.resize(t.obs.rows(), m);
  b.actions.resize(m);
  b.old_log_probs.resize(m);
  b.advantages.resize(m);
  b.returns.resize(m);
  for (Eigen::Index j = 0; j < m; ++j) {
    const auto i = idx[static_cast<std::size_t>(j)];
    b.obs.col(j) = t.obs.col(static_cast<Eigen::Index>(i));
    b.actions[j] = t.actions[i];
    b.old_log_probs[j] = t.log_probs[i];
    b.advantages[j] = adv[i];
    b.returns[j] = returns[i];
  }
  if (normalize && m > 1) {
    const double mean = b.advantages.mean();
    const double sd = std::sqrt((b.advantages.array() - mean).square().sum() / double(m));
    b.advantages = ((b.advantages.array() - mean) / (sd + 1e-8)).matrix();
  }
  return b;
}

/// Several epochs of minibatch Adam steps on the clipped objective. Restores the
/// pre-update parameters if any loss or parameter turns non-finite.
inline UpdateDiagnostics ppo_update(ActorCritic& policy, nn::Adam<double>& opt, const Trajectory& t,
                                    const std::vector<double>& advantages, const PpoConfig& cfg,
                                    std::mt19937_64& rng) {
  const std::size_t n = t.size();
  if (advantages.size() != n) throw std::invalid_argument("advantage count does not match trajectory");
  std::vector<double> returns(n);
  for (std::size_t i = 0; i < n; ++i) returns[i] = advantages[i] + t.values[i];

  const VectorXd saved = policy.params().flat_values();
  UpdateDiagnostics d;
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto mb = static_cast<std::size_t>(cfg.minibatch);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    for (std::size_t start = 0; start < n; start += mb) {
      const std::span<const std::size_t> idx(order.data() + start, std::min(mb, n - start));
      const Batch b = make_batch(t, idx, advantages, returns, cfg.normalize_advantage);
      policy.params().zero_grad();
      const LossTerms l = ppo_loss(policy, b, cfg.clip, cfg.value_coef, cfg.entropy_coef, true);
      if (!std::isfinite(l.total) || !std::isfinite(policy.params().grad_norm())) {
        policy.params().set_flat_values(saved);
        d.aborted = true;
        d.abort_reason = "non-finite loss in PPO update";
        return d;
      }
      if (d.minibatches == 0) {
        d.first_surrogate = l.surrogate;
        d.first_mean_advantage = b.advantages.mean();
      }
      opt.step(policy.params());
      ++d.minibatches;
      d.policy_objective += l.surrogate;
      d.value_loss += l.value_loss;
      d.entropy += l.entropy;
      d.mean_ratio += l.mean_ratio;
      d.clip_fraction += l.clip_fraction;
      d.approx_kl += l.approx_kl;
    }
  }
  if (!policy.params().all_finite()) {
    policy.params().set_flat_values(saved);
    d.aborted = true;
    d.abort_reason = "non-finite parameters after PPO update";
    return d;
  }
  const double k = 1.0 / double(std::max(d.minibatches, 1));
  d.policy_objective *= k;
  d.value_loss *= k;
  d.entropy *= k;
  d.mean_ratio *= k;
  d.clip_fraction *= k;
  d.approx_kl *= k;
  return d;
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

struct LearningPoint {
  long long step = 0;
  double mean_return = std::numeric_limits<double>::quiet_NaN();  // episodes finished in this rollout
  double clip_fraction = 0.0;
  double value_loss = 0.0;
  double entropy = 0.0;
};

struct TrainResult {
  ActorCritic policy;
  std::vector<LearningPoint> curve;
  bool stopped_early = false;
  std::string stop_reason;
};

inline void write_learning_curve(std::ostream& out, const std::vector<LearningPoint>& curve) {
  out << "step,mean_return,clip_fraction,value_loss\n";
  char buf[160];
  for (const auto& p : curve) {
    std::snprintf(buf, sizeof buf, "%lld,%.9g,%.9g,%.9g\n", p.step, p.mean_return, p.clip_fraction, p.value_loss);
    out << buf;
  }
}

using CheckpointCallback = std::function<void(long long step, const ActorCritic&)>;

/// `make_env(seed)` must return an Environment. Deterministic for a fixed cfg.seed.
template <class EnvFactory>
TrainResult train(EnvFactory&& make_env, PolicyConfig policy_cfg, const PpoConfig& cfg,
                  const CheckpointCallback& on_checkpoint = {}) {
  cfg.validate();
  std::mt19937_64 rng(cfg.seed);
  policy_cfg.seed = rng();
  TrainResult result{ActorCritic(policy_cfg), {}, false, {}};
  if (cfg.total_steps <= 0) return result;

  auto env = make_env(rng());
  nn::Adam<double> opt(nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.max_grad_norm});
  RolloutCursor cursor;
  long long steps = 0;
  int updates = 0, collapsed = 0;
  double best_avg = -std::numeric_limits<double>::infinity();
  std::vector<double> recent;
  VectorXd best_params = result.policy.params().flat_values();

  while (steps < cfg.total_steps) {
    const int n = static_cast<int>(std::min<long long>(cfg.rollout_len, cfg.total_steps - steps));
    const Trajectory traj = collect_rollout(env, result.policy, n, rng, cursor);
    steps += n;
    const auto adv = cfg.use_gae ? gae_advantages(traj, cfg.gamma, cfg.gae_lambda) : td_advantages(traj, cfg.gamma);
    const auto diag = ppo_update(result.policy, opt, traj, adv, cfg, rng);
    ++updates;

    LearningPoint pt;
    pt.step = steps;
    if (!traj.episode_returns.empty())
      pt.mean_return = std::accumulate(traj.episode_returns.begin(), traj.episode_returns.end(), 0.0) /
                       double(traj.episode_returns.size());
    pt.clip_fraction = diag.clip_fraction;
    pt.value_loss = diag.value_loss;
    pt.entropy = diag.entropy;
    result.curve.push_back(pt);

    if (diag.aborted) {
      result.stopped_early = true;
      result.stop_reason = diag.abort_reason;
      break;
    }
    if (on_checkpoint && cfg.checkpoint_every > 0 && updates % cfg.checkpoint_every == 0)
      on_checkpoint(steps, result.policy);

    if (std::isfinite(pt.mean_return)) {
      recent.push_back(pt.mean_return);
      if (recent.size() > 3) recent.erase(recent.begin());
      const double avg = std::accumulate(recent.begin(), recent.end(), 0.0) / double(recent.size());
      if (avg > best_avg) {
        best_avg = avg;
        best_params = result.policy.params().flat_values();
        collapsed = 0;
      } else if (cfg.collapse_patience > 0 && avg < best_avg - cfg.collapse_margin * std::max(std::abs(best_avg), 1.0)) {
        if (++collapsed >= cfg.collapse_patience) {
          result.policy.params().set_flat_values(best_params);
          result.stopped_early = true;
          result.stop_reason = "episode return collapsed; restored best parameters";
          break;
        }
      } else {
        collapsed = 0;
      }
    }
  }
  return result;
}

}  // namespace dualrl::ppo
