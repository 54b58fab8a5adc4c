#pragma once

// Parametric stand-in for recorded participants. Response time follows
//
//   rt = clamp(mu0 + fatigue * i - arousal * [pressure] + anxiety_gain * x + noise, 0.8, 10)
//
// where x grows by one per pressured trial and decays by `recovery` per
// unpressured trial. Accuracy does not depend on pressure.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <istream>
#include <limits>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualrl/task_core.hpp"

namespace dualrl {

inline constexpr double kValidRtMin = 0.8;
inline constexpr double kValidRtMax = 10.0;

struct SyntheticUserConfig {
  double base_rt = 3.0;        // mu0, seconds
  double noise_sd = 0.3;       // sigma, seconds
  double accuracy = 0.95;      // p_acc
  double arousal_gain = 0.4;   // g_a, speed-up on a pressured trial
  double anxiety_gain = 0.15;  // g_x, slow-down per unit of anxiety
  double recovery = 1.0;       // rho, anxiety decay per unpressured trial
  double fatigue = 0.002;      // seconds per trial

  void validate() const {
    if (!(base_rt >= 1.0 && base_rt <= 6.0)) throw std::invalid_argument("base_rt must lie in [1, 6]");
    if (!(accuracy > 0.5 && accuracy <= 1.0)) throw std::invalid_argument("accuracy must lie in (0.5, 1]");
    if (arousal_gain < 0 || anxiety_gain < 0 || recovery < 0)
      throw std::invalid_argument("gains and recovery must be non-negative");
    if (noise_sd < 0) throw std::invalid_argument("noise_sd must be non-negative");
  }

  SyntheticUserConfig deterministic() const {
    auto c = *this;
    c.noise_sd = 0.0;
    return c;
  }
};

/// Distribution over users: base response time is drawn uniformly per user.
struct PopulationConfig {
  SyntheticUserConfig traits{};
  double base_rt_min = 2.0;
  double base_rt_max = 4.0;

  SyntheticUserConfig sample(std::mt19937_64& rng) const {
    auto c = traits;
    c.base_rt = std::uniform_real_distribution<double>(base_rt_min, base_rt_max)(rng);
    return c;
  }
};

struct SyntheticResponse {
  bool choice = false;
  double rt = 0.0;
};

class SyntheticUser {
 public:
  SyntheticUser(SyntheticUserConfig cfg, std::uint64_t seed) : cfg_(cfg), rng_(seed) { cfg_.validate(); }

  const SyntheticUserConfig& config() const { return cfg_; }
  double anxiety() const { return anxiety_; }
  int trial_index() const { return trial_; }

  /// Pre-noise response time for the next trial.
  double expected_rt(bool pressure_on) const {
    const double rt = cfg_.base_rt + cfg_.fatigue * trial_ - (pressure_on ? cfg_.arousal_gain : 0.0) +
                      cfg_.anxiety_gain * anxiety_;
    return std::clamp(rt, kValidRtMin, kValidRtMax);
  }

  SyntheticResponse respond(const MathQuestion& q, bool pressure_on) {
    double noise = 0.0;
    if (cfg_.noise_sd > 0.0) noise = std::normal_distribution<double>(0.0, cfg_.noise_sd)(rng_);
    const double raw = cfg_.base_rt + cfg_.fatigue * trial_ - (pressure_on ? cfg_.arousal_gain : 0.0) +
                       cfg_.anxiety_gain * anxiety_ + noise;
    const bool correct = std::bernoulli_distribution(cfg_.accuracy)(rng_);
    anxiety_ = pressure_on ? anxiety_ + 1.0 : std::max(0.0, anxiety_ - cfg_.recovery);
    ++trial_;
    return {correct ? q.truth : !q.truth, std::clamp(raw, kValidRtMin, kValidRtMax)};
  }

 private:
  SyntheticUserConfig cfg_;
  std::mt19937_64 rng_;
  double anxiety_ = 0.0;
  int trial_ = 0;
};

/// Mean response time of a deterministic user over a fixed pressure schedule.
inline double schedule_mean_rt(const SyntheticUserConfig& cfg, const std::vector<bool>& schedule) {
  if (schedule.empty()) throw std::invalid_argument("empty schedule");
  SyntheticUser user(cfg.deterministic(), 0);
  const MathQuestion q = make_question(50, 50, 2);
  double sum = 0.0;
  for (bool p : schedule) sum += user.respond(q, p).rt;
  return sum / double(schedule.size());
}

struct ScheduleSearchResult {
  std::vector<bool> schedule;
  double mean_rt = 0.0;
};

inline constexpr int kMaxSearchHorizon = 20;

/// Exhaustive search over all 2^H pressure schedules of a noise-free user.
/// Ties keep the lexicographically smallest schedule (bit i = trial i).
inline ScheduleSearchResult optimal_short_horizon_policy(const SyntheticUserConfig& cfg, int horizon) {
  if (horizon < 1) throw std::invalid_argument("horizon must be >= 1");
  if (horizon > kMaxSearchHorizon)
    throw std::invalid_argument("horizon exceeds exhaustive search bound of " + std::to_string(kMaxSearchHorizon));
  ScheduleSearchResult best;
  best.mean_rt = std::numeric_limits<double>::infinity();
  std::vector<bool> s(static_cast<std::size_t>(horizon));
  for (std::uint32_t mask = 0; mask < (1u << horizon); ++mask) {
    for (int i = 0; i < horizon; ++i) s[static_cast<std::size_t>(i)] = (mask >> i) & 1u;
    const double m = schedule_mean_rt(cfg, s);
    if (m < best.mean_rt - 1e-12) best = {s, m};
  }
  return best;
}

// ---------------------------------------------------------------------------
// Dataset
// ---------------------------------------------------------------------------

struct DatasetRow {
  int user_id = 0;
  int trial = 0;
  MathQuestion question{};
  bool pressure = false;
  bool choice = false;
  double rt = 0.0;
};

/// n_users x trials_per_user rows; each trial is pressured with probability 0.5.
inline std::vector<DatasetRow> generate_dataset(int n_users, int trials_per_user, const PopulationConfig& population,
                                                std::uint64_t seed) {
  if (n_users < 1) throw std::invalid_argument("n_users must be >= 1");
  if (trials_per_user < 1) throw std::invalid_argument("trials_per_user must be >= 1");
  std::mt19937_64 master(seed);
  std::vector<DatasetRow> rows;
  rows.reserve(static_cast<std::size_t>(n_users) * trials_per_user);
  for (int u = 0; u < n_users; ++u) {
    const auto traits = population.sample(master);
    SyntheticUser user(traits, master());
    QuestionGenerator questions(master());
    std::mt19937_64 schedule_rng(master());
    std::bernoulli_distribution coin(0.5);
    for (int t = 0; t < trials_per_user; ++t) {
      const auto q = questions.next();
      const bool pressure = coin(schedule_rng);
      const auto r = user.respond(q, pressure);
      rows.push_back({u, t, q, pressure, r.choice, r.rt});
    }
  }
  return rows;
}

inline const char* kDatasetHeader = "user_id,trial,ab,cd,e,pressure,choice,rt";

inline void write_dataset(std::ostream& out, const std::vector<DatasetRow>& rows) {
  out << kDatasetHeader << '\n';
  char buf[32];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.6f", r.rt);
    out << r.user_id << ',' << r.trial << ',' << r.question.ab << ',' << r.question.cd << ',' << r.question.e << ','
        << (r.pressure ? 1 : 0) << ',' << (r.choice ? 1 : 0) << ',' << buf << '\n';
  }
}

inline std::vector<DatasetRow> read_dataset(std::istream& in) {
  std::vector<DatasetRow> rows;
  std::string line;
  bool header_seen = false;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    if (!header_seen) {
      if (line != kDatasetHeader) throw std::runtime_error("dataset header mismatch: " + line);
      header_seen = true;
      continue;
    }
    for (char& c : line)
      if (c == ',') c = ' ';
    std::istringstream row(line);
    DatasetRow r;
    int ab = 0, cd = 0, e = 0, p = 0, ch = 0;
    if (!(row >> r.user_id >> r.trial >> ab >> cd >> e >> p >> ch >> r.rt))
      throw std::runtime_error("dataset line " + std::to_string(lineno) + ": malformed record");
    r.question = make_question(ab, cd, e);
    r.pressure = p != 0;
    r.choice = ch != 0;
    rows.push_back(r);
  }
  if (!header_seen) throw std::runtime_error("dataset is empty");
  return rows;
}

}  // namespace dualrl
