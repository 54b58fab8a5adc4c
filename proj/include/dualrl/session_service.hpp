#pragma once

// Study-session orchestration. Every operation appends one or more events to a
// per-session JSONL log and then applies them through the same reducer used
// when a log is replayed from disk, so live state and replayed state agree.
//
// Phase graph:
//   practice1 -> rest1 -> practice2 -> rest2 -> test1 -> questionnaire1
//             -> rest3 -> test2 -> questionnaire2 -> done

#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <condition_variable>
#include <ctime>
#include <cstdint>
#include <deque>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "dualrl/metrics.hpp"
#include "dualrl/ppo.hpp"
#include "dualrl/regulation_env.hpp"
#include "dualrl/task_core.hpp"

namespace dualrl::session {

using json = nlohmann::json;
using Clock = std::chrono::system_clock;
using TimePoint = Clock::time_point;

inline constexpr const char* kSchemaVersion = "dualrl.session.v1";

enum class Phase { Practice1, Rest1, Practice2, Rest2, Test1, Questionnaire1, Rest3, Test2, Questionnaire2, Done };
enum class Group { RL, Random };
enum class Order { ControlFirst, FeedbackFirst };

inline const char* to_string(Phase p) {
  switch (p) {
    case Phase::Practice1: return "practice1";
    case Phase::Rest1: return "rest1";
    case Phase::Practice2: return "practice2";
    case Phase::Rest2: return "rest2";
    case Phase::Test1: return "test1";
    case Phase::Questionnaire1: return "questionnaire1";
    case Phase::Rest3: return "rest3";
    case Phase::Test2: return "test2";
    case Phase::Questionnaire2: return "questionnaire2";
    case Phase::Done: return "done";
  }
  return "?";
}

inline Phase phase_from_string(const std::string& s) {
  for (int i = 0; i <= static_cast<int>(Phase::Done); ++i)
    if (s == to_string(static_cast<Phase>(i))) return static_cast<Phase>(i);
  throw std::invalid_argument("unknown phase: " + s);
}

inline const char* to_string(Group g) { return g == Group::RL ? "RL" : "Random"; }
inline const char* to_string(Order o) { return o == Order::ControlFirst ? "control-first" : "feedback-first"; }

inline Group group_from_string(const std::string& s) {
  if (s == "RL" || s == "rl") return Group::RL;
  if (s == "Random" || s == "random") return Group::Random;
  throw std::invalid_argument("group must be RL or Random");
}

inline Order order_from_string(const std::string& s) {
  if (s == "control-first") return Order::ControlFirst;
  if (s == "feedback-first") return Order::FeedbackFirst;
  throw std::invalid_argument("order must be control-first or feedback-first");
}

inline Phase next_phase(Phase p) {
  if (p == Phase::Done) throw std::logic_error("done has no successor");
  return static_cast<Phase>(static_cast<int>(p) + 1);
}

inline bool is_trial_phase(Phase p) {
  return p == Phase::Practice1 || p == Phase::Practice2 || p == Phase::Test1 || p == Phase::Test2;
}
inline bool is_rest_phase(Phase p) { return p == Phase::Rest1 || p == Phase::Rest2 || p == Phase::Rest3; }
inline bool is_questionnaire_phase(Phase p) { return p == Phase::Questionnaire1 || p == Phase::Questionnaire2; }

// Errors map onto HTTP statuses in the server layer.
struct NotFound : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct Conflict : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ProtocolError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct ValidationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProtocolConfig {
  int practice_trials = 10;
  int test_trials = 100;
  int practice_extension = 10;
  double rest1_s = 10.0;
  double rest2_s = 60.0;
  double rest3_s = 120.0;
  double default_r_init = 3.0;  // used when practice 2 produced no valid response time
  bool sample_rl_policy = false;

  void validate() const {
    if (practice_trials < 1 || test_trials < 1 || practice_extension < 1)
      throw std::invalid_argument("protocol trial counts must be >= 1");
    if (rest1_s < 0 || rest2_s < 0 || rest3_s < 0) throw std::invalid_argument("rest durations must be >= 0");
  }

  json to_json() const {
    return {{"practice_trials", practice_trials}, {"test_trials", test_trials},
            {"practice_extension", practice_extension}, {"rest1_s", rest1_s},
            {"rest2_s", rest2_s}, {"rest3_s", rest3_s},
            {"default_r_init", default_r_init}, {"sample_rl_policy", sample_rl_policy}};
  }

  static ProtocolConfig from_json(const json& j) {
    ProtocolConfig c;
    c.practice_trials = j.at("practice_trials").get<int>();
    c.test_trials = j.at("test_trials").get<int>();
    c.practice_extension = j.at("practice_extension").get<int>();
    c.rest1_s = j.at("rest1_s").get<double>();
    c.rest2_s = j.at("rest2_s").get<double>();
    c.rest3_s = j.at("rest3_s").get<double>();
    c.default_r_init = j.at("default_r_init").get<double>();
    c.sample_rl_policy = j.value("sample_rl_policy", false);
    return c;
  }
};

// ---------------------------------------------------------------------------
// Deterministic per-trial draws
// ---------------------------------------------------------------------------

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline std::uint64_t trial_key(std::uint64_t seed, Phase phase, int trial, std::uint64_t salt) {
  return splitmix64(splitmix64(splitmix64(seed ^ salt) + static_cast<std::uint64_t>(phase)) +
                    static_cast<std::uint64_t>(trial));
}

inline MathQuestion question_for(std::uint64_t seed, Phase phase, int trial) {
  std::mt19937_64 rng(trial_key(seed, phase, trial, 0x51));
  return generate_question(rng);
}

inline bool random_pressure_for(std::uint64_t seed, Phase phase, int trial) {
  std::mt19937_64 rng(trial_key(seed, phase, trial, 0x77));
  return std::bernoulli_distribution(0.5)(rng);
}

inline std::string iso8601(TimePoint t) {
  const auto ms = std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
  const std::time_t secs = static_cast<std::time_t>(ms / 1000);
  std::tm tm{};
  gmtime_r(&secs, &tm);
  char buf[96];
  std::snprintf(buf, sizeof buf, "%04d-%02d-%02dT%02d:%02d:%02d.%03lldZ", tm.tm_year + 1900, tm.tm_mon + 1,
                tm.tm_mday, tm.tm_hour, tm.tm_min, tm.tm_sec, static_cast<long long>(ms % 1000));
  return buf;
}

inline long long epoch_ms(TimePoint t) {
  return std::chrono::duration_cast<std::chrono::milliseconds>(t.time_since_epoch()).count();
}

// ---------------------------------------------------------------------------
// Session state
// ---------------------------------------------------------------------------

struct TrialRecord {
  Phase phase = Phase::Practice1;
  int index = 0;
  MathQuestion question{};
  bool pressure = false;
  std::string served_at;
  std::optional<std::string> answered_at;
  std::optional<bool> answer;
  std::optional<bool> correct;
  std::optional<double> rt_s;
  std::optional<bool> valid;
};

struct QuestionnaireRecord {
  int which = 1;
  int attention = 0;
  int anxiety = 0;
};

struct TrialStub {
  std::string session_id;
  Phase phase = Phase::Practice1;
  int trial_index = 0;
  int trials_in_phase = 0;
  MathQuestion question{};
  bool pressure = false;
  bool feedback_session = false;
};

struct RestWait {
  Phase phase = Phase::Rest1;
  long long retry_after_ms = 0;
};

struct QuestionnaireDue {
  Phase phase = Phase::Questionnaire1;
};

struct SessionFinished {};

using NextResult = std::variant<TrialStub, RestWait, QuestionnaireDue, SessionFinished>;

struct AnswerResult {
  std::optional<bool> correct;  // only disclosed in practice 1
  bool valid = true;
  Phase phase_after = Phase::Practice1;
};

class LiveRegulationHandle;

/// Mutable state of one session; rebuilt from its events by `apply`.
struct SessionState {
  std::string id;
  std::string participant;
  Group group = Group::RL;
  Order order = Order::ControlFirst;
  std::uint64_t seed = 0;
  ProtocolConfig protocol{};
  Phase phase = Phase::Practice1;
  int practice1_cap = 10;
  std::optional<long long> rest_until_ms;
  std::vector<TrialRecord> trials;
  std::vector<QuestionnaireRecord> questionnaires;
  std::optional<RegulationTracker> tracker;  // feedback phase, RL or Random alike
  double r_init = 0.0;
  bool resumed = false;
  json events = json::array();

  Phase feedback_phase() const { return order == Order::FeedbackFirst ? Phase::Test1 : Phase::Test2; }
  Phase control_phase() const { return order == Order::FeedbackFirst ? Phase::Test2 : Phase::Test1; }

  int phase_cap(Phase p) const {
    if (p == Phase::Practice1) return practice1_cap;
    if (p == Phase::Practice2) return protocol.practice_trials;
    return protocol.test_trials;
  }

  int served_in(Phase p) const {
    return static_cast<int>(std::count_if(trials.begin(), trials.end(), [&](const auto& t) { return t.phase == p; }));
  }

  TrialRecord* outstanding() {
    if (!trials.empty() && !trials.back().answer) return &trials.back();
    return nullptr;
  }
  const TrialRecord* outstanding() const {
    if (!trials.empty() && !trials.back().answer) return &trials.back();
    return nullptr;
  }

  std::vector<TrialOutcome> outcomes(Phase p) const {
    std::vector<TrialOutcome> out;
    for (const auto& t : trials)
      if (t.phase == p && t.rt_s) out.push_back({*t.rt_s, t.correct.value_or(false), t.pressure});
    return out;
  }

  double practice2_mean_rt() const {
    double sum = 0.0;
    int n = 0;
    for (const auto& t : trials)
      if (t.phase == Phase::Practice2 && t.rt_s && is_valid_rt(*t.rt_s)) {
        sum += *t.rt_s;
        ++n;
      }
    return n ? sum / n : protocol.default_r_init;
  }

  void apply(const json& e) {
    const std::string type = e.at("type").get<std::string>();
    if (type == "created") {
      id = e.at("id").get<std::string>();
      participant = e.at("participant").get<std::string>();
      group = group_from_string(e.at("group").get<std::string>());
      order = order_from_string(e.at("order").get<std::string>());
      seed = e.at("seed").get<std::uint64_t>();
      protocol = ProtocolConfig::from_json(e.at("protocol"));
      practice1_cap = protocol.practice_trials;
      phase = Phase::Practice1;
    } else if (type == "phase") {
      phase = phase_from_string(e.at("phase").get<std::string>());
      rest_until_ms.reset();
      if (e.contains("rest_until_ms")) rest_until_ms = e.at("rest_until_ms").get<long long>();
      if (phase == feedback_phase()) {
        r_init = e.at("r_init").get<double>();
        RegulationConfig rc;
        rc.trials = protocol.test_trials;
        tracker.emplace(rc);
        tracker->reset(r_init);
      }
    } else if (type == "extended") {
      practice1_cap += e.at("extra").get<int>();
      phase = Phase::Practice1;
      rest_until_ms.reset();
    } else if (type == "served") {
      TrialRecord t;
      t.phase = phase_from_string(e.at("phase").get<std::string>());
      t.index = e.at("trial").get<int>();
      t.question = make_question(e.at("ab").get<int>(), e.at("cd").get<int>(), e.at("e").get<int>());
      t.pressure = e.at("pressure").get<bool>();
      t.served_at = e.at("at").get<std::string>();
      trials.push_back(t);
    } else if (type == "answered") {
      auto* t = outstanding();
      if (!t) throw std::runtime_error("log answers a trial that was never served");
      t->answer = e.at("answer").get<bool>();
      t->correct = e.at("correct").get<bool>();
      t->rt_s = e.at("rt_s").get<double>();
      t->valid = e.at("valid").get<bool>();
      t->answered_at = e.at("at").get<std::string>();
      if (t->phase == feedback_phase() && tracker && !tracker->done()) tracker->record(*t->rt_s);
    } else if (type == "questionnaire") {
      questionnaires.push_back({e.at("which").get<int>(), e.at("attention").get<int>(), e.at("anxiety").get<int>()});
    } else {
      throw std::runtime_error("unknown event type: " + type);
    }
    events.push_back(e);
  }
};

// ---------------------------------------------------------------------------
// Service
// ---------------------------------------------------------------------------

struct ServiceConfig {
  std::filesystem::path data_dir = "sessions";
  ProtocolConfig protocol{};
  std::function<TimePoint()> clock = [] { return Clock::now(); };
};

struct SessionSlot {
  std::mutex mu;
  SessionState state;
  std::ofstream log;
  std::vector<std::weak_ptr<LiveRegulationHandle>> observers;
};

/// Mirrors the feedback phase of a live session as a regulation environment.
/// step() blocks until the participant answers the next feedback trial.
class LiveRegulationHandle {
 public:
  struct LiveStep {
    Eigen::VectorXd observation;
    int action = 0;
    double rt = 0.0;
    double reward = 0.0;
    bool excluded = false;
    bool done = false;
  };

  LiveRegulationHandle(double r_init, RegulationConfig cfg) : tracker_(cfg) { tracker_.reset(r_init); }

  LiveStep step() {
    std::unique_lock lk(mu_);
    cv_.wait(lk, [&] { return !queue_.empty() || closed_; });
    if (queue_.empty()) throw std::runtime_error("live session closed");
    const auto [pressure, rt] = queue_.front();
    queue_.pop_front();
    const auto parts = tracker_.record(rt);
    return {tracker_.observation(), pressure ? 1 : 0, rt, parts.r_s + parts.r_e, parts.excluded, tracker_.done()};
  }

  const RegulationState& state() const { return tracker_.state(); }

  void relay(bool pressure, double rt) {
    {
      std::lock_guard lk(mu_);
      queue_.emplace_back(pressure, rt);
    }
    cv_.notify_all();
  }

  void close() {
    {
      std::lock_guard lk(mu_);
      closed_ = true;
    }
    cv_.notify_all();
  }

 private:
  std::mutex mu_;
  std::condition_variable cv_;
  std::deque<std::pair<bool, double>> queue_;
  bool closed_ = false;
  RegulationTracker tracker_;
};

class SessionService {
 public:
  SessionService(ServiceConfig cfg, std::shared_ptr<const ppo::ActorCritic> rl_policy)
      : cfg_(std::move(cfg)), policy_(std::move(rl_policy)) {
    cfg_.protocol.validate();
    if (policy_ && policy_->kind() != ppo::ActionKind::Binary)
      throw std::invalid_argument("regulation policy must have a binary action head");
    std::filesystem::create_directories(cfg_.data_dir);
    load_existing();
  }

  ~SessionService() {
    std::lock_guard lk(mu_);
    for (auto& [id, slot] : sessions_)
      for (auto& w : slot->observers)
        if (auto h = w.lock()) h->close();
  }

  const ServiceConfig& config() const { return cfg_; }

  /// Returns the new session id.
  std::string create_session(const std::string& participant, Group group, Order order, std::uint64_t seed) {
    if (participant.empty()) throw ValidationError("participant code must not be empty");
    if (group == Group::RL && !policy_) throw ValidationError("no regulation policy is loaded for the RL group");
    std::lock_guard lk(mu_);
    for (const auto& [id, slot] : sessions_)
      if (slot->state.participant == participant) throw Conflict("participant code already used: " + participant);
    char buf[32];
    std::snprintf(buf, sizeof buf, "S%05zu", sessions_.size() + 1);
    const std::string id = buf;
    auto slot = std::make_shared<SessionSlot>();
    slot->log.open(log_path(id), std::ios::app);
    if (!slot->log) throw std::runtime_error("cannot open session log for " + id);
    json e = {{"type", "created"}, {"id", id}, {"participant", participant}, {"group", to_string(group)},
              {"order", to_string(order)}, {"seed", seed}, {"protocol", cfg_.protocol.to_json()},
              {"schema", kSchemaVersion}};
    emit(*slot, e);
    sessions_[id] = slot;
    std::ofstream index(cfg_.data_dir / "index.jsonl", std::ios::app);
    index << json{{"id", id}, {"participant", participant}}.dump() << '\n';
    return id;
  }

  NextResult next_trial(const std::string& id) {
    auto slot = find(id);
    std::lock_guard lk(slot->mu);
    auto& s = slot->state;
    if (auto* t = s.outstanding()) return stub(s, *t);  // resume at the unanswered trial
    if (is_rest_phase(s.phase)) {
      const long long now = epoch_ms(cfg_.clock());
      if (s.rest_until_ms && now < *s.rest_until_ms) return RestWait{s.phase, *s.rest_until_ms - now};
      enter_phase(*slot, next_phase(s.phase));
    }
    if (is_questionnaire_phase(s.phase)) return QuestionnaireDue{s.phase};
    if (s.phase == Phase::Done) return SessionFinished{};
    if (!is_trial_phase(s.phase)) throw ProtocolError("no trial can be served in phase " + std::string(to_string(s.phase)));

    const int index = s.served_in(s.phase);
    const MathQuestion q = question_for(s.seed, s.phase, index);
    const bool pressure = decide_pressure(s, index);
    json e = {{"type", "served"}, {"phase", to_string(s.phase)}, {"trial", index}, {"ab", q.ab}, {"cd", q.cd},
              {"e", q.e}, {"truth", q.truth}, {"pressure", pressure}, {"at", iso8601(cfg_.clock())}};
    emit(*slot, e);
    return stub(s, s.trials.back());
  }

  AnswerResult submit_answer(const std::string& id, bool answer, double rt_ms) {
    if (!std::isfinite(rt_ms) || rt_ms < 0) throw ValidationError("rt_ms must be a non-negative number");
    auto slot = find(id);
    std::lock_guard lk(slot->mu);
    auto& s = slot->state;
    auto* t = s.outstanding();
    if (!t) throw ProtocolError("no trial is outstanding");
    const double rt = rt_ms / 1000.0;
    const bool correct = answer == t->question.truth;
    const bool valid = is_valid_rt(rt);
    const Phase phase = t->phase;
    const bool pressure = t->pressure;
    json e = {{"type", "answered"}, {"phase", to_string(phase)}, {"trial", t->index}, {"answer", answer},
              {"correct", correct}, {"rt_s", rt}, {"valid", valid}, {"at", iso8601(cfg_.clock())}};
    emit(*slot, e);
    if (phase == s.feedback_phase()) notify(*slot, pressure, rt);
    if (s.served_in(phase) >= s.phase_cap(phase)) enter_phase(*slot, next_phase(phase));
    AnswerResult r;
    if (phase == Phase::Practice1) r.correct = correct;
    r.valid = valid;
    r.phase_after = s.phase;
    return r;
  }

  void extend_practice(const std::string& id) {
    auto slot = find(id);
    std::lock_guard lk(slot->mu);
    auto& s = slot->state;
    if (s.phase != Phase::Practice1 && s.phase != Phase::Rest1)
      throw ProtocolError("practice can only be extended during or right after practice 1");
    emit(*slot, {{"type", "extended"}, {"extra", s.protocol.practice_extension}, {"at", iso8601(cfg_.clock())}});
  }

  Phase submit_questionnaire(const std::string& id, int attention, int anxiety) {
    if (attention < 1 || attention > 7 || anxiety < 1 || anxiety > 7)
      throw ValidationError("questionnaire scores must be integers in 1..7");
    auto slot = find(id);
    std::lock_guard lk(slot->mu);
    auto& s = slot->state;
    if (!is_questionnaire_phase(s.phase)) throw ProtocolError("no questionnaire is due");
    const int which = s.phase == Phase::Questionnaire1 ? 1 : 2;
    emit(*slot, {{"type", "questionnaire"}, {"which", which}, {"attention", attention}, {"anxiety", anxiety},
                 {"at", iso8601(cfg_.clock())}});
    enter_phase(*slot, next_phase(s.phase));
    return s.phase;
  }

  Phase phase(const std::string& id) {
    auto slot = find(id);
    std::lock_guard lk(slot->mu);
    return slot->state.phase;
  }

  /// Deterministic report: the event log plus summaries computed with the metrics module.
  std::string export_session(const std::string& id) {
    auto slot = find(id);
    std::lock_guard lk(slot->mu);
    return build_export(slot->state).dump(2) + "\n";
  }

  /// Re-derives every feedback-phase pressure flag from the logged answers and
  /// returns the indices where it disagrees with the served flag.
  std::vector<int> replay_mismatches(const std::string& id) {
    auto slot = find(id);
    std::lock_guard lk(slot->mu);
    return replay_check(slot->state.events);
  }

  std::vector<int> replay_check(const json& events) const {
    SessionState s;
    std::vector<int> mismatches;
    for (const auto& e : events) {
      if (e.at("type") == "served" && phase_from_string(e.at("phase").get<std::string>()) == s.feedback_phase()) {
        const int index = e.at("trial").get<int>();
        if (decide_pressure(s, index) != e.at("pressure").get<bool>()) mismatches.push_back(index);
      }
      s.apply(e);
    }
    return mismatches;
  }

  std::shared_ptr<LiveRegulationHandle> attach_live_session(const std::string& id) {
    auto slot = find(id);
    std::lock_guard lk(slot->mu);
    auto& s = slot->state;
    if (s.phase == Phase::Done) throw ProtocolError("session is closed");
    if (s.phase != s.feedback_phase()) throw ProtocolError("session is not in its feedback phase");
    RegulationConfig rc;
    rc.trials = s.protocol.test_trials;
    auto handle = std::make_shared<LiveRegulationHandle>(s.r_init, rc);
    slot->observers.push_back(handle);
    return handle;
  }

  std::vector<std::string> session_ids() {
    std::lock_guard lk(mu_);
    std::vector<std::string> ids;
    for (const auto& [id, slot] : sessions_) ids.push_back(id);
    return ids;
  }

  std::filesystem::path log_path(const std::string& id) const { return cfg_.data_dir / (id + ".jsonl"); }

 private:
  std::shared_ptr<SessionSlot> find(const std::string& id) {
    std::lock_guard lk(mu_);
    const auto it = sessions_.find(id);
    if (it == sessions_.end()) throw NotFound("unknown session: " + id);
    return it->second;
  }

  void emit(SessionSlot& slot, const json& e) {
    slot.state.apply(e);
    slot.log << e.dump() << '\n';
    slot.log.flush();
  }

  void enter_phase(SessionSlot& slot, Phase p) {
    auto& s = slot.state;
    const Phase previous = s.phase;
    json e = {{"type", "phase"}, {"phase", to_string(p)}, {"at", iso8601(cfg_.clock())}};
    double rest = -1.0;
    if (p == Phase::Rest1) rest = s.protocol.rest1_s;
    if (p == Phase::Rest2) rest = s.protocol.rest2_s;
    if (p == Phase::Rest3) rest = s.protocol.rest3_s;
    if (rest >= 0.0) e["rest_until_ms"] = epoch_ms(cfg_.clock()) + static_cast<long long>(std::llround(rest * 1000.0));
    if (p == s.feedback_phase()) e["r_init"] = s.practice2_mean_rt();
    emit(slot, e);
    if (p == Phase::Done || previous == s.feedback_phase())
      for (auto& w : slot.observers)
        if (auto h = w.lock()) h->close();
  }

  bool decide_pressure(const SessionState& s, int index) const {
    if (s.phase != s.feedback_phase()) return false;
    if (s.group == Group::Random) return random_pressure_for(s.seed, s.phase, index);
    if (!policy_) throw std::runtime_error("RL session without a loaded policy");
    const Eigen::VectorXd obs = s.tracker->observation();
    if (s.protocol.sample_rl_policy) {
      std::mt19937_64 rng(trial_key(s.seed, s.phase, index, 0x99));
      return policy_->act(obs, rng).applied > 0.5;
    }
    return policy_->act_deterministic(obs) > 0.5;
  }

  TrialStub stub(const SessionState& s, const TrialRecord& t) const {
    return {s.id, t.phase, t.index, s.phase_cap(t.phase), t.question, t.pressure, t.phase == s.feedback_phase()};
  }

  void notify(SessionSlot& slot, bool pressure, double rt) {
    for (auto& w : slot.observers)
      if (auto h = w.lock()) h->relay(pressure, rt);
  }

  json build_export(const SessionState& s) const {
    json out;
    out["schema"] = kSchemaVersion;
    out["session"] = {{"id", s.id}, {"participant", s.participant}, {"group", to_string(s.group)},
                      {"order", to_string(s.order)}, {"seed", s.seed}, {"phase", to_string(s.phase)},
                      {"complete", s.phase == Phase::Done}, {"resumed", s.resumed}, {"r_init", s.r_init}};
    out["partial"] = s.phase != Phase::Done;
    out["events"] = s.events;

    json tallies = json::object();
    for (Phase p : {Phase::Practice1, Phase::Practice2, Phase::Test1, Phase::Test2}) {
      int served = 0, answered = 0, correct = 0, valid = 0;
      for (const auto& t : s.trials) {
        if (t.phase != p) continue;
        ++served;
        if (t.answer) ++answered;
        if (t.correct.value_or(false)) ++correct;
        if (t.valid.value_or(false)) ++valid;
      }
      tallies[to_string(p)] = {{"served", served}, {"answered", answered}, {"correct", correct}, {"valid", valid}};
    }
    out["tallies"] = tallies;

    auto summary_for = [&](Phase p, int which) -> std::optional<SessionSummary> {
      const auto trials = s.outcomes(p);
      std::optional<double> attention, anxiety;
      for (const auto& q : s.questionnaires)
        if (q.which == which) {
          attention = q.attention;
          anxiety = q.anxiety;
        }
      try {
        return summarize_session(trials, attention, anxiety);
      } catch (const std::invalid_argument&) {
        return std::nullopt;
      }
    };
    const int control_which = s.control_phase() == Phase::Test1 ? 1 : 2;
    const int feedback_which = 3 - control_which;
    const auto control = summary_for(s.control_phase(), control_which);
    const auto feedback = summary_for(s.feedback_phase(), feedback_which);
    out["summary"] = {{"control", summary_json(control)}, {"feedback", summary_json(feedback)}};
    if (control && feedback) {
      const auto d = session_delta(*control, *feedback);
      out["delta"] = {{"accuracy", delta_json(d.accuracy)}, {"response_time", delta_json(d.rt)},
                      {"attention", delta_json(d.attention)}, {"anxiety", delta_json(d.anxiety)}};
    } else {
      out["delta"] = nullptr;
    }
    out["blocks"] = {{"feedback", blocks_json(s.outcomes(s.feedback_phase()))},
                     {"control", blocks_json(s.outcomes(s.control_phase()))}};
    return out;
  }

  static json opt(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

  static json summary_json(const std::optional<SessionSummary>& s) {
    if (!s) return nullptr;
    return {{"accuracy", s->accuracy}, {"rt", s->rt}, {"attention", opt(s->attention)},
            {"anxiety", opt(s->anxiety)}, {"valid_trials", s->valid_trials}, {"excluded_trials", s->excluded_trials}};
  }

  static json delta_json(const MeasureDelta& d) { return {{"absolute", opt(d.absolute)}, {"relative", opt(d.relative)}}; }

  static json blocks_json(const std::vector<TrialOutcome>& trials) {
    if (trials.size() < static_cast<std::size_t>(kDefaultBlocks)) return nullptr;
    const auto b = block_stats(trials);
    json arr = json::array();
    auto num = [](double v) { return std::isfinite(v) ? json(v) : json(nullptr); };
    for (std::size_t i = 0; i < b.blocks.size(); ++i) {
      const auto& blk = b.blocks[i];
      arr.push_back({{"block", i + 1}, {"trials", blk.trial_count}, {"valid", blk.valid_trials}, {"rt", num(blk.rt)},
                     {"accuracy", num(blk.accuracy)}, {"feedback_fraction", blk.feedback_fraction},
                     {"relative_rt", i ? num(b.relative_rt[i - 1]) : json(0.0)},
                     {"relative_accuracy", i ? num(b.relative_accuracy[i - 1]) : json(0.0)}});
    }
    return arr;
  }

  void load_existing() {
    const auto index_path = cfg_.data_dir / "index.jsonl";
    if (!std::filesystem::exists(index_path)) return;
    std::ifstream index(index_path);
    std::string line;
    while (std::getline(index, line)) {
      if (line.empty()) continue;
      const auto entry = json::parse(line);
      const std::string id = entry.at("id").get<std::string>();
      auto slot = std::make_shared<SessionSlot>();
      std::ifstream log(log_path(id));
      std::string ev;
      while (std::getline(log, ev))
        if (!ev.empty()) slot->state.apply(json::parse(ev));
      slot->state.resumed = slot->state.phase != Phase::Done;
      slot->log.open(log_path(id), std::ios::app);
      sessions_[id] = slot;
    }
  }

  ServiceConfig cfg_;
  std::shared_ptr<const ppo::ActorCritic> policy_;
  std::mutex mu_;
  std::map<std::string, std::shared_ptr<SessionSlot>> sessions_;
};

}  // namespace dualrl::session
