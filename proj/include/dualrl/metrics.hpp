#pragma once

// Evaluation math: MAPE, control-vs-feedback session deltas and chronological
// block analysis of a feedback session.

#include <cmath>
#include <cstddef>
#include <optional>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualrl/synthetic_user.hpp"

namespace dualrl {

/// (1/n) * sum |pred - label| / |label|
inline double mape(std::span<const double> predictions, std::span<const double> labels) {
  if (predictions.size() != labels.size()) throw std::invalid_argument("mape: length mismatch");
  if (labels.empty()) throw std::invalid_argument("mape: empty input");
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == 0.0) throw std::invalid_argument("mape: zero label at index " + std::to_string(i));
    sum += std::abs(predictions[i] - labels[i]) / std::abs(labels[i]);
  }
  return sum / double(labels.size());
}

inline bool is_valid_rt(double rt) { return rt >= kValidRtMin && rt <= kValidRtMax; }

struct TrialOutcome {
  double rt = 0.0;
  bool correct = false;
  bool pressure = false;
};

struct SessionSummary {
  double accuracy = 0.0;
  double rt = 0.0;
  std::optional<double> attention;
  std::optional<double> anxiety;
  std::size_t valid_trials = 0;
  std::size_t excluded_trials = 0;
};

/// Means over trials inside the 0.8-10 s validity window.
inline SessionSummary summarize_session(std::span<const TrialOutcome> trials,
                                        std::optional<double> attention = std::nullopt,
                                        std::optional<double> anxiety = std::nullopt) {
  SessionSummary s;
  double rt_sum = 0.0, acc_sum = 0.0;
  for (const auto& t : trials) {
    if (!is_valid_rt(t.rt)) {
      ++s.excluded_trials;
      continue;
    }
    ++s.valid_trials;
    rt_sum += t.rt;
    acc_sum += t.correct ? 1.0 : 0.0;
  }
  if (s.valid_trials == 0) throw std::invalid_argument("session has no valid trials");
  s.rt = rt_sum / double(s.valid_trials);
  s.accuracy = acc_sum / double(s.valid_trials);
  s.attention = attention;
  s.anxiety = anxiety;
  return s;
}

/// Absolute delta (feedback - control) and relative delta (absolute / control).
struct MeasureDelta {
  std::optional<double> absolute;
  std::optional<double> relative;  // empty when the control value is zero or the measure is absent
};

struct SessionDelta {
  MeasureDelta accuracy;
  MeasureDelta rt;
  MeasureDelta attention;
  MeasureDelta anxiety;
};

namespace detail {
inline MeasureDelta measure_delta(std::optional<double> control, std::optional<double> feedback) {
  MeasureDelta d;
  if (!control || !feedback) return d;
  d.absolute = *feedback - *control;
  if (*control != 0.0) d.relative = (*feedback - *control) / *control;
  return d;
}
}  // namespace detail

inline SessionDelta session_delta(const SessionSummary& control, const SessionSummary& feedback) {
  return {detail::measure_delta(control.accuracy, feedback.accuracy), detail::measure_delta(control.rt, feedback.rt),
          detail::measure_delta(control.attention, feedback.attention),
          detail::measure_delta(control.anxiety, feedback.anxiety)};
}

inline constexpr int kDefaultBlocks = 5;

struct Block {
  std::size_t first_trial = 0;
  std::size_t trial_count = 0;
  std::size_t valid_trials = 0;
  double rt = 0.0;        // NaN when the block has no valid trial
  double accuracy = 0.0;  // NaN when the block has no valid trial
  double feedback_fraction = 0.0;  // over all trials in the block
};

struct BlockStats {
  std::vector<Block> blocks;
  std::vector<double> relative_rt;        // (block_i - block_1) / block_1, i >= 2
  std::vector<double> relative_accuracy;  // same, for accuracy
};

/// Chronological partition into `n_blocks` equal blocks; the last block absorbs the remainder.
/// RT and accuracy use valid trials only; feedback percentage uses every trial served.
inline BlockStats block_stats(std::span<const TrialOutcome> trials, int n_blocks = kDefaultBlocks) {
  if (n_blocks < 1) throw std::invalid_argument("n_blocks must be >= 1");
  if (trials.size() < static_cast<std::size_t>(n_blocks))
    throw std::invalid_argument("block_stats needs at least one trial per block");
  const std::size_t base = trials.size() / static_cast<std::size_t>(n_blocks);
  BlockStats out;
  for (int b = 0; b < n_blocks; ++b) {
    Block blk;
    blk.first_trial = static_cast<std::size_t>(b) * base;
    blk.trial_count = (b + 1 == n_blocks) ? trials.size() - blk.first_trial : base;
    double rt_sum = 0.0, acc_sum = 0.0, fb = 0.0;
    for (std::size_t i = blk.first_trial; i < blk.first_trial + blk.trial_count; ++i) {
      const auto& t = trials[i];
      fb += t.pressure ? 1.0 : 0.0;
      if (!is_valid_rt(t.rt)) continue;
      ++blk.valid_trials;
      rt_sum += t.rt;
      acc_sum += t.correct ? 1.0 : 0.0;
    }
    blk.feedback_fraction = fb / double(blk.trial_count);
    blk.rt = blk.valid_trials ? rt_sum / double(blk.valid_trials) : std::nan("");
    blk.accuracy = blk.valid_trials ? acc_sum / double(blk.valid_trials) : std::nan("");
    out.blocks.push_back(blk);
  }
  const auto& first = out.blocks.front();
  for (std::size_t i = 1; i < out.blocks.size(); ++i) {
    out.relative_rt.push_back((out.blocks[i].rt - first.rt) / first.rt);
    out.relative_accuracy.push_back(first.accuracy != 0.0
                                        ? (out.blocks[i].accuracy - first.accuracy) / first.accuracy
                                        : std::nan(""));
  }
  return out;
}

// ---------------------------------------------------------------------------
// CSV reports
// ---------------------------------------------------------------------------

namespace detail {
inline void put_optional(std::ostream& out, const std::optional<double>& v) {
  if (v) {
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.9g", *v);
    out << buf;
  } else {
    out << "NA";
  }
}
}  // namespace detail

/// Rows mirror the eight delta formulas: kind,measure,value.
inline void write_delta_csv(std::ostream& out, const SessionDelta& d) {
  out << "kind,measure,value\n";
  const std::pair<const char*, const MeasureDelta*> rows[] = {
      {"accuracy", &d.accuracy}, {"response_time", &d.rt}, {"attention", &d.attention}, {"anxiety", &d.anxiety}};
  for (const auto& [name, m] : rows) {
    out << "absolute," << name << ',';
    detail::put_optional(out, m->absolute);
    out << '\n';
  }
  for (const auto& [name, m] : rows) {
    out << "relative," << name << ',';
    detail::put_optional(out, m->relative);
    out << '\n';
  }
}

inline void write_block_csv(std::ostream& out, const BlockStats& s) {
  out << "block,first_trial,trials,valid,rt,accuracy,feedback_fraction,relative_rt,relative_accuracy\n";
  char buf[256];
  for (std::size_t i = 0; i < s.blocks.size(); ++i) {
    const auto& b = s.blocks[i];
    const double rel_rt = i == 0 ? 0.0 : s.relative_rt[i - 1];
    const double rel_acc = i == 0 ? 0.0 : s.relative_accuracy[i - 1];
    std::snprintf(buf, sizeof buf, "%zu,%zu,%zu,%zu,%.9g,%.9g,%.9g,%.9g,%.9g\n", i + 1, b.first_trial, b.trial_count,
                  b.valid_trials, b.rt, b.accuracy, b.feedback_fraction, rel_rt, rel_acc);
    out << buf;
  }
}

}  // namespace dualrl
