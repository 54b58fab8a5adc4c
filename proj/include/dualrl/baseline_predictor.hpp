#pragma once

// No-pressure baseline: choice, calibrated confidence and response time from
// answer-agent features plus the trial number.
//
// Choice: linear max-margin classifier (dual coordinate descent, hinge loss)
// with a Platt sigmoid on its decision value. Response time: ridge regression.
// Both operate on standardized inputs whose statistics are frozen at fit time.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualrl/checkpoint.hpp"
#include "dualrl/metrics.hpp"

namespace dualrl {

struct BaselineRow {
  Eigen::VectorXd features;
  int trial = 0;
  bool choice = false;
  double rt = 0.0;
};

struct BaselinePrediction {
  bool choice = false;
  double confidence = 0.5;  // probability of the predicted choice, in [0.5, 1]
  double rt = 1.0;          // seconds
  bool rt_clamped = false;
};

struct BaselineConfig {
  double svm_c = 0.1;
  int svm_max_epochs = 200;
  double svm_tolerance = 1e-4;
  double ridge_lambda = 1.0;
  double holdout_fraction = 0.2;
  double rt_floor = 0.2;
  double rt_max = 10.0;
  std::uint64_t seed = 0;
};

struct BaselineReport {
  std::size_t train_rows = 0;
  std::size_t holdout_rows = 0;
  double holdout_choice_accuracy = 0.0;
  double holdout_rt_mape = 0.0;
  std::size_t holdout_rt_clamped = 0;
};

struct BaselineFit;

class BaselineModel {
 public:
  BaselineModel() = default;

  Eigen::Index feature_size() const { return mean_.size() == 0 ? 0 : mean_.size() - 1; }

  double decision_value(const Eigen::VectorXd& features, int trial) const {
    return svm_w_.dot(standardize(features, trial)) + svm_b_;
  }

  /// Platt-calibrated probability that the choice is "true".
  double probability_true(const Eigen::VectorXd& features, int trial) const {
    const double f = decision_value(features, trial);
    return 1.0 / (1.0 + std::exp(platt_a_ * f + platt_b_));
  }

  double raw_rt(const Eigen::VectorXd& features, int trial) const {
    return ridge_w_.dot(standardize(features, trial)) + ridge_b_;
  }

  BaselinePrediction predict(const Eigen::VectorXd& features, int trial) const {
    if (features.size() != feature_size())
      throw std::invalid_argument("baseline predict: expected " + std::to_string(feature_size()) +
                                  " features, got " + std::to_string(features.size()));
    const Eigen::VectorXd z = standardize(features, trial);
    BaselinePrediction p;
    const double pt = 1.0 / (1.0 + std::exp(platt_a_ * (svm_w_.dot(z) + svm_b_) + platt_b_));
    p.choice = pt >= 0.5;
    p.confidence = p.choice ? pt : 1.0 - pt;
    const double rt = ridge_w_.dot(z) + ridge_b_;
    p.rt = std::clamp(rt, rt_floor_, rt_max_);
    p.rt_clamped = p.rt != rt;
    return p;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.meta["kind"] = "baseline_predictor";
    ck.tensors["baseline.mean"] = mean_;
    ck.tensors["baseline.scale"] = scale_;
    ck.tensors["baseline.svm_w"] = svm_w_;
    ck.tensors["baseline.ridge_w"] = ridge_w_;
    put_scalar(ck, "baseline.svm_b", svm_b_);
    put_scalar(ck, "baseline.platt_a", platt_a_);
    put_scalar(ck, "baseline.platt_b", platt_b_);
    put_scalar(ck, "baseline.ridge_b", ridge_b_);
    put_scalar(ck, "baseline.rt_floor", rt_floor_);
    put_scalar(ck, "baseline.rt_max", rt_max_);
    return ck;
  }

  static BaselineModel from_checkpoint(const Checkpoint& ck) {
    BaselineModel m;
    m.mean_ = ck.tensor("baseline.mean");
    m.scale_ = ck.tensor("baseline.scale");
    m.svm_w_ = ck.tensor("baseline.svm_w");
    m.ridge_w_ = ck.tensor("baseline.ridge_w");
    m.svm_b_ = get_scalar(ck, "baseline.svm_b");
    m.platt_a_ = get_scalar(ck, "baseline.platt_a");
    m.platt_b_ = get_scalar(ck, "baseline.platt_b");
    m.ridge_b_ = get_scalar(ck, "baseline.ridge_b");
    m.rt_floor_ = get_scalar(ck, "baseline.rt_floor");
    m.rt_max_ = get_scalar(ck, "baseline.rt_max");
    return m;
  }

  friend bool operator==(const BaselineModel& a, const BaselineModel& b) {
    return a.to_checkpoint() == b.to_checkpoint();
  }

 private:
  friend struct BaselineFitter;
  friend BaselineFit fit_baseline(std::span<const BaselineRow> rows, const BaselineConfig& cfg);

  Eigen::VectorXd standardize(const Eigen::VectorXd& features, int trial) const {
    Eigen::VectorXd x(mean_.size());
    x.head(features.size()) = features;
    x[x.size() - 1] = double(trial);
    return ((x - mean_).array() / scale_.array()).matrix();
  }

  Eigen::VectorXd mean_, scale_;
  Eigen::VectorXd svm_w_;
  double svm_b_ = 0.0;
  double platt_a_ = -1.0, platt_b_ = 0.0;
  Eigen::VectorXd ridge_w_;
  double ridge_b_ = 0.0;
  double rt_floor_ = 0.2, rt_max_ = 10.0;
};

struct BaselineFit {
  BaselineModel model;
  BaselineReport report;
};

struct BaselineFitter {
  // Dual coordinate descent for the L1-loss linear SVM (bias folded in as a constant feature).
  static void fit_svm(const Eigen::MatrixXd& z, const std::vector<double>& y, const BaselineConfig& cfg,
                      std::mt19937_64& rng, Eigen::VectorXd& w_out, double& b_out) {
    const Eigen::Index n = z.cols(), d = z.rows();
    Eigen::VectorXd w = Eigen::VectorXd::Zero(d + 1);
    std::vector<double> alpha(static_cast<std::size_t>(n), 0.0);
    std::vector<double> qii(static_cast<std::size_t>(n));
    for (Eigen::Index i = 0; i < n; ++i) qii[static_cast<std::size_t>(i)] = z.col(i).squaredNorm() + 1.0;
    std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    for (int epoch = 0; epoch < cfg.svm_max_epochs; ++epoch) {
      std::shuffle(order.begin(), order.end(), rng);
      double max_pg = -1e300, min_pg = 1e300;
      for (Eigen::Index i : order) {
        const auto si = static_cast<std::size_t>(i);
        const double g = y[si] * (w.head(d).dot(z.col(i)) + w[d]) - 1.0;
        double pg = g;
        if (alpha[si] == 0.0) pg = std::min(g, 0.0);
        else if (alpha[si] == cfg.svm_c) pg = std::max(g, 0.0);
        max_pg = std::max(max_pg, pg);
        min_pg = std::min(min_pg, pg);
        if (std::abs(pg) > 1e-12) {
          const double old = alpha[si];
          alpha[si] = std::clamp(old - g / qii[si], 0.0, cfg.svm_c);
          const double delta = (alpha[si] - old) * y[si];
          w.head(d) += delta * z.col(i);
          w[d] += delta;
        }
      }
      if (max_pg - min_pg < cfg.svm_tolerance) break;
    }
    w_out = w.head(d);
    b_out = w[d];
  }

  // Platt's sigmoid fit with his target smoothing, by Newton's method with backtracking.
  static void fit_platt(const std::vector<double>& f, const std::vector<double>& y, double& a_out, double& b_out) {
    double prior1 = 0, prior0 = 0;
    for (double v : y) (v > 0 ? prior1 : prior0) += 1.0;
    const double hi = (prior1 + 1.0) / (prior1 + 2.0), lo = 1.0 / (prior0 + 2.0);
    std::vector<double> t(y.size());
    for (std::size_t i = 0; i < y.size(); ++i) t[i] = y[i] > 0 ? hi : lo;
    double a = 0.0, b = std::log((prior0 + 1.0) / (prior1 + 1.0));
    auto objective = [&](double aa, double bb) {
      double s = 0.0;
      for (std::size_t i = 0; i < f.size(); ++i) {
        const double fa = f[i] * aa + bb;
        s += fa >= 0 ? t[i] * fa + std::log1p(std::exp(-fa)) : (t[i] - 1.0) * fa + std::log1p(std::exp(fa));
      }
      return s;
    };
    double fval = objective(a, b);
    for (int it = 0; it < 100; ++it) {
      double h11 = 1e-12, h22 = 1e-12, h21 = 0, g1 = 0, g2 = 0;
      for (std::size_t i = 0; i < f.size(); ++i) {
        const double fa = f[i] * a + b;
        const double p = fa >= 0 ? std::exp(-fa) / (1.0 + std::exp(-fa)) : 1.0 / (1.0 + std::exp(fa));
        const double q = 1.0 - p;
        const double d2 = p * q;
        h11 += f[i] * f[i] * d2;
        h22 += d2;
        h21 += f[i] * d2;
        const double d1 = t[i] - p;
        g1 += f[i] * d1;
        g2 += d1;
      }
      if (std::abs(g1) < 1e-7 && std::abs(g2) < 1e-7) break;
      const double det = h11 * h22 - h21 * h21;
      const double da = -(h22 * g1 - h21 * g2) / det;
      const double db = -(-h21 * g1 + h11 * g2) / det;
      const double gd = g1 * da + g2 * db;
      double step = 1.0;
      while (step >= 1e-10) {
        const double na = a + step * da, nb = b + step * db;
        const double nf = objective(na, nb);
        if (nf < fval + 1e-4 * step * gd) {
          a = na;
          b = nb;
          fval = nf;
          break;
        }
        step /= 2.0;
      }
      if (step < 1e-10) break;
    }
    a_out = a;
    b_out = b;
  }
};

/// Fits on a seeded random (1 - holdout_fraction) split and reports metrics on the rest.
inline BaselineFit fit_baseline(std::span<const BaselineRow> rows, const BaselineConfig& cfg = {}) {
  if (rows.size() < 50) throw std::invalid_argument("fit_baseline needs at least 50 rows");
  const Eigen::Index dim = rows.front().features.size();
  bool seen_true = false, seen_false = false;
  for (const auto& r : rows) {
    if (r.features.size() != dim) throw std::invalid_argument("fit_baseline: inconsistent feature length");
    if (!r.features.allFinite()) throw std::invalid_argument("fit_baseline: non-finite feature");
    if (!std::isfinite(r.rt) || r.rt <= 0.0) throw std::invalid_argument("fit_baseline: invalid response time");
    (r.choice ? seen_true : seen_false) = true;
  }
  if (!seen_true || !seen_false) throw std::invalid_argument("fit_baseline: both choice classes are required");

  std::mt19937_64 rng(cfg.seed);
  std::vector<std::size_t> order(rows.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_hold = static_cast<std::size_t>(std::floor(cfg.holdout_fraction * double(rows.size())));
  const std::vector<std::size_t> hold(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_hold));
  const std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_hold), order.end());

  const Eigen::Index d = dim + 1;
  const auto n = static_cast<Eigen::Index>(train.size());
  Eigen::MatrixXd x(d, n);
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& r = rows[train[static_cast<std::size_t>(j)]];
    x.col(j).head(dim) = r.features;
    x(dim, j) = double(r.trial);
  }

  BaselineModel m;
  m.mean_ = x.rowwise().mean();
  m.scale_ = ((x.colwise() - m.mean_).array().square().rowwise().sum() / double(n)).sqrt().matrix();
  for (Eigen::Index i = 0; i < d; ++i)
    if (!(m.scale_[i] > 1e-12)) m.scale_[i] = 1.0;
  const Eigen::MatrixXd z = ((x.colwise() - m.mean_).array().colwise() / m.scale_.array()).matrix();

  std::vector<double> y(static_cast<std::size_t>(n)), rt(static_cast<std::size_t>(n));
  bool train_true = false, train_false = false;
  for (Eigen::Index j = 0; j < n; ++j) {
    const auto& r = rows[train[static_cast<std::size_t>(j)]];
    y[static_cast<std::size_t>(j)] = r.choice ? 1.0 : -1.0;
    rt[static_cast<std::size_t>(j)] = r.rt;
    (r.choice ? train_true : train_false) = true;
  }
  if (!train_true || !train_false) throw std::invalid_argument("fit_baseline: training split lost a choice class");

  BaselineFitter::fit_svm(z, y, cfg, rng, m.svm_w_, m.svm_b_);
  std::vector<double> dec(static_cast<std::size_t>(n));
  for (Eigen::Index j = 0; j < n; ++j) dec[static_cast<std::size_t>(j)] = m.svm_w_.dot(z.col(j)) + m.svm_b_;
  BaselineFitter::fit_platt(dec, y, m.platt_a_, m.platt_b_);

  // Ridge on centered targets; the intercept is not penalized.
  const Eigen::Map<const Eigen::VectorXd> rtv(rt.data(), n);
  const double rt_mean = rtv.mean();
  Eigen::MatrixXd gram = z * z.transpose();
  gram.diagonal().array() += cfg.ridge_lambda;
  m.ridge_w_ = gram.ldlt().solve(z * (rtv.array() - rt_mean).matrix());
  m.ridge_b_ = rt_mean;
  m.rt_floor_ = cfg.rt_floor;
  m.rt_max_ = cfg.rt_max;

  BaselineFit out{std::move(m), {}};
  out.report.train_rows = train.size();
  out.report.holdout_rows = hold.size();
  if (!hold.empty()) {
    std::vector<double> pred, label;
    double correct = 0.0;
    for (auto i : hold) {
      const auto p = out.model.predict(rows[i].features, rows[i].trial);
      correct += (p.choice == rows[i].choice) ? 1.0 : 0.0;
      out.report.holdout_rt_clamped += p.rt_clamped ? 1 : 0;
      pred.push_back(p.rt);
      label.push_back(rows[i].rt);
    }
    out.report.holdout_choice_accuracy = correct / double(hold.size());
    out.report.holdout_rt_mape = mape(pred, label);
  }
  return out;
}

}  // namespace dualrl
