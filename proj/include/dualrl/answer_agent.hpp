#pragma once

// Character-level LSTM that reads an encoded question and predicts the signed
// remainder class (17 classes). The final hidden state doubles as the feature
// vector consumed by the baseline predictor.
//
// Training adds two auxiliary heads on every step's hidden state: the residues
// of the partial difference read so far (for every modulus 2..9) and its sign.
// They shape the recurrence toward carrying modular state; inference ignores them.

#include <Eigen/Dense>

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualrl/checkpoint.hpp"
#include "dualrl/nn.hpp"
#include "dualrl/task_core.hpp"

namespace dualrl {

inline constexpr int kAnswerHiddenWidth = 256;
inline constexpr int kAuxModuli = 8;      // moduli 2..9
inline constexpr int kAuxResidues = 9;    // residues 0..8
inline constexpr int kAuxSignClasses = 3;  // negative, zero, positive
inline constexpr int kAuxIgnore = -1;

struct AnswerAgentConfig {
  int hidden = kAnswerHiddenWidth;
  int embed = 16;
  int epochs = 60;
  int batch = 32;
  double lr = 1e-3;
  double aux_weight = 1.0;        // 0 trains on the answer label alone
  double accuracy_floor = 0.99;   // train accuracy required at the end
  double max_grad_norm = 0.0;
  std::uint64_t seed = 0;
};

struct AnswerTrainingReport {
  int epochs = 0;
  std::vector<double> epoch_loss;      // mean answer cross-entropy per epoch
  std::vector<double> epoch_accuracy;  // train accuracy measured after each epoch
  double final_train_accuracy = 0.0;
};

class TrainingFailure : public std::runtime_error {
 public:
  TrainingFailure(const std::string& what, AnswerTrainingReport report)
      : std::runtime_error(what), report_(std::move(report)) {}
  const AnswerTrainingReport& report() const { return report_; }

 private:
  AnswerTrainingReport report_;
};

/// Per-step auxiliary targets for one question.
struct AuxTargets {
  std::array<std::array<int, kAuxModuli>, kEncodedLength> residue{};
  std::array<int, kEncodedLength> sign{};
};

inline AuxTargets aux_targets(const MathQuestion& q) {
  const int a = q.ab / 10, c = q.cd / 10;
  const int d = q.ab - q.cd;
  const std::array<int, kEncodedLength> partial{10 * a, q.ab, q.ab, q.ab - 10 * c, d, d, d, d};
  auto sgn = [](int v) { return v < 0 ? 0 : (v == 0 ? 1 : 2); };
  AuxTargets t;
  for (std::size_t s = 0; s < kEncodedLength; ++s) {
    for (int m = 0; m < kAuxModuli; ++m) {
      const int mod = m + 2;
      t.residue[s][static_cast<std::size_t>(m)] = ((partial[s] % mod) + mod) % mod;
    }
    t.sign[s] = s < 3 ? kAuxIgnore : (s == 3 ? sgn(a - c) : sgn(d));
  }
  return t;
}

template <class Scalar = float>
class AnswerAgentT {
 public:
  using M = nn::Mat<Scalar>;
  using V = nn::Vec<Scalar>;

  struct LossParts {
    double answer = 0.0;   // mean cross-entropy of the answer head
    double residue = 0.0;  // mean cross-entropy over all (step, modulus) residue targets
    double sign = 0.0;     // mean cross-entropy over non-ignored sign targets
    double total = 0.0;
    int correct = 0;
  };

  AnswerAgentT() = default;

  explicit AnswerAgentT(const AnswerAgentConfig& cfg) : cfg_(cfg) {
    if (cfg.hidden < 1 || cfg.embed < 1) throw std::invalid_argument("answer agent widths must be >= 1");
    std::mt19937_64 rng(cfg.seed);
    const int h = cfg.hidden, g = 4 * cfg.hidden;
    embed_ = params_.add("answer.embed", cfg.embed, kVocabSize);
    wx_ = params_.add("answer.lstm.wx", g, cfg.embed);
    wh_ = params_.add("answer.lstm.wh", g, h);
    b_ = params_.add("answer.lstm.b", g, 1);
    head_w_ = params_.add("answer.head.w", kNumAnswerClasses, h);
    head_b_ = params_.add("answer.head.b", kNumAnswerClasses, 1);
    res_w_ = params_.add("answer.aux_residue.w", kAuxModuli * kAuxResidues, h);
    res_b_ = params_.add("answer.aux_residue.b", kAuxModuli * kAuxResidues, 1);
    sign_w_ = params_.add("answer.aux_sign.w", kAuxSignClasses, h);
    sign_b_ = params_.add("answer.aux_sign.b", kAuxSignClasses, 1);

    std::normal_distribution<double> normal(0.0, 1.0);
    for (Eigen::Index i = 0; i < params_[embed_].value.size(); ++i)
      params_[embed_].value.data()[i] = static_cast<Scalar>(normal(rng));
    const double k = 1.0 / std::sqrt(double(h));
    for (auto idx : {wx_, wh_, b_, head_w_, head_b_, res_w_, res_b_, sign_w_, sign_b_}) {
      std::uniform_real_distribution<double> u(-k, k);
      auto& v = params_[idx].value;
      for (Eigen::Index i = 0; i < v.size(); ++i) v.data()[i] = static_cast<Scalar>(u(rng));
    }
    params_[b_].value.block(h, 0, h, 1).array() += Scalar(1);  // forget-gate bias
  }

  const AnswerAgentConfig& config() const { return cfg_; }
  int hidden_width() const { return cfg_.hidden; }
  nn::ParameterSet<Scalar>& params() { return params_; }
  const nn::ParameterSet<Scalar>& params() const { return params_; }

  /// Class probabilities for each question (17 x batch).
  M probabilities(std::span<const MathQuestion> qs) const {
    Tape tape;
    forward(qs, tape);
    return nn::softmax_columns<Scalar>(logits(tape));
  }

  Eigen::VectorXd probabilities(const MathQuestion& q) const {
    return probabilities(std::span<const MathQuestion>(&q, 1)).col(0).template cast<double>();
  }

  int answer(const MathQuestion& q) const {
    Tape tape;
    forward(std::span<const MathQuestion>(&q, 1), tape);
    Eigen::Index best = 0;
    logits(tape).col(0).maxCoeff(&best);
    return static_cast<int>(best);
  }

  std::vector<int> answer_batch(std::span<const MathQuestion> qs) const {
    std::vector<int> out;
    out.reserve(qs.size());
    constexpr std::size_t kChunk = 512;
    for (std::size_t start = 0; start < qs.size(); start += kChunk) {
      const auto part = qs.subspan(start, std::min(kChunk, qs.size() - start));
      Tape tape;
      forward(part, tape);
      const M z = logits(tape);
      for (Eigen::Index j = 0; j < z.cols(); ++j) {
        Eigen::Index best = 0;
        z.col(j).maxCoeff(&best);
        out.push_back(static_cast<int>(best));
      }
    }
    return out;
  }

  /// Final-step hidden state.
  Eigen::VectorXd extract_features(const MathQuestion& q) const {
    Tape tape;
    forward(std::span<const MathQuestion>(&q, 1), tape);
    return tape.h.back().col(0).template cast<double>();
  }

  Eigen::MatrixXd extract_features(std::span<const MathQuestion> qs) const {
    Eigen::MatrixXd out(cfg_.hidden, static_cast<Eigen::Index>(qs.size()));
    constexpr std::size_t kChunk = 512;
    for (std::size_t start = 0; start < qs.size(); start += kChunk) {
      const auto part = qs.subspan(start, std::min(kChunk, qs.size() - start));
      Tape tape;
      forward(part, tape);
      out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(part.size())) =
          tape.h.back().template cast<double>();
    }
    return out;
  }

  double accuracy(std::span<const MathQuestion> qs) const {
    if (qs.empty()) throw std::invalid_argument("accuracy of an empty bank");
    const auto pred = answer_batch(qs);
    std::size_t hit = 0;
    for (std::size_t i = 0; i < qs.size(); ++i) hit += pred[i] == answer_class(qs[i]) ? 1 : 0;
    return double(hit) / double(qs.size());
  }

  /// Loss on a batch; with `accumulate` the gradients of `total` are added to params().
  LossParts loss(std::span<const MathQuestion> qs, double aux_weight, bool accumulate) {
    if (qs.empty()) throw std::invalid_argument("empty batch");
    Tape tape;
    forward(qs, tape);
    const auto B = static_cast<Eigen::Index>(qs.size());
    const int H = cfg_.hidden;
    const Scalar inv_b = Scalar(1) / Scalar(B);
    LossParts out;

    std::vector<AuxTargets> aux;
    aux.reserve(qs.size());
    int sign_count = 0;
    for (const auto& q : qs) {
      aux.push_back(aux_targets(q));
      for (std::size_t s = 0; s < kEncodedLength; ++s) sign_count += aux.back().sign[s] != kAuxIgnore ? 1 : 0;
    }

    // Answer head on the final hidden state.
    const M p = nn::softmax_columns<Scalar>(logits(tape));
    M d_logits = p;
    for (Eigen::Index j = 0; j < B; ++j) {
      const int y = answer_class(qs[static_cast<std::size_t>(j)]);
      out.answer -= std::log(std::max<double>(p(y, j), 1e-30));
      d_logits(y, j) -= Scalar(1);
      Eigen::Index best = 0;
      p.col(j).maxCoeff(&best);
      out.correct += best == y ? 1 : 0;
    }
    out.answer /= double(B);
    d_logits *= inv_b;

    std::vector<M> dh(kEncodedLength, M::Zero(H, B));
    if (accumulate) {
      params_[head_w_].grad.noalias() += d_logits * tape.h.back().transpose();
      params_[head_b_].grad.col(0) += d_logits.rowwise().sum();
      dh.back().noalias() += params_[head_w_].value.transpose() * d_logits;
    }

    if (aux_weight != 0.0) {
      const Scalar res_scale = Scalar(aux_weight / double(B * kAuxModuli * Eigen::Index(kEncodedLength)));
      const Scalar sign_scale = sign_count ? Scalar(aux_weight / double(sign_count)) : Scalar(0);
      const auto& rw = params_[res_w_].value;
      const auto& sw = params_[sign_w_].value;
      for (std::size_t s = 0; s < kEncodedLength; ++s) {
        const M& h = tape.h[s];
        M zr = rw * h;
        zr.colwise() += params_[res_b_].value.col(0);
        M dzr(zr.rows(), B);
        for (int m = 0; m < kAuxModuli; ++m) {
          const auto rows = zr.middleRows(m * kAuxResidues, kAuxResidues);
          const M pm = nn::softmax_columns<Scalar>(M(rows));
          M dm = pm;
          for (Eigen::Index j = 0; j < B; ++j) {
            const int y = aux[static_cast<std::size_t>(j)].residue[s][static_cast<std::size_t>(m)];
            out.residue -= std::log(std::max<double>(pm(y, j), 1e-30));
            dm(y, j) -= Scalar(1);
          }
          dzr.middleRows(m * kAuxResidues, kAuxResidues) = dm * res_scale;
        }
        M zs = sw * h;
        zs.colwise() += params_[sign_b_].value.col(0);
        const M ps = nn::softmax_columns<Scalar>(zs);
        M dzs = M::Zero(kAuxSignClasses, B);
        for (Eigen::Index j = 0; j < B; ++j) {
          const int y = aux[static_cast<std::size_t>(j)].sign[s];
          if (y == kAuxIgnore) continue;
          out.sign -= std::log(std::max<double>(ps(y, j), 1e-30));
          dzs.col(j) = ps.col(j) * sign_scale;
          dzs(y, j) -= sign_scale;
        }
        if (accumulate) {
          params_[res_w_].grad.noalias() += dzr * h.transpose();
          params_[res_b_].grad.col(0) += dzr.rowwise().sum();
          params_[sign_w_].grad.noalias() += dzs * h.transpose();
          params_[sign_b_].grad.col(0) += dzs.rowwise().sum();
          dh[s].noalias() += rw.transpose() * dzr;
          dh[s].noalias() += sw.transpose() * dzs;
        }
      }
      out.residue /= double(B * kAuxModuli * Eigen::Index(kEncodedLength));
      if (sign_count) out.sign /= double(sign_count);
    }
    out.total = out.answer + aux_weight * (out.residue + out.sign);
    if (accumulate) backward(tape, dh);
    return out;
  }

  Checkpoint to_checkpoint() const {
    Checkpoint ck;
    ck.meta["kind"] = "answer_agent";
    ck.meta["hidden"] = std::to_string(cfg_.hidden);
    ck.meta["embed"] = std::to_string(cfg_.embed);
    ck.meta["seed"] = std::to_string(cfg_.seed);
    ck.meta["epochs"] = std::to_string(trained_epochs_);
    ck.meta["vocabulary_version"] = std::to_string(kVocabularyVersion);
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", final_train_accuracy_);
    ck.meta["final_train_accuracy"] = buf;
    params_.export_to(ck);
    return ck;
  }

  static AnswerAgentT from_checkpoint(const Checkpoint& ck) {
    if (ck.meta_or("kind", "") != "answer_agent") throw std::runtime_error("checkpoint is not an answer agent");
    AnswerAgentConfig cfg;
    cfg.hidden = std::stoi(ck.require_meta("hidden"));
    cfg.embed = std::stoi(ck.require_meta("embed"));
    cfg.seed = std::stoull(ck.meta_or("seed", "0"));
    AnswerAgentT a(cfg);
    a.params_.import_from(ck);
    a.trained_epochs_ = std::stoi(ck.meta_or("epochs", "0"));
    a.final_train_accuracy_ = std::stod(ck.meta_or("final_train_accuracy", "0"));
    return a;
  }

  void set_training_metadata(int epochs, double accuracy) {
    trained_epochs_ = epochs;
    final_train_accuracy_ = accuracy;
  }
  int trained_epochs() const { return trained_epochs_; }
  double final_train_accuracy() const { return final_train_accuracy_; }

 private:
  struct Tape {
    std::vector<std::array<std::uint8_t, kEncodedLength>> tokens;
    std::vector<M> x;             // embedded inputs per step
    std::vector<M> i, f, g, o, c;  // gate activations and cell state per step
    std::vector<M> h;              // hidden state per step
  };

  void forward(std::span<const MathQuestion> qs, Tape& t) const {
    const auto B = static_cast<Eigen::Index>(qs.size());
    const int H = cfg_.hidden;
    t.tokens.clear();
    for (const auto& q : qs) t.tokens.push_back(encode_question(q));
    const auto& E = params_[embed_].value;
    const auto& wx = params_[wx_].value;
    const auto& wh = params_[wh_].value;
    const auto& b = params_[b_].value;
    M h = M::Zero(H, B), c = M::Zero(H, B);
    for (auto* v : {&t.x, &t.i, &t.f, &t.g, &t.o, &t.c, &t.h}) v->clear();
    for (std::size_t s = 0; s < kEncodedLength; ++s) {
      M x(cfg_.embed, B);
      for (Eigen::Index j = 0; j < B; ++j) x.col(j) = E.col(t.tokens[static_cast<std::size_t>(j)][s]);
      M z = wx * x;
      z.noalias() += wh * h;
      z.colwise() += b.col(0);
      auto sig = [](const auto& m) { return (Scalar(1) / (Scalar(1) + (-m.array()).exp())).matrix(); };
      M ig = sig(z.topRows(H));
      M fg = sig(z.middleRows(H, H));
      M gg = z.middleRows(2 * H, H).array().tanh().matrix();
      M og = sig(z.bottomRows(H));
      c = (fg.array() * c.array() + ig.array() * gg.array()).matrix();
      h = (og.array() * c.array().tanh()).matrix();
      t.x.push_back(std::move(x));
      t.i.push_back(std::move(ig));
      t.f.push_back(std::move(fg));
      t.g.push_back(std::move(gg));
      t.o.push_back(std::move(og));
      t.c.push_back(c);
      t.h.push_back(h);
    }
  }

  M logits(const Tape& t) const {
    M z = params_[head_w_].value * t.h.back();
    z.colwise() += params_[head_b_].value.col(0);
    return z;
  }

  void backward(const Tape& t, std::vector<M>& dh_out) {
    const int H = cfg_.hidden;
    const auto B = t.h.back().cols();
    auto& wx = params_[wx_];
    auto& wh = params_[wh_];
    auto& b = params_[b_];
    auto& E = params_[embed_];
    M dh_next = M::Zero(H, B), dc_next = M::Zero(H, B);
    M dz(4 * H, B);
    for (std::size_t s = kEncodedLength; s-- > 0;) {
      const M dh = dh_out[s] + dh_next;
      const auto tc = t.c[s].array().tanh();
      const M c_prev = s ? t.c[s - 1] : M::Zero(H, B);
      const M h_prev = s ? t.h[s - 1] : M::Zero(H, B);
      const auto dc = (dc_next.array() + dh.array() * t.o[s].array() * (Scalar(1) - tc.square())).eval();
      const auto& ig = t.i[s].array();
      const auto& fg = t.f[s].array();
      const auto& gg = t.g[s].array();
      const auto& og = t.o[s].array();
      dz.topRows(H) = (dc * gg * ig * (Scalar(1) - ig)).matrix();
      dz.middleRows(H, H) = (dc * c_prev.array() * fg * (Scalar(1) - fg)).matrix();
      dz.middleRows(2 * H, H) = (dc * ig * (Scalar(1) - gg.square())).matrix();
      dz.bottomRows(H) = (dh.array() * tc * og * (Scalar(1) - og)).matrix();
      wx.grad.noalias() += dz * t.x[s].transpose();
      wh.grad.noalias() += dz * h_prev.transpose();
      b.grad.col(0) += dz.rowwise().sum();
      const M dx = wx.value.transpose() * dz;
      for (Eigen::Index j = 0; j < B; ++j) E.grad.col(t.tokens[static_cast<std::size_t>(j)][s]) += dx.col(j);
      dh_next.noalias() = wh.value.transpose() * dz;
      dc_next = (dc * fg).matrix();
    }
  }

  AnswerAgentConfig cfg_;
  nn::ParameterSet<Scalar> params_;
  std::size_t embed_ = 0, wx_ = 0, wh_ = 0, b_ = 0, head_w_ = 0, head_b_ = 0;
  std::size_t res_w_ = 0, res_b_ = 0, sign_w_ = 0, sign_b_ = 0;
  int trained_epochs_ = 0;
  double final_train_accuracy_ = 0.0;
};

using AnswerAgent = AnswerAgentT<float>;

struct AnswerTrainingResult {
  AnswerAgent model;
  AnswerTrainingReport report;
};

using EpochCallback = std::function<void(int epoch, double loss, double train_accuracy)>;

/// Minibatch Adam on the given bank. Throws TrainingFailure when the final train
/// accuracy is below `cfg.accuracy_floor`.
inline AnswerTrainingResult train_answer_agent(std::span<const MathQuestion> bank, const AnswerAgentConfig& cfg,
                                               const EpochCallback& on_epoch = {}) {
  if (bank.empty()) throw std::invalid_argument("train_answer_agent: empty question bank");
  if (cfg.epochs < 1 || cfg.batch < 1) throw std::invalid_argument("train_answer_agent: epochs and batch must be >= 1");
  AnswerTrainingResult out{AnswerAgent(cfg), {}};
  std::mt19937_64 rng(cfg.seed ^ 0x9e3779b97f4a7c15ULL);
  nn::Adam<float> opt(nn::AdamConfig{cfg.lr, 0.9, 0.999, 1e-8, cfg.max_grad_norm});
  std::vector<std::size_t> order(bank.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<MathQuestion> batch;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(cfg.batch)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(cfg.batch));
      batch.clear();
      for (std::size_t k = start; k < end; ++k) batch.push_back(bank[order[k]]);
      out.model.params().zero_grad();
      const auto l = out.model.loss(batch, cfg.aux_weight, true);
      if (!std::isfinite(l.total)) {
        out.report.epochs = epoch;
        throw TrainingFailure("answer agent loss became non-finite", out.report);
      }
      opt.step(out.model.params());
      loss_sum += l.answer * double(end - start);
    }
    const double acc = out.model.accuracy(bank);
    out.report.epoch_loss.push_back(loss_sum / double(bank.size()));
    out.report.epoch_accuracy.push_back(acc);
    out.report.epochs = epoch + 1;
    if (on_epoch) on_epoch(epoch + 1, out.report.epoch_loss.back(), acc);
  }
  out.report.final_train_accuracy = out.report.epoch_accuracy.back();
  out.model.set_training_metadata(out.report.epochs, out.report.final_train_accuracy);
  if (out.report.final_train_accuracy < cfg.accuracy_floor)
    throw TrainingFailure("answer agent train accuracy " + std::to_string(out.report.final_train_accuracy) +
                              " is below the floor " + std::to_string(cfg.accuracy_floor),
                          out.report);
  return out;
}

}  // namespace dualrl
