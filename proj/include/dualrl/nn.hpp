#pragma once

// Small dense-network toolkit: named parameters, Adam, tanh MLPs with explicit
// backward passes. Batches are stored column-wise (features x batch).

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <deque>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "dualrl/checkpoint.hpp"

namespace dualrl::nn {

template <class Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <class Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

template <class Scalar = double>
struct Parameter {
  std::string name;
  Mat<Scalar> value;
  Mat<Scalar> grad;
};

/// Ordered collection of named parameters. Layers refer to entries by index so the
/// owning object stays freely copyable.
template <class Scalar = double>
class ParameterSet {
 public:
  using Param = Parameter<Scalar>;

  std::size_t add(std::string name, Eigen::Index rows, Eigen::Index cols) {
    for (const auto& p : params_)
      if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    params_.push_back(Param{std::move(name), Mat<Scalar>::Zero(rows, cols), Mat<Scalar>::Zero(rows, cols)});
    return params_.size() - 1;
  }

  Param& operator[](std::size_t i) { return params_[i]; }
  const Param& operator[](std::size_t i) const { return params_[i]; }
  std::size_t count() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grad() {
    for (auto& p : params_) p.grad.setZero();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += static_cast<std::size_t>(p.value.size());
    return n;
  }

  Eigen::VectorXd flat_values() const { return flatten(false); }
  Eigen::VectorXd flat_grads() const { return flatten(true); }

  void set_flat_values(const Eigen::VectorXd& flat) {
    if (static_cast<std::size_t>(flat.size()) != scalar_count())
      throw std::invalid_argument("flat parameter vector has wrong length");
    Eigen::Index off = 0;
    for (auto& p : params_) {
      for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value.data()[i] = static_cast<Scalar>(flat[off + i]);
      off += p.value.size();
    }
  }

  double grad_norm() const {
    double s = 0.0;
    for (const auto& p : params_) s += p.grad.template cast<double>().squaredNorm();
    return std::sqrt(s);
  }

  bool all_finite() const {
    for (const auto& p : params_)
      if (!p.value.allFinite()) return false;
    return true;
  }

  void export_to(Checkpoint& ckpt, const std::string& prefix = "") const {
    for (const auto& p : params_) ckpt.tensors[prefix + p.name] = p.value.template cast<double>();
  }

  void import_from(const Checkpoint& ckpt, const std::string& prefix = "") {
    for (auto& p : params_) {
      const auto it = ckpt.tensors.find(prefix + p.name);
      if (it == ckpt.tensors.end()) throw std::runtime_error("checkpoint missing tensor " + prefix + p.name);
      if (it->second.rows() != p.value.rows() || it->second.cols() != p.value.cols())
        throw std::runtime_error("checkpoint tensor " + prefix + p.name + " has wrong shape");
      p.value = it->second.template cast<Scalar>();
    }
  }

 private:
  Eigen::VectorXd flatten(bool grads) const {
    Eigen::VectorXd out(static_cast<Eigen::Index>(scalar_count()));
    Eigen::Index off = 0;
    for (const auto& p : params_) {
      const auto& m = grads ? p.grad : p.value;
      for (Eigen::Index i = 0; i < m.size(); ++i) out[off + i] = static_cast<double>(m.data()[i]);
      off += m.size();
    }
    return out;
  }

  std::deque<Param> params_;
};

template <class Scalar>
void glorot_uniform(Mat<Scalar>& w, std::mt19937_64& rng) {
  const double a = std::sqrt(6.0 / double(w.rows() + w.cols()));
  std::uniform_real_distribution<double> u(-a, a);
  for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<Scalar>(u(rng));
}

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double max_grad_norm = 0.0;  // 0 disables clipping
};

template <class Scalar = double>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  void set_lr(double lr) { cfg_.lr = lr; }
  const AdamConfig& config() const { return cfg_; }

  void step(ParameterSet<Scalar>& params) {
    if (m_.size() != params.count()) {
      m_.clear();
      v_.clear();
      for (const auto& p : params) {
        m_.push_back(Mat<Scalar>::Zero(p.value.rows(), p.value.cols()));
        v_.push_back(Mat<Scalar>::Zero(p.value.rows(), p.value.cols()));
      }
    }
    double scale = 1.0;
    if (cfg_.max_grad_norm > 0.0) {
      const double norm = params.grad_norm();
      if (norm > cfg_.max_grad_norm) scale = cfg_.max_grad_norm / (norm + 1e-12);
    }
    ++t_;
    const double bc1 = 1.0 - std::pow(cfg_.beta1, double(t_));
    const double bc2 = 1.0 - std::pow(cfg_.beta2, double(t_));
    const auto b1 = static_cast<Scalar>(cfg_.beta1), b2 = static_cast<Scalar>(cfg_.beta2);
    const auto step = static_cast<Scalar>(cfg_.lr * std::sqrt(bc2) / bc1);
    const auto eps = static_cast<Scalar>(cfg_.eps * std::sqrt(bc2));
    std::size_t i = 0;
    for (auto& p : params) {
      const Mat<Scalar> g = p.grad * static_cast<Scalar>(scale);
      m_[i] = b1 * m_[i] + (Scalar(1) - b1) * g;
      v_[i] = b2 * v_[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
      p.value.array() -= step * m_[i].array() / (v_[i].array().sqrt() + eps);
      ++i;
    }
  }

 private:
  AdamConfig cfg_;
  std::vector<Mat<Scalar>> m_, v_;
  long long t_ = 0;
};

/// Fully connected tanh network with a linear output layer.
template <class Scalar = double>
class Mlp {
 public:
  struct Tape {
    std::vector<Mat<Scalar>> inputs;  // input to each layer
    Mat<Scalar> output;
  };

  Mlp() = default;

  Mlp(ParameterSet<Scalar>& params, const std::string& prefix, const std::vector<int>& sizes,
      std::mt19937_64& rng, double output_gain = 1.0) {
    if (sizes.size() < 2) throw std::invalid_argument("MLP needs at least input and output sizes");
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      const auto w = params.add(prefix + ".w" + std::to_string(l), sizes[l + 1], sizes[l]);
      const auto b = params.add(prefix + ".b" + std::to_string(l), sizes[l + 1], 1);
      glorot_uniform(params[w].value, rng);
      if (l + 2 == sizes.size()) params[w].value *= static_cast<Scalar>(output_gain);
      layers_.push_back({w, b});
    }
    sizes_ = sizes;
  }

  int input_size() const { return sizes_.front(); }
  int output_size() const { return sizes_.back(); }

  Mat<Scalar> forward(const ParameterSet<Scalar>& params, const Mat<Scalar>& x, Tape* tape = nullptr) const {
    Mat<Scalar> h = x;
    if (tape) tape->inputs.clear();
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      if (tape) tape->inputs.push_back(h);
      const auto& w = params[layers_[l].w].value;
      const auto& b = params[layers_[l].b].value;
      Mat<Scalar> z = w * h;
      z.colwise() += b.col(0);
      if (l + 1 < layers_.size()) z = z.array().tanh().matrix();
      h = std::move(z);
    }
    if (tape) tape->output = h;
    return h;
  }

  /// Accumulates parameter gradients for dL/d(output) and returns dL/d(input).
  Mat<Scalar> backward(ParameterSet<Scalar>& params, const Tape& tape, const Mat<Scalar>& d_out) const {
    Mat<Scalar> delta = d_out;
    for (std::size_t l = layers_.size(); l-- > 0;) {
      if (l + 1 < layers_.size()) {
        // tape.inputs[l + 1] is tanh output of layer l.
        const auto& a = tape.inputs[l + 1];
        delta = delta.cwiseProduct((Mat<Scalar>::Ones(a.rows(), a.cols()) - a.cwiseProduct(a)));
      }
      auto& w = params[layers_[l].w];
      auto& b = params[layers_[l].b];
      w.grad.noalias() += delta * tape.inputs[l].transpose();
      b.grad.col(0) += delta.rowwise().sum();
      delta = (w.value.transpose() * delta).eval();
    }
    return delta;
  }

 private:
  struct Layer {
    std::size_t w, b;
  };
  std::vector<Layer> layers_;
  std::vector<int> sizes_;
};

/// Column-wise softmax with the usual max shift.
template <class Scalar>
Mat<Scalar> softmax_columns(const Mat<Scalar>& logits) {
  Mat<Scalar> out(logits.rows(), logits.cols());
  for (Eigen::Index j = 0; j < logits.cols(); ++j) {
    const Scalar mx = logits.col(j).maxCoeff();
    auto e = (logits.col(j).array() - mx).exp();
    out.col(j) = (e / e.sum()).matrix();
  }
  return out;
}

}  // namespace dualrl::nn
