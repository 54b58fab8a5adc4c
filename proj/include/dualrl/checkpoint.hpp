#pragma once

// Text container of named tensors plus string metadata. Values are written as
// hexadecimal floating point, so a save/load cycle reproduces every bit.
//
//   dualrl-checkpoint 1
//   meta <key> <value...>
//   tensor <name> <rows> <cols>
//   <rows*cols hex doubles, row-major, one row per line>
//   end

#include <Eigen/Dense>

#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace dualrl {

inline constexpr int kCheckpointVersion = 1;

struct Checkpoint {
  std::map<std::string, std::string> meta;
  std::map<std::string, Eigen::MatrixXd> tensors;

  const Eigen::MatrixXd& tensor(const std::string& name) const {
    const auto it = tensors.find(name);
    if (it == tensors.end()) throw std::runtime_error("checkpoint has no tensor " + name);
    return it->second;
  }

  std::string meta_or(const std::string& key, const std::string& fallback) const {
    const auto it = meta.find(key);
    return it == meta.end() ? fallback : it->second;
  }

  const std::string& require_meta(const std::string& key) const {
    const auto it = meta.find(key);
    if (it == meta.end()) throw std::runtime_error("checkpoint has no metadata key " + key);
    return it->second;
  }

  void save(std::ostream& out) const {
    out << "dualrl-checkpoint " << kCheckpointVersion << '\n';
    for (const auto& [k, v] : meta) {
      if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos)
        throw std::invalid_argument("metadata keys may not contain spaces; values may not contain newlines");
      out << "meta " << k << ' ' << v << '\n';
    }
    char buf[64];
    for (const auto& [name, m] : tensors) {
      out << "tensor " << name << ' ' << m.rows() << ' ' << m.cols() << '\n';
      for (Eigen::Index r = 0; r < m.rows(); ++r) {
        for (Eigen::Index c = 0; c < m.cols(); ++c) {
          std::snprintf(buf, sizeof buf, "%a", m(r, c));
          out << (c ? " " : "") << buf;
        }
        out << '\n';
      }
    }
    out << "end\n";
  }

  static Checkpoint load(std::istream& in) {
    Checkpoint ck;
    std::string word;
    int version = 0;
    if (!(in >> word >> version) || word != "dualrl-checkpoint")
      throw std::runtime_error("not a dualrl checkpoint");
    if (version != kCheckpointVersion)
      throw std::runtime_error("unsupported checkpoint version " + std::to_string(version));
    while (in >> word) {
      if (word == "end") return ck;
      if (word == "meta") {
        std::string key, value;
        in >> key;
        std::getline(in, value);
        if (!value.empty() && value.front() == ' ') value.erase(0, 1);
        ck.meta[key] = value;
      } else if (word == "tensor") {
        std::string name;
        Eigen::Index rows = 0, cols = 0;
        if (!(in >> name >> rows >> cols) || rows < 0 || cols < 0)
          throw std::runtime_error("malformed tensor header");
        Eigen::MatrixXd m(rows, cols);
        std::string tok;
        for (Eigen::Index r = 0; r < rows; ++r)
          for (Eigen::Index c = 0; c < cols; ++c) {
            if (!(in >> tok)) throw std::runtime_error("truncated tensor " + name);
            char* endp = nullptr;
            m(r, c) = std::strtod(tok.c_str(), &endp);
            if (endp == tok.c_str()) throw std::runtime_error("bad number in tensor " + name);
          }
        ck.tensors[name] = std::move(m);
      } else {
        throw std::runtime_error("unexpected checkpoint record: " + word);
      }
    }
    throw std::runtime_error("checkpoint missing end marker");
  }

  void save_file(const std::string& path) const {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path);
    save(out);
  }

  static Checkpoint load_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot read " + path);
    return load(in);
  }

  friend bool operator==(const Checkpoint& a, const Checkpoint& b) {
    if (a.meta != b.meta || a.tensors.size() != b.tensors.size()) return false;
    for (const auto& [k, m] : a.tensors) {
      const auto it = b.tensors.find(k);
      if (it == b.tensors.end() || it->second.rows() != m.rows() || it->second.cols() != m.cols()) return false;
      if (!(it->second.array() == m.array()).all()) return false;
    }
    return true;
  }
};

inline void put_scalar(Checkpoint& ck, const std::string& name, double v) {
  ck.tensors[name] = Eigen::MatrixXd::Constant(1, 1, v);
}

inline double get_scalar(const Checkpoint& ck, const std::string& name) { return ck.tensor(name)(0, 0); }

}  // namespace dualrl
