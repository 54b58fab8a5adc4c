#pragma once

// Modular-arithmetic trial items: "AB = CD (mod E)".

#include <array>
#include <cstdint>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dualrl {

inline constexpr int kMinOperand = 10;
inline constexpr int kMaxOperand = 99;
inline constexpr int kMinModulus = 2;
inline constexpr int kMaxModulus = 9;

struct MathQuestion {
  int ab = kMinOperand;
  int cd = kMinOperand;
  int e = kMinModulus;
  bool truth = true;

  friend bool operator==(const MathQuestion&, const MathQuestion&) = default;
};

/// Divisibility of (ab - cd) by e using the mathematical (sign-independent) remainder.
inline bool ground_truth(int ab, int cd, int e) {
  const int d = ab - cd;
  return ((d % e) + e) % e == 0;
}

inline bool ground_truth(const MathQuestion& q) { return ground_truth(q.ab, q.cd, q.e); }

inline bool is_valid_question(int ab, int cd, int e) {
  return ab >= kMinOperand && ab <= kMaxOperand && cd >= kMinOperand && cd <= kMaxOperand &&
         e >= kMinModulus && e <= kMaxModulus;
}

inline MathQuestion make_question(int ab, int cd, int e) {
  if (!is_valid_question(ab, cd, e)) {
    std::ostringstream msg;
    msg << "question out of range: ab=" << ab << " cd=" << cd << " e=" << e;
    throw std::invalid_argument(msg.str());
  }
  return MathQuestion{ab, cd, e, ground_truth(ab, cd, e)};
}

/// Remainder of (ab - cd) truncated toward zero, in [-8, 8]. Carries the sign of the difference.
inline int signed_remainder(const MathQuestion& q) { return (q.ab - q.cd) % q.e; }

inline constexpr int kNumAnswerClasses = 17;

/// Class id in [0, 16]; class 8 is remainder zero.
inline int answer_class(const MathQuestion& q) { return signed_remainder(q) + 8; }
inline constexpr int kZeroRemainderClass = 8;

// ---------------------------------------------------------------------------
// Encoding
// ---------------------------------------------------------------------------

inline constexpr std::size_t kEncodedLength = 8;
inline constexpr int kVocabSize = 13;
inline constexpr std::uint8_t kTokenEquals = 10;
inline constexpr std::uint8_t kTokenPercent = 11;
inline constexpr std::uint8_t kTokenPad = 12;
inline constexpr int kVocabularyVersion = 1;

using EncodedQuestion = std::array<std::uint8_t, kEncodedLength>;

/// "AB=CD%E", always seven characters for valid questions.
inline std::string canonical_string(const MathQuestion& q) {
  return std::to_string(q.ab) + "=" + std::to_string(q.cd) + "%" + std::to_string(q.e);
}

inline std::uint8_t token_for(char c) {
  if (c >= '0' && c <= '9') return static_cast<std::uint8_t>(c - '0');
  if (c == '=') return kTokenEquals;
  if (c == '%') return kTokenPercent;
  throw std::invalid_argument(std::string("character outside vocabulary: ") + c);
}

inline char char_for(std::uint8_t token) {
  if (token <= 9) return static_cast<char>('0' + token);
  if (token == kTokenEquals) return '=';
  if (token == kTokenPercent) return '%';
  throw std::invalid_argument("token has no character: " + std::to_string(token));
}

/// Character tokens of the canonical string, right-padded with kTokenPad.
inline EncodedQuestion encode_question(const MathQuestion& q) {
  const std::string s = canonical_string(q);
  EncodedQuestion out;
  out.fill(kTokenPad);
  for (std::size_t i = 0; i < s.size() && i < kEncodedLength; ++i) out[i] = token_for(s[i]);
  return out;
}

inline MathQuestion decode_question(const EncodedQuestion& tokens) {
  std::string s;
  for (auto t : tokens) {
    if (t == kTokenPad) break;
    s.push_back(char_for(t));
  }
  const auto eq = s.find('=');
  const auto pct = s.find('%');
  if (eq == std::string::npos || pct == std::string::npos || pct < eq)
    throw std::invalid_argument("malformed token sequence: " + s);
  return make_question(std::stoi(s.substr(0, eq)), std::stoi(s.substr(eq + 1, pct - eq - 1)),
                       std::stoi(s.substr(pct + 1)));
}

/// Published vocabulary table (token id, symbol), one entry per line.
inline std::string vocabulary_table() {
  std::ostringstream out;
  out << "# dualrl question vocabulary v" << kVocabularyVersion << "\n";
  out << "# encoded_length " << kEncodedLength << "\n";
  for (std::uint8_t t = 0; t < kTokenPad; ++t) out << int(t) << ' ' << char_for(t) << '\n';
  out << int(kTokenPad) << " <pad>\n";
  return out.str();
}

// ---------------------------------------------------------------------------
// Generation
// ---------------------------------------------------------------------------

/// Seeded question stream. The target true-rate is met by rejection sampling.
class QuestionGenerator {
 public:
  explicit QuestionGenerator(std::uint64_t seed, double true_rate = 0.5)
      : rng_(seed), true_rate_(true_rate) {
    if (!(true_rate >= 0.0 && true_rate <= 1.0))
      throw std::invalid_argument("true_rate must lie in [0, 1]");
  }

  MathQuestion next() {
    const bool want = std::bernoulli_distribution(true_rate_)(rng_);
    std::uniform_int_distribution<int> operand(kMinOperand, kMaxOperand);
    std::uniform_int_distribution<int> modulus(kMinModulus, kMaxModulus);
    for (;;) {
      const int ab = operand(rng_);
      const int cd = operand(rng_);
      const int e = modulus(rng_);
      if (ground_truth(ab, cd, e) == want) return MathQuestion{ab, cd, e, want};
    }
  }

  std::vector<MathQuestion> take(std::size_t n) {
    std::vector<MathQuestion> out;
    out.reserve(n);
    for (std::size_t i = 0; i < n; ++i) out.push_back(next());
    return out;
  }

 private:
  std::mt19937_64 rng_;
  double true_rate_;
};

inline MathQuestion generate_question(std::mt19937_64& rng, double true_rate = 0.5) {
  QuestionGenerator gen(rng(), true_rate);
  return gen.next();
}

/// Every valid question, in (ab, cd, e) lexicographic order.
inline std::vector<MathQuestion> all_questions() {
  std::vector<MathQuestion> out;
  out.reserve(90 * 90 * 8);
  for (int ab = kMinOperand; ab <= kMaxOperand; ++ab)
    for (int cd = kMinOperand; cd <= kMaxOperand; ++cd)
      for (int e = kMinModulus; e <= kMaxModulus; ++e) out.push_back(make_question(ab, cd, e));
  return out;
}

// ---------------------------------------------------------------------------
// Question bank CSV: ab,cd,e,truth
// ---------------------------------------------------------------------------

inline void write_question_bank(std::ostream& out, const std::vector<MathQuestion>& bank) {
  for (const auto& q : bank) out << q.ab << ',' << q.cd << ',' << q.e << ',' << (q.truth ? 1 : 0) << '\n';
}

inline std::vector<MathQuestion> read_question_bank(std::istream& in) {
  std::vector<MathQuestion> bank;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    std::istringstream row(line);
    int ab = 0, cd = 0, e = 0, truth = 0;
    char c1 = 0, c2 = 0, c3 = 0;
    if (!(row >> ab >> c1 >> cd >> c2 >> e >> c3 >> truth) || c1 != ',' || c2 != ',' || c3 != ',')
      throw std::runtime_error("question bank line " + std::to_string(lineno) + ": malformed record");
    auto q = make_question(ab, cd, e);
    if (q.truth != (truth != 0))
      throw std::runtime_error("question bank line " + std::to_string(lineno) + ": truth flag disagrees");
    bank.push_back(q);
  }
  return bank;
}

}  // namespace dualrl
