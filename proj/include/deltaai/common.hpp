#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace deltaai {

using Rng = std::mt19937_64;

// Every failure raised by the library derives from Error so callers can
// catch the whole family; the subclasses name the specific contract breach.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

#define DELTAAI_DEFINE_ERROR(Name)          \
  class Name : public Error {               \
   public:                                  \
    using Error::Error;                     \
  }

DELTAAI_DEFINE_ERROR(PartialAssignment);
DELTAAI_DEFINE_ERROR(SameValue);
DELTAAI_DEFINE_ERROR(TooLarge);
DELTAAI_DEFINE_ERROR(EmptyBatch);
DELTAAI_DEFINE_ERROR(MissingParent);
DELTAAI_DEFINE_ERROR(MissingBlanket);
DELTAAI_DEFINE_ERROR(TooFewChildren);
DELTAAI_DEFINE_ERROR(OrderViolation);
DELTAAI_DEFINE_ERROR(ConfigError);
DELTAAI_DEFINE_ERROR(EmptyDataset);
DELTAAI_DEFINE_ERROR(LatentCoversAll);
DELTAAI_DEFINE_ERROR(ShapeMismatch);
DELTAAI_DEFINE_ERROR(NonFiniteLoss);
DELTAAI_DEFINE_ERROR(FormatError);

#undef DELTAAI_DEFINE_ERROR

/// A full or partial configuration of binary variables.
///
/// Values are +1 / -1 for instantiated variables and 0 for masked ones, which
/// is also the encoding fed to the conditional network.
class Assignment {
 public:
  Assignment() = default;
  explicit Assignment(int num_vars) : values_(static_cast<std::size_t>(num_vars), 0) {}
  explicit Assignment(std::vector<std::int8_t> values) : values_(std::move(values)) {
    for (auto v : values_) {
      if (v != 0 && v != 1 && v != -1) throw FormatError("assignment values must be -1, 0 or +1");
    }
  }

  int num_vars() const { return static_cast<int>(values_.size()); }
  int operator[](int v) const { return values_[static_cast<std::size_t>(v)]; }
  bool is_set(int v) const { return values_[static_cast<std::size_t>(v)] != 0; }

  void set(int v, int value) {
    if (value != 1 && value != -1) throw std::invalid_argument("assigned value must be +/-1");
    values_[static_cast<std::size_t>(v)] = static_cast<std::int8_t>(value);
  }
  void clear(int v) { values_[static_cast<std::size_t>(v)] = 0; }
  void flip(int v) { values_[static_cast<std::size_t>(v)] = static_cast<std::int8_t>(-values_[static_cast<std::size_t>(v)]); }

  int count() const {
    return static_cast<int>(std::count_if(values_.begin(), values_.end(), [](auto v) { return v != 0; }));
  }
  bool full() const { return count() == num_vars(); }

  std::vector<int> mask() const {
    std::vector<int> out;
    for (int v = 0; v < num_vars(); ++v)
      if (is_set(v)) out.push_back(v);
    return out;
  }

  std::span<const std::int8_t> values() const { return values_; }

  friend bool operator==(const Assignment&, const Assignment&) = default;

 private:
  std::vector<std::int8_t> values_;
};

/// Bit v of the state index is set iff x_v = +1.
inline Assignment assignment_from_state(std::uint64_t state, int num_vars) {
  Assignment x(num_vars);
  for (int v = 0; v < num_vars; ++v) x.set(v, ((state >> v) & 1U) ? 1 : -1);
  return x;
}

inline std::uint64_t state_from_assignment(const Assignment& x) {
  std::uint64_t s = 0;
  for (int v = 0; v < x.num_vars(); ++v) {
    if (!x.is_set(v)) throw PartialAssignment("state index needs a full assignment");
    if (x[v] > 0) s |= (std::uint64_t{1} << v);
  }
  return s;
}

inline double log_sigmoid(double z) {
  return z >= 0 ? -std::log1p(std::exp(-z)) : z - std::log1p(std::exp(z));
}

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double log_sum_exp(std::span<const double> xs) {
  if (xs.empty()) return -std::numeric_limits<double>::infinity();
  const double hi = *std::max_element(xs.begin(), xs.end());
  if (!std::isfinite(hi)) return hi;
  double acc = 0.0;
  for (double x : xs) acc += std::exp(x - hi);
  return hi + std::log(acc);
}

inline int random_sign(Rng& rng) { return std::bernoulli_distribution(0.5)(rng) ? 1 : -1; }

}  // namespace deltaai
