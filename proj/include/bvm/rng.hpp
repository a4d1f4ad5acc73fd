#pragma once

#include <cstdint>
#include <cmath>
#include <string>
#include <string_view>

#include <Eigen/Dense>

// Self-contained random number generation. The standard library distributions
// are implementation-defined, so all sampling goes through this header to keep
// results byte-identical across compilers and reruns.

namespace bvm {

inline std::uint64_t splitmix64(std::uint64_t& state) {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// FNV-1a over a byte string; used to derive per-task seeds from labels.
inline std::uint64_t fnv1a(std::string_view s, std::uint64_t h = 0xcbf29ce484222325ULL) {
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view label) {
  std::uint64_t h = fnv1a(label);
  std::uint64_t s = seed ^ h;
  return splitmix64(s);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : state_(seed), have_cached_(false) {
    // Warm up so that small seeds do not produce correlated leading draws.
    splitmix64(state_);
    splitmix64(state_);
  }

  std::uint64_t next_u64() { return splitmix64(state_); }

  // Uniform on [0, 1).
  double uniform() {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Standard normal via Box-Muller (deterministic, no library distributions).
  double normal() {
    if (have_cached_) {
      have_cached_ = false;
      return cached_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    cached_ = r * std::sin(a);
    have_cached_ = true;
    return r * std::cos(a);
  }

  Eigen::VectorXd normal_vector(int d) {
    Eigen::VectorXd v(d);
    for (int i = 0; i < d; ++i) v(i) = normal();
    return v;
  }

  Eigen::VectorXd unit_sphere(int d) {
    Eigen::VectorXd v = normal_vector(d);
    double n = v.norm();
    while (n < 1e-300) {
      v = normal_vector(d);
      n = v.norm();
    }
    return v / n;
  }

  // Uniform in the closed ball of given radius.
  Eigen::VectorXd ball(int d, double radius) {
    Eigen::VectorXd dir = unit_sphere(d);
    double r = radius * std::pow(uniform(), 1.0 / static_cast<double>(d));
    return r * dir;
  }

  // Index draw from an unnormalized nonnegative weight vector.
  int categorical(const Eigen::VectorXd& weights) {
    double total = weights.sum();
    double u = uniform() * total;
    double acc = 0.0;
    for (int i = 0; i < weights.size(); ++i) {
      acc += weights(i);
      if (u < acc) return i;
    }
    return static_cast<int>(weights.size()) - 1;
  }

 private:
  std::uint64_t state_;
  bool have_cached_;
  double cached_ = 0.0;
};

}  // namespace bvm
