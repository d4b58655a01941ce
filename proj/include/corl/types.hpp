#pragma once

#include <Eigen/Core>

#include <charconv>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <random>

namespace corl {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using Eigen::ArrayXd;
using Eigen::ArrayXXd;
using VectorXi = Eigen::VectorXi;

// Discount factor carried together with its exact complement 1-gamma.
// Subtracting gamma from 1 in floating point loses the low bits that matter
// for effective-horizon arithmetic (1/(1-gamma)), so the complement is stored
// at construction instead of recomputed.
class Discount {
 public:
  Discount() = default;

  static Discount from_gamma(double gamma) {
    if (!(gamma >= 0.0 && gamma < 1.0))
      throw std::invalid_argument("Discount: gamma must lie in [0, 1)");
    return Discount(gamma, 1.0 - gamma);
  }

  // Effective horizon h = 1/(1-gamma).
  static Discount from_horizon(double horizon) {
    if (!(horizon >= 1.0))
      throw std::invalid_argument("Discount: effective horizon must be >= 1");
    const double om = 1.0 / horizon;
    return Discount(1.0 - om, om);
  }

  double value() const { return gamma_; }
  double complement() const { return one_minus_; }
  double effective_horizon() const { return 1.0 / one_minus_; }

 private:
  Discount(double g, double om) : gamma_(g), one_minus_(om) {}
  double gamma_ = 0.0;
  double one_minus_ = 1.0;
};

using Rng = std::mt19937_64;

// splitmix64 step; used to derive independent seed streams from a master seed.
inline std::uint64_t split_seed(std::uint64_t master, std::uint64_t stream) {
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

inline Rng make_rng(std::uint64_t master, std::uint64_t stream) {
  return Rng(split_seed(master, stream));
}

// Shortest round-trip decimal representation; the one formatter used for
// every serialized double so that files and derived CSVs agree byte-for-byte.
inline std::string format_double(double x) {
  char buf[32];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline std::string fnv1a64_hex(std::string_view data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : data) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  static const char* digits = "0123456789abcdef";
  for (int i = 15; i >= 0; --i) {
    buf[i] = digits[h & 0xf];
    h >>= 4;
  }
  return std::string(buf, 16);
}

}  // namespace corl
