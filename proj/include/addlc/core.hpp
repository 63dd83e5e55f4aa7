#pragma once

// Shared building blocks: error types, dense containers, IEEE-754 half
// conversion and a deterministic RNG. Everything downstream assumes doubles
// internally; reduced precision (fp32 codebooks, fp16 corrections/factors)
// only appears at the storage boundary.

#include <bit>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace addlc {

using Vec = std::vector<double>;

// Thrown for malformed configs / user input (CLI maps it to exit code 2).
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Thrown when an optimizer or projection leaves the representable range
// (CLI maps it to exit code 3).
struct NumericalError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// ------------------------------------------------------------------ matrix --

// Dense row-major matrix. Deliberately minimal: the algorithms here need
// element access, a few matvecs and nothing else.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), data(r * c, fill) {}

  double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
  double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }
  std::size_t size() const { return data.size(); }
};

inline double dot(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double norm2(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
  for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

// ---------------------------------------------------------------- half/f16 --

// Round-to-nearest-even conversion double -> IEEE binary16, returned as raw
// bits. Used by the storage container and by anything that wants to know the
// value a parameter will have after deployment.
inline std::uint16_t half_from_double(double value) {
  const float f = static_cast<float>(value);
  const std::uint32_t x = std::bit_cast<std::uint32_t>(f);
  const std::uint32_t sign = (x >> 16) & 0x8000u;
  std::uint32_t mant = x & 0x007FFFFFu;
  const int fexp = static_cast<int>((x >> 23) & 0xFFu);

  if (fexp == 0xFF) {  // inf / nan
    const std::uint32_t nan_payload = mant ? (0x0200u | (mant >> 13)) : 0u;
    return static_cast<std::uint16_t>(sign | 0x7C00u | nan_payload);
  }
  const int hexp = fexp - 127 + 15;
  if (hexp >= 0x1F) return static_cast<std::uint16_t>(sign | 0x7C00u);  // overflow -> inf
  if (hexp <= 0) {
    if (hexp < -10) return static_cast<std::uint16_t>(sign);  // underflow -> signed zero
    mant |= 0x00800000u;                                      // make the leading bit explicit
    const std::uint32_t shift = static_cast<std::uint32_t>(14 - hexp);
    std::uint32_t half_mant = mant >> shift;
    const std::uint32_t rem = mant & ((1u << shift) - 1u);
    const std::uint32_t halfway = 1u << (shift - 1);
    if (rem > halfway || (rem == halfway && (half_mant & 1u))) ++half_mant;
    return static_cast<std::uint16_t>(sign | half_mant);
  }
  std::uint16_t h = static_cast<std::uint16_t>(
      sign | (static_cast<std::uint32_t>(hexp) << 10) | (mant >> 13));
  const std::uint32_t rem = mant & 0x1FFFu;
  if (rem > 0x1000u || (rem == 0x1000u && (h & 1u))) ++h;  // carry may bump the exponent; that is correct
  return h;
}

inline double half_to_double(std::uint16_t h) {
  const std::uint32_t sign = (static_cast<std::uint32_t>(h) & 0x8000u) << 16;
  const std::uint32_t exp = (h >> 10) & 0x1Fu;
  std::uint32_t mant = h & 0x3FFu;
  std::uint32_t bits;
  if (exp == 0) {
    if (mant == 0) {
      bits = sign;  // signed zero
    } else {
      int e = -1;  // normalize the subnormal
      do {
        mant <<= 1;
        ++e;
      } while (!(mant & 0x400u));
      bits = sign | (static_cast<std::uint32_t>(127 - 15 - e) << 23) | ((mant & 0x3FFu) << 13);
    }
  } else if (exp == 0x1F) {
    bits = sign | 0x7F800000u | (mant << 13);
  } else {
    bits = sign | ((exp - 15 + 127) << 23) | (mant << 13);
  }
  return static_cast<double>(std::bit_cast<float>(bits));
}

inline double round_to_half(double value) { return half_to_double(half_from_double(value)); }

// -------------------------------------------------------------------- rng ---

// Deterministic random source. All distributions are implemented explicitly
// (rather than through std:: distributions, whose output is
// implementation-defined) so that a seed pins the exact sample stream on any
// platform. That property backs the bit-reproducibility contract of the
// trainer.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t next() { return gen_(); }

  // uniform in [0, 1) with 53 random bits
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller; caches the second variate
  double normal() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    constexpr double two_pi = 6.283185307179586476925286766559;
    spare_ = r * std::sin(two_pi * u2);
    have_spare_ = true;
    return r * std::cos(two_pi * u2);
  }

  // uniform integer in [0, n); modulo bias is irrelevant at 64 bits
  std::size_t below(std::size_t n) { return static_cast<std::size_t>(gen_() % n); }

  // Fisher-Yates, self-contained for cross-platform determinism
  template <class T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = below(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace addlc
