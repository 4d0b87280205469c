#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace ensloss {

/// Seeded pseudo-random generator: xoshiro256** with its state expanded from
/// a 64-bit seed by splitmix64. Every derived quantity (uniforms, normals,
/// shuffles) is computed in-repo so sequences are identical on every
/// platform and standard library.
///
/// Not thread-safe; give each worker its own instance (see `fork`).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0);

  std::uint64_t seed() const noexcept { return seed_; }

  std::uint64_t next_u64() noexcept;
  /// Uniform on [0, 1) with 53 random bits.
  double uniform() noexcept;
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t uniform_index(std::uint64_t n);
  /// Standard normal via the Marsaglia polar method (spare value cached).
  double normal() noexcept;

  /// Independent generator for a named sub-stream; does not advance *this.
  Rng fork(std::uint64_t stream) const;

  /// In-place Fisher-Yates shuffle.
  template <typename T>
  void shuffle(std::span<T> items) {
    for (std::size_t i = items.size(); i > 1; --i) {
      const auto j = static_cast<std::size_t>(uniform_index(i));
      std::swap(items[i - 1], items[j]);
    }
  }

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
  double spare_ = 0.0;
  bool has_spare_ = false;
};

std::uint64_t splitmix64(std::uint64_t& state) noexcept;

/// n independent N(0,1) draws. Throws ConfigError when n == 0.
std::vector<double> sample_standard_normal(Rng& rng, std::size_t n);

/// Box-Cox exponent; only lambda >= 0 is supported.
class BoxCoxParam {
 public:
  BoxCoxParam() = default;
  explicit BoxCoxParam(double lambda);
  double lambda() const noexcept { return lambda_; }
  friend bool operator==(const BoxCoxParam&, const BoxCoxParam&) = default;

 private:
  double lambda_ = 0.0;
};

inline constexpr double kInvBoxCoxFloor = 1e-12;
inline constexpr double kInvBoxCoxCeiling = 1e6;

/// (1 + lambda x)_+^(1/lambda), or exp(x) when lambda == 0. No clamping.
double inv_box_cox_unclamped(double x, BoxCoxParam p);

/// inv_box_cox_unclamped clamped into [kInvBoxCoxFloor, kInvBoxCoxCeiling],
/// so the result is always strictly positive and finite.
double inv_box_cox(double x, BoxCoxParam p);

/// (x^lambda - 1)/lambda, or log(x) when lambda == 0. Requires x > 0.
double box_cox(double x, BoxCoxParam p);

/// Standard normal CDF.
double normal_cdf(double x) noexcept;

}  // namespace ensloss
