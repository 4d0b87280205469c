#include "ensloss/numerics.hpp"

#include <cmath>
#include <limits>
#include <string>

#include "ensloss/errors.hpp"

namespace ensloss {

namespace {

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
  return (x << k) | (x >> (64 - k));
}

}  // namespace

std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed) {
  std::uint64_t sm = seed;
  for (auto& s : state_) s = splitmix64(sm);
}

std::uint64_t Rng::next_u64() noexcept {
  const std::uint64_t result = rotl(state_[1] * 5, 7) * 9;
  const std::uint64_t t = state_[1] << 17;
  state_[2] ^= state_[0];
  state_[3] ^= state_[1];
  state_[1] ^= state_[2];
  state_[0] ^= state_[3];
  state_[2] ^= t;
  state_[3] = rotl(state_[3], 45);
  return result;
}

double Rng::uniform() noexcept {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

std::uint64_t Rng::uniform_index(std::uint64_t n) {
  if (n == 0) throw ConfigError("uniform_index: empty range");
  // Rejection sampling on the top of the range keeps the draw unbiased.
  const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                              std::numeric_limits<std::uint64_t>::max() % n;
  std::uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return r % n;
}

double Rng::normal() noexcept {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  double u, v, s;
  do {
    u = 2.0 * uniform() - 1.0;
    v = 2.0 * uniform() - 1.0;
    s = u * u + v * v;
  } while (s >= 1.0 || s == 0.0);
  const double m = std::sqrt(-2.0 * std::log(s) / s);
  spare_ = v * m;
  has_spare_ = true;
  return u * m;
}

Rng Rng::fork(std::uint64_t stream) const {
  std::uint64_t sm = seed_ ^ (0xd1b54a32d192ed03ULL * (stream + 1));
  return Rng(splitmix64(sm));
}

std::vector<double> sample_standard_normal(Rng& rng, std::size_t n) {
  if (n == 0) throw ConfigError("sample_standard_normal: requested zero samples");
  std::vector<double> out(n);
  for (auto& x : out) x = rng.normal();
  return out;
}

BoxCoxParam::BoxCoxParam(double lambda) : lambda_(lambda) {
  if (!std::isfinite(lambda) || lambda < 0.0) {
    throw DomainError("Box-Cox lambda must be finite and >= 0, got " + std::to_string(lambda));
  }
}

double inv_box_cox_unclamped(double x, BoxCoxParam p) {
  if (!std::isfinite(x)) throw DomainError("inv_box_cox: non-finite argument");
  const double lambda = p.lambda();
  if (lambda == 0.0) return std::exp(x);
  const double base = 1.0 + lambda * x;
  if (base <= 0.0) return 0.0;
  return std::pow(base, 1.0 / lambda);
}

double inv_box_cox(double x, BoxCoxParam p) {
  const double y = inv_box_cox_unclamped(x, p);
  if (!(y >= kInvBoxCoxFloor)) return kInvBoxCoxFloor;
  if (!(y <= kInvBoxCoxCeiling)) return kInvBoxCoxCeiling;
  return y;
}

double box_cox(double x, BoxCoxParam p) {
  if (!(x > 0.0) || !std::isfinite(x)) throw DomainError("box_cox: argument must be positive and finite");
  const double lambda = p.lambda();
  if (lambda == 0.0) return std::log(x);
  return std::expm1(lambda * std::log(x)) / lambda;
}

double normal_cdf(double x) noexcept { return 0.5 * std::erfc(-x / std::sqrt(2.0)); }

}  // namespace ensloss
