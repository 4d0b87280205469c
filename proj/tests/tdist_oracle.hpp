#pragma once

#include <cmath>
#include <numbers>

namespace tdist_oracle {

/// Student-t CDF for integer df from the closed-form finite series
/// (Abramowitz & Stegun 26.7.3 / 26.7.4), independent of the incomplete beta.
inline double cdf(double t, int df) {
  const double theta = std::atan(t / std::sqrt(static_cast<double>(df)));
  const double s = std::sin(theta), c = std::cos(theta);
  double a = 0.0;  // P(|T| < |t|) with the sign of t
  if (df % 2 == 0) {
    double term = 1.0, sum = 1.0;
    for (int k = 2; k <= df - 2; k += 2) {
      term *= c * c * (k - 1) / k;
      sum += term;
    }
    a = s * sum;
  } else {
    double sum = 0.0;
    if (df > 1) {
      double term = c;
      sum = c;
      for (int k = 3; k <= df - 2; k += 2) {
        term *= c * c * (k - 1) / k;
        sum += term;
      }
    }
    a = 2.0 / std::numbers::pi * (theta + s * sum);
  }
  return 0.5 + 0.5 * a;
}

}  // namespace tdist_oracle
