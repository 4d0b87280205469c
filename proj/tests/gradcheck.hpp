#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "ensloss/losses.hpp"
#include "ensloss/models.hpp"
#include "ensloss/numerics.hpp"

namespace gradcheck {

using ensloss::Matrix;
using ensloss::MlpModel;

struct Instance {
  MlpModel model;
  Matrix X;
  std::vector<double> y;
};

/// Pre-activations and margins kept at least `gap` away from non-smooth points,
/// so central differences with a small step see a smooth function.
inline bool smooth_enough(const MlpModel& model, const Matrix& X, const std::vector<double>& y,
                          const std::vector<double>& kinks, double gap) {
  ensloss::Rng unused(0);
  const auto cache = ensloss::forward(model, X, false, unused);
  if (model.activation() == ensloss::Activation::relu) {
    for (const auto& z : cache.pre_activations) {
      if ((z.array().abs() < gap).any()) return false;
    }
  }
  for (Eigen::Index b = 0; b < X.rows(); ++b) {
    const double m = y[static_cast<std::size_t>(b)] * cache.scores(b);
    for (double k : kinks) {
      if (std::abs(m - k) < gap) return false;
    }
  }
  return true;
}

inline Instance random_instance(ensloss::Rng& rng, const std::vector<double>& kinks, double gap = 1e-3) {
  for (;;) {
    const int d = 2 + static_cast<int>(rng.uniform_index(4));
    const int B = 2 + static_cast<int>(rng.uniform_index(7));
    const int hidden = static_cast<int>(rng.uniform_index(3));
    std::vector<int> dims{d};
    for (int h = 0; h < hidden; ++h) dims.push_back(3 + static_cast<int>(rng.uniform_index(8)));
    dims.push_back(1);
    const auto act = rng.uniform() < 0.5 ? ensloss::Activation::relu : ensloss::Activation::tanh;
    const double wd = rng.uniform() < 0.5 ? 0.0 : 0.01;
    Instance inst{MlpModel(dims, act, 0.0, wd, rng), Matrix(B, d), std::vector<double>(static_cast<std::size_t>(B))};
    for (int b = 0; b < B; ++b) {
      for (int j = 0; j < d; ++j) inst.X(b, j) = rng.normal();
      inst.y[static_cast<std::size_t>(b)] = rng.uniform() < 0.5 ? -1.0 : 1.0;
    }
    if (smooth_enough(inst.model, inst.X, inst.y, kinks, gap)) return inst;
  }
}

/// Objective whose exact gradient backward_with_derivs should return:
/// mean_b loss(y_b f(x_b)) + (wd / 2) sum ||W||^2.
inline double objective(const MlpModel& m, const Matrix& X, const std::vector<double>& y,
                        const std::function<double(std::size_t, double)>& per_sample) {
  const auto s = ensloss::predict(m, X);
  double total = 0.0;
  for (Eigen::Index b = 0; b < X.rows(); ++b) {
    total += per_sample(static_cast<std::size_t>(b), y[static_cast<std::size_t>(b)] * s(b));
  }
  total /= static_cast<double>(X.rows());
  double reg = 0.0;
  for (std::size_t l = 0; l < m.num_layers(); ++l) reg += m.weight(l).squaredNorm();
  return total + 0.5 * m.weight_decay() * reg;
}

/// Norm-wise relative error between the analytic gradient and central differences.
inline double relative_error(const Instance& inst, const std::vector<double>& g,
                             const std::function<double(std::size_t, double)>& per_sample, double h = 1e-5) {
  ensloss::Rng unused(0);
  const auto cache = ensloss::forward(inst.model, inst.X, false, unused);
  const auto analytic = ensloss::backward_with_derivs(inst.model, cache, inst.y, g).flatten();
  MlpModel probe = inst.model;
  auto theta = probe.parameters();
  double num = 0.0, den_a = 0.0, den_n = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    const double t0 = theta[i];
    theta[i] = t0 + h;
    probe.set_parameters(theta);
    const double fp = objective(probe, inst.X, inst.y, per_sample);
    theta[i] = t0 - h;
    probe.set_parameters(theta);
    const double fm = objective(probe, inst.X, inst.y, per_sample);
    theta[i] = t0;
    const double fd = (fp - fm) / (2 * h);
    num += (fd - analytic[i]) * (fd - analytic[i]);
    den_a += analytic[i] * analytic[i];
    den_n += fd * fd;
  }
  const double scale = std::max({std::sqrt(den_a), std::sqrt(den_n), 1e-12});
  return std::sqrt(num) / scale;
}

}  // namespace gradcheck
