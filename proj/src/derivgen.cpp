#include "ensloss/derivgen.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <sstream>

#include "ensloss/errors.hpp"

namespace ensloss {

namespace {

constexpr double kTailSlack = 8.0 * std::numeric_limits<double>::epsilon();

// Indices sorted by margin, ascending; ties broken by index for stability.
std::vector<std::size_t> ascending_order(std::span<const double> margins) {
  std::vector<std::size_t> order(margins.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return margins[a] < margins[b]; });
  return order;
}

// Class id per position of `order` (0-based, ascending).
std::vector<std::size_t> class_ids(std::span<const double> margins, const std::vector<std::size_t>& order,
                                   double tie_eps) {
  std::vector<std::size_t> ids(order.size());
  std::size_t cls = 0;
  for (std::size_t k = 0; k < order.size(); ++k) {
    if (k > 0 && margins[order[k]] - margins[order[k - 1]] > tie_eps) ++cls;
    ids[k] = cls;
  }
  return ids;
}

}  // namespace

std::string RcCertificate::describe() const {
  std::ostringstream os;
  switch (violation) {
    case Violation::none: return "ok";
    case Violation::convexity: os << "convexity"; break;
    case Violation::calibration: os << "calibration"; break;
    case Violation::tail: os << "tail"; break;
  }
  if (witness) os << " violated at (" << witness->first << ", " << witness->second << ")";
  return os.str();
}

RcCertificate certify_rc(std::span<const double> margins, std::span<const double> derivs, double p,
                         double tie_eps) {
  if (margins.size() != derivs.size()) throw ShapeError("certify_rc: margins and derivs differ in length");
  if (!(p >= 1.0)) throw PreconditionError("certify_rc: p must be >= 1");
  RcCertificate cert;
  auto fail = [&](RcCertificate::Violation v, std::size_t i, std::size_t j) {
    cert.holds = false;
    cert.violation = v;
    cert.witness = std::make_pair(i, j);
    return cert;
  };

  const auto order = ascending_order(margins);
  const auto ids = class_ids(margins, order, tie_eps);
  const std::size_t n = order.size();

  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t i = order[k];
    if (margins[i] <= 0.0 && !(derivs[i] < 0.0)) return fail(RcCertificate::Violation::calibration, i, i);
  }

  // Within a class every derivative must agree; across adjacent classes the
  // derivative must not decrease. Adjacent checks suffice by transitivity.
  for (std::size_t k = 1; k < n; ++k) {
    const std::size_t prev = order[k - 1], cur = order[k];
    if (ids[k] == ids[k - 1]) {
      if (derivs[prev] != derivs[cur]) return fail(RcCertificate::Violation::convexity, prev, cur);
    } else if (derivs[prev] > derivs[cur]) {
      return fail(RcCertificate::Violation::convexity, prev, cur);
    }
  }

  // Tail: compare class representatives (largest margin of each class) with z >= 1.
  bool have_prev = false;
  double prev_h = 0.0;
  std::size_t prev_idx = 0;
  for (std::size_t k = 0; k < n; ++k) {
    const bool last_of_class = (k + 1 == n) || ids[k + 1] != ids[k];
    if (!last_of_class) continue;
    const std::size_t i = order[k];
    const double z = margins[i];
    if (z < 1.0) continue;
    const double h = std::pow(z, p) * derivs[i];
    if (have_prev && prev_h > h + kTailSlack * std::max(std::abs(h), std::abs(prev_h))) {
      return fail(RcCertificate::Violation::tail, prev_idx, i);
    }
    have_prev = true;
    prev_h = h;
    prev_idx = i;
  }
  return cert;
}

std::size_t count_margin_classes(std::span<const double> margins, double tie_eps) {
  if (margins.empty()) return 0;
  const auto order = ascending_order(margins);
  return class_ids(margins, order, tie_eps).back() + 1;
}

std::vector<double> assign_rc_derivatives(std::span<const double> margins, std::span<const double> raw_draws,
                                          double tie_eps) {
  const auto order = ascending_order(margins);
  const auto ids = class_ids(margins, order, tie_eps);
  const std::size_t n_classes = order.empty() ? 0 : ids.back() + 1;
  if (raw_draws.size() != n_classes) {
    throw ShapeError("assign_rc_derivatives: need one raw draw per margin class");
  }

  // Largest draw to the largest class, i.e. ascending draws to ascending classes.
  std::vector<double> sorted_draws(raw_draws.begin(), raw_draws.end());
  std::sort(sorted_draws.begin(), sorted_draws.end());

  // Representative margin of each class: its largest member.
  std::vector<double> rep(n_classes);
  for (std::size_t k = 0; k < order.size(); ++k) rep[ids[k]] = margins[order[k]];

  std::vector<double> class_deriv(n_classes);
  for (std::size_t c = 0; c < n_classes; ++c) {
    class_deriv[c] = rep[c] > 1.0 ? sorted_draws[c] / rep[c] : sorted_draws[c];
  }

  std::vector<double> out(margins.size());
  for (std::size_t k = 0; k < order.size(); ++k) out[order[k]] = class_deriv[ids[k]];
  return out;
}

DerivativeBatch generate_rc_derivatives(const MarginBatch& batch, const GenConfig& cfg, Rng& rng) {
  if (batch.size() < 2) throw PreconditionError("generate_rc_derivatives: batch needs at least 2 samples");
  for (double z : batch.margins) {
    if (!std::isfinite(z)) throw PreconditionError("generate_rc_derivatives: non-finite margin");
  }
  const std::size_t n_classes = count_margin_classes(batch.margins, cfg.tie_eps);
  std::vector<double> draws = sample_standard_normal(rng, n_classes);
  for (double& g : draws) g = -inv_box_cox(g, cfg.lambda);

  DerivativeBatch out;
  out.derivs = assign_rc_derivatives(batch.margins, draws, cfg.tie_eps);
  out.lambda_used = cfg.lambda.lambda();

  const auto cert = certify_rc(batch.margins, out.derivs, 1.0, cfg.tie_eps);
  const bool negative = std::all_of(out.derivs.begin(), out.derivs.end(), [](double g) { return g < 0.0; });
  if (!cert.holds || !negative) {
    throw Error("generate_rc_derivatives: internal RC self-check failed (" + cert.describe() + ")");
  }
  out.certified = true;
  return out;
}

DerivativeBatch fixed_loss_derivatives(const MarginBatch& batch, const LossSpec& loss) {
  DerivativeBatch out;
  out.derivs.resize(batch.size());
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const double g = loss.subderivative(batch.margins[b]);
    if (!std::isfinite(g)) {
      std::ostringstream os;
      os << "loss '" << loss.name << "' has a non-finite derivative at margin " << batch.margins[b];
      throw EvaluationError(os.str());
    }
    out.derivs[b] = g;
  }
  out.lambda_used = std::numeric_limits<double>::quiet_NaN();
  out.certified = false;
  return out;
}

BoxCoxParam maybe_resample_lambda(const GenConfig& cfg, int epoch, Rng& rng) {
  if (epoch < 0) throw PreconditionError("maybe_resample_lambda: epoch must be >= 0");
  if (cfg.resample_period < 0) throw ConfigError("resample period must be >= 0");
  if (cfg.resample_period == 0 || epoch % cfg.resample_period != 0) return cfg.lambda;
  if (cfg.lambda_pool.empty()) throw ConfigError("lambda resampling requested with an empty lambda pool");
  return BoxCoxParam(cfg.lambda_pool[rng.uniform_index(cfg.lambda_pool.size())]);
}

}  // namespace ensloss
