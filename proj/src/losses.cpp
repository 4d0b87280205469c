#include "ensloss/losses.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numbers>
#include <sstream>

#include <json.hpp>

#include "ensloss/derivgen.hpp"
#include "ensloss/errors.hpp"

namespace ensloss {

const char* to_string(TailClass t) noexcept {
  switch (t) {
    case TailClass::smooth: return "smooth";
    case TailClass::zero: return "zero";
    case TailClass::exponential: return "exponential";
    case TailClass::inverse: return "inverse";
    case TailClass::inverse_log: return "inverse_log";
    case TailClass::logarithm: return "logarithm";
    case TailClass::piecewise_linear: return "piecewise_linear";
  }
  return "unknown";
}

namespace {

// log(1 + e^{-z}) without overflow for large |z|.
double softplus_neg(double z) {
  if (z >= 0.0) return std::log1p(std::exp(-z));
  return -z + std::log1p(std::exp(z));
}

// d/dz log(1 + e^{-z}) = -1 / (1 + e^{z}).
double softplus_neg_deriv(double z) {
  if (z >= 0.0) {
    const double e = std::exp(-z);
    return -e / (1.0 + e);
  }
  return -1.0 / (1.0 + std::exp(z));
}

LossSpec hinge_with_tail(std::string name, TailClass tail, std::function<double(double)> tail_value,
                         std::function<double(double)> tail_deriv) {
  LossSpec s;
  s.name = std::move(name);
  s.value = [tv = std::move(tail_value)](double z) { return z <= 1.0 ? 1.0 - z : tv(z); };
  s.subderivative = [td = std::move(tail_deriv)](double z) { return z <= 1.0 ? -1.0 : td(z); };
  s.differentiable_at_zero = true;
  s.deriv_at_zero = -1.0;
  s.tail = tail;
  // Only the zero tail breaks differentiability at 1; the other tails leave
  // the right slope at -1 there.
  if (tail == TailClass::zero) s.kinks = {1.0};
  return s;
}

using Factory = LossSpec (*)();

const std::map<std::string, Factory>& registry() {
  static const std::map<std::string, Factory> table = {
      {"logistic",
       [] {
         return LossSpec{"logistic", softplus_neg, softplus_neg_deriv, true, -0.5, TailClass::smooth, {}};
       }},
      {"logistic2z",
       [] {
         return LossSpec{"logistic2z", [](double z) { return softplus_neg(2.0 * z); },
                         [](double z) { return 2.0 * softplus_neg_deriv(2.0 * z); }, true, -1.0,
                         TailClass::smooth, {}};
       }},
      {"hinge",
       [] {
         return LossSpec{"hinge", [](double z) { return std::max(1.0 - z, 0.0); },
                         [](double z) { return z <= 1.0 ? -1.0 : 0.0; }, true, -1.0, TailClass::zero, {1.0}};
       }},
      {"exponential",
       [] {
         return LossSpec{"exponential", [](double z) { return std::exp(-z); },
                         [](double z) { return -std::exp(-z); }, true, -1.0, TailClass::smooth, {}};
       }},
      {"squared",
       [] {
         return LossSpec{"squared", [](double z) { return (1.0 - z) * (1.0 - z); },
                         [](double z) { return -2.0 * (1.0 - z); }, true, -2.0, TailClass::smooth, {}};
       }},
      {"hinge_zero_tail",
       [] {
         return hinge_with_tail("hinge_zero_tail", TailClass::zero, [](double) { return 0.0; },
                                [](double) { return 0.0; });
       }},
      {"hinge_exp_tail",
       [] {
         return hinge_with_tail(
             "hinge_exp_tail", TailClass::exponential, [](double z) { return std::exp(-(z - 1.0)) - 1.0; },
             [](double z) { return -std::exp(-(z - 1.0)); });
       }},
      {"hinge_inverse_tail",
       [] {
         return hinge_with_tail("hinge_inverse_tail", TailClass::inverse, [](double z) { return 1.0 / z - 1.0; },
                                [](double z) { return -1.0 / (z * z); });
       }},
      {"hinge_invlog_tail",
       [] {
         constexpr double e = std::numbers::e;
         return hinge_with_tail(
             "hinge_invlog_tail", TailClass::inverse_log,
             [](double z) { return e / std::log(z + e - 1.0) - e; },
             [](double z) {
               const double l = std::log(z + e - 1.0);
               return -e / ((z + e - 1.0) * l * l);
             });
       }},
      {"hinge_log_tail",
       [] {
         return hinge_with_tail("hinge_log_tail", TailClass::logarithm, [](double z) { return -std::log(z); },
                                [](double z) { return -1.0 / z; });
       }},
  };
  return table;
}

const std::map<std::string, std::string>& aliases() {
  static const std::map<std::string, std::string> table = {{"bce", "logistic"}, {"exp", "exponential"}};
  return table;
}

double eval_finite(const std::function<double(double)>& f, double z, const char* what) {
  const double v = f(z);
  if (!std::isfinite(v)) {
    std::ostringstream os;
    os << what << " is not finite at z = " << z;
    throw EvaluationError(os.str());
  }
  return v;
}

}  // namespace

const std::vector<std::string>& builtin_loss_names() {
  static const std::vector<std::string> names = [] {
    std::vector<std::string> out;
    for (const auto& [name, _] : registry()) out.push_back(name);
    return out;
  }();
  return names;
}

LossSpec builtin_loss(const std::string& name) {
  std::string key = name;
  if (auto a = aliases().find(name); a != aliases().end()) key = a->second;
  const auto it = registry().find(key);
  if (it == registry().end()) {
    std::ostringstream os;
    os << "unknown loss '" << name << "'; valid losses:";
    for (const auto& n : builtin_loss_names()) os << ' ' << n;
    for (const auto& [alias, target] : aliases()) os << ' ' << alias;
    throw ConfigError(os.str());
  }
  return it->second();
}

CalibrationCertificate check_calibration(const LossSpec& loss) {
  CalibrationCertificate cert;
  const double f0 = eval_finite(loss.value, 0.0, "loss value");
  bool agree = false;
  for (double h = kCalibrationStep; h >= 1e-10 * 0.99; h /= 10.0) {
    const double fl = eval_finite(loss.value, -h, "loss value");
    const double fr = eval_finite(loss.value, h, "loss value");
    cert.left_slope = (f0 - fl) / h;
    cert.right_slope = (fr - f0) / h;
    cert.derivative = (fr - fl) / (2.0 * h);
    if (std::abs(cert.left_slope - cert.right_slope) <= kCalibrationAgreement) {
      agree = true;
      break;
    }
  }
  if (!agree) {
    // Report the quotients from the nominal step.
    const double h = kCalibrationStep;
    cert.left_slope = (f0 - loss.value(-h)) / h;
    cert.right_slope = (loss.value(h) - f0) / h;
    cert.derivative = (loss.value(h) - loss.value(-h)) / (2.0 * h);
    std::ostringstream os;
    os << "not differentiable at 0 (left slope " << cert.left_slope << " != right slope " << cert.right_slope << ")";
    cert.reason = os.str();
    return cert;
  }
  if (!(cert.derivative < 0.0)) {
    std::ostringstream os;
    os << "phi'(0) is not negative (phi'(0) = " << cert.derivative << ")";
    cert.reason = os.str();
    return cert;
  }
  cert.calibrated = true;
  cert.reason = "ok";
  return cert;
}

TailCertificate check_superlinear_tail(const LossSpec& loss, double p, double z0, std::size_t grid) {
  if (grid < 2) throw PreconditionError("check_superlinear_tail: grid must have at least 2 points");
  if (!(z0 > 0.0)) throw PreconditionError("check_superlinear_tail: z0 must be positive");
  TailCertificate cert;
  const double ratio = std::pow(1e3, 1.0 / static_cast<double>(grid - 1));
  double z_prev = z0;
  double h_prev = std::pow(z0, p) * eval_finite(loss.subderivative, z0, "loss derivative");
  for (std::size_t k = 1; k < grid; ++k) {
    const double z = (k + 1 == grid) ? z0 * 1e3 : z0 * std::pow(ratio, static_cast<double>(k));
    const double h = std::pow(z, p) * eval_finite(loss.subderivative, z, "loss derivative");
    if (h < h_prev - 1e-9) {
      cert.witness = std::make_pair(z_prev, z);
      return cert;
    }
    z_prev = z;
    h_prev = h;
  }
  cert.holds = true;
  return cert;
}

BoundedBelowCertificate check_bounded_below(const LossSpec& loss, double scan_max) {
  if (!(scan_max > 1.0)) throw PreconditionError("check_bounded_below: scan_max must exceed 1");
  constexpr int kPerDecade = 20;
  constexpr int kLinear = 200;
  const double decades = std::log10(scan_max);
  const int n_geo = std::max(1, static_cast<int>(std::ceil(decades * kPerDecade)));

  std::vector<double> right;  // (1, scan_max], ascending
  for (int k = 1; k <= n_geo; ++k) {
    right.push_back(k == n_geo ? scan_max : std::pow(10.0, decades * k / n_geo));
  }
  std::vector<double> grid;
  for (auto it = right.rbegin(); it != right.rend(); ++it) grid.push_back(-*it);
  for (int k = 0; k <= kLinear; ++k) grid.push_back(-1.0 + 2.0 * k / kLinear);
  grid.insert(grid.end(), right.begin(), right.end());

  const double last_decade_start = scan_max / 10.0;
  double min_all = std::numeric_limits<double>::infinity();
  double min_before = std::numeric_limits<double>::infinity();
  std::vector<double> values(grid.size());
  for (std::size_t i = 0; i < grid.size(); ++i) {
    const double v = loss.value(grid[i]);
    if (std::isnan(v) || v == -std::numeric_limits<double>::infinity()) {
      std::ostringstream os;
      os << "loss value is not finite at z = " << grid[i];
      throw EvaluationError(os.str());
    }
    values[i] = v;
    if (v == std::numeric_limits<double>::infinity()) continue;
    min_all = std::min(min_all, v);
    if (grid[i] <= last_decade_start) min_before = std::min(min_before, v);
  }

  BoundedBelowCertificate cert;
  const std::size_t n = grid.size();
  cert.final_slope = (values[n - 1] - values[n - 2]) / (grid[n - 1] - grid[n - 2]);
  cert.inf_estimate = min_all;
  const bool stabilized = std::isfinite(min_all) && (min_before - min_all) < 1e-3 * (1.0 + std::abs(min_all));
  cert.bounded = stabilized && cert.final_slope >= -1e-9;
  return cert;
}

PiecewiseLinearLoss::PiecewiseLinearLoss(std::vector<double> knots, std::vector<double> slopes, double anchor)
    : knots_(std::move(knots)), slopes_(std::move(slopes)) {
  if (knots_.empty() || slopes_.size() != knots_.size() + 1) {
    throw ShapeError("PiecewiseLinearLoss: need k >= 1 knots and k + 1 slopes");
  }
  if (!std::is_sorted(knots_.begin(), knots_.end()) ||
      std::adjacent_find(knots_.begin(), knots_.end()) != knots_.end()) {
    throw PreconditionError("PiecewiseLinearLoss: knots must be strictly increasing");
  }
  // Knot values are accumulated outward from z = 0 so values near 0 carry no
  // rounding from distant pieces.
  const std::size_t n = knots_.size();
  knot_values_.resize(n);
  anchor_ = anchor;
  zero_segment_ = segment(0.0);
  const std::size_t s0 = zero_segment_;
  if (s0 < n) knot_values_[s0] = anchor + slopes_[s0] * knots_[s0];
  if (s0 > 0) knot_values_[s0 - 1] = anchor + slopes_[s0] * knots_[s0 - 1];
  for (std::size_t i = s0 + 1; i < n; ++i) {
    knot_values_[i] = knot_values_[i - 1] + slopes_[i] * (knots_[i] - knots_[i - 1]);
  }
  for (std::size_t i = s0 > 0 ? s0 - 1 : 0; i-- > 0;) {
    knot_values_[i] = knot_values_[i + 1] - slopes_[i + 1] * (knots_[i + 1] - knots_[i]);
  }
}

std::size_t PiecewiseLinearLoss::segment(double z) const {
  return static_cast<std::size_t>(std::lower_bound(knots_.begin(), knots_.end(), z) - knots_.begin());
}

double PiecewiseLinearLoss::value(double z) const {
  const std::size_t s = segment(z);
  if (s == zero_segment_) return anchor_ + slopes_[s] * z;
  if (s == 0) return knot_values_[0] + slopes_[0] * (z - knots_[0]);
  return knot_values_[s - 1] + slopes_[s] * (z - knots_[s - 1]);
}

double PiecewiseLinearLoss::derivative(double z) const { return slopes_[segment(z)]; }

LossSpec PiecewiseLinearLoss::as_loss_spec(std::string name) const {
  auto self = std::make_shared<const PiecewiseLinearLoss>(*this);
  LossSpec s;
  s.name = std::move(name);
  s.value = [self](double z) { return self->value(z); };
  s.subderivative = [self](double z) { return self->derivative(z); };
  s.differentiable_at_zero = std::find(knots_.begin(), knots_.end(), 0.0) == knots_.end();
  s.deriv_at_zero = derivative(0.0);
  s.tail = TailClass::piecewise_linear;
  s.kinks = knots_;
  return s;
}

PiecewiseLinearLoss reconstruct_loss(const std::vector<double>& margins, const std::vector<double>& derivs) {
  if (margins.size() != derivs.size()) throw ShapeError("reconstruct_loss: margins and derivs differ in length");
  if (margins.empty()) throw PreconditionError("reconstruct_loss: empty batch");
  if (const auto rc = certify_rc(margins, derivs, 1.0); !rc.holds) {
    throw PreconditionError("reconstruct_loss: input violates the RC conditions (" + rc.describe() + ")");
  }

  std::vector<std::pair<double, double>> pts;
  pts.reserve(margins.size() + 1);
  for (std::size_t i = 0; i < margins.size(); ++i) pts.emplace_back(margins[i], derivs[i]);
  std::sort(pts.begin(), pts.end());
  pts.erase(std::unique(pts.begin(), pts.end(), [](const auto& a, const auto& b) { return a.first == b.first; }),
            pts.end());

  // Insert z = 0 unless it is already a sample point.
  const auto at = std::lower_bound(pts.begin(), pts.end(), 0.0, [](const auto& p, double v) { return p.first < v; });
  if (at == pts.end() || at->first != 0.0) {
    const std::size_t b0 = static_cast<std::size_t>(at - pts.begin());
    double g0;
    if (b0 == 0) {
      g0 = std::min(pts[0].second, -1.0);
    } else if (b0 == pts.size()) {
      g0 = pts[b0 - 1].second / 2.0;
    } else {
      const double prev = pts[b0 - 1].second;
      const double next = pts[b0].second;
      g0 = std::min(prev / 2.0, (prev + next) / 2.0);
    }
    pts.insert(pts.begin() + static_cast<std::ptrdiff_t>(b0), {0.0, g0});
  }

  const std::size_t m = pts.size();
  std::vector<double> knots(m);
  std::vector<double> slopes(m + 1);
  for (std::size_t i = 0; i + 1 < m; ++i) knots[i] = (pts[i].first + pts[i + 1].first) / 2.0;
  knots[m - 1] = pts[m - 1].first + 1.0;
  for (std::size_t i = 0; i < m; ++i) slopes[i] = pts[i].second;
  slopes[m] = std::max(pts[m - 1].second, 1.0);
  return PiecewiseLinearLoss(std::move(knots), std::move(slopes), 0.0);
}

FiniteLossMixture::FiniteLossMixture(std::vector<Component> components) : components_(std::move(components)) {
  if (components_.empty()) throw ConfigError("FiniteLossMixture: no components");
  double total = 0.0;
  for (const auto& c : components_) {
    if (!(c.weight > 0.0) || c.weight > 1.0) throw ConfigError("FiniteLossMixture: weights must lie in (0, 1]");
    total += c.weight;
  }
  if (std::abs(total - 1.0) > 1e-12) throw ConfigError("FiniteLossMixture: weights must sum to 1");
}

FiniteLossMixture FiniteLossMixture::single(LossSpec loss) {
  return FiniteLossMixture({Component{std::move(loss), 1.0}});
}

double mixture_loss_value(const FiniteLossMixture& mix, double z) {
  double v = 0.0;
  for (const auto& c : mix.components()) v += c.weight * c.loss.value(z);
  return v;
}

namespace {

double golden_section_min(const std::function<double(double)>& f, double lo, double hi, double tol) {
  const double inv_phi = (std::sqrt(5.0) - 1.0) / 2.0;
  double a = lo, b = hi;
  double c = b - inv_phi * (b - a);
  double d = a + inv_phi * (b - a);
  double fc = f(c), fd = f(d);
  while (b - a > tol) {
    if (fc <= fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - inv_phi * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + inv_phi * (b - a);
      fd = f(d);
    }
  }
  // Refine: the bracket endpoints can beat the interior probes on a flat or
  // boundary minimum.
  return std::min({fc, fd, f(a), f(b), f((a + b) / 2.0)});
}

}  // namespace

double psi_transform(const FiniteLossMixture& mix, double theta, const AlphaSearch& search) {
  if (!(theta >= 0.0 && theta <= 1.0)) throw DomainError("psi_transform: theta must lie in [0, 1]");
  const double wp = (1.0 + theta) / 2.0;
  const double wm = (1.0 - theta) / 2.0;
  auto objective = [&](double alpha) {
    return wp * mixture_loss_value(mix, alpha) + wm * mixture_loss_value(mix, -alpha);
  };
  const double inner = golden_section_min(objective, search.lo, search.hi, search.tol);
  const double at_zero = mixture_loss_value(mix, 0.0);
  return std::max(0.0, at_zero - std::min(inner, at_zero));
}

double excess_risk_bound(const FiniteLossMixture& mix, double surrogate_excess, const AlphaSearch& search) {
  if (!(surrogate_excess >= 0.0)) throw PreconditionError("excess_risk_bound: surrogate excess must be >= 0");
  if (surrogate_excess == 0.0) return 0.0;
  if (surrogate_excess >= psi_transform(mix, 1.0, search)) return 1.0;
  double lo = 0.0, hi = 1.0;
  while (hi - lo > 1e-12) {
    const double mid = 0.5 * (lo + hi);
    if (psi_transform(mix, mid, search) >= surrogate_excess) {
      hi = mid;
    } else {
      lo = mid;
    }
  }
  return hi;
}

LossReport check_loss(const LossSpec& loss, double tail_p, double tail_z0, double scan_max) {
  LossReport r;
  r.name = loss.name;
  r.calibration = check_calibration(loss);
  r.bounded_below = check_bounded_below(loss, scan_max);
  r.tail = check_superlinear_tail(loss, tail_p, tail_z0, 200);
  r.tail_p = tail_p;
  r.tail_z0 = tail_z0;
  return r;
}

std::string to_json(const LossReport& r, int indent) {
  nlohmann::ordered_json j;
  j["name"] = r.name;
  j["calibrated"] = r.calibration.calibrated;
  j["calibration_reason"] = r.calibration.reason;
  j["deriv_at_zero"] = r.calibration.derivative;
  j["bounded_below"] = r.bounded_below.bounded;
  j["inf_estimate"] = r.bounded_below.inf_estimate;
  j["final_slope"] = r.bounded_below.final_slope;
  j["tail_ok"] = r.tail.holds;
  j["tail_p"] = r.tail_p;
  j["tail_z0"] = r.tail_z0;
  if (r.tail.witness) {
    j["tail_witness"] = {r.tail.witness->first, r.tail.witness->second};
  } else {
    j["tail_witness"] = nullptr;
  }
  return j.dump(indent);
}

std::string to_text(const LossReport& r) {
  std::ostringstream os;
  os << "loss:           " << r.name << '\n';
  os << "calibrated:     " << (r.calibration.calibrated ? "true" : "false") << " (" << r.calibration.reason << ")\n";
  os << "bounded_below:  " << (r.bounded_below.bounded ? "true" : "false")
     << " (inf estimate " << r.bounded_below.inf_estimate << ")\n";
  os << "tail_ok:        " << (r.tail.holds ? "true" : "false") << " (p = " << r.tail_p << ", z0 = " << r.tail_z0;
  if (r.tail.witness) os << ", witness " << r.tail.witness->first << " -> " << r.tail.witness->second;
  os << ")\n";
  if (!r.bounded_below.bounded) {
    os << "warning: loss is unbounded below; SGD training with it is prone to instability\n";
  }
  return os.str();
}

}  // namespace ensloss
