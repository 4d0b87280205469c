#pragma once

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace ensloss {

/// Tail behaviour of a loss to the right of its margin-1 region.
enum class TailClass { smooth, zero, exponential, inverse, inverse_log, logarithm, piecewise_linear };

const char* to_string(TailClass t) noexcept;

/// A surrogate margin loss phi(z) together with a subderivative.
///
/// At kinks the subderivative is the left derivative (hinge at z = 1 gives -1).
/// `kinks` lists the non-differentiable points so numeric tests can avoid them.
struct LossSpec {
  std::string name;
  std::function<double(double)> value;
  std::function<double(double)> subderivative;
  bool differentiable_at_zero = true;
  double deriv_at_zero = 0.0;
  TailClass tail = TailClass::smooth;
  std::vector<double> kinks;
};

/// Names accepted by builtin_loss (aliases excluded).
const std::vector<std::string>& builtin_loss_names();

/// Analytic losses: logistic, logistic2z, hinge, exponential, squared and the
/// hinge-tail family (hinge_zero_tail, hinge_exp_tail, hinge_inverse_tail,
/// hinge_invlog_tail, hinge_log_tail). Aliases: bce -> logistic, exp -> exponential.
/// Throws ConfigError on unknown names.
LossSpec builtin_loss(const std::string& name);

struct CalibrationCertificate {
  bool calibrated = false;
  std::string reason;
  double left_slope = 0.0;
  double right_slope = 0.0;
  /// Symmetric difference quotient at zero.
  double derivative = 0.0;
};

inline constexpr double kCalibrationStep = 1e-6;
inline constexpr double kCalibrationAgreement = 1e-4;

/// Numeric test of "differentiable at 0 with phi'(0) < 0".
///
/// Left and right difference quotients with step 1e-6 must agree to 1e-4.
/// When they do not, the step is shrunk by decades down to 1e-10 before the
/// loss is declared non-differentiable, so a kink that merely sits close to
/// zero is not mistaken for a kink at zero.
CalibrationCertificate check_calibration(const LossSpec& loss);

struct TailCertificate {
  bool holds = false;
  /// First violating grid pair (z_k, z_{k+1}) when !holds.
  std::optional<std::pair<double, double>> witness;
};

/// h(z) = z^p * dphi(z) must be nondecreasing (within 1e-9) on a geometric
/// grid of `grid` points spanning [z0, 1000 z0].
TailCertificate check_superlinear_tail(const LossSpec& loss, double p, double z0, std::size_t grid);

struct BoundedBelowCertificate {
  bool bounded = false;
  double inf_estimate = 0.0;
  double final_slope = 0.0;
};

inline constexpr double kDefaultScanMax = 1e30;

/// Scans phi on a grid over [-scan_max, scan_max] (linear on [-1, 1],
/// geometric outside). Bounded when the running minimum moves by less than
/// 1e-3 (1 + |min|) over the last decade and the final slope is >= -1e-9.
/// +inf values are ignored; NaN or -inf raise EvaluationError.
BoundedBelowCertificate check_bounded_below(const LossSpec& loss, double scan_max = kDefaultScanMax);

/// Continuous convex piecewise-linear loss rebuilt from (margin, derivative)
/// pairs. slopes[0] applies for z <= knots[0], slopes[k] on (knots[k-1], knots[k]],
/// and slopes.back() beyond the last knot. `anchor` is the value at z = 0.
class PiecewiseLinearLoss {
 public:
  PiecewiseLinearLoss(std::vector<double> knots, std::vector<double> slopes, double anchor);

  const std::vector<double>& knots() const noexcept { return knots_; }
  const std::vector<double>& slopes() const noexcept { return slopes_; }
  double anchor() const noexcept { return anchor_; }

  double value(double z) const;
  /// Left derivative at knots.
  double derivative(double z) const;

  LossSpec as_loss_spec(std::string name = "reconstructed") const;

 private:
  std::size_t segment(double z) const;

  std::vector<double> knots_;
  std::vector<double> slopes_;
  std::vector<double> knot_values_;
  double anchor_ = 0.0;
  std::size_t zero_segment_ = 0;
};

/// Builds a bounded-below convex calibrated loss whose derivative at every
/// input margin equals the given derivative. A point z = 0 is inserted with
/// slope min(g_prev / 2, (g_prev + g_next) / 2) (or min(g_next, -1) when it is
/// the smallest point, g_prev / 2 when it is the largest); segments break at
/// midpoints; the last knot is z_max + 1 followed by slope max(g_last, 1).
/// Equal margins (which must carry equal derivatives) are merged. The result
/// is anchored at phi(0) = 0.
/// Throws PreconditionError when the pairs violate the RC conditions.
PiecewiseLinearLoss reconstruct_loss(const std::vector<double>& margins, const std::vector<double>& derivs);

/// Weighted finite mixture of losses. Weights positive, summing to 1 (1e-12).
class FiniteLossMixture {
 public:
  struct Component {
    LossSpec loss;
    double weight;
  };

  explicit FiniteLossMixture(std::vector<Component> components);
  static FiniteLossMixture single(LossSpec loss);

  const std::vector<Component>& components() const noexcept { return components_; }

 private:
  std::vector<Component> components_;
};

double mixture_loss_value(const FiniteLossMixture& mix, double z);

struct AlphaSearch {
  double lo = -50.0;
  double hi = 50.0;
  double tol = 1e-8;
};

/// psi(theta) = E Phi(0) - inf_alpha E[(1+theta)/2 Phi(alpha) + (1-theta)/2 Phi(-alpha)],
/// the infimum found by golden-section search (the objective is convex in alpha).
double psi_transform(const FiniteLossMixture& mix, double theta, const AlphaSearch& search = {});

/// Upper bound on the zero-one excess risk implied by a surrogate excess:
/// psi^{-1}(surrogate_excess) by bisection, capped at 1.
double excess_risk_bound(const FiniteLossMixture& mix, double surrogate_excess, const AlphaSearch& search = {});

/// All three numeric checks for one loss, in a serializable form.
struct LossReport {
  std::string name;
  CalibrationCertificate calibration;
  BoundedBelowCertificate bounded_below;
  TailCertificate tail;
  double tail_p = 1.01;
  double tail_z0 = 2.0;
};

LossReport check_loss(const LossSpec& loss, double tail_p = 1.01, double tail_z0 = 2.0,
                      double scan_max = kDefaultScanMax);

std::string to_json(const LossReport& report, int indent = 2);
std::string to_text(const LossReport& report);

}  // namespace ensloss
