#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ensloss/losses.hpp"
#include "ensloss/numerics.hpp"

namespace ensloss {

/// Margins z_b = y_b f(x_b) of one minibatch.
struct MarginBatch {
  std::vector<double> margins;
  /// Dataset row of each margin; may be empty when the caller does not track it.
  std::vector<std::size_t> sample_ids;

  std::size_t size() const noexcept { return margins.size(); }
};

/// Per-sample loss derivatives aligned to a MarginBatch.
struct DerivativeBatch {
  std::vector<double> derivs;
  /// Box-Cox lambda used for the draw; NaN for fixed-loss derivatives.
  double lambda_used = 0.0;
  /// True only when produced by the RC generator and its self-check passed.
  bool certified = false;
};

struct GenConfig {
  BoxCoxParam lambda{};
  /// Redraw lambda from lambda_pool every this many epochs; 0 keeps it fixed.
  int resample_period = 0;
  std::vector<double> lambda_pool;
  /// Margins closer than this are one equality class. 0 means exact ties only.
  double tie_eps = 0.0;
};

/// Result of checking RC conditions on a (margins, derivs) pair.
struct RcCertificate {
  enum class Violation { none, convexity, calibration, tail };

  bool holds = true;
  Violation violation = Violation::none;
  /// Original indices of the first violating pair (i == j for single-sample
  /// violations such as calibration).
  std::optional<std::pair<std::size_t, std::size_t>> witness;

  std::string describe() const;
};

/// Checks the three RC conditions:
///   convexity   g_i <= g_j when z_i < z_j, g_i == g_j when z_i == z_j;
///   calibration g_i < 0 when z_i <= 0;
///   tail        z_i^p g_i <= z_j^p g_j when 1 <= z_i < z_j.
/// Margins within tie_eps of each other form one class (chained on the sorted
/// order) whose largest margin represents it. The tail comparison allows a
/// relative slack of a few ulps so that z * (g / z) rounding does not count.
/// Throws ShapeError on length mismatch.
RcCertificate certify_rc(std::span<const double> margins, std::span<const double> derivs, double p = 1.0,
                         double tie_eps = 0.0);

/// Deterministic core of the generator: given one negative raw draw per
/// equality class, sort-match draws to margins (largest draw to largest
/// margin), divide by the margin where it exceeds 1, and broadcast back to
/// samples. `raw_draws.size()` must equal count_margin_classes(...).
std::vector<double> assign_rc_derivatives(std::span<const double> margins, std::span<const double> raw_draws,
                                          double tie_eps = 0.0);

/// Number of equality classes assign_rc_derivatives will form.
std::size_t count_margin_classes(std::span<const double> margins, double tie_eps = 0.0);

/// Random RC loss-derivatives for a minibatch: one -invBC(N(0,1)) draw per
/// equality class, then assign_rc_derivatives. Throws PreconditionError for
/// batches smaller than 2 or with non-finite margins.
DerivativeBatch generate_rc_derivatives(const MarginBatch& batch, const GenConfig& cfg, Rng& rng);

/// derivs[b] = loss.subderivative(margins[b]). Not certified.
DerivativeBatch fixed_loss_derivatives(const MarginBatch& batch, const LossSpec& loss);

/// Lambda for `epoch`: a uniform draw from lambda_pool when resample_period > 0
/// and epoch is a multiple of it, cfg.lambda otherwise.
BoxCoxParam maybe_resample_lambda(const GenConfig& cfg, int epoch, Rng& rng);

}  // namespace ensloss
