#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "ensloss/derivgen.hpp"
#include "ensloss/errors.hpp"
#include "ensloss/losses.hpp"

using namespace ensloss;

TEST_CASE("assign_rc_derivatives hand-executed example") {
  const std::vector<double> margins{0.5, -0.2, 1.5};
  const std::vector<double> draws{-0.1, -2.0, -0.7};
  const auto g = assign_rc_derivatives(margins, draws);
  REQUIRE(g.size() == 3);
  CHECK(g[0] == -0.7);
  CHECK(g[1] == -2.0);
  CHECK(g[2] == doctest::Approx(-0.1 / 1.5).epsilon(1e-15));
  CHECK(certify_rc(margins, g).holds);
}

TEST_CASE("ties share one draw") {
  const std::vector<double> margins{0.3, 0.3, -1.0};
  CHECK(count_margin_classes(margins) == 2);
  const auto g = assign_rc_derivatives(margins, std::vector<double>{-0.4, -1.5});
  CHECK(g[0] == g[1]);
  CHECK(g[2] == -1.5);
  CHECK_THROWS_AS(assign_rc_derivatives(margins, std::vector<double>{-0.4, -1.5, -2.0}), ShapeError);

  Rng rng(1);
  MarginBatch b{{0.7, 0.7}, {}};
  const auto d = generate_rc_derivatives(b, GenConfig{}, rng);
  CHECK(d.derivs[0] == d.derivs[1]);
  CHECK(d.certified);
}

TEST_CASE("tie_eps merges near-equal margins") {
  const std::vector<double> margins{0.1, 0.1 + 1e-9, 2.0};
  CHECK(count_margin_classes(margins, 0.0) == 3);
  CHECK(count_margin_classes(margins, 1e-6) == 2);
  const auto g = assign_rc_derivatives(margins, std::vector<double>{-0.5, -1.0}, 1e-6);
  CHECK(g[0] == g[1]);
  CHECK(certify_rc(margins, g, 1.0, 1e-6).holds);
}

TEST_CASE("no rescaling when all margins are at most 1") {
  const std::vector<double> margins{1.0, -3.0, 0.2, 0.9};
  const std::vector<double> draws{-0.3, -4.0, -1.1, -0.9};
  const auto g = assign_rc_derivatives(margins, draws);
  CHECK(g == std::vector<double>{-0.3, -4.0, -1.1, -0.9});
}

TEST_CASE("certify_rc direct cases") {
  const auto c = certify_rc(std::vector<double>{0.0, 1.0}, std::vector<double>{-1.0, -2.0});
  CHECK_FALSE(c.holds);
  CHECK(c.violation == RcCertificate::Violation::convexity);
  const auto t = certify_rc(std::vector<double>{1.0, 2.0}, std::vector<double>{-1.0, -0.6});
  CHECK_FALSE(t.holds);
  CHECK(t.violation == RcCertificate::Violation::tail);
  REQUIRE(t.witness.has_value());
  CHECK(t.witness->first == 0);
  CHECK(t.witness->second == 1);
  const auto k = certify_rc(std::vector<double>{-1.0, 0.5}, std::vector<double>{0.1, 0.2});
  CHECK_FALSE(k.holds);
  CHECK(k.violation == RcCertificate::Violation::calibration);
  CHECK_FALSE(certify_rc(std::vector<double>{0.5, 0.5}, std::vector<double>{-1.0, -0.9}).holds);
  CHECK(certify_rc(std::vector<double>{1.0, 2.0}, std::vector<double>{-1.0, -0.5}).holds);
  CHECK_FALSE(certify_rc(std::vector<double>{1.0, 2.0}, std::vector<double>{-1.0, -0.3}, 2.0).holds);
  CHECK_THROWS_AS(certify_rc(std::vector<double>{1.0}, std::vector<double>{-1.0, -2.0}), ShapeError);
  CHECK_FALSE(c.describe().empty());
}

TEST_CASE("generator preconditions") {
  Rng rng(0);
  CHECK_THROWS_AS(generate_rc_derivatives(MarginBatch{{0.5}, {}}, GenConfig{}, rng), PreconditionError);
  CHECK_THROWS_AS(generate_rc_derivatives(MarginBatch{{0.5, std::nan("")}, {}}, GenConfig{}, rng), PreconditionError);
}

TEST_CASE("generated batches certify and reconstruct") {
  Rng rng(2024);
  Rng mrng(77);
  for (int trial = 0; trial < 2000; ++trial) {
    const std::size_t B = 2 + mrng.uniform_index(64);
    MarginBatch b;
    for (std::size_t i = 0; i < B; ++i) b.margins.push_back(3.0 * mrng.normal());
    if (trial % 5 == 0) b.margins[1] = b.margins[0];
    GenConfig cfg;
    cfg.lambda = BoxCoxParam(std::vector<double>{0.0, 0.5, 1.0}[trial % 3]);
    const auto d = generate_rc_derivatives(b, cfg, rng);
    CHECK(d.certified);
    CHECK(d.lambda_used == cfg.lambda.lambda());
    CHECK(*std::max_element(d.derivs.begin(), d.derivs.end()) < 0.0);
    REQUIRE(certify_rc(b.margins, d.derivs).holds);
    if (trial % 10 == 0) {
      const auto loss = reconstruct_loss(b.margins, d.derivs);
      for (std::size_t i = 0; i < B; ++i) CHECK(loss.derivative(b.margins[i]) == d.derivs[i]);
      const auto cc = check_calibration(loss.as_loss_spec());
      CAPTURE(cc.reason);
      CAPTURE(trial);
      CHECK(cc.calibrated);
      CHECK(check_bounded_below(loss.as_loss_spec()).bounded);
    }
  }
}

TEST_CASE("permutation equivariance with injected draws") {
  Rng rng(9);
  std::vector<double> margins;
  for (int i = 0; i < 30; ++i) margins.push_back(2.0 * rng.normal());
  std::vector<double> draws;
  for (std::size_t i = 0; i < count_margin_classes(margins); ++i) draws.push_back(-std::exp(rng.normal()));
  const auto g = assign_rc_derivatives(margins, draws);
  std::vector<std::size_t> perm(margins.size());
  std::iota(perm.begin(), perm.end(), 0);
  rng.shuffle(std::span<std::size_t>(perm));
  std::vector<double> pm;
  for (auto i : perm) pm.push_back(margins[i]);
  auto shuffled_draws = draws;
  rng.shuffle(std::span<double>(shuffled_draws));
  const auto pg = assign_rc_derivatives(pm, shuffled_draws);
  for (std::size_t k = 0; k < perm.size(); ++k) CHECK(pg[k] == g[perm[k]]);
}

TEST_CASE("generator is deterministic under a seed") {
  MarginBatch b{{0.1, -2.0, 3.0, 1.2}, {}};
  Rng r1(5), r2(5);
  CHECK(generate_rc_derivatives(b, GenConfig{}, r1).derivs == generate_rc_derivatives(b, GenConfig{}, r2).derivs);
}

TEST_CASE("fixed_loss_derivatives") {
  const auto h = fixed_loss_derivatives(MarginBatch{{0.5, 2.0}, {}}, builtin_loss("hinge"));
  CHECK(h.derivs == std::vector<double>{-1.0, 0.0});
  CHECK_FALSE(h.certified);
  CHECK(std::isnan(h.lambda_used));
  CHECK(fixed_loss_derivatives(MarginBatch{{0.0}, {}}, builtin_loss("exponential")).derivs[0] == -1.0);
  CHECK(fixed_loss_derivatives(MarginBatch{{0.0}, {}}, builtin_loss("logistic")).derivs[0] == -0.5);
}

TEST_CASE("maybe_resample_lambda") {
  Rng rng(3);
  GenConfig fixed;
  for (int e = 0; e < 50; ++e) CHECK(maybe_resample_lambda(fixed, e, rng).lambda() == 0.0);

  GenConfig cfg;
  cfg.resample_period = 10;
  cfg.lambda_pool = {0.0, 0.5, 1.0};
  std::set<int> changed;
  std::set<double> seen;
  for (int rep = 0; rep < 20; ++rep) {
    GenConfig c = cfg;
    double prev = -1.0;
    for (int e = 0; e <= 30; ++e) {
      c.lambda = maybe_resample_lambda(c, e, rng);
      seen.insert(c.lambda.lambda());
      if (c.lambda.lambda() != prev) changed.insert(e);
      prev = c.lambda.lambda();
    }
  }
  for (int e : changed) CHECK(e % 10 == 0);
  CHECK(seen.size() == 3);

  GenConfig single;
  single.resample_period = 5;
  single.lambda_pool = {0.5};
  for (int e = 0; e < 20; ++e) {
    single.lambda = maybe_resample_lambda(single, e, rng);
    CHECK(single.lambda.lambda() == 0.5);
  }
}
