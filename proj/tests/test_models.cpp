#include <doctest.h>

#include <sstream>
#include <utility>

#include "ensloss/derivgen.hpp"
#include "ensloss/errors.hpp"
#include "ensloss/models.hpp"
#include "gradcheck.hpp"

using namespace ensloss;

TEST_CASE("model construction and shapes") {
  Rng rng(1);
  MlpModel m({3, 5, 4, 1}, Activation::relu, 0.0, 0.0, rng);
  CHECK(m.num_layers() == 3);
  CHECK(m.weight(0).rows() == 5);
  CHECK(m.weight(0).cols() == 3);
  CHECK(m.num_parameters() == 5 * 3 + 5 + 4 * 5 + 4 + 4 + 1);
  CHECK(m.all_finite());
  for (std::size_t l = 0; l < m.num_layers(); ++l) {
    const double bound = std::sqrt(6.0 / m.weight(l).cols());
    CHECK(m.weight(l).cwiseAbs().maxCoeff() <= bound);
    CHECK(m.bias(l).isZero());
  }
  CHECK_THROWS_AS(MlpModel({3, 2}, Activation::relu, 0.0, 0.0, rng), ConfigError);
  CHECK_THROWS_AS(MlpModel({3, 1}, Activation::relu, 1.0, 0.0, rng), ConfigError);
  CHECK_THROWS_AS(MlpModel({3, 1}, Activation::relu, 0.0, -1.0, rng), ConfigError);
  CHECK(parse_activation("tanh") == Activation::tanh);
  CHECK_THROWS_AS(parse_activation("gelu"), ConfigError);
}

TEST_CASE("forward examples") {
  Rng rng(2);
  MlpModel z({4, 6, 1}, Activation::relu, 0.0, 0.0, rng);
  z.set_parameters(std::vector<double>(z.num_parameters(), 0.0));
  Matrix X = Matrix::Random(5, 4);
  CHECK(forward(z, X, true, rng).scores.isZero());

  MlpModel lin({3, 1}, Activation::relu, 0.0, 0.0, rng);
  lin.set_parameters(std::vector<double>{1.0, 0.0, 0.0, 0.0});
  Matrix x(1, 3);
  x << 3.0, 0.0, 0.0;
  CHECK(forward(lin, x, false, rng).scores(0) == 3.0);
  CHECK_THROWS_AS(forward(lin, Matrix::Zero(1, 2), false, rng), ShapeError);

  Rng a(4), b(4);
  MlpModel d0({4, 8, 1}, Activation::relu, 0.0, 0.0, a);
  MlpModel d5({4, 8, 1}, Activation::relu, 0.5, 0.0, b);
  CHECK(forward(d0, X, false, rng).scores == forward(d5, X, false, rng).scores);
  CHECK(predict(d5, X) == forward(d5, X, false, rng).scores);
}

TEST_CASE("dropout mask expectation") {
  Rng rng(3);
  MlpModel m({2, 4, 1}, Activation::relu, 0.3, 0.0, rng);
  Matrix X(1, 2);
  X << 0.7, -0.4;
  const auto clean = forward(m, X, false, rng);
  const Matrix a = (X * m.weight(0).transpose() + m.bias(0).transpose()).cwiseMax(0.0);
  Matrix sum = Matrix::Zero(1, 4);
  const int draws = 10000;
  for (int i = 0; i < draws; ++i) sum += forward(m, X, true, rng).inputs[1];
  for (int j = 0; j < 4; ++j) CHECK(sum(0, j) / draws == doctest::Approx(a(0, j)).epsilon(0.01));
  (void)clean;
}

TEST_CASE("backward examples") {
  Rng rng(4);
  MlpModel lin({3, 1}, Activation::relu, 0.0, 0.0, rng);
  Matrix x(1, 3);
  x << 0.5, -2.0, 1.5;
  auto cache = forward(lin, x, false, rng);
  const std::vector<double> y{1.0}, g{-1.0};
  const auto grads = backward_with_derivs(lin, cache, y, g);
  CHECK(grads.weights[0](0, 0) == -0.5);
  CHECK(grads.weights[0](0, 1) == 2.0);
  CHECK(grads.weights[0](0, 2) == -1.5);
  CHECK(grads.biases[0](0) == -1.0);

  MlpModel wd({3, 4, 1}, Activation::tanh, 0.0, 0.1, rng);
  auto c2 = forward(wd, x, false, rng);
  const auto zero = backward_with_derivs(wd, c2, y, std::vector<double>{0.0});
  for (std::size_t l = 0; l < wd.num_layers(); ++l) {
    CHECK(zero.weights[l].isApprox(0.1 * std::as_const(wd).weight(l)));
    CHECK(zero.biases[l].isZero());
  }
  CHECK_THROWS_AS(backward_with_derivs(wd, c2, std::vector<double>{1.0, 1.0}, std::vector<double>{0.0, 0.0}), ShapeError);
  wd.bias(0)(0) += 1.0;
  CHECK_THROWS_AS(backward_with_derivs(wd, c2, y, std::vector<double>{0.0}), PreconditionError);
}

TEST_CASE("backward matches finite differences") {
  Rng rng(10);
  for (const auto* name : {"logistic", "hinge", "exponential", "squared", "hinge_inverse_tail"}) {
    CAPTURE(name);
    const auto loss = builtin_loss(name);
    for (int i = 0; i < 10; ++i) {
      const auto inst = gradcheck::random_instance(rng, loss.kinks);
      Rng unused(0);
      const auto cache = forward(inst.model, inst.X, false, unused);
      std::vector<double> g;
      for (Eigen::Index b = 0; b < inst.X.rows(); ++b) g.push_back(loss.subderivative(inst.y[b] * cache.scores(b)));
      CHECK(gradcheck::relative_error(inst, g, [&](std::size_t, double m) { return loss.value(m); }) < 1e-4);
    }
  }
}

TEST_CASE("sgd_step arithmetic") {
  Rng rng(5);
  MlpModel m({1, 1}, Activation::relu, 0.0, 0.0, rng);
  m.set_parameters(std::vector<double>{1.0, 0.0});
  GradAccumulator g;
  g.weights = {Matrix::Constant(1, 1, 2.0)};
  g.biases = {Vector::Zero(1)};
  MlpModel same = m;
  sgd_step(same, g, 0.0);
  CHECK(same == m);
  sgd_step(m, g, 0.1);
  CHECK(m.weight(0)(0, 0) == doctest::Approx(0.8));
  sgd_step(m, g, 0.1);
  CHECK(m.weight(0)(0, 0) == doctest::Approx(1.0 - 2 * 0.1 * 2.0));
  g.weights[0](0, 0) = std::nan("");
  CHECK_THROWS_AS(sgd_step(m, g, 0.1), DivergenceError);
}

TEST_CASE("checkpoint round trip is exact") {
  Rng rng(6);
  MlpModel m({3, 7, 2, 1}, Activation::tanh, 0.25, 0.001, rng);
  std::stringstream ss;
  save_checkpoint(m, ss);
  const auto back = load_checkpoint(ss);
  CHECK(back == m);
  CHECK(back.parameters() == m.parameters());
  CHECK(back.activation() == Activation::tanh);
  CHECK(back.dropout_rate() == 0.25);
  std::stringstream bad("not a checkpoint");
  CHECK_THROWS_AS(load_checkpoint(bad), IngestionError);
}

TEST_CASE("initialization is seed-determined") {
  Rng a(8), b(8);
  CHECK(MlpModel({4, 16, 1}, Activation::relu, 0.0, 0.0, a) == MlpModel({4, 16, 1}, Activation::relu, 0.0, 0.0, b));
}
