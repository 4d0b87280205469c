#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ensloss/datasets.hpp"
#include "ensloss/errors.hpp"

using namespace ensloss;

namespace {

RawDataset ramp(std::size_t n, std::size_t positives) {
  RawDataset r;
  r.X.resize(static_cast<Eigen::Index>(n), 2);
  r.y.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.X(static_cast<Eigen::Index>(i), 0) = static_cast<double>(i);
    r.X(static_cast<Eigen::Index>(i), 1) = 5.0;
    r.y[i] = i < positives ? 1.0 : -1.0;
  }
  r.feature_names = {"a", "b"};
  return r;
}

std::size_t count_pos(const std::vector<double>& y) {
  return static_cast<std::size_t>(std::count(y.begin(), y.end(), 1.0));
}

}  // namespace

TEST_CASE("csv label mapping and delimiter") {
  std::istringstream in("x1,x2,label\n1,2,a\n3,4,b\n5,6,a\n");
  CsvOptions o;
  o.positive_label = "a";
  const auto r = parse_csv(in, o);
  CHECK(r.y == std::vector<double>{1.0, -1.0, 1.0});
  CHECK(r.X.rows() == 3);
  CHECK(r.X.cols() == 2);
  CHECK(r.X(2, 1) == 6.0);
  CHECK(r.feature_names == std::vector<std::string>{"x1", "x2"});

  std::istringstream semi("label;f\n1;0.5\n0;-0.5\n");
  CsvOptions s;
  s.delimiter = ';';
  const auto rs = parse_csv(semi, s);
  CHECK(rs.y == std::vector<double>{1.0, -1.0});
  CHECK(rs.X(1, 0) == -0.5);

  std::istringstream by_index("f,g,y\n1,2,1\n3,4,0\n");
  CsvOptions bi;
  bi.label_column = "2";
  CHECK(parse_csv(by_index, bi).y == std::vector<double>{1.0, -1.0});
}

TEST_CASE("csv errors") {
  std::istringstream header_only("x,label\n");
  CHECK_THROWS_AS(parse_csv(header_only), IngestionError);
  std::istringstream missing("x,y\n1,1\n");
  CHECK_THROWS_AS(parse_csv(missing), IngestionError);
  std::istringstream bad("x,label\n1,1\nfoo,0\n");
  try {
    parse_csv(bad);
    FAIL("expected an ingestion error");
  } catch (const IngestionError& e) {
    CHECK(std::string(e.what()).find("line 3") != std::string::npos);
  }
  std::istringstream ragged("x,z,label\n1,2,1\n3,0\n");
  CHECK_THROWS_AS(parse_csv(ragged), IngestionError);
  CHECK_THROWS_AS(load_csv("/nonexistent/file.csv"), IngestionError);
}

TEST_CASE("split sizes, stratification and determinism") {
  const auto raw = ramp(100, 40);
  const auto s = split_standardize(raw, 0.25, 3);
  CHECK(s.X_train.rows() == 75);
  CHECK(s.X_test.rows() == 25);
  CHECK(std::abs(static_cast<double>(count_pos(s.y_test)) - 10.0) <= 1.0);
  CHECK(std::abs(static_cast<double>(count_pos(s.y_train)) - 30.0) <= 1.0);
  CHECK(split_standardize(raw, 0.25, 3) == s);
  CHECK_FALSE(split_standardize(raw, 0.25, 4) == s);
  CHECK_THROWS_AS(split_standardize(raw, 0.0, 3), PreconditionError);
  CHECK_THROWS_AS(split_standardize(raw, 1.0, 3), PreconditionError);
  CHECK_THROWS_AS(split_standardize(ramp(10, 1), 0.25, 3), ConfigError);
}

TEST_CASE("standardization uses train statistics and handles constant columns") {
  const auto raw = ramp(100, 50);
  const auto s = split_standardize(raw, 0.2, 1);
  CHECK(s.feature_stds[1] == 1.0);
  CHECK(s.X_train.col(1).isZero());
  CHECK(s.X_test.col(1).isZero());
  CHECK(std::abs(s.X_train.col(0).mean()) < 1e-12);
  const double var = (s.X_train.col(0).array() - s.X_train.col(0).mean()).square().mean();
  CHECK(var == doctest::Approx(1.0));

  // Mutating rows that land in the test split must not move the statistics.
  auto mutated = raw;
  const auto base = split_standardize(raw, 0.2, 1);
  // Identify test rows: values of column 0 are distinct, so invert the standardization.
  for (Eigen::Index t = 0; t < base.X_test.rows(); ++t) {
    const double original = base.X_test(t, 0) * base.feature_stds[0] + base.feature_means[0];
    mutated.X(static_cast<Eigen::Index>(std::lround(original)), 0) = 1e6;
  }
  const auto m = split_standardize(mutated, 0.2, 1);
  CHECK(m.feature_means == base.feature_means);
  CHECK(m.feature_stds == base.feature_stds);
  CHECK(m.X_train == base.X_train);
}

TEST_CASE("synthetic generators") {
  SyntheticSpec spec;
  CHECK(bayes_accuracy(spec) == doctest::Approx(0.8413447460685429));
  spec.class_sep = 4.0;
  CHECK(bayes_accuracy(spec) == doctest::Approx(0.9772498680518208));
  spec.class_sep = 0.0;
  CHECK(bayes_accuracy(spec) == 0.5);
  CHECK_THROWS_AS(make_gaussian_blobs(spec, 1), ConfigError);

  SyntheticSpec big;
  big.n = 20000;
  const auto b = make_gaussian_blobs(big, 7);
  const double pos = static_cast<double>(count_pos(b.y_train) + count_pos(b.y_test)) / 20000.0;
  CHECK(std::abs(pos - 0.5) < 0.02);
  CHECK(b.X_train.rows() + b.X_test.rows() == 20000);
  CHECK(b.dim() == 2);
  CHECK(make_gaussian_blobs(big, 7) == b);

  SyntheticSpec sp;
  sp.kind = SyntheticKind::high_dim_sparse;
  sp.n = 200;
  sp.d = 300;
  sp.informative = 5;
  const auto s = make_synthetic(sp, 2);
  CHECK(s.dim() == 300);
  CHECK(s.X_train.rows() == 150);
}

TEST_CASE("dataset cache round trip is bitwise") {
  SyntheticSpec spec;
  spec.n = 300;
  spec.d = 3;
  const auto d = make_gaussian_blobs(spec, 9);
  std::stringstream ss;
  save_dataset(d, ss);
  CHECK(load_dataset(ss) == d);
  std::stringstream bad("ENSLDX");
  CHECK_THROWS_AS(load_dataset(bad), IngestionError);

  const auto path = std::filesystem::temp_directory_path() / "ensloss_test.csv";
  {
    std::ofstream f(path);
    f << "a,b,label\n";
    for (int i = 0; i < 20; ++i) f << i << ',' << (i % 3) << ',' << (i % 2) << '\n';
  }
  const auto raw = load_csv(path.string());
  CHECK(raw.X.rows() == 20);
  std::filesystem::remove(path);
}
