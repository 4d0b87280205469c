#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ensloss/datasets.hpp"
#include "ensloss/trainer.hpp"

namespace ensloss {

/// Regularized incomplete beta I_x(a, b) by Lentz's continued fraction.
double incomplete_beta(double a, double b, double x);

/// Student-t CDF with `df` degrees of freedom.
double student_t_cdf(double t, double df);

/// P(T > t); computed directly rather than as 1 - cdf to keep small tails exact.
double student_t_sf(double t, double df);

enum class Verdict { better, no_diff, worse };
const char* to_string(Verdict v) noexcept;

inline constexpr double kSignificance = 0.05;

struct TestResult {
  std::string dataset;
  std::string method_a;
  std::string method_b;
  double t_statistic = 0.0;
  /// One-tailed p-value for H1: mean(a) > mean(b).
  double p_value = 1.0;
  Verdict verdict = Verdict::no_diff;
  std::size_t pairs = 0;
};

/// One-tailed paired t-test of H0: Acc_A <= Acc_B against H1: Acc_A > Acc_B.
///
/// If every difference is identical the statistic is undefined: all-zero
/// differences give t = 0, p = 0.5, no_diff; a common nonzero difference gives
/// t = +-inf and p = 0 or 1 by its sign.
TestResult paired_t_test_one_tailed(std::span<const double> a, std::span<const double> b);

struct ComparisonCell {
  std::string dataset;
  std::string method;
  std::vector<std::uint64_t> seeds;  ///< seeds of successful runs
  std::vector<double> accuracies;    ///< aligned to seeds
  std::vector<std::uint64_t> failed_seeds;
  double mean = 0.0;
  /// Sample std / sqrt(replicates); NaN with fewer than 2 replicates.
  double std_error = 0.0;
};

struct BenchDataset {
  std::string id;
  /// Built once per seed, so replicates may re-draw or re-split the data.
  std::function<SplitDataset(std::uint64_t seed)> make;
};

struct BenchMethod {
  std::string id;
  TrainMode mode;
};

struct CellKey {
  std::string dataset;
  std::string method;
  std::uint64_t seed = 0;
};

struct CellOutcome {
  bool failed = false;
  double accuracy = 0.0;
  RunRecord record;
};

struct BenchmarkPlan {
  std::vector<BenchDataset> datasets;
  std::vector<BenchMethod> methods;
  std::vector<std::uint64_t> seeds;
  TrainConfig base;
  ModelSpec model;
  int jobs = 1;
  /// Returns a stored outcome to skip re-running a cell.
  std::function<std::optional<CellOutcome>(const CellKey&)> lookup;
  /// Called (from a worker thread, serialized) after every executed cell.
  std::function<void(const CellKey&, const CellOutcome&, const MlpModel&)> on_cell_done;
};

/// Ordered (better, no_diff, worse) counts of method_a against method_b over datasets.
struct PairSummary {
  std::string method_a;
  std::string method_b;
  int better = 0;
  int no_diff = 0;
  int worse = 0;
};

struct BenchmarkResult {
  std::vector<CellKey> keys;          ///< (dataset, method, seed) in plan order
  std::vector<CellOutcome> outcomes;  ///< aligned to keys
  std::vector<ComparisonCell> cells;  ///< one per (dataset, method)
  std::vector<TestResult> tests;      ///< unordered method pairs per dataset
  /// Method significantly better than every competitor, per dataset.
  std::map<std::string, std::optional<std::string>> dominant;
  std::vector<PairSummary> summary;   ///< every ordered method pair
  std::vector<std::string> warnings;
  bool tests_run = false;
  bool any_failed = false;
};

/// The cell matrix in execution order (dataset-major, then method, then seed).
std::vector<CellKey> enumerate_cells(const BenchmarkPlan& plan);

/// Runs (or looks up) every cell with up to plan.jobs workers, then aggregates
/// per (dataset, method), runs every pairwise test on seed-paired accuracies
/// and tallies verdicts. Cell accuracy is the final-epoch test accuracy;
/// diverged cells are excluded from the tests with a warning.
BenchmarkResult run_benchmark(const BenchmarkPlan& plan);

/// Aggregates from already computed outcomes (used by run_benchmark).
BenchmarkResult aggregate_benchmark(const BenchmarkPlan& plan, std::vector<CellKey> keys,
                                    std::vector<CellOutcome> outcomes);

void write_cells_csv(const BenchmarkResult& r, std::ostream& out);
void write_tests_json(const BenchmarkResult& r, std::ostream& out);
/// "A vs B: (better, no_diff, worse)" lines plus per-dataset dominant methods.
void write_summary_text(const BenchmarkResult& r, std::ostream& out);
/// Long-format epoch curves of every run: dataset,method,seed,epoch,...
void write_curves_csv(const BenchmarkResult& r, std::ostream& out);

}  // namespace ensloss
