#include "ensloss/evaluation.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <iomanip>
#include <limits>
#include <mutex>
#include <numeric>
#include <ostream>
#include <thread>

#include <json.hpp>

#include "ensloss/errors.hpp"

namespace ensloss {

namespace {

// Continued fraction for I_x(a, b) (modified Lentz).
double beta_continued_fraction(double a, double b, double x) {
  constexpr int kMaxIter = 10000;
  constexpr double kEps = 1e-16;
  constexpr double kTiny = 1e-300;
  const double qab = a + b, qap = a + 1.0, qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < kTiny) d = kTiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= kMaxIter; ++m) {
    const double m2 = 2.0 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < kTiny) d = kTiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < kTiny) c = kTiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < kEps) return h;
  }
  throw EvaluationError("incomplete_beta: continued fraction did not converge");
}

}  // namespace

double incomplete_beta(double a, double b, double x) {
  if (!(a > 0.0 && b > 0.0)) throw DomainError("incomplete_beta: a and b must be positive");
  if (!(x >= 0.0 && x <= 1.0)) throw DomainError("incomplete_beta: x must lie in [0, 1]");
  if (x == 0.0 || x == 1.0) return x;
  const double log_front =
      std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) + a * std::log(x) + b * std::log1p(-x);
  const double front = std::exp(log_front);
  if (x < (a + 1.0) / (a + b + 2.0)) return front * beta_continued_fraction(a, b, x) / a;
  return 1.0 - front * beta_continued_fraction(b, a, 1.0 - x) / b;
}

double student_t_sf(double t, double df) {
  if (!(df > 0.0)) throw DomainError("student_t: df must be positive");
  if (std::isnan(t)) throw DomainError("student_t: t is NaN");
  if (t == std::numeric_limits<double>::infinity()) return 0.0;
  if (t == -std::numeric_limits<double>::infinity()) return 1.0;
  // P(|T| > |t|) = I_{df/(df+t^2)}(df/2, 1/2).
  const double x = df / (df + t * t);
  const double two_tail = incomplete_beta(df / 2.0, 0.5, x);
  return t >= 0.0 ? 0.5 * two_tail : 1.0 - 0.5 * two_tail;
}

double student_t_cdf(double t, double df) {
  if (t <= 0.0) return student_t_sf(-t, df);
  return 1.0 - student_t_sf(t, df);
}

const char* to_string(Verdict v) noexcept {
  switch (v) {
    case Verdict::better: return "better";
    case Verdict::no_diff: return "no_diff";
    case Verdict::worse: return "worse";
  }
  return "unknown";
}

TestResult paired_t_test_one_tailed(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw ShapeError("paired t-test: samples differ in length");
  const std::size_t n = a.size();
  if (n < 2) throw PreconditionError("paired t-test: need at least 2 pairs");
  TestResult r;
  r.pairs = n;
  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];

  if (std::all_of(d.begin(), d.end(), [&](double v) { return v == d[0]; })) {
    if (d[0] == 0.0) {
      r.t_statistic = 0.0;
      r.p_value = 0.5;
      r.verdict = Verdict::no_diff;
    } else if (d[0] > 0.0) {
      r.t_statistic = std::numeric_limits<double>::infinity();
      r.p_value = 0.0;
      r.verdict = Verdict::better;
    } else {
      r.t_statistic = -std::numeric_limits<double>::infinity();
      r.p_value = 1.0;
      r.verdict = Verdict::worse;
    }
    return r;
  }

  const double nn = static_cast<double>(n);
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / nn;
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double sd = std::sqrt(ss / (nn - 1.0));
  r.t_statistic = mean / (sd / std::sqrt(nn));
  const double df = nn - 1.0;
  r.p_value = student_t_sf(r.t_statistic, df);
  const double p_reversed = student_t_sf(-r.t_statistic, df);
  if (r.p_value <= kSignificance) {
    r.verdict = Verdict::better;
  } else if (p_reversed <= kSignificance) {
    r.verdict = Verdict::worse;
  } else {
    r.verdict = Verdict::no_diff;
  }
  return r;
}

std::vector<CellKey> enumerate_cells(const BenchmarkPlan& plan) {
  std::vector<CellKey> keys;
  for (const auto& ds : plan.datasets) {
    for (const auto& m : plan.methods) {
      for (auto seed : plan.seeds) keys.push_back({ds.id, m.id, seed});
    }
  }
  return keys;
}

BenchmarkResult run_benchmark(const BenchmarkPlan& plan) {
  if (plan.datasets.empty() || plan.methods.empty() || plan.seeds.empty()) {
    throw ConfigError("benchmark: need at least one dataset, method and seed");
  }
  plan.base.validate();
  auto keys = enumerate_cells(plan);
  std::vector<CellOutcome> outcomes(keys.size());

  std::atomic<std::size_t> next{0};
  std::mutex callback_mutex;
  std::mutex error_mutex;
  std::exception_ptr first_error;

  auto worker = [&] {
    for (std::size_t i = next++; i < keys.size(); i = next++) {
      try {
        const CellKey& key = keys[i];
        if (plan.lookup) {
          if (auto stored = plan.lookup(key)) {
            outcomes[i] = std::move(*stored);
            continue;
          }
        }
        const auto ds_it = std::find_if(plan.datasets.begin(), plan.datasets.end(),
                                        [&](const BenchDataset& d) { return d.id == key.dataset; });
        const auto m_it = std::find_if(plan.methods.begin(), plan.methods.end(),
                                       [&](const BenchMethod& m) { return m.id == key.method; });
        const SplitDataset data = ds_it->make(key.seed);
        TrainConfig cfg = plan.base;
        cfg.mode = m_it->mode;
        cfg.seed = key.seed;
        TrainResult tr = train(data, plan.model, cfg);
        CellOutcome out;
        out.failed = tr.record.diverged;
        out.accuracy = tr.record.final_test_acc;
        out.record = std::move(tr.record);
        if (plan.on_cell_done) {
          std::lock_guard lock(callback_mutex);
          plan.on_cell_done(key, out, tr.model);
        }
        outcomes[i] = std::move(out);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!first_error) first_error = std::current_exception();
      }
    }
  };

  const int jobs = std::clamp(plan.jobs, 1, static_cast<int>(std::max<std::size_t>(keys.size(), 1)));
  if (jobs == 1) {
    worker();
  } else {
    std::vector<std::jthread> pool;
    for (int j = 0; j < jobs; ++j) pool.emplace_back(worker);
  }
  if (first_error) std::rethrow_exception(first_error);
  return aggregate_benchmark(plan, std::move(keys), std::move(outcomes));
}

BenchmarkResult aggregate_benchmark(const BenchmarkPlan& plan, std::vector<CellKey> keys,
                                    std::vector<CellOutcome> outcomes) {
  BenchmarkResult r;
  r.keys = std::move(keys);
  r.outcomes = std::move(outcomes);

  // Accuracy by (dataset, method) keyed on seed so pairing ignores seed order.
  std::map<std::pair<std::string, std::string>, std::map<std::uint64_t, double>> acc;
  for (const auto& ds : plan.datasets) {
    for (const auto& m : plan.methods) {
      ComparisonCell cell;
      cell.dataset = ds.id;
      cell.method = m.id;
      auto& per_seed = acc[{ds.id, m.id}];
      for (std::size_t i = 0; i < r.keys.size(); ++i) {
        if (r.keys[i].dataset != ds.id || r.keys[i].method != m.id) continue;
        if (r.outcomes[i].failed) {
          cell.failed_seeds.push_back(r.keys[i].seed);
          r.any_failed = true;
          r.warnings.push_back("run " + ds.id + "/" + m.id + "/seed " + std::to_string(r.keys[i].seed) +
                               " diverged and is excluded from the tests");
          continue;
        }
        per_seed[r.keys[i].seed] = r.outcomes[i].accuracy;
      }
      for (const auto& [seed, a] : per_seed) {
        cell.seeds.push_back(seed);
        cell.accuracies.push_back(a);
      }
      const double n = static_cast<double>(cell.accuracies.size());
      if (n > 0) {
        cell.mean = std::accumulate(cell.accuracies.begin(), cell.accuracies.end(), 0.0) / n;
      }
      if (n >= 2) {
        double ss = 0.0;
        for (double a : cell.accuracies) ss += (a - cell.mean) * (a - cell.mean);
        cell.std_error = std::sqrt(ss / (n - 1.0)) / std::sqrt(n);
      } else {
        cell.std_error = std::numeric_limits<double>::quiet_NaN();
      }
      r.cells.push_back(std::move(cell));
    }
  }

  if (plan.seeds.size() < 2) {
    r.warnings.push_back("fewer than 2 seeds: paired t-tests skipped, means only");
    return r;
  }
  r.tests_run = true;

  // Verdicts from the viewpoint of (a, b) for every ordered pair.
  std::map<std::tuple<std::string, std::string, std::string>, Verdict> verdicts;
  for (const auto& ds : plan.datasets) {
    for (std::size_t i = 0; i < plan.methods.size(); ++i) {
      for (std::size_t j = i + 1; j < plan.methods.size(); ++j) {
        const auto& ma = plan.methods[i].id;
        const auto& mb = plan.methods[j].id;
        const auto& sa = acc[{ds.id, ma}];
        const auto& sb = acc[{ds.id, mb}];
        std::vector<double> xa, xb;
        for (const auto& [seed, a] : sa) {
          if (auto it = sb.find(seed); it != sb.end()) {
            xa.push_back(a);
            xb.push_back(it->second);
          }
        }
        if (xa.size() < 2) {
          r.warnings.push_back("dataset " + ds.id + ": fewer than 2 paired runs for " + ma + " vs " + mb);
          continue;
        }
        TestResult t = paired_t_test_one_tailed(xa, xb);
        t.dataset = ds.id;
        t.method_a = ma;
        t.method_b = mb;
        verdicts[{ds.id, ma, mb}] = t.verdict;
        verdicts[{ds.id, mb, ma}] = t.verdict == Verdict::better  ? Verdict::worse
                                    : t.verdict == Verdict::worse ? Verdict::better
                                                                  : Verdict::no_diff;
        r.tests.push_back(std::move(t));
      }
    }
  }

  for (const auto& ds : plan.datasets) {
    std::optional<std::string> dom;
    for (const auto& m : plan.methods) {
      bool beats_all = plan.methods.size() > 1;
      for (const auto& other : plan.methods) {
        if (other.id == m.id) continue;
        const auto it = verdicts.find({ds.id, m.id, other.id});
        if (it == verdicts.end() || it->second != Verdict::better) {
          beats_all = false;
          break;
        }
      }
      if (beats_all) dom = m.id;
    }
    r.dominant[ds.id] = dom;
  }

  for (const auto& a : plan.methods) {
    for (const auto& b : plan.methods) {
      if (a.id == b.id) continue;
      PairSummary s{a.id, b.id};
      for (const auto& ds : plan.datasets) {
        const auto it = verdicts.find({ds.id, a.id, b.id});
        if (it == verdicts.end()) continue;
        switch (it->second) {
          case Verdict::better: ++s.better; break;
          case Verdict::no_diff: ++s.no_diff; break;
          case Verdict::worse: ++s.worse; break;
        }
      }
      r.summary.push_back(s);
    }
  }
  return r;
}

void write_cells_csv(const BenchmarkResult& r, std::ostream& out) {
  out << "dataset,method,replicates,mean,std_error,failed\n";
  out << std::setprecision(10);
  for (const auto& c : r.cells) {
    out << c.dataset << ',' << c.method << ',' << c.accuracies.size() << ',' << c.mean << ',';
    if (std::isnan(c.std_error)) {
      out << "";
    } else {
      out << c.std_error;
    }
    out << ',' << c.failed_seeds.size() << '\n';
  }
}

void write_tests_json(const BenchmarkResult& r, std::ostream& out) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& t : r.tests) {
    nlohmann::ordered_json j;
    j["dataset"] = t.dataset;
    j["method_a"] = t.method_a;
    j["method_b"] = t.method_b;
    j["pairs"] = t.pairs;
    if (std::isfinite(t.t_statistic)) {
      j["t_statistic"] = t.t_statistic;
    } else {
      j["t_statistic"] = t.t_statistic > 0 ? "inf" : "-inf";
    }
    j["p_value"] = t.p_value;
    j["verdict"] = to_string(t.verdict);
    arr.push_back(std::move(j));
  }
  nlohmann::ordered_json doc;
  doc["tests_run"] = r.tests_run;
  doc["significance"] = kSignificance;
  doc["tests"] = std::move(arr);
  nlohmann::ordered_json summary = nlohmann::ordered_json::array();
  for (const auto& p : r.summary) {
    summary.push_back({{"method_a", p.method_a}, {"method_b", p.method_b}, {"better", p.better},
                       {"no_diff", p.no_diff}, {"worse", p.worse}});
  }
  doc["summary"] = std::move(summary);
  nlohmann::ordered_json dominant = nlohmann::ordered_json::object();
  for (const auto& [ds, m] : r.dominant) dominant[ds] = m ? nlohmann::ordered_json(*m) : nlohmann::ordered_json(nullptr);
  doc["dominant"] = std::move(dominant);
  doc["warnings"] = r.warnings;
  out << doc.dump(2) << '\n';
}

void write_summary_text(const BenchmarkResult& r, std::ostream& out) {
  out << std::fixed << std::setprecision(4);
  out << "mean accuracy (std error)\n";
  for (const auto& c : r.cells) {
    out << "  " << c.dataset << "  " << c.method << "  " << c.mean;
    if (!std::isnan(c.std_error)) out << " (" << c.std_error << ")";
    if (!c.failed_seeds.empty()) out << "  [" << c.failed_seeds.size() << " failed]";
    out << '\n';
  }
  if (!r.tests_run) {
    out << "paired t-tests skipped (fewer than 2 seeds)\n";
  } else {
    out << "(better, no_diff, worse) with one-tailed paired t-test, p <= " << kSignificance << '\n';
    for (const auto& s : r.summary) {
      out << "  " << s.method_a << " vs " << s.method_b << ": (" << s.better << ", " << s.no_diff << ", " << s.worse
          << ")\n";
    }
    out << "dominant method per dataset\n";
    for (const auto& [ds, m] : r.dominant) out << "  " << ds << ": " << (m ? *m : "none") << '\n';
  }
  for (const auto& w : r.warnings) out << "warning: " << w << '\n';
}

void write_curves_csv(const BenchmarkResult& r, std::ostream& out) {
  out << "dataset,method,seed,epoch,train_acc,test_acc,train_auc,test_auc,mean_margin,lambda\n";
  out << std::setprecision(10);
  for (std::size_t i = 0; i < r.keys.size(); ++i) {
    for (const auto& row : r.outcomes[i].record.rows) {
      out << r.keys[i].dataset << ',' << r.keys[i].method << ',' << r.keys[i].seed << ',' << row.epoch << ','
          << row.train_acc << ',' << row.test_acc << ',' << row.train_auc << ',' << row.test_auc << ','
          << row.mean_margin << ',';
      if (row.lambda_used) out << *row.lambda_used;
      out << '\n';
    }
  }
}

}  // namespace ensloss
