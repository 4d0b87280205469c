#include <pybind11/eigen.h>
#include <pybind11/functional.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <sstream>

#include "ensloss/cli.hpp"
#include "ensloss/derivgen.hpp"
#include "ensloss/errors.hpp"
#include "ensloss/evaluation.hpp"
#include "ensloss/losses.hpp"
#include "ensloss/numerics.hpp"
#include "ensloss/trainer.hpp"

namespace py = pybind11;
using namespace ensloss;

namespace {

FiniteLossMixture mixture_of(const std::vector<std::pair<std::string, double>>& components) {
  std::vector<FiniteLossMixture::Component> c;
  for (const auto& [name, w] : components) c.push_back({builtin_loss(name), w});
  return FiniteLossMixture(std::move(c));
}

py::dict row_dict(const EpochRow& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["train_acc"] = r.train_acc;
  d["test_acc"] = r.test_acc;
  d["train_auc"] = r.train_auc;
  d["test_auc"] = r.test_auc;
  d["mean_margin"] = r.mean_margin;
  d["lambda_used"] = r.lambda_used ? py::cast(*r.lambda_used) : py::none();
  d["lr"] = r.lr;
  d["updates"] = r.updates;
  return d;
}

py::dict record_dict(const RunRecord& rec) {
  py::dict d;
  d["mode"] = rec.mode;
  d["seed"] = rec.seed;
  py::list rows;
  for (const auto& r : rec.rows) rows.append(row_dict(r));
  d["rows"] = rows;
  d["best_test_acc"] = rec.best_test_acc;
  d["final_test_acc"] = rec.final_test_acc;
  d["diverged"] = rec.diverged;
  d["diverged_epoch"] = rec.diverged_epoch;
  d["divergence_reason"] = rec.divergence_reason;
  d["stopped_early"] = rec.stopped_early;
  d["all_batches_certified"] = rec.all_batches_certified;
  d["total_updates"] = rec.total_updates;
  return d;
}

py::dict split_dict(const SplitDataset& s) {
  py::dict d;
  d["X_train"] = s.X_train;
  d["X_test"] = s.X_test;
  d["y_train"] = s.y_train;
  d["y_test"] = s.y_test;
  return d;
}

}  // namespace

PYBIND11_MODULE(_ensloss, m) {
  m.doc() = "Stochastic calibrated loss ensembles (C++ core)";

  py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<DomainError>(m, "DomainError", PyExc_ValueError);
  py::register_exception<PreconditionError>(m, "PreconditionError", PyExc_ValueError);
  py::register_exception<ShapeError>(m, "ShapeError", PyExc_ValueError);
  py::register_exception<IngestionError>(m, "IngestionError", PyExc_IOError);

  m.def("sample_standard_normal", [](std::uint64_t seed, std::size_t n) {
    Rng rng(seed);
    return sample_standard_normal(rng, n);
  }, py::arg("seed"), py::arg("n"));
  m.def("inv_box_cox", [](double x, double lambda) { return inv_box_cox(x, BoxCoxParam(lambda)); },
        py::arg("x"), py::arg("lam") = 0.0);
  m.def("box_cox", [](double x, double lambda) { return box_cox(x, BoxCoxParam(lambda)); }, py::arg("x"),
        py::arg("lam") = 0.0);

  m.def("builtin_loss_names", &builtin_loss_names);
  m.def("loss_value", [](const std::string& name, double z) { return builtin_loss(name).value(z); });
  m.def("loss_derivative", [](const std::string& name, double z) { return builtin_loss(name).subderivative(z); });
  m.def("check_loss", [](const std::string& name, double p, double z0) {
    return to_json(check_loss(builtin_loss(name), p, z0));
  }, py::arg("name"), py::arg("p") = 1.01, py::arg("z0") = 2.0, "JSON certificate for a builtin loss");

  m.def("generate_rc_derivatives", [](const std::vector<double>& margins, std::uint64_t seed, double lambda) {
    Rng rng(seed);
    GenConfig cfg;
    cfg.lambda = BoxCoxParam(lambda);
    const auto g = generate_rc_derivatives(MarginBatch{margins, {}}, cfg, rng);
    return py::make_tuple(g.derivs, g.certified);
  }, py::arg("margins"), py::arg("seed") = 0, py::arg("lam") = 0.0);
  m.def("assign_rc_derivatives", [](const std::vector<double>& margins, const std::vector<double>& draws) {
    return assign_rc_derivatives(margins, draws);
  });
  m.def("certify_rc", [](const std::vector<double>& margins, const std::vector<double>& derivs, double p) {
    const auto c = certify_rc(margins, derivs, p);
    return py::make_tuple(c.holds, c.describe());
  }, py::arg("margins"), py::arg("derivs"), py::arg("p") = 1.0);

  py::class_<PiecewiseLinearLoss>(m, "PiecewiseLinearLoss")
      .def_property_readonly("knots", &PiecewiseLinearLoss::knots)
      .def_property_readonly("slopes", &PiecewiseLinearLoss::slopes)
      .def_property_readonly("anchor", &PiecewiseLinearLoss::anchor)
      .def("value", &PiecewiseLinearLoss::value)
      .def("derivative", &PiecewiseLinearLoss::derivative)
      .def("calibrated", [](const PiecewiseLinearLoss& l) { return check_calibration(l.as_loss_spec()).calibrated; })
      .def("bounded_below", [](const PiecewiseLinearLoss& l) { return check_bounded_below(l.as_loss_spec()).bounded; });
  m.def("reconstruct_loss", &reconstruct_loss, py::arg("margins"), py::arg("derivs"));

  m.def("mixture_loss_value", [](const std::vector<std::pair<std::string, double>>& mix, double z) {
    return mixture_loss_value(mixture_of(mix), z);
  }, py::arg("mixture"), py::arg("z"));
  m.def("psi_transform", [](const std::vector<std::pair<std::string, double>>& mix, double theta) {
    return psi_transform(mixture_of(mix), theta);
  }, py::arg("mixture"), py::arg("theta"));
  m.def("excess_risk_bound", [](const std::vector<std::pair<std::string, double>>& mix, double excess) {
    return excess_risk_bound(mixture_of(mix), excess);
  }, py::arg("mixture"), py::arg("surrogate_excess"));

  m.def("load_data", [](const std::string& ref, std::uint64_t seed, double test_fraction) {
    return split_dict(cli::load_data(ref, seed, test_fraction, CsvOptions{}));
  }, py::arg("ref"), py::arg("seed") = 0, py::arg("test_fraction") = 0.25);

  m.def("train", [](const std::map<std::string, std::string>& settings) {
    const auto setup = cli::resolve_train_setup(settings);
    const auto data = cli::load_data(setup.data, setup.data_seed, setup.test_fraction, setup.csv);
    TrainResult r;
    {
      py::gil_scoped_release release;
      r = train(data, setup.model, setup.config);
    }
    std::ostringstream ckpt;
    save_checkpoint(r.model, ckpt);
    py::dict d = record_dict(r.record);
    d["checkpoint"] = ckpt.str();
    return d;
  }, py::arg("settings"), "Train with CLI-style settings, e.g. {'mode': 'fixed:hinge', 'epochs': '5'}");

  m.def("accuracy", [](const std::vector<double>& s, const std::vector<double>& y) {
    return accuracy_from_scores(s, y);
  });
  m.def("auc", [](const std::vector<double>& s, const std::vector<double>& y) { return auc_from_scores(s, y); });
  m.def("student_t_cdf", &student_t_cdf, py::arg("t"), py::arg("df"));
  m.def("paired_t_test", [](const std::vector<double>& a, const std::vector<double>& b) {
    const auto r = paired_t_test_one_tailed(a, b);
    py::dict d;
    d["t_statistic"] = r.t_statistic;
    d["p_value"] = r.p_value;
    d["verdict"] = to_string(r.verdict);
    d["pairs"] = r.pairs;
    return d;
  }, py::arg("a"), py::arg("b"));
}
