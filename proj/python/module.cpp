#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "divdir/attacks.hpp"
#include "divdir/checkpoint.hpp"
#include "divdir/config.hpp"
#include "divdir/random.hpp"
#include "divdir/sweep.hpp"
#include "divdir/training.hpp"
#include "divdir/verify.hpp"

namespace py = pybind11;
using namespace divdir;
using Array = py::array_t<double, py::array::c_style | py::array::forcecast>;

namespace {

// Python objects cross the boundary as JSON text.
nlohmann::json to_json(const py::object& o) {
  return nlohmann::json::parse(py::module_::import("json").attr("dumps")(o).cast<std::string>());
}

py::object from_json(const nlohmann::json& j) { return py::module_::import("json").attr("loads")(j.dump()); }

Tensor to_tensor(const Array& a) {
  Shape shape(a.shape(), a.shape() + a.ndim());
  return Tensor(shape, std::vector<double>(a.data(), a.data() + a.size()));
}

py::array_t<double> to_array(const Tensor& t) {
  py::array_t<double> out(std::vector<py::ssize_t>(t.shape().begin(), t.shape().end()));
  std::copy(t.data().begin(), t.data().end(), out.mutable_data());
  return out;
}

Dataset make_dataset(const Array& x, std::vector<std::size_t> labels, std::size_t classes,
                     std::optional<Shape> sample_shape) {
  if (x.ndim() != 2) throw std::invalid_argument("x must be 2-D [n, features]");
  Dataset ds;
  ds.x = to_tensor(x);
  ds.labels = std::move(labels);
  ds.classes = classes;
  ds.sample_shape = sample_shape.value_or(Shape{static_cast<std::size_t>(x.shape(1))});
  ds.validate();
  return ds;
}

py::dict record_dict(const MetricsRecord& r) {
  py::dict d;
  d["epoch"] = r.epoch;
  d["loss"] = r.loss;
  d["nll"] = r.nll;
  d["kl"] = r.kl;
  d["omega_M"] = r.omega_M;
  d["omega_V"] = r.omega_V;
  d["omega_S"] = r.omega_S;
  d["var_sum"] = r.var_sum;
  d["identity_residual"] = r.identity_residual;
  d["train_accuracy"] = r.train_accuracy;
  d["monitor_accuracy"] = r.monitor_accuracy;
  py::dict attacks;
  for (const auto& a : r.attacks) attacks[py::str(a.name)] = a.accuracy;
  d["attacks"] = attacks;
  return d;
}

py::dict report_dict(const OracleReport& r) {
  static const char* names[] = {"pass", "fail", "inconclusive"};
  py::dict d;
  d["name"] = r.name;
  d["status"] = names[static_cast<int>(r.status)];
  d["measured"] = r.measured;
  d["tolerance"] = r.tolerance;
  d["runtime_seconds"] = r.runtime_seconds;
  d["detail"] = r.detail;
  return d;
}

}  // namespace

PYBIND11_MODULE(_divdir, m) {
  m.doc() = "Bayesian networks with input-gradient diversity penalties";

  py::register_exception<NonFiniteLoss>(m, "NonFiniteLoss", PyExc_ArithmeticError);
  py::register_exception<TrainingDiverged>(m, "TrainingDiverged", PyExc_ArithmeticError);

  py::class_<Dataset>(m, "Dataset")
      .def(py::init(&make_dataset), py::arg("x"), py::arg("labels"), py::arg("classes"),
           py::arg("sample_shape") = std::nullopt)
      .def_property_readonly("x", [](const Dataset& d) { return to_array(d.x); })
      .def_readonly("labels", &Dataset::labels)
      .def_readonly("classes", &Dataset::classes)
      .def_readonly("sample_shape", &Dataset::sample_shape)
      .def("__len__", &Dataset::size)
      .def("head", &Dataset::head)
      .def("save", [](const Dataset& d, const std::filesystem::path& p, const py::object& meta) {
        save_dataset(p, d, meta.is_none() ? nlohmann::json::object() : to_json(meta));
      }, py::arg("path"), py::arg("meta") = py::none())
      .def_static("load", [](const std::filesystem::path& p) { return load_dataset(p); });

  m.def("gen_synthetic", &gen_synthetic, py::arg("n"), py::arg("features"), py::arg("classes"), py::arg("seed"),
        py::arg("margin") = 1.0);
  m.def("load_idx", &load_idx, py::arg("images"), py::arg("labels"), py::arg("limit") = std::nullopt);

  py::class_<BayesianNetwork>(m, "Network")
      .def(py::init([](const py::dict& spec, std::uint64_t seed) {
        return BayesianNetwork(spec_from_json(to_json(spec)), seed);
      }), py::arg("spec"), py::arg("seed") = 0)
      .def_property_readonly("spec", [](const BayesianNetwork& n) { return from_json(spec_to_json(n.spec())); })
      .def_property_readonly("parameter_names", &BayesianNetwork::names)
      .def("parameters", [](const BayesianNetwork& n) {
        py::list out;
        for (const auto& t : n.tensors()) out.append(to_array(t));
        return out;
      })
      .def("predict_proba", [](const BayesianNetwork& n, const Array& x, std::size_t draws, std::uint64_t seed) {
        Rng rng(seed);
        return to_array(n.predict_proba(to_tensor(x), draws, rng));
      }, py::arg("x"), py::arg("draws") = 10, py::arg("seed") = 0)
      .def("collapse_sigma", &BayesianNetwork::collapse_sigma, py::arg("rho") = -40.0)
      .def("save", [](const BayesianNetwork& n, const std::filesystem::path& p) { save_checkpoint(p, n); })
      .def_static("load", [](const std::filesystem::path& p) { return load_checkpoint(p); });

  m.def("mnist_spec", [] { return from_json(spec_to_json(NetworkSpec::mnist_default())); });
  m.def("mlp_spec", [](std::size_t inputs, const std::vector<std::size_t>& hidden, std::size_t classes,
                       std::size_t bayesian_tail, std::size_t draws) {
    return from_json(spec_to_json(NetworkSpec::mlp(inputs, hidden, classes, bayesian_tail, draws)));
  }, py::arg("inputs"), py::arg("hidden"), py::arg("classes"), py::arg("bayesian_tail"), py::arg("draws") = 10);

  m.def("train", [](const Dataset& data, const py::dict& spec, const py::dict& config,
                    const std::optional<Dataset>& monitor, const std::filesystem::path& out_dir) {
    const auto s = spec_from_json(to_json(spec));
    const auto cfg = train_from_json(to_json(config));
    TrainOptions opts;
    if (monitor) opts.monitor = &*monitor;
    opts.out_dir = out_dir;
    TrainResult r = [&] {
      py::gil_scoped_release release;
      return train(data, s, cfg, opts);
    }();
    py::list history;
    for (const auto& rec : r.history) history.append(record_dict(rec));
    return py::make_tuple(std::move(r.net), history);
  }, py::arg("data"), py::arg("spec"), py::arg("config"), py::arg("monitor") = std::nullopt,
     py::arg("out_dir") = std::filesystem::path{});

  m.def("attack", [](const BayesianNetwork& net, const Array& x, const std::vector<std::size_t>& labels,
                     const py::dict& config, std::uint64_t seed) {
    const auto cfg = attack_from_json(to_json(config));
    Rng rng(seed);
    return to_array(run_attack(to_tensor(x), labels, NetworkOracle(net), cfg, rng));
  }, py::arg("net"), py::arg("x"), py::arg("labels"), py::arg("config"), py::arg("seed") = 0);

  m.def("evaluate_attack", [](const Dataset& data, const BayesianNetwork& net, const py::dict& config,
                              std::uint64_t seed, std::size_t predict_draws, std::size_t batch_size) {
    const auto cfg = attack_from_json(to_json(config));
    py::gil_scoped_release release;
    const auto r = evaluate_attack(data, net, cfg, seed, predict_draws, batch_size);
    return std::make_tuple(r.accuracy, r.correct, r.examples);
  }, py::arg("data"), py::arg("net"), py::arg("config"), py::arg("seed") = 0, py::arg("predict_draws") = 10,
     py::arg("batch_size") = 100);

  m.def("standard_accuracy", [](const Dataset& data, const BayesianNetwork& net, std::uint64_t seed,
                                std::size_t predict_draws, std::size_t batch_size) {
    py::gil_scoped_release release;
    return standard_accuracy(data, net, seed, predict_draws, batch_size);
  }, py::arg("data"), py::arg("net"), py::arg("seed") = 0, py::arg("predict_draws") = 10,
     py::arg("batch_size") = 100);

  m.def("sweep", [](const Dataset& data, const BayesianNetwork& net, const py::dict& grid, const std::string& id,
                    std::uint64_t seed, std::size_t predict_draws, std::size_t batch_size) {
    const auto g = sweep_grid_from_json(to_json(grid));
    SweepResult r = [&] {
      py::gil_scoped_release release;
      return sweep(data, net, g, id, seed, predict_draws, batch_size);
    }();
    py::list rows;
    for (const auto& row : r.rows) {
      py::dict d;
      d["model_id"] = row.model_id;
      d["attack"] = row.attack;
      d["norm"] = to_string(row.norm);
      d["eps"] = row.eps;
      d["alpha"] = row.alpha;
      d["steps"] = row.steps;
      d["random_start"] = row.random_start;
      d["accuracy"] = row.accuracy;
      d["examples"] = row.examples;
      rows.append(d);
    }
    return rows;
  }, py::arg("data"), py::arg("net"), py::arg("grid"), py::arg("model_id") = "model", py::arg("seed") = 0,
     py::arg("predict_draws") = 10, py::arg("batch_size") = 100);

  m.def("model_id", &model_id, py::arg("path"));

  m.def("direction_stats", [](const std::vector<Array>& dirs) {
    std::vector<Var> vars;
    for (const auto& d : dirs) vars.push_back(constant(to_tensor(d)));
    const auto s = direction_stats(vars);
    py::dict out;
    out["var_sum"] = to_array(sum_last(s.var_dir).value());
    out["omega_M"] = to_array(omega_M(s).value());
    out["omega_S"] = to_array(omega_S(s).value());
    return out;
  }, py::arg("directions"));

  m.def("run_verify", [](const py::object& config) {
    const auto cfg = config.is_none() ? VerifyConfig{} : verify_from_json(to_json(config));
    std::vector<OracleReport> reports;
    {
      py::gil_scoped_release release;
      reports = run_verify_suite(cfg);
    }
    py::list out;
    for (const auto& r : reports) out.append(report_dict(r));
    return out;
  }, py::arg("config") = py::none());

  m.def("run_command", [](const py::dict& config) {
    const auto cfg = run_from_json(to_json(config));
    nlohmann::json summary;
    {
      py::gil_scoped_release release;
      summary = run_command(cfg);
    }
    return from_json(summary);
  }, py::arg("config"));
}
