// Python bindings for the core library: networks, losses, dynamics,
// analysis and the scenario lab.

#include "lnn/analysis.hpp"
#include "lnn/dynamics.hpp"
#include "lnn/lab/config.hpp"
#include "lnn/lab/scenarios.hpp"
#include "lnn/losses.hpp"
#include "lnn/netcore.hpp"

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include <cmath>
#include <limits>

namespace py = pybind11;
using namespace lnn;

namespace {

// A trajectory as a dict of arrays indexed by record.
py::dict trajectory_dict(const Trajectory& tr) {
  const auto count = static_cast<py::ssize_t>(tr.size());
  const py::ssize_t rows = tr.empty() ? 0 : tr.front().endToEnd.rows();
  const py::ssize_t cols = tr.empty() ? 0 : tr.front().endToEnd.cols();
  py::array_t<double> time(count), loss(count), unbalancedness(count), det(count), frobenius(count),
      nuclear(count);
  py::array_t<double> product({count, rows, cols});
  auto p = product.mutable_unchecked<3>();
  for (py::ssize_t i = 0; i < count; ++i) {
    const TrajectoryRecord& r = tr[static_cast<std::size_t>(i)];
    time.mutable_at(i) = r.time;
    loss.mutable_at(i) = r.lossValue;
    unbalancedness.mutable_at(i) = r.unbalancedness;
    det.mutable_at(i) = r.determinant.value_or(std::numeric_limits<double>::quiet_NaN());
    frobenius.mutable_at(i) = r.frobeniusNorm;
    nuclear.mutable_at(i) = r.nuclearNorm;
    for (py::ssize_t a = 0; a < rows; ++a) {
      for (py::ssize_t b = 0; b < cols; ++b) p(i, a, b) = r.endToEnd(a, b);
    }
  }
  py::dict out;
  out["time"] = time;
  out["loss"] = loss;
  out["end_to_end"] = product;
  out["unbalancedness"] = unbalancedness;
  out["determinant"] = det;
  out["frobenius_norm"] = frobenius;
  out["nuclear_norm"] = nuclear;
  return out;
}

Trajectory trajectory_from_products(const std::vector<double>& times, const std::vector<Matrix>& products,
                                    const LossSpec& spec) {
  if (times.size() != products.size()) throw InputError("times and products differ in length");
  Trajectory tr;
  for (std::size_t i = 0; i < times.size(); ++i) {
    tr.push_back(TrajectoryRecord::make(times[i], spec.value(products[i]), products[i], 0.0));
  }
  return tr;
}

FlowConfig flow_config(double stepSize, double maxTime, int recordEvery, double stopLossDelta,
                       const std::string& method) {
  FlowConfig cfg;
  if (method == "rk4") {
    cfg.method = Method::Rk4;
  } else if (method == "euler") {
    cfg.method = Method::Euler;
  } else {
    throw InputError("method must be 'rk4' or 'euler'");
  }
  cfg.stepSize = stepSize;
  cfg.maxTime = maxTime;
  cfg.recordEvery = recordEvery;
  cfg.stopLossDelta = stopLossDelta;
  return cfg;
}

WeightStack make_stack(const std::vector<Matrix>& layers) {
  if (layers.empty()) throw InputError("a weight stack needs at least one layer");
  std::vector<int> dims{static_cast<int>(layers.front().cols())};
  for (const Matrix& W : layers) dims.push_back(static_cast<int>(W.rows()));
  return WeightStack(LayerDims(dims), layers);
}

py::dict report_dict(const BoundReport& r) {
  py::dict out;
  out["bound"] = r.boundValue;
  out["achieved"] = r.achievedValue;
  out["satisfied"] = r.satisfied;
  out["context"] = r.context;
  return out;
}

NormKind norm_kind(const std::string& name) {
  if (name == "frobenius") return NormKind::Frobenius;
  if (name == "nuclear") return NormKind::Nuclear;
  if (name == "spectral") return NormKind::Spectral;
  throw InputError("norm must be 'frobenius', 'nuclear' or 'spectral'");
}

lab::Scenario scenario_of(const std::string& name) {
  if (auto s = lab::parse_scenario(name)) return *s;
  throw InputError("unknown scenario '" + name + "'");
}

}  // namespace

PYBIND11_MODULE(_core, m) {
  m.doc() = "Deep linear network training dynamics: simulation and analysis.";

  auto error = py::register_exception<Error>(m, "Error", PyExc_RuntimeError);
  py::register_exception<ShapeError>(m, "ShapeError", error.ptr());
  auto input = py::register_exception<InputError>(m, "InputError", error.ptr());
  py::register_exception<DegenerateInputError>(m, "DegenerateInputError", input.ptr());
  py::register_exception<PreconditionError>(m, "PreconditionError", error.ptr());
  py::register_exception<InfeasibleError>(m, "InfeasibleError", error.ptr());
  py::register_exception<ConvergenceError>(m, "ConvergenceError", error.ptr());
  py::register_exception<DivergenceError>(m, "DivergenceError", error.ptr());
  py::register_exception<lab::ConfigError>(m, "ConfigError", error.ptr());

  // Networks.
  m.def("end_to_end", [](const std::vector<Matrix>& layers) { return end_to_end(make_stack(layers)).matrix(); },
        py::arg("layers"), "Product W_n ... W_1 of layers given as [W_1, ..., W_n].");
  m.def("unbalancedness", [](const std::vector<Matrix>& layers) { return unbalancedness_magnitude(make_stack(layers)); },
        py::arg("layers"));
  m.def(
      "balanced_factorize",
      [](const Matrix& target, const std::vector<int>& dims) {
        return balanced_factorize(EndToEndMatrix(target), LayerDims(dims)).layers();
      },
      py::arg("target"), py::arg("dims"), "Balanced layers [W_1, ..., W_n] whose product is target.");
  m.def(
      "random_near_zero_stack",
      [](const std::vector<int>& dims, double scale, std::uint64_t seed) {
        return random_near_zero_stack(LayerDims(dims), scale, seed).layers();
      },
      py::arg("dims"), py::arg("scale"), py::arg("seed"));

  // Losses.
  py::class_<SensingTask>(m, "SensingTask")
      .def(py::init([](int d0, int dn, const std::vector<std::pair<Matrix, double>>& ms) {
             std::vector<Measurement> out;
             for (const auto& [A, b] : ms) out.push_back({A, b});
             return SensingTask(d0, dn, out);
           }),
           py::arg("d0"), py::arg("dn"), py::arg("measurements"))
      .def_property_readonly("d0", &SensingTask::d0)
      .def_property_readonly("dn", &SensingTask::dn)
      .def("__len__", &SensingTask::size)
      .def("to_json", &SensingTask::to_json)
      .def_static("from_json", &SensingTask::from_json);
  m.def("norm_divergence_task", &norm_divergence_task);
  m.def(
      "make_completion_task",
      [](const Matrix& truth, const std::vector<Entry>& observed, double noise, std::uint64_t seed) {
        return make_completion_task(truth, observed, noise, seed);
      },
      py::arg("ground_truth"), py::arg("observed"), py::arg("noise") = 0.0, py::arg("seed") = 0);
  m.def("random_entries", &random_entries, py::arg("rows"), py::arg("cols"), py::arg("count"), py::arg("seed"));

  py::class_<LossSpec>(m, "LossSpec")
      .def_static("whitened_square", &LossSpec::whitened_square, py::arg("target"))
      .def_static(
          "square", [](const Matrix& X, const Matrix& Y) { return LossSpec::square(RegressionData(X, Y)); },
          py::arg("X"), py::arg("Y"), "Square loss with instances and labels as columns.")
      .def_static(
          "lp", [](const Matrix& X, const Matrix& Y, int p) { return LossSpec::lp(RegressionData(X, Y), p); },
          py::arg("X"), py::arg("Y"), py::arg("p"))
      .def_static("sensing", &LossSpec::sensing, py::arg("task"))
      .def_property_readonly("shape", [](const LossSpec& s) { return py::make_tuple(s.rows(), s.cols()); })
      .def_property_readonly("optimal_value", &LossSpec::optimal_value)
      .def_property_readonly("minimizer", &LossSpec::minimizer)
      .def("value", &LossSpec::value, py::arg("W"))
      .def("gradient", &LossSpec::gradient, py::arg("W"));
  m.def(
      "distance_to_low_sigma",
      [](const Matrix& W, double delta) {
        const LowSigmaProjection p = distance_to_low_sigma(W, delta);
        return py::make_tuple(p.distance, p.witness);
      },
      py::arg("W"), py::arg("delta"), "Returns (distance, nearest matrix).");
  m.def("deficiency_margin_whitened", &deficiency_margin_whitened, py::arg("W"), py::arg("target"));
  m.def("strong_convexity_constant", &strong_convexity_constant, py::arg("spec"));

  // Dynamics.
  m.def(
      "run_gradient_flow",
      [](const std::vector<Matrix>& layers, const LossSpec& spec, double stepSize, double maxTime,
         int recordEvery, double stopLossDelta, const std::string& method) {
        return trajectory_dict(run_gradient_flow(make_stack(layers), spec,
                                                 flow_config(stepSize, maxTime, recordEvery, stopLossDelta, method)));
      },
      py::arg("layers"), py::arg("spec"), py::arg("step_size") = 1e-3, py::arg("max_time") = 1.0,
      py::arg("record_every") = 1, py::arg("stop_loss_delta") = 0.0, py::arg("method") = "rk4");
  m.def(
      "run_gradient_descent",
      [](const std::vector<Matrix>& layers, const LossSpec& spec, double stepSize, int maxIters,
         double stopLossDelta, int recordEvery) {
        return trajectory_dict(
            run_gradient_descent(make_stack(layers), spec, stepSize, maxIters, stopLossDelta, recordEvery));
      },
      py::arg("layers"), py::arg("spec"), py::arg("step_size"), py::arg("max_iters"),
      py::arg("stop_loss_delta") = 0.0, py::arg("record_every") = 1);
  m.def(
      "run_end_to_end_flow",
      [](const Matrix& W0, const LossSpec& spec, int n, double stepSize, double maxTime, int recordEvery,
         double stopLossDelta, const std::string& method) {
        return trajectory_dict(
            run_end_to_end_flow(W0, spec, n, flow_config(stepSize, maxTime, recordEvery, stopLossDelta, method)));
      },
      py::arg("W0"), py::arg("spec"), py::arg("n"), py::arg("step_size") = 1e-3, py::arg("max_time") = 1.0,
      py::arg("record_every") = 1, py::arg("stop_loss_delta") = 0.0, py::arg("method") = "rk4");
  m.def(
      "run_discretized_e2e",
      [](const Matrix& W0, const LossSpec& spec, int n, double zeta, int maxIters, double stopLossDelta,
         int recordEvery) {
        return trajectory_dict(run_discretized_e2e(W0, spec, n, zeta, maxIters, stopLossDelta, recordEvery));
      },
      py::arg("W0"), py::arg("spec"), py::arg("n"), py::arg("step_size"), py::arg("max_iters"),
      py::arg("stop_loss_delta") = 0.0, py::arg("record_every") = 1);
  m.def("apply_preconditioned_gradient", &apply_preconditioned_gradient, py::arg("W"), py::arg("G"), py::arg("n"));
  m.def(
      "preconditioner_eigenvalues", [](const Matrix& W, int n) { return preconditioner_spectrum(W, n).eigenvalues; },
      py::arg("W"), py::arg("n"));
  m.def("single_output_rhs", &single_output_rhs, py::arg("w"), py::arg("grad"), py::arg("n"));

  // Analysis.
  m.def(
      "track_singular_values",
      [](const std::vector<double>& times, const std::vector<Matrix>& products, const LossSpec& spec) {
        const SvdTrajectory svd = track_svd(trajectory_from_products(times, products, spec));
        py::array_t<double> sigma({static_cast<py::ssize_t>(svd.size()), static_cast<py::ssize_t>(svd.rank_slots())});
        auto s = sigma.mutable_unchecked<2>();
        for (py::ssize_t i = 0; i < s.shape(0); ++i) {
          for (py::ssize_t r = 0; r < s.shape(1); ++r) s(i, r) = svd.sigma[static_cast<std::size_t>(i)](r);
        }
        return sigma;
      },
      py::arg("times"), py::arg("products"), py::arg("spec"),
      "Signed, continuously tracked singular values, one row per time.");
  m.def(
      "verify_sigma_rates",
      [](const std::vector<double>& times, const std::vector<Matrix>& products, const LossSpec& spec, int n) {
        return report_dict(verify_sigma_rates(track_svd(trajectory_from_products(times, products, spec)), spec, n));
      },
      py::arg("times"), py::arg("products"), py::arg("spec"), py::arg("n"));
  m.def(
      "sigma_closed_form",
      [](double sigma0, double rate, int n, double t) {
        const SigmaSolution s = sigma_closed_form(sigma0, RateSchedule::constant(rate), n, t);
        return py::make_tuple(s.value, s.blowUpTime);
      },
      py::arg("sigma0"), py::arg("rate"), py::arg("n"), py::arg("t"),
      "Solution at t for a constant rate, and the blow-up time if it is reached.");
  m.def("gf_convergence_time_bound", &gf_convergence_time_bound, py::arg("phi0"), py::arg("phi_star"),
        py::arg("eps"), py::arg("alpha"), py::arg("delta"), py::arg("n"));
  m.def(
      "norm_divergence_constants",
      [](const std::string& norm) {
        const NormDivergenceConstants c = norm_divergence_constants(norm_kind(norm));
        return py::make_tuple(c.c, c.cPrime);
      },
      py::arg("norm") = "frobenius");
  m.def(
      "matrix_norm", [](const Matrix& W, const std::string& norm) { return matrix_norm(W, norm_kind(norm)); },
      py::arg("W"), py::arg("norm") = "frobenius");
  m.def("min_nuclear_norm_solve", &min_nuclear_norm_solve, py::arg("task"), py::arg("tol") = 1e-8,
        py::arg("max_iters") = 50000);
  m.def("effective_rank", &effective_rank, py::arg("W"), py::arg("threshold") = 1e-3);

  // Lab.
  m.def("scenario_names", [] {
    std::vector<std::string> out;
    for (lab::Scenario s : lab::all_scenarios()) out.push_back(lab::scenario_name(s));
    return out;
  });
  m.def(
      "default_config", [](const std::string& scenario) { return lab::to_toml(lab::default_config(scenario_of(scenario))); },
      py::arg("scenario"), "Default configuration of a scenario as TOML text.");
  m.def(
      "run_scenario",
      [](const std::string& configToml, const std::string& outputDir) {
        lab::ExperimentConfig cfg = lab::parse_config(configToml);
        if (!outputDir.empty()) cfg.outputDir = outputDir;
        const lab::ScenarioResult r = [&] {
          py::gil_scoped_release release;
          return lab::run_scenario(cfg);
        }();
        return r.summary.dump();
      },
      py::arg("config_toml"), py::arg("output_dir") = "", "Runs a scenario and returns its summary as JSON text.");
}
