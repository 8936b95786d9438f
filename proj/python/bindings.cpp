#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "pisoflow/cli_io.hpp"
#include "pisoflow/verify.hpp"

namespace py = pybind11;
using namespace pisoflow;

namespace {

template <class T>
py::array_t<T> to_array(const std::vector<T>& v) {
  py::array_t<T> a(static_cast<py::ssize_t>(v.size()));
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

// Component-major values as a (components, n) array.
template <class T>
py::array_t<T> to_array(const std::vector<T>& v, int components) {
  const auto n = static_cast<py::ssize_t>(v.size() / static_cast<std::size_t>(components));
  py::array_t<T> a({static_cast<py::ssize_t>(components), n});
  std::copy(v.begin(), v.end(), a.mutable_data());
  return a;
}

py::dict state_dict(const FlowState<double>& s, int dim) {
  py::dict d;
  d["velocity"] = to_array(s.u, dim);
  d["pressure"] = to_array(s.p);
  d["boundary_velocity"] = to_array(s.ub, dim);
  d["time"] = s.t;
  return d;
}

py::dict trace_dict(const OptimizationTrace& t) {
  py::dict d;
  d["loss"] = to_array(t.loss);
  d["parameter"] = to_array(t.parameter);
  d["grad_norm"] = to_array(t.grad_norm);
  d["wall_time"] = to_array(t.wall_time);
  d["backward_time"] = to_array(t.backward_time);
  d["diverged"] = t.diverged;
  d["final_loss"] = t.final_loss;
  d["final_parameter"] = t.final_parameter;
  d["max_divergence"] = t.max_divergence;
  return d;
}

py::dict dump_dict(const FieldDump& dump) {
  py::dict fields;
  for (const auto& f : dump.fields)
    std::visit([&](const auto& v) { fields[py::str(f.name)] = to_array(v, f.components); }, f.values);
  py::dict d;
  d["precision"] = to_string(dump.precision);
  d["dim"] = dump.dim;
  d["blocks"] = dump.blocks;
  d["time"] = dump.time;
  d["fields"] = fields;
  return d;
}

}  // namespace

PYBIND11_MODULE(_pisoflow, m) {
  m.doc() = "Differentiable PISO solver on multi-block transformed grids";
  m.attr("__version__") = PISOFLOW_VERSION;

  py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);
  py::register_exception<FormatError>(m, "FormatError", PyExc_ValueError);
  py::register_exception<SolverError>(m, "SolverError", PyExc_RuntimeError);
  py::register_exception<IoError>(m, "IoError", PyExc_OSError);

  py::enum_<MeshKind>(m, "MeshKind")
      .value("CAVITY", MeshKind::Cavity)
      .value("CHANNEL", MeshKind::Channel)
      .value("POISEUILLE", MeshKind::Poiseuille)
      .value("PERIODIC_BOX", MeshKind::PeriodicBox)
      .value("BACKWARD_FACING_STEP", MeshKind::BackwardFacingStep)
      .value("VORTEX_STREET", MeshKind::VortexStreet);
  py::enum_<GradientPath>(m, "GradientPath")
      .value("FULL", GradientPath::Full)
      .value("ADV_ONLY", GradientPath::AdvOnly)
      .value("P_ONLY", GradientPath::POnly)
      .value("NONE", GradientPath::None);
  py::enum_<Precision>(m, "Precision").value("SINGLE", Precision::Single).value("DOUBLE", Precision::Double);
  py::enum_<Parameter>(m, "Parameter")
      .value("INITIAL_SCALE", Parameter::InitialScale)
      .value("LID_VELOCITY", Parameter::LidVelocity)
      .value("VISCOSITY", Parameter::Viscosity)
      .value("SOURCE", Parameter::Source);

  py::class_<CaseConfig>(m, "CaseConfig")
      .def_static("from_text", &parse_config, py::arg("text"))
      .def_static("load", &load_config, py::arg("path"))
      .def("to_text", &print_config)
      .def("__str__", &print_config)
      .def("validate", &CaseConfig::validate)
      .def_readwrite("name", &CaseConfig::name)
      .def_readwrite("seed", &CaseConfig::seed)
      .def_readwrite("mesh", &CaseConfig::mesh)
      .def_property(
          "resolution", [](const CaseConfig& c) { return c.mesh_params.resolution; },
          [](CaseConfig& c, std::array<int, 3> r) { c.mesh_params.resolution = r; })
      .def_property(
          "viscosity", [](const CaseConfig& c) { return c.fluid.viscosity; },
          [](CaseConfig& c, double v) { c.fluid.viscosity = v; })
      .def_property(
          "steps", [](const CaseConfig& c) { return c.time.steps; }, [](CaseConfig& c, int n) { c.time.steps = n; })
      .def_property(
          "precision", [](const CaseConfig& c) { return c.solver.precision; },
          [](CaseConfig& c, Precision p) { c.solver.precision = p; })
      .def_property_readonly("effective_viscosity", [](const CaseConfig& c) { return effective_viscosity(c); });

  m.def("parse_config", &parse_config, py::arg("text"));
  m.def("print_config", &print_config, py::arg("config"));

  m.def(
      "run_case",
      [](const CaseConfig& c) {
        CaseResult r;
        {
          py::gil_scoped_release release;
          r = run_case(c);
        }
        py::dict d = state_dict(r.state, c.mesh_params.dim);
        d["steps"] = r.steps;
        d["max_divergence"] = r.max_divergence;
        d["bulk_initial"] = r.bulk_initial;
        d["bulk_final"] = r.bulk_final;
        d["steady"] = r.steady;
        if (r.profile) {
          std::ostringstream os;
          profile_table(*r.profile).write(os);
          d["profile_csv"] = os.str();
        }
        return d;
      },
      py::arg("config"), "Forward rollout; fields are (components, cells) arrays.");

  m.def(
      "optimize",
      [](const CaseConfig& c) {
        OptimizationTrace t;
        {
          py::gil_scoped_release release;
          t = optimize(c);
        }
        return trace_dict(t);
      },
      py::arg("config"));
  m.def("scaling_task", &scaling_task, py::arg("steps"), py::arg("path") = GradientPath::Full,
        py::arg("learning_rate") = 0.01, py::arg("iterations") = 60);
  m.def("lid_task", &lid_task, py::arg("parameter"));

  m.def("poiseuille_analytic", &poiseuille_analytic, py::arg("y"), py::arg("G"), py::arg("nu"));
  m.def("centerline_reynolds", &centerline_reynolds, py::arg("re_tau"));
  m.def("reichardt_u_plus", &reichardt_u_plus, py::arg("y_plus"));

  m.def("read_fields", [](const std::filesystem::path& p) { return dump_dict(read_fields(p)); }, py::arg("path"));
  m.def(
      "simulate_to_dump",
      [](const CaseConfig& c, const std::filesystem::path& p) {
        const Domain domain = generate_case_mesh(c.mesh, c.mesh_params);
        CaseResult r;
        {
          py::gil_scoped_release release;
          r = run_case(c);
        }
        write_fields(p, make_dump(domain, r.state, c.solver.precision));
      },
      py::arg("config"), py::arg("path"), "Run a case and write its final state as a dump in the working precision.");

  py::class_<MomentAccumulator>(m, "MomentAccumulator")
      .def(py::init<int, int>(), py::arg("variables"), py::arg("max_order") = 4)
      .def_property_readonly("count", &MomentAccumulator::count)
      .def_property_readonly("mean", [](const MomentAccumulator& a) { return to_array(a.mean()); })
      .def(
          "add_batch",
          [](MomentAccumulator& a, py::array_t<double, py::array::c_style | py::array::forcecast> x) {
            if (x.ndim() != 2 || x.shape(1) != a.variables())
              throw py::value_error("samples must have shape (n, variables)");
            a.add_batch(std::span<const double>(x.data(), static_cast<std::size_t>(x.size())));
          },
          py::arg("samples"))
      .def("merge", &MomentAccumulator::merge, py::arg("other"))
      .def(
          "central_moment",
          [](const MomentAccumulator& a, const std::vector<int>& e) { return a.central_moment(e); },
          py::arg("exponents"))
      .def("covariance", &MomentAccumulator::covariance)
      .def("skewness", &MomentAccumulator::skewness)
      .def("flatness", &MomentAccumulator::flatness);

  m.def(
      "gradcheck",
      [](std::uint64_t seed, int steps) {
        std::vector<py::tuple> rows;
        for (const auto& d : gradcheck_domains(seed)) {
          auto results = kernel_gradchecks(d, seed);
          auto r = rollout_gradchecks(d, steps, seed);
          results.insert(results.end(), r.begin(), r.end());
          for (const auto& x : results)
            rows.push_back(py::make_tuple(d.name, x.stage, x.max_rel_error, x.passed && x.finite));
        }
        return rows;
      },
      py::arg("seed") = 7, py::arg("steps") = 3,
      "Finite-difference checks of every backward kernel: (domain, stage, rel_error, passed) rows.");
}
