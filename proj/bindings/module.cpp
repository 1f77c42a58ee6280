// Python bindings for the core operations: model building/validation, the
// coefficient solvers, the small-noise expansion, the reference PDE solve and
// the Monte Carlo estimators.

#include <pybind11/eigen.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>

#include "mmopt/affine.hpp"
#include "mmopt/expansion.hpp"
#include "mmopt/model.hpp"
#include "mmopt/oracle.hpp"
#include "mmopt/riccati.hpp"
#include "mmopt/simulate.hpp"

namespace py = pybind11;
using namespace mmopt;

namespace {

struct Model {
    ModelSpec spec;
};

struct Solved {
    std::shared_ptr<Model> model;
    riccati::V2Path v2;
    affine::AffinePath aff;
};

std::shared_ptr<Model> load_model_text(const std::string& text) {
    auto m = std::make_shared<Model>();
    m->spec = build_model(config::Tree::parse(text));
    return m;
}

std::shared_ptr<Model> load_model(const std::string& path) {
    auto m = std::make_shared<Model>();
    m->spec = build_model(config::Tree::parse_file(path));
    return m;
}

py::array_t<double> grid_array(const TimeGrid& g) {
    py::array_t<double> t(static_cast<std::size_t>(g.nodes()));
    auto tb = t.mutable_unchecked<1>();
    for (int k = 0; k < g.nodes(); ++k) tb(k) = g.node(k);
    return t;
}

py::dict solve_v2_py(const std::shared_ptr<Model>& m) {
    const riccati::V2Path v2 = riccati::solve_v2_matrix(m->spec);
    const TimeGrid& g = m->spec.grid;
    const int n = m->spec.n;
    py::array_t<double> vals({g.nodes(), n, n});
    auto vb = vals.mutable_unchecked<3>();
    for (int k = 0; k < g.nodes(); ++k) {
        const Eigen::MatrixXd& v = v2.path.node(k);
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j) vb(k, i, j) = v(i, j);
    }
    py::dict out;
    out["t"] = grid_array(g);
    out["v2"] = vals;
    return out;
}

py::dict v2_bounds_py(const std::shared_ptr<Model>& m, double eps) {
    const riccati::BoundsPath bp = riccati::v2_bounds_path(m->spec, eps);
    py::dict out;
    out["t"] = grid_array(m->spec.grid);
    out["lower"] = py::array_t<double>(bp.lower.size(), bp.lower.data());
    out["upper"] = py::array_t<double>(bp.upper.size(), bp.upper.data());
    return out;
}

std::shared_ptr<Solved> solve_py(const std::shared_ptr<Model>& m) {
    auto s = std::make_shared<Solved>();
    s->model = m;
    s->v2 = riccati::solve_v2_matrix(m->spec);
    s->aff = affine::solve_affine(m->spec, s->v2);
    return s;
}

py::dict validate_py(const std::shared_ptr<Model>& m, bool check_c) {
    const ValidationReport rep = validate_model(m->spec, check_c);
    py::list checks;
    for (const auto& c : rep.checks) {
        py::dict d;
        d["assumption"] = c.id;
        d["pass"] = c.pass;
        d["detail"] = c.detail;
        checks.append(d);
    }
    py::dict out;
    out["ok"] = rep.ok();
    out["checks"] = checks;
    return out;
}

py::dict flow_moments_py(const std::shared_ptr<Model>& m, double t) {
    const FlowMoments mom = m->spec.moments_at(t);
    py::dict out;
    out["phi"] = mom.phi;
    out["psi"] = mom.psi;
    out["phi2"] = mom.phi2;
    out["theta"] = mom.theta;
    return out;
}

sim::StrategyRule rule_from_name(const std::string& name, int n) {
    if (name == "optimal") return sim::StrategyRule::optimal();
    if (name == "zero") return sim::StrategyRule::zero(n);
    if (name == "expansion") return sim::StrategyRule::expansion_optimal();
    throw ConfigError("unknown strategy '" + name + "'");
}

py::dict estimate_py(const std::shared_ptr<Model>& m, const std::string& strategy, int paths,
                     std::uint64_t seed, int workers, bool raw) {
    const sim::StrategyRule rule = rule_from_name(strategy, m->spec.n);
    const sim::SimContextPtr ctx = (rule.kind == sim::StrategyRule::Kind::ExpansionOptimal)
                                       ? sim::make_expansion_context(m->spec)
                                       : sim::make_context(m->spec);
    const sim::CostEstimate est =
        raw ? sim::estimate_raw_cost(*ctx, rule, m->spec.position0, paths, seed, workers)
            : sim::estimate_cost(*ctx, rule, m->spec.position0, paths, seed, workers);
    py::dict out;
    out["mean"] = est.total.mean;
    out["std_error"] = est.total.se;
    out["n_paths"] = est.n_paths;
    out["breakdown"] = est.breakdown;
    return out;
}

py::dict expansion_py(const std::shared_ptr<Model>& m) {
    const expansion::ExpansionSolution sol =
        expansion::solve_expansion(m->spec, 0, m->spec.factor.x0);
    const int nn = sol.grid.nodes();
    const int d = m->spec.factor.dim;
    py::array_t<double> t(static_cast<std::size_t>(nn)), v0(static_cast<std::size_t>(nn)),
        y0(static_cast<std::size_t>(nn));
    py::array_t<double> y({nn, d}), y1({nn, d, d});
    auto tb = t.mutable_unchecked<1>();
    auto vb = v0.mutable_unchecked<1>();
    auto y0b = y0.mutable_unchecked<1>();
    auto yb = y.mutable_unchecked<2>();
    auto y1b = y1.mutable_unchecked<3>();
    for (int k = 0; k < nn; ++k) {
        tb(k) = sol.grid.node(k);
        vb(k) = sol.v0th.node(k);
        y0b(k) = sol.y0.node(k);
        for (int i = 0; i < d; ++i) yb(k, i) = sol.y.node(k)[i];
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) y1b(k, i, j) = sol.y1.node(k)(i, j);
    }
    py::dict out;
    out["t"] = t;
    out["v0"] = v0;
    out["y"] = y;
    out["y1"] = y1;
    out["y0"] = y0;
    return out;
}

double approx_value_py(const std::shared_ptr<Model>& m, int order, double epsilon) {
    const expansion::ExpansionSolution sol =
        expansion::solve_expansion(m->spec, 0, m->spec.factor.x0);
    return expansion::approx_value(sol, order, epsilon);
}

py::dict oracle_py(const std::shared_ptr<Model>& m, double epsilon, int nx, int nt) {
    oracle::PdeOptions opt;
    if (nx > 0) opt.nx = nx;
    if (nt > 0) opt.nt = nt;
    const oracle::PdeGridSolution sol = oracle::solve_pde_1d(m->spec, epsilon, opt);
    py::dict out;
    out["v00"] = sol.v00;
    out["v00_fine"] = sol.v00_fine;
    out["v00_extrapolated"] = sol.v00_extrapolated;
    out["grid_error"] = sol.grid_error;
    out["min_value"] = sol.min_value;
    out["boundary_warning"] = sol.boundary_warning;
    return out;
}

py::dict penalty_sweep_py(const std::shared_ptr<Model>& m, const std::vector<double>& ls,
                          int paths, std::uint64_t seed, int workers) {
    const sim::PenaltySweepResult res = sim::penalty_sweep(m->spec, ls, paths, seed, workers);
    py::list rows;
    for (const auto& r : res.rows) {
        py::dict d;
        d["penalty"] = r.penalty;
        d["ex2_mean"] = r.ex2_mean;
        d["ex2_se"] = r.ex2_se;
        d["ratio"] = r.ratio;
        d["bound"] = r.bound;
        rows.append(d);
    }
    py::dict out;
    out["rows"] = rows;
    out["fitted_slope"] = res.fitted_slope;
    out["two_c_tilde"] = res.two_c_tilde;
    out["assumption_c_ok"] = res.assumption_c_ok;
    return out;
}

}  // namespace

PYBIND11_MODULE(_core, mod) {
    mod.doc() = "market-maker optimal position management: solvers and simulation";

    py::class_<Model, std::shared_ptr<Model>>(mod, "Model")
        .def_property_readonly("securities", [](const Model& m) { return m.spec.n; })
        .def_property_readonly("horizon", [](const Model& m) { return m.spec.grid.horizon(); })
        .def_property_readonly("grid_steps", [](const Model& m) { return m.spec.grid.steps(); })
        .def_property_readonly("position0", [](const Model& m) { return m.spec.position0; });

    py::class_<Solved, std::shared_ptr<Solved>>(mod, "Solved")
        .def("value", [](const Solved& s, double t, const Eigen::VectorXd& x) {
            return affine::value_function(s.v2, s.aff, t, x);
        })
        .def("v2_at", [](const Solved& s, double t) { return s.v2.at(t); })
        .def("v1_at", [](const Solved& s, double t) { return s.aff.v1.at(t); })
        .def("v0_at", [](const Solved& s, double t) { return s.aff.v0.at(t); })
        .def_property_readonly("v0_exact", [](const Solved& s) { return s.aff.v0_exact; });

    mod.def("load_model", &load_model, py::arg("path"), "build a model from a config file");
    mod.def("load_model_text", &load_model_text, py::arg("text"),
            "build a model from config text");
    mod.def("validate", &validate_py, py::arg("model"), py::arg("check_penalty_sweep") = false);
    mod.def("flow_moments", &flow_moments_py, py::arg("model"), py::arg("t"));
    mod.def("solve_v2", &solve_v2_py, py::arg("model"));
    mod.def("v2_bounds", &v2_bounds_py, py::arg("model"), py::arg("eps"));
    mod.def("solve", &solve_py, py::arg("model"));
    mod.def("closed_form_riccati", &oracle::closed_form_riccati, py::arg("xi"), py::arg("m"),
            py::arg("horizon"), py::arg("t"));
    mod.def("estimate_cost", &estimate_py, py::arg("model"), py::arg("strategy") = "optimal",
            py::arg("paths") = 10000, py::arg("seed") = 1, py::arg("workers") = 1,
            py::arg("raw") = false);
    mod.def("expansion_solution", &expansion_py, py::arg("model"));
    mod.def("approx_value", &approx_value_py, py::arg("model"), py::arg("order"),
            py::arg("epsilon"));
    mod.def("oracle_pde", &oracle_py, py::arg("model"), py::arg("epsilon"), py::arg("nx") = 0,
            py::arg("nt") = 0);
    mod.def("penalty_sweep", &penalty_sweep_py, py::arg("model"), py::arg("penalties"),
            py::arg("paths") = 5000, py::arg("seed") = 1, py::arg("workers") = 1);

    py::register_exception<ConfigError>(mod, "ConfigError");
    py::register_exception<ValidationError>(mod, "ValidationError");
    py::register_exception<NumericalError>(mod, "NumericalError");
}
