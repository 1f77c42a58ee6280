#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mmopt/expansion.hpp"
#include "mmopt/oracle.hpp"
#include "mmopt/riccati.hpp"
#include "support/test_models.hpp"

using namespace mmopt;

namespace {

ModelSpec factor_model(double epsilon, int steps = 400) {
    return build_model(config::Tree::parse(mmtest::factor_model_text(epsilon, steps)));
}

}  // namespace

TEST_CASE("terminal slice equals the effective terminal penalty") {
    const ModelSpec m = factor_model(0.2);
    oracle::PdeOptions opt;
    opt.nx = 101;
    opt.nt = 200;
    opt.refine = false;
    const oracle::PdeGridSolution sol = oracle::solve_pde_1d(m, 0.2, opt);
    const auto& terminal = sol.v.back();
    Eigen::VectorXd x(1);
    for (std::size_t i = 0; i < sol.xgrid.size(); i += 10) {
        x[0] = sol.xgrid[i];
        const double xi =
            m.xi_tilde.scalar_value(1.0, x) - 0.5 * m.beta.scalar_value(1.0, x);
        CHECK(terminal[i] == xi);
    }
    CHECK(sol.tgrid.back() == 1.0);
}

TEST_CASE("x-independent coefficients collapse to the scalar solve") {
    std::ostringstream os;
    os << "[model]\nsecurities = 1\nhorizon = 1.0\ngrid_steps = 400\n";
    os << "[factor]\ndim = 1\nx0 = [0.0]\n[factor.drift.1]\na = 0.0\nb = [-0.5]\n";
    os << "[factor.vol.1.1]\nform = constant\nvalue = 0.7\n";
    os << "[terminal_penalty]\nform = constant\nvalue = 1.0\n";
    os << "[running_penalty]\nform = constant\nvalue = 0.0\n";
    os << "[temporary_impact]\nform = constant\nvalue = 1.0\n";
    os << "[inventory_impact]\nform = constant\nvalue = 0.0\n";
    os << "[block_premium]\nform = constant\nvalue = 1.0\n";
    os << "[dark_intensity]\nform = constant\nvalue = 0.0\n";
    os << "[spread]\nform = constant\nvalue = 0.0\n[repo_rate]\nform = constant\nvalue = 0.0\n";
    os << "[price]\nkind = constant\nvalue = 0.0\n";
    const ModelSpec m = build_model(config::Tree::parse(os.str()));
    const oracle::PdeGridSolution sol = oracle::solve_pde_1d(m, 0.5);
    // lambda = gamma = 0: the closed form applies and v is x-flat
    const double ref = oracle::closed_form_riccati(1.0, 1.0, 1.0, 0.0);
    CHECK(std::fabs(sol.v00_extrapolated - ref) <= std::max(1e-6, sol.grid_error));
    CHECK(std::fabs(sol.v00 - ref) <= 10.0 * sol.grid_error + 1e-6);
    const auto& slice0 = sol.v.front();
    const double spread = *std::max_element(slice0.begin(), slice0.end()) -
                          *std::min_element(slice0.begin(), slice0.end());
    CHECK(spread <= 1e-9);
}

TEST_CASE("zero diffusion matches the zeroth-order transport value") {
    const ModelSpec m = factor_model(0.0);
    const oracle::PdeGridSolution sol = oracle::solve_pde_1d(m, 0.0);
    const expansion::ExpansionSolution exp0 = expansion::solve_expansion(m, 0, m.factor.x0);
    const double tol = std::max(1e-6, 3.0 * sol.grid_error + 1e-8);
    CHECK(std::fabs(sol.v00_extrapolated - exp0.v0th.node(0)) <= tol);
}

TEST_CASE("grid halving shrinks the self-difference by at least 1.8x") {
    const ModelSpec m = factor_model(0.3);
    oracle::PdeOptions a;
    a.nx = 201;
    a.nt = 500;
    const oracle::PdeGridSolution s1 = oracle::solve_pde_1d(m, 0.3, a);
    oracle::PdeOptions b;
    b.nx = 401;
    b.nt = 1000;
    const oracle::PdeGridSolution s2 = oracle::solve_pde_1d(m, 0.3, b);
    CHECK(s1.grid_error / s2.grid_error >= 1.8);
}

TEST_CASE("pointwise comparison in the terminal penalty") {
    const ModelSpec m = factor_model(0.3, 300);
    std::string bigger = mmtest::factor_model_text(0.3, 300);
    bigger.replace(bigger.find("floor = 0.8"), 11, "floor = 1.1");
    const ModelSpec m2 = build_model(config::Tree::parse(bigger));
    oracle::PdeOptions opt;
    opt.nx = 201;
    opt.nt = 400;
    opt.refine = false;
    const oracle::PdeGridSolution a = oracle::solve_pde_1d(m, 0.3, opt);
    const oracle::PdeGridSolution b = oracle::solve_pde_1d(m2, 0.3, opt);
    for (std::size_t s = 0; s < a.v.size(); s += 20)
        for (std::size_t i = 0; i < a.v[s].size(); i += 25)
            CHECK(a.v[s][i] <= b.v[s][i] + 1e-10);
}

TEST_CASE("nonnegativity and boundary handling") {
    const ModelSpec m = factor_model(0.4, 300);
    oracle::PdeOptions opt;
    opt.nx = 201;
    opt.nt = 400;
    const oracle::PdeGridSolution sol = oracle::solve_pde_1d(m, 0.4, opt);
    CHECK(sol.min_value >= -1e-10);
    CHECK_FALSE(sol.boundary_warning);
    oracle::PdeOptions off;
    off.nx = 101;
    off.nt = 100;
    off.refine = false;
    off.x_lo = 0.25;  // x0 = 0.3 sits next to the left edge
    off.x_hi = 2.0;
    const oracle::PdeGridSolution warn = oracle::solve_pde_1d(m, 0.4, off);
    CHECK(warn.boundary_warning);
}
