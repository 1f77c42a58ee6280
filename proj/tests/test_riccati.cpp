#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mmopt/oracle.hpp"
#include "mmopt/riccati.hpp"
#include "support/test_models.hpp"

using namespace mmopt;
using mmtest::ScalarParams;

namespace {

ScalarParams no_flow_no_dark(double xi, double impact, double horizon) {
    ScalarParams p;
    p.xi_tilde = xi;
    p.impact = impact;
    p.horizon = horizon;
    p.gamma_tilde = 0.0;
    p.lambda = 0.0;
    p.beta = 0.0;
    p.flow_mass = 0.0;
    p.spread = 0.0;
    p.repo = 0.0;
    p.price = 0.0;
    return p;
}

}  // namespace

TEST_CASE("separable closed form: 1/V2 accumulates (T-t)/M") {
    const ModelSpec m = mmtest::scalar_model(no_flow_no_dark(1.0, 1.0, 1.0));
    const riccati::V2Path v2 = riccati::solve_v2_scalar(m);
    CHECK(v2.scalar_at(0.0) == doctest::Approx(0.5).epsilon(1e-10));
    CHECK(v2.scalar_at(1.0) == 1.0);  // terminal exact
    CHECK(v2.path.node(m.grid.steps())(0, 0) == 1.0);
}

TEST_CASE("closed-form agreement across random penalty/impact/horizon draws") {
    std::mt19937_64 rng(314);
    auto u = [&](double lo, double hi) {
        return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    };
    for (int rep = 0; rep < 10; ++rep) {
        const double xi = u(0.3, 4.0), impact = u(0.3, 3.0), horizon = u(0.4, 2.0);
        const ModelSpec m = mmtest::scalar_model(no_flow_no_dark(xi, impact, horizon));
        const riccati::V2Path v2 = riccati::solve_v2_scalar(m);
        double worst = 0.0;
        for (int k = 0; k <= m.grid.steps(); k += 37) {
            const double t = m.grid.node(k);
            worst = std::max(worst, std::fabs(v2.scalar_at(t) -
                                              oracle::closed_form_riccati(xi, impact, horizon, t)));
        }
        CHECK(worst < 1e-10);
    }
}

TEST_CASE("zero penalty gives the trivial solution") {
    ScalarParams p = no_flow_no_dark(0.0, 1.0, 1.0);
    p.lambda = 1.0;
    p.eta_tilde = 0.8;
    const ModelSpec m = mmtest::scalar_model(p);
    const riccati::V2Path v2 = riccati::solve_v2_scalar(m);
    for (int k = 0; k <= m.grid.steps(); k += 100) CHECK(v2.path.node(k)(0, 0) == 0.0);
}

TEST_CASE("analytic envelope at the worked example") {
    ScalarParams p = no_flow_no_dark(1.0, 1.0, 1.0);
    p.lambda = 1.0;
    p.eta_tilde = 1.0;
    const ModelSpec m = mmtest::scalar_model(p);
    const auto [lo, hi] = riccati::v2_bounds(m, 0.0, 1.0);
    CHECK(lo == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(hi == doctest::Approx(0.5).epsilon(1e-12));
    const auto [loT, hiT] = riccati::v2_bounds(m, 1.0, 1.0);
    CHECK(loT == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(hiT == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("sandwich property on randomized valid scalar models") {
    std::mt19937_64 rng(777);
    for (int rep = 0; rep < 12; ++rep) {
        ScalarParams p = mmtest::random_scalar_params(rng, false);
        p.grid_steps = 500;
        const ModelSpec m = mmtest::scalar_model(p);
        const double xi = m.xi_eff()(0, 0);
        if (!(xi > 1e-6)) continue;
        const riccati::V2Path v2 = riccati::solve_v2_matrix(m);
        for (const double eps : {1.0, 0.1, 1.0 / xi}) {
            const riccati::BoundsPath bp = riccati::v2_bounds_path(m, eps);
            for (int k = 0; k < m.grid.nodes(); k += 9) {
                const double v = v2.path.node(k)(0, 0);
                CHECK(bp.lower[k] - v <= 1e-8);
                CHECK(v - bp.upper[k] <= 1e-8);
            }
        }
    }
}

TEST_CASE("comparison: larger penalties give a larger solution") {
    std::mt19937_64 rng(9);
    for (int rep = 0; rep < 8; ++rep) {
        ScalarParams p = mmtest::random_scalar_params(rng, false);
        p.grid_steps = 500;
        ScalarParams q = p;
        q.xi_tilde = p.xi_tilde + 0.7;
        q.gamma_tilde = p.gamma_tilde + 0.3;
        const riccati::V2Path a = riccati::solve_v2_matrix(mmtest::scalar_model(p));
        const riccati::V2Path b = riccati::solve_v2_matrix(mmtest::scalar_model(q));
        for (int k = 0; k < a.path.grid().nodes(); k += 13)
            CHECK(a.path.node(k)(0, 0) <= b.path.node(k)(0, 0) + 1e-12);
    }
}

TEST_CASE("step-halving shows 4th-order convergence") {
    ScalarParams p;
    p.flow_mass = 0.0;
    p.grid_steps = 100;
    const riccati::V2Path c = riccati::solve_v2_matrix(mmtest::scalar_model(p));
    p.grid_steps = 200;
    const riccati::V2Path f = riccati::solve_v2_matrix(mmtest::scalar_model(p));
    p.grid_steps = 400;
    const riccati::V2Path f2 = riccati::solve_v2_matrix(mmtest::scalar_model(p));
    const double e1 = std::fabs(c.scalar_at(0.0) - f.scalar_at(0.0));
    const double e2 = std::fabs(f.scalar_at(0.0) - f2.scalar_at(0.0));
    CHECK(e1 / e2 >= 8.0);
}

TEST_CASE("matrix solve: symmetry, PSD, n=1 reduction, diagonal decoupling") {
    std::mt19937_64 rng(12345);
    SUBCASE("n=1 reduction matches the scalar wrapper exactly") {
        ScalarParams p = mmtest::random_scalar_params(rng, false);
        p.grid_steps = 500;
        const ModelSpec m = mmtest::scalar_model(p);
        const riccati::V2Path a = riccati::solve_v2_scalar(m);
        const riccati::V2Path b = riccati::solve_v2_matrix(m);
        for (int k = 0; k < m.grid.nodes(); k += 7)
            CHECK(std::fabs(a.path.node(k)(0, 0) - b.path.node(k)(0, 0)) <= 1e-12);
    }
    SUBCASE("random dense draws stay symmetric PSD") {
        for (int rep = 0; rep < 4; ++rep) {
            const ModelSpec m =
                build_model(config::Tree::parse(mmtest::dense_model_text(rng, 3, 500)));
            const riccati::V2Path v2 = riccati::solve_v2_matrix(m);
            for (int k = 0; k < m.grid.nodes(); k += 11) {
                const Eigen::MatrixXd& v = v2.path.node(k);
                CHECK((v - v.transpose()).cwiseAbs().maxCoeff() <= 1e-10);
                Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v);
                CHECK(es.eigenvalues().minCoeff() >= -1e-8);
                for (int i = 0; i < 3; ++i) CHECK(v(i, i) >= -1e-10);
            }
        }
    }
    SUBCASE("diagonal configs decouple into scalar solves") {
        std::vector<ScalarParams> parts;
        const std::string text = mmtest::diagonal_model_text(rng, 3, &parts, 500);
        const ModelSpec m = build_model(config::Tree::parse(text));
        const riccati::V2Path v2 = riccati::solve_v2_matrix(m);
        for (int i = 0; i < 3; ++i) {
            ScalarParams sp = parts[static_cast<std::size_t>(i)];
            const riccati::V2Path si = riccati::solve_v2_scalar(mmtest::scalar_model(sp));
            for (int k = 0; k < m.grid.nodes(); k += 25) {
                CHECK(v2.path.node(k)(i, i) ==
                      doctest::Approx(si.path.node(k)(0, 0)).epsilon(1e-9));
                for (int j = 0; j < 3; ++j)
                    if (j != i) CHECK(std::fabs(v2.path.node(k)(i, j)) <= 1e-12);
            }
        }
    }
}

TEST_CASE("denominator guard and PSD assertion abort with diagnostics") {
    ScalarParams p;
    p.flow_mass = 0.0;
    p.grid_steps = 200;
    const ModelSpec m = mmtest::scalar_model(p);
    Eigen::MatrixXd bad(1, 1);
    bad(0, 0) = -m.eta_eff_at(1.0)[0];  // terminal exactly cancels the premium
    CHECK_THROWS_AS(riccati::solve_v2_matrix(m, bad), NumericalError);
    bad(0, 0) = -0.5;  // negative terminal penalty: PSD assertion trips
    CHECK_THROWS_AS(riccati::solve_v2_matrix(m, bad), NumericalError);
}

TEST_CASE("closed-form oracle edge values") {
    CHECK(oracle::closed_form_riccati(2.0, 1e6, 1.0, 0.0) == doctest::Approx(2.0).epsilon(1e-5));
    CHECK(oracle::closed_form_riccati(1.7, 0.9, 1.0, 1.0) == 1.7);
    CHECK_THROWS_AS(oracle::closed_form_riccati(0.0, 1.0, 1.0, 0.0), NumericalError);
}
