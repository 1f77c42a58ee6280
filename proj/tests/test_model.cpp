#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <random>

#include "mmopt/model.hpp"
#include "support/test_models.hpp"

using namespace mmopt;
using mmtest::ScalarParams;

TEST_CASE("effective parameters follow the inventory-impact shift") {
    ScalarParams p;
    p.xi_tilde = 1.5;
    p.beta = 1.0;
    p.eta_tilde = 0.5;
    const ModelSpec m = mmtest::scalar_model(p);
    CHECK(m.xi_eff()(0, 0) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.eta_eff_at(0.37)[0] == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(m.gamma_eff_at(0.2)(0, 0) == doctest::Approx(p.gamma_tilde).epsilon(1e-15));
}

TEST_CASE("degenerate temporary impact is rejected naming the assumption") {
    ScalarParams p;
    p.impact = 0.0;
    CHECK_THROWS_WITH_AS(mmtest::scalar_model(p), doctest::Contains("B'(b4')"),
                         ValidationError);
}

TEST_CASE("mark support with a zero endpoint is rejected") {
    ScalarParams p;
    p.flow_lo = 0.0;
    p.flow_hi = 1.0;
    CHECK_THROWS_WITH_AS(mmtest::scalar_model(p),
                         doctest::Contains("mark support must exclude zero"), ValidationError);
}

TEST_CASE("uniform flow moments match the analytic integrals") {
    ScalarParams p;
    p.flow_mass = 2.0;
    p.flow_lo = -1.0;
    p.flow_hi = 1.0;
    p.spread = 0.0;
    const ModelSpec m = mmtest::scalar_model(p);
    const FlowMoments mom = m.moments_at(0.5);
    CHECK(mom.phi[0] == doctest::Approx(0.0).epsilon(1e-14));
    CHECK(mom.psi[0] == doctest::Approx(1.0).epsilon(1e-13));
    CHECK(mom.phi2[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-13));
}

TEST_CASE("zero intensity gives zero moments") {
    ScalarParams p;
    p.flow_mass = 0.0;
    const ModelSpec m = mmtest::scalar_model(p);
    const FlowMoments mom = m.moments_at(0.1);
    CHECK(mom.phi[0] == 0.0);
    CHECK(mom.psi[0] == 0.0);
    CHECK(mom.phi2[0] == 0.0);
    CHECK(mom.theta[0] == 0.0);
}

TEST_CASE("symmetric flow with a spread has theta = -b psi") {
    ScalarParams p;
    p.spread = 0.1;
    const ModelSpec m = mmtest::scalar_model(p);
    const FlowMoments mom = m.moments_at(0.4);
    CHECK(mom.theta[0] == doctest::Approx(-0.1 * mom.psi[0]).epsilon(1e-13));
}

TEST_CASE("moment inequalities hold for randomized densities") {
    std::mt19937_64 rng(2024);
    for (int rep = 0; rep < 40; ++rep) {
        const ScalarParams p = mmtest::random_scalar_params(rng);
        const ModelSpec m = mmtest::scalar_model(p);
        const FlowMoments mom = m.moments_at(0.3);
        const double zmax = m.flows[0].shape.zmax;
        CHECK(mom.psi[0] >= std::fabs(mom.phi[0]) - 1e-12);
        CHECK(mom.phi2[0] <= zmax * mom.psi[0] + 1e-12);
        CHECK(mom.theta[0] ==
              doctest::Approx(mom.phi[0] - p.spread * mom.psi[0]).epsilon(1e-12));
    }
}

TEST_CASE("tilted shape: density, sampling and moments agree") {
    const FlowShape s = FlowShape::make(FlowShape::Kind::Tilted, -0.5, 1.5, 0.6);
    // density integrates to one and stays nonnegative
    double mass = 0.0, mean = 0.0;
    const int nq = 4000;
    for (int i = 0; i < nq; ++i) {
        const double z = -0.5 + 2.0 * (i + 0.5) / nq;
        CHECK(s.density(z) >= 0.0);
        mass += s.density(z) * (2.0 / nq);
        mean += z * s.density(z) * (2.0 / nq);
    }
    CHECK(mass == doctest::Approx(1.0).epsilon(1e-6));
    CHECK(mean == doctest::Approx(s.m1).epsilon(1e-5));
    // inverse-CDF sampling reproduces the moments
    std::mt19937_64 rng(5);
    double sm = 0.0, sa = 0.0;
    const int np = 200000;
    for (int i = 0; i < np; ++i) {
        const double z = s.sample(std::uniform_real_distribution<double>(0.0, 1.0)(rng));
        sm += z;
        sa += std::fabs(z);
    }
    CHECK(sm / np == doctest::Approx(s.m1).epsilon(0.02));
    CHECK(sa / np == doctest::Approx(s.mabs).epsilon(0.02));
}

TEST_CASE("model construction is deterministic") {
    ScalarParams p;
    const std::string text = mmtest::scalar_model_text(p);
    const ModelSpec a = build_model(config::Tree::parse(text));
    const ModelSpec b = build_model(config::Tree::parse(text));
    for (double t : {0.0, 0.37, 0.99}) {
        CHECK(a.M_at(t)(0, 0) == b.M_at(t)(0, 0));
        CHECK(a.eta_eff_at(t)[0] == b.eta_eff_at(t)[0]);
        CHECK(a.moments_at(t).phi2[0] == b.moments_at(t).phi2[0]);
    }
    CHECK(config::Tree::parse(text).hash() == config::Tree::parse(text).hash());
}

TEST_CASE("validation flips when one bound crosses its floor") {
    ScalarParams p;
    p.eta_tilde = 0.501;
    p.beta = -1.0;  // eta_eff = eta_tilde - 0.5
    CHECK(validate_model(mmtest::scalar_model(p)).ok());
    p.eta_tilde = 0.4999999;
    const ModelSpec bad = build_model_unchecked(config::Tree::parse(mmtest::scalar_model_text(p)));
    CHECK_FALSE(validate_model(bad).ok());
}

TEST_CASE("dense multi-security configs validate and evaluate") {
    std::mt19937_64 rng(11);
    const ModelSpec m = build_model(config::Tree::parse(mmtest::dense_model_text(rng, 3, 400)));
    CHECK(m.n == 3);
    const Eigen::MatrixXd mm = m.M_at(0.2);
    CHECK(mm.rows() == 3);
    CHECK((mm - mm.transpose()).cwiseAbs().maxCoeff() < 1e-12);
    const FlowMoments mom = m.moments_at(0.2);
    CHECK(mom.phi.size() == 3);
}

TEST_CASE("assumption C constants for the sweep config") {
    config::Tree cfg = config::Tree::parse_file(std::string(MMOPT_CONFIG_DIR) +
                                                "/liquidation-sweep.cfg");
    const ModelSpec m = build_model(cfg);
    const PenaltySweepConstants pc = penalty_sweep_constants(m);
    CHECK(pc.assumption_c_ok);
    CHECK(pc.c == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(pc.c_tilde == doctest::Approx(1.0 / 2.4).epsilon(1e-12));
    const ValidationReport rep = validate_model(m, true);
    CHECK(rep.ok());
}

TEST_CASE("factor-driven coefficients follow the zero-noise skeleton") {
    const ModelSpec m =
        build_model(config::Tree::parse(mmtest::factor_model_text(1.0, 400)));
    CHECK(m.factor.present());
    // skeleton converges toward the reversion level 0.3
    CHECK(m.factor_at(0.0)[0] == doctest::Approx(0.3));
    CHECK(m.coeffs_deterministic() == false);  // elliptic diffusion present
    const ModelSpec frozen =
        build_model(config::Tree::parse(mmtest::factor_model_text(0.0, 400)));
    CHECK(frozen.coeffs_deterministic());
}
