#pragma once

#include <Eigen/Dense>
#include <optional>
#include <string>
#include <vector>

#include "mmopt/config.hpp"
#include "mmopt/forms.hpp"
#include "mmopt/grid.hpp"
#include "mmopt/interp.hpp"

namespace mmopt {

// Normalized mark density on the support K = [lo,hi] \ {0}. Moments are
// computed with the fixed 64-node Gauss-Legendre rule, split at zero when the
// support straddles it so |z| stays smooth on each panel.
struct FlowShape {
    enum class Kind { Uniform, Tilted };
    Kind kind = Kind::Uniform;
    double lo = -1.0, hi = 1.0;
    double tilt = 0.0;  // |tilt| <= 1 keeps the density nonnegative

    double m1 = 0.0;    // E z
    double mabs = 0.0;  // E |z|
    double m2 = 0.0;    // E z^2
    double zmax = 1.0;  // sup |z| on K

    static FlowShape make(Kind kind, double lo, double hi, double tilt);
    double density(double z) const;
    double sample(double u) const;  // inverse CDF, u in (0,1)
};

// Customer order flow of one security: intensity density
// Lambda(t,z) = mass(t,x) * shape(z). `bound` majorizes sup mass (required
// when mass depends on the factor; derived from the form otherwise).
struct OrderFlow {
    FlowShape shape;
    ScalarForm mass;
    double bound = 0.0;
};

// First/second moments of the order-size compensators, and the
// spread-adjusted flow theta = phi - b o psi.
struct FlowMoments {
    Eigen::VectorXd phi, psi, phi2, theta;
};

FlowMoments flow_moments(const std::vector<OrderFlow>& flows, const Eigen::VectorXd& b, double t,
                         const Eigen::VectorXd& x);

// Unaffected price per security: constant, or OU with known mean curve.
struct PriceSpec {
    int n = 1;
    Eigen::VectorXd s0, kappa, mean, vol;  // constant securities have kappa=vol=0, mean=s0

    Eigen::VectorXd mean_curve(double u) const;
    bool deterministic() const { return vol.isZero(0.0); }
    // Exact OU transition: value at t+dt given value at t and a N(0,1) draw.
    double transition(int i, double s_t, double dt, double z) const;
};

// Factor drift mu_i(t,x) = a + b.x + c*tanh(d.x); affine when c = 0.
struct DriftForm {
    double a = 0.0;
    Eigen::VectorXd b;
    double c = 0.0;
    Eigen::VectorXd d;

    double value(const Eigen::VectorXd& x) const;
    Eigen::VectorXd grad(const Eigen::VectorXd& x) const;
    Eigen::MatrixXd hess(const Eigen::VectorXd& x) const;
};

struct FactorModel {
    int dim = 0;
    Eigen::VectorXd x0;
    double epsilon = 1.0;
    std::vector<DriftForm> drift;                // size dim
    std::vector<std::vector<ScalarForm>> vol;    // dim x dim entries

    bool present() const { return dim > 0; }
    Eigen::VectorXd mu(double t, const Eigen::VectorXd& x) const;
    // dmu(i,j) = d mu_j / d x_i (gradient index first).
    Eigen::MatrixXd dmu(double t, const Eigen::VectorXd& x) const;
    Eigen::MatrixXd hess_mu(int k, double t, const Eigen::VectorXd& x) const;
    Eigen::MatrixXd sigma(double t, const Eigen::VectorXd& x) const;
    // dsigma(j) = d sigma_{ik} / d x_j for fixed (i,k).
    Eigen::VectorXd dsigma(int i, int k, double t, const Eigen::VectorXd& x) const;
    bool vol_is_zero() const;
};

// Symmetric matrix coefficient: diagonal of scalar forms, or a constant
// symmetric base scaled by one scalar form.
struct MatrixCoeff {
    enum class Kind { Diagonal, DenseScaled };
    Kind kind = Kind::Diagonal;
    int n = 1;
    std::vector<ScalarForm> diag;
    Eigen::MatrixXd base;
    ScalarForm scale = ScalarForm::constant(1.0);

    static MatrixCoeff scalar(ScalarForm f);
    static MatrixCoeff zero(int n);
    Eigen::MatrixXd value(double t, const Eigen::VectorXd& x) const;
    bool time_only() const;
    double scalar_value(double t, const Eigen::VectorXd& x) const;       // n == 1
    Eigen::VectorXd scalar_grad(double t, const Eigen::VectorXd& x) const;
    Eigen::MatrixXd scalar_hess(double t, const Eigen::VectorXd& x) const;
};

struct VectorCoeff {
    std::vector<ScalarForm> entries;  // size n
    Eigen::VectorXd value(double t, const Eigen::VectorXd& x) const;
    bool time_only() const;
};

struct AssumptionCheck {
    std::string id;      // e.g. "B'(b4')"
    std::string detail;  // which quantity, grid point, measured value
    bool pass = true;
};

struct ValidationReport {
    std::vector<AssumptionCheck> checks;
    bool ok() const;
    std::string to_string() const;
    void throw_if_failed() const;
};

// The full market model: raw coefficients, derived effective coefficients
// (shifted by the inventory-impact terms), order flows, price and factor
// dynamics, all on one shared uniform time grid. Immutable once built.
struct ModelSpec {
    int n = 1;
    TimeGrid grid;
    Eigen::VectorXd position0;

    MatrixCoeff xi_tilde, gamma_tilde, impact_M, beta, mu_beta, sigma_beta;
    VectorCoeff eta_tilde, dark_lambda, spread_b, repo_l;
    Eigen::VectorXd dark_bound;  // declared sup of factor-dependent intensities (0 = n/a)
    PriceSpec price;
    std::vector<OrderFlow> flows;
    FactorModel factor;

    double sym_tol = 1e-12;
    double psd_tol = 1e-10;
    double strict_floor = 1e-10;

    VectorPath factor_skeleton;  // zero-noise factor path from x0 (empty if no factor)

    Eigen::VectorXd factor_at(double t) const;
    Eigen::MatrixXd M_at(double t) const;
    Eigen::MatrixXd gamma_eff_at(double t) const;
    Eigen::MatrixXd beta_at(double t) const;
    Eigen::VectorXd eta_eff_at(double t) const;
    Eigen::VectorXd lambda_at(double t) const;
    Eigen::VectorXd b_at(double t) const;
    Eigen::VectorXd l_at(double t) const;
    Eigen::VectorXd price_mean_at(double t) const;
    Eigen::MatrixXd xi_eff() const;
    Eigen::MatrixXd xi_tilde_at_T() const;
    FlowMoments moments_at(double t) const;
    FlowMoments moments_at(double t, const Eigen::VectorXd& x) const;

    // True when every coefficient is a plain function of time (directly or
    // through the zero-noise factor skeleton).
    bool coeffs_deterministic() const;
};

ModelSpec build_model(const config::Tree& cfg);
ModelSpec build_model_unchecked(const config::Tree& cfg);
ValidationReport validate_model(const ModelSpec& m, bool check_assumption_c = false);

// Assumption C constants for the terminal-penalty sweep:
// c = ess-inf of (M, eta), c_tilde = c / (sup M * (1 + sup lambda)).
struct PenaltySweepConstants {
    double c = 0.0;
    double c_tilde = 0.0;
    double lambda_bar = 0.0;
    double m_bar = 0.0;
    bool assumption_c_ok = false;
};
PenaltySweepConstants penalty_sweep_constants(const ModelSpec& m);

}  // namespace mmopt
