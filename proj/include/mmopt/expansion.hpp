#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <vector>

#include "mmopt/interp.hpp"
#include "mmopt/model.hpp"
#include "mmopt/quad.hpp"

namespace mmopt::expansion {

// Partials of the driver f(x,v) = -(1/M(x) + lambda(x)/(v+eta(x))) v^2 + gamma(x)
// with the effective (shifted) coefficients, all analytic via the registry.
struct DriverPartials {
    double f = 0.0, fv = 0.0, fvv = 0.0;
    Eigen::VectorXd fx, fxv;
    Eigen::MatrixXd fxx;
};
DriverPartials driver_partials(const ModelSpec& m, double t, const Eigen::VectorXd& x, double v,
                               int order);

// Coefficient paths of the small-noise expansion anchored at a grid node:
// zeroth-order factor/value paths and the first/second order ODE solutions.
// y2 coincides with y (same equation and terminal value); both are kept so
// the identity is visible to callers and tests.
struct ExpansionSolution {
    TimeGrid grid;  // [anchor, T]
    double anchor_t = 0.0;
    Eigen::VectorXd anchor_x;
    VectorPath x0;
    ScalarPath v0th;
    VectorPath y;
    VectorPath y2;
    MatrixPath y1;
    ScalarPath y0;
};

ExpansionSolution solve_expansion(const ModelSpec& m, int anchor_node,
                                  const Eigen::VectorXd& x_anchor);

// First-order martingale loading Z^[1](s) = sigma0(s)^T y(s).
Eigen::VectorXd z1_loading(const ModelSpec& m, const ExpansionSolution& sol, double t);

// Value approximation at the anchor point: X^[1] = X^[2] = 0 there, so
// order 0/1 give V^[0] and order 2 adds eps^2 y0.
double approx_value(const ExpansionSolution& sol, int order, double epsilon);

struct ExpansionSimStats {
    int n_paths = 0;
    MeanSe x1_terminal;      // first component of X^[1]_T
    MeanSe v1_terminal;      // V^[1]_T
    MeanSe v1_mid;           // V^[1] at the middle node
    MeanSe v2_mid;           // V^[2] at the middle node
    MeanSe bsde_residual;    // first-order martingale residual
    double max_abs_x1 = 0.0;
    double max_abs_x2 = 0.0;
};

// Euler simulation of the first/second-order expansion SDEs with antithetic
// increments; statistics use pairwise reductions so results are independent
// of scheduling.
ExpansionSimStats simulate_expansion_paths(const ModelSpec& m, const ExpansionSolution& sol,
                                           int n_paths, std::uint64_t seed);

// Re-anchored order-2 cache over (time node, factor state) used as the
// stochastic-coefficient trading rule: v2 holds the anchored value
// approximation, v1 the linear coefficient solved along the frozen
// zeroth-order path from each lattice node. 1-d factor.
struct StrategyLattice {
    std::vector<double> tnodes;
    std::vector<double> xnodes;
    Eigen::MatrixXd v2tab;
    Eigen::MatrixXd v1tab;
    int order = 2;

    double v2(double t, double x) const;
    double v1(double t, double x) const;
};

struct LatticeOptions {
    int time_stride = 20;
    int x_nodes = 41;
    double span_sigmas = 5.0;
    double margin = 0.25;
    int order = 2;
};

StrategyLattice build_strategy_lattice(const ModelSpec& m, const LatticeOptions& opt = {});

}  // namespace mmopt::expansion
