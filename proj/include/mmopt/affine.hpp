#pragma once

#include <Eigen/Dense>

#include "mmopt/interp.hpp"
#include "mmopt/model.hpp"
#include "mmopt/riccati.hpp"

namespace mmopt::affine {

// A(t) = M(t)^-1 + diag(lambda_i/([V2]_ii + eta_i)), the kernel shared by the
// feedback gain, the propagator and the quadratic driver.
Eigen::MatrixXd eval_A(const ModelSpec& m, const riccati::V2Path& v2, double t);
Eigen::MatrixXd eval_F(const ModelSpec& m, const riccati::V2Path& v2, double t);

// F(s) = V2(s) A(s) sampled on the grid (derivatives by central differences;
// solver-grade evaluations use eval_F directly).
MatrixPath compute_F(const ModelSpec& m, const riccati::V2Path& v2);

// Fundamental solution of dY/ds = F(s) Y with Y(anchor) = I, together with
// its inverse from dY^-1/ds = -Y^-1 F.
struct PropagatorPath {
    MatrixPath y;
    MatrixPath yinv;
    double anchor = 0.0;
};
PropagatorPath propagator(const ModelSpec& m, const riccati::V2Path& v2, double anchor);

// Inhomogeneity of the linear V1 equation:
// g(u) = 1/2 F(u) Sbar(u) - V2(u)(1/2 Theta(u) + (b Psi)(u))
//        - 1/2 (beta(u)(b Psi)(u) - lbar(u)).
Eigen::VectorXd v1_inhomogeneity(const ModelSpec& m, const riccati::V2Path& v2, double t);

struct AffinePath {
    VectorPath v1;
    ScalarPath v0;
    MatrixPath f;
    bool v0_exact = true;  // false when the price is stochastic and its mean
                           // curve was substituted in the quadratic V0 driver
};

// Variation-of-constants V1: composite Simpson of Y^-1 g on the shared grid.
VectorPath solve_v1(const ModelSpec& m, const riccati::V2Path& v2, const PropagatorPath& prop);

// Backward quadrature of the quadratic V0 driver, zero terminal value.
ScalarPath solve_v0(const ModelSpec& m, const riccati::V2Path& v2, const VectorPath& v1);

AffinePath solve_affine(const ModelSpec& m, const riccati::V2Path& v2);

double value_function(const riccati::V2Path& v2, const AffinePath& a, double t,
                      const Eigen::VectorXd& x);

}  // namespace mmopt::affine
