#pragma once

#include <Eigen/Dense>
#include <optional>

#include "mmopt/interp.hpp"
#include "mmopt/model.hpp"

namespace mmopt::riccati {

// Solution path of the terminal-penalty matrix equation
//   dV2/ds = V2 [M^-1 + diag(lambda_i/([V2]_ii + eta_i))] V2 - gamma,
//   V2(T) = xi,
// integrated backward on the shared grid with classical RK4, symmetrized each
// step. Node derivatives are kept for dense 4th-order evaluation.
struct V2Path {
    MatrixPath path;
    Eigen::MatrixXd xi;
    double step = 0.0;
    std::string scheme = "rk4";
    int n = 1;

    Eigen::MatrixXd at(double t) const { return path.at(t); }
    double scalar_at(double t) const { return path.at(t)(0, 0); }
};

// Backward solve with the model's effective coefficients; `xi_override`
// replaces the effective terminal penalty (used by the penalty sweep).
V2Path solve_v2_matrix(const ModelSpec& m,
                       const std::optional<Eigen::MatrixXd>& xi_override = std::nullopt);

// Single-security convenience wrapper.
V2Path solve_v2_scalar(const ModelSpec& m,
                       const std::optional<double>& xi_override = std::nullopt);

// Analytic envelope (single security, deterministic coefficients):
//   lower(t) = 1 / (1/xi + int_t^T (1/M + lambda/eta) ds)
//   upper(t) = (T-t+eps)^-2 (eps^2 xi + int_t^T (M + (T-s+eps)^2 gamma) ds)
std::pair<double, double> v2_bounds(const ModelSpec& m, double t, double eps,
                                    const std::optional<double>& xi_override = std::nullopt);

struct BoundsPath {
    std::vector<double> lower, upper;
};
BoundsPath v2_bounds_path(const ModelSpec& m, double eps,
                          const std::optional<double>& xi_override = std::nullopt);

}  // namespace mmopt::riccati
