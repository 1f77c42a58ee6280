#pragma once

#include <optional>
#include <vector>

#include "mmopt/model.hpp"

namespace mmopt::oracle {

// Separable solution of the scalar terminal-penalty ODE with lambda = gamma = 0:
// 1/V2(t) = 1/xi + (T-t)/M.
double closed_form_riccati(double xi, double m, double horizon, double t);

struct PdeOptions {
    int nx = 801;
    int nt = 4000;
    double margin = 0.5;        // added to the 6*eps*sigma*sqrt(T) half-width
    bool refine = true;         // re-solve on a doubled grid for an error estimate
    int levels = 2;             // 3 = once-more-doubled grid; the reported
                                // grid_error then bounds the extrapolated value
    int snapshots = 101;        // stored time slices
    std::optional<double> x_lo; // explicit domain override
    std::optional<double> x_hi;
};

struct PdeGridSolution {
    std::vector<double> tgrid;            // stored slice times (descending from T? no: ascending)
    std::vector<double> xgrid;
    std::vector<std::vector<double>> v;   // v[slice][node], slice times in tgrid
    double v00 = 0.0;                     // v(0, x0) on the requested grid
    double v00_fine = 0.0;                // doubled grid
    double v00_extrapolated = 0.0;        // first-order Richardson combination
    double grid_error = 0.0;              // |v00 - v00_fine|
    double min_value = 0.0;               // smallest node value seen (nonnegativity)
    bool boundary_warning = false;        // x0 within 10% of the truncation boundary
    int nx = 0;
    int nt = 0;
};

// Implicit-explicit finite differences for the semilinear value PDE of the
// single-security stochastic-coefficient problem on a 1-d factor:
//   dv/dt + mu dv/dx + (eps^2/2) sigma^2 d2v/dx2 + f(x,v) = 0,  v(T,.) = xi.
// Advection/diffusion implicit, reaction linearized with one Newton
// correction per step; Neumann zero-gradient boundaries.
PdeGridSolution solve_pde_1d(const ModelSpec& m, double epsilon, const PdeOptions& opt = {});

}  // namespace mmopt::oracle
