#include "mmopt/oracle.hpp"

#include <algorithm>
#include <cmath>

namespace mmopt::oracle {

using Eigen::VectorXd;

double closed_form_riccati(double xi, double m, double horizon, double t) {
    if (!(xi > 0.0) || !(m > 0.0)) throw NumericalError("closed_form_riccati: xi, M must be > 0");
    if (t > horizon) throw NumericalError("closed_form_riccati: t beyond horizon");
    return 1.0 / (1.0 / xi + (horizon - t) / m);
}

namespace {

struct NodeCoeffs {
    std::vector<double> m, lam, gam, eta, mu, sig;
};

// Effective scalar coefficients at the factor nodes (n == 1 model).
NodeCoeffs eval_coeffs(const ModelSpec& mod, double t, const std::vector<double>& xs) {
    NodeCoeffs c;
    const std::size_t nx = xs.size();
    c.m.resize(nx);
    c.lam.resize(nx);
    c.gam.resize(nx);
    c.eta.resize(nx);
    c.mu.resize(nx);
    c.sig.resize(nx);
    VectorXd x(1);
    for (std::size_t i = 0; i < nx; ++i) {
        x[0] = xs[i];
        c.m[i] = mod.impact_M.scalar_value(t, x);
        c.lam[i] = mod.dark_lambda.entries[0].value(t, x);
        c.gam[i] = mod.gamma_tilde.scalar_value(t, x) + 0.5 * mod.mu_beta.scalar_value(t, x);
        c.eta[i] = mod.eta_tilde.entries[0].value(t, x) + 0.5 * mod.beta.scalar_value(t, x);
        c.mu[i] = mod.factor.drift[0].value(x);
        c.sig[i] = mod.factor.vol[0][0].value(t, x);
    }
    return c;
}

bool coeffs_time_varying(const ModelSpec& m) {
    auto dep = [](const ScalarForm& f) { return f.depends_on_time(); };
    bool tv = false;
    for (const auto& f : m.impact_M.diag) tv = tv || dep(f);
    tv = tv || dep(m.impact_M.scale);
    for (const auto& f : m.gamma_tilde.diag) tv = tv || dep(f);
    tv = tv || dep(m.gamma_tilde.scale);
    for (const auto& f : m.beta.diag) tv = tv || dep(f);
    tv = tv || dep(m.beta.scale);
    for (const auto& f : m.mu_beta.diag) tv = tv || dep(f);
    tv = tv || dep(m.mu_beta.scale);
    tv = tv || dep(m.dark_lambda.entries[0]);
    tv = tv || dep(m.eta_tilde.entries[0]);
    for (const auto& row : m.factor.vol)
        for (const auto& f : row) tv = tv || dep(f);
    return tv;
}

double reaction(const NodeCoeffs& c, std::size_t i, double v) {
    const double den = v + c.eta[i];
    return -(1.0 / c.m[i] + c.lam[i] / den) * v * v + c.gam[i];
}

double reaction_dv(const NodeCoeffs& c, std::size_t i, double v) {
    const double den = v + c.eta[i];
    return -2.0 * v * (1.0 / c.m[i] + c.lam[i] / den) + c.lam[i] * v * v / (den * den);
}

struct CoreResult {
    std::vector<double> tgrid, xgrid;
    std::vector<std::vector<double>> slices;
    double v00 = 0.0;
    double min_value = 0.0;
};

CoreResult solve_core(const ModelSpec& m, double epsilon, int nx, int nt, double x_lo,
                      double x_hi, int snapshots) {
    const double T = m.grid.horizon();
    const double hx = (x_hi - x_lo) / (nx - 1);
    const double dt = T / nt;

    std::vector<double> xs(static_cast<std::size_t>(nx));
    for (int i = 0; i < nx; ++i) xs[static_cast<std::size_t>(i)] = x_lo + i * hx;

    // terminal slice: effective terminal penalty as a function of the factor
    std::vector<double> v(static_cast<std::size_t>(nx));
    {
        VectorXd x(1);
        for (int i = 0; i < nx; ++i) {
            x[0] = xs[static_cast<std::size_t>(i)];
            v[static_cast<std::size_t>(i)] =
                m.xi_tilde.scalar_value(T, x) - 0.5 * m.beta.scalar_value(T, x);
        }
    }

    const bool tv = coeffs_time_varying(m);
    NodeCoeffs coef = eval_coeffs(m, T, xs);

    CoreResult res;
    res.xgrid = xs;
    res.min_value = *std::min_element(v.begin(), v.end());
    const int snap_stride = std::max(1, nt / std::max(1, snapshots - 1));

    std::vector<std::vector<double>> slices;
    std::vector<double> stimes;
    stimes.push_back(T);
    slices.push_back(v);

    std::vector<double> sub(static_cast<std::size_t>(nx)), dia(static_cast<std::size_t>(nx)),
        sup(static_cast<std::size_t>(nx)), rhs(static_cast<std::size_t>(nx)),
        scratch(static_cast<std::size_t>(nx));

    for (int j = 0; j < nt; ++j) {
        const double t_new = T - (j + 1) * dt;
        if (tv) coef = eval_coeffs(m, t_new, xs);
        for (int i = 0; i < nx; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            const double a = coef.mu[ii];
            const double d = 0.5 * epsilon * epsilon * coef.sig[ii] * coef.sig[ii];
            const double fv = reaction_dv(coef, ii, v[ii]);
            sub[ii] = dt * a / (2.0 * hx) - dt * d / (hx * hx);
            dia[ii] = 1.0 + 2.0 * dt * d / (hx * hx) - dt * fv;
            sup[ii] = -dt * a / (2.0 * hx) - dt * d / (hx * hx);
            rhs[ii] = v[ii] + dt * (reaction(coef, ii, v[ii]) - fv * v[ii]);
        }
        // Neumann mirror: v[-1] = v[1], v[nx] = v[nx-2]
        sup[0] += sub[0];
        sub[static_cast<std::size_t>(nx - 1)] += sup[static_cast<std::size_t>(nx - 1)];

        // Thomas solve
        scratch[0] = sup[0] / dia[0];
        rhs[0] /= dia[0];
        for (int i = 1; i < nx; ++i) {
            const auto ii = static_cast<std::size_t>(i);
            const double w = dia[ii] - sub[ii] * scratch[ii - 1];
            if (w == 0.0) throw NumericalError("pde oracle: singular tridiagonal step");
            scratch[ii] = sup[ii] / w;
            rhs[ii] = (rhs[ii] - sub[ii] * rhs[ii - 1]) / w;
        }
        for (int i = nx - 2; i >= 0; --i) {
            const auto ii = static_cast<std::size_t>(i);
            rhs[ii] -= scratch[ii] * rhs[ii + 1];
        }
        v = rhs;
        if (!std::isfinite(v[static_cast<std::size_t>(nx / 2)]))
            throw NumericalError("pde oracle diverged at t=" + std::to_string(t_new));
        res.min_value = std::min(res.min_value, *std::min_element(v.begin(), v.end()));
        if ((j + 1) % snap_stride == 0 || j + 1 == nt) {
            stimes.push_back(t_new);
            slices.push_back(v);
        }
    }

    // slices were collected from T downward; store ascending in t
    res.tgrid.assign(stimes.rbegin(), stimes.rend());
    res.slices.assign(slices.rbegin(), slices.rend());

    // v(0, x0) by linear interpolation in x
    const double x0 = m.factor.x0[0];
    const double pos = (x0 - x_lo) / hx;
    const int i0 = std::clamp(static_cast<int>(std::floor(pos)), 0, nx - 2);
    const double w = pos - i0;
    res.v00 = (1.0 - w) * v[static_cast<std::size_t>(i0)] + w * v[static_cast<std::size_t>(i0 + 1)];
    return res;
}

}  // namespace

PdeGridSolution solve_pde_1d(const ModelSpec& m, double epsilon, const PdeOptions& opt) {
    if (!m.factor.present() || m.factor.dim != 1)
        throw NumericalError("solve_pde_1d requires a 1-dimensional factor model");
    if (m.n != 1) throw NumericalError("solve_pde_1d requires a single security");
    if (epsilon < 0.0) throw NumericalError("solve_pde_1d: epsilon must be >= 0");

    const double T = m.grid.horizon();
    const double x0 = m.factor.x0[0];
    const double sig0 = std::fabs(m.factor.vol[0][0].value(0.0, m.factor.x0));
    double x_lo = opt.x_lo ? *opt.x_lo : x0 - (6.0 * epsilon * sig0 * std::sqrt(T) + opt.margin);
    double x_hi = opt.x_hi ? *opt.x_hi : x0 + (6.0 * epsilon * sig0 * std::sqrt(T) + opt.margin);
    if (!(x_lo < x_hi)) throw NumericalError("solve_pde_1d: empty space domain");

    PdeGridSolution out;
    out.nx = opt.nx;
    out.nt = opt.nt;
    out.boundary_warning =
        (x0 - x_lo) < 0.1 * (x_hi - x_lo) || (x_hi - x0) < 0.1 * (x_hi - x_lo);

    CoreResult coarse = solve_core(m, epsilon, opt.nx, opt.nt, x_lo, x_hi, opt.snapshots);
    out.tgrid = coarse.tgrid;
    out.xgrid = coarse.xgrid;
    out.v = coarse.slices;
    out.v00 = coarse.v00;
    out.min_value = coarse.min_value;
    if (opt.refine) {
        CoreResult fine =
            solve_core(m, epsilon, 2 * opt.nx - 1, 2 * opt.nt, x_lo, x_hi, opt.snapshots);
        out.v00_fine = fine.v00;
        out.grid_error = std::fabs(fine.v00 - coarse.v00);
        out.v00_extrapolated = 2.0 * fine.v00 - coarse.v00;
        out.min_value = std::min(out.min_value, fine.min_value);
        if (opt.levels >= 3) {
            // first-order Richardson at two consecutive level pairs; their
            // disagreement bounds what is left in the extrapolated value
            CoreResult finest =
                solve_core(m, epsilon, 4 * opt.nx - 3, 4 * opt.nt, x_lo, x_hi, opt.snapshots);
            const double ext12 = out.v00_extrapolated;
            const double ext23 = 2.0 * finest.v00 - fine.v00;
            out.v00_fine = finest.v00;
            out.v00_extrapolated = ext23;
            out.grid_error = std::fabs(ext23 - ext12);
            out.min_value = std::min(out.min_value, finest.min_value);
        }
    } else {
        out.v00_fine = coarse.v00;
        out.v00_extrapolated = coarse.v00;
    }
    return out;
}

}  // namespace mmopt::oracle
