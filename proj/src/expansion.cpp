#include "mmopt/expansion.hpp"

#include <cmath>

#include "mmopt/rng.hpp"

namespace mmopt::expansion {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

struct EffScalar {
    double v;
    VectorXd g;
    MatrixXd h;
};

EffScalar eff_M(const ModelSpec& m, double t, const VectorXd& x, int order) {
    EffScalar e;
    e.v = m.impact_M.scalar_value(t, x);
    if (order >= 1) e.g = m.impact_M.scalar_grad(t, x);
    if (order >= 2) e.h = m.impact_M.scalar_hess(t, x);
    return e;
}

EffScalar eff_lambda(const ModelSpec& m, double t, const VectorXd& x, int order) {
    EffScalar e;
    const auto& f = m.dark_lambda.entries[0];
    e.v = f.value(t, x);
    if (order >= 1) e.g = f.grad_x(t, x);
    if (order >= 2) e.h = f.hess_x(t, x);
    return e;
}

EffScalar eff_gamma(const ModelSpec& m, double t, const VectorXd& x, int order) {
    EffScalar e;
    e.v = m.gamma_tilde.scalar_value(t, x) + 0.5 * m.mu_beta.scalar_value(t, x);
    if (order >= 1) e.g = m.gamma_tilde.scalar_grad(t, x) + 0.5 * m.mu_beta.scalar_grad(t, x);
    if (order >= 2) e.h = m.gamma_tilde.scalar_hess(t, x) + 0.5 * m.mu_beta.scalar_hess(t, x);
    return e;
}

EffScalar eff_eta(const ModelSpec& m, double t, const VectorXd& x, int order) {
    EffScalar e;
    const auto& f = m.eta_tilde.entries[0];
    e.v = f.value(t, x) + 0.5 * m.beta.scalar_value(t, x);
    if (order >= 1) e.g = f.grad_x(t, x) + 0.5 * m.beta.scalar_grad(t, x);
    if (order >= 2) e.h = f.hess_x(t, x) + 0.5 * m.beta.scalar_hess(t, x);
    return e;
}

EffScalar eff_xi(const ModelSpec& m, const VectorXd& x, int order) {
    const double T = m.grid.horizon();
    EffScalar e;
    e.v = m.xi_tilde.scalar_value(T, x) - 0.5 * m.beta.scalar_value(T, x);
    if (order >= 1) e.g = m.xi_tilde.scalar_grad(T, x) - 0.5 * m.beta.scalar_grad(T, x);
    if (order >= 2) e.h = m.xi_tilde.scalar_hess(T, x) - 0.5 * m.beta.scalar_hess(T, x);
    return e;
}

}  // namespace

DriverPartials driver_partials(const ModelSpec& m, double t, const VectorXd& x, double v,
                               int order) {
    const int d = static_cast<int>(x.size());
    const EffScalar M = eff_M(m, t, x, order);
    const EffScalar lam = eff_lambda(m, t, x, order);
    const EffScalar gam = eff_gamma(m, t, x, order);
    const EffScalar eta = eff_eta(m, t, x, order);

    const double den = v + eta.v;
    if (den < 1e-12) throw NumericalError("expansion driver: v+eta denominator below 1e-12");
    const double a = 1.0 / M.v + lam.v / den;
    const double a_v = -lam.v / (den * den);

    DriverPartials p;
    p.f = -a * v * v + gam.v;
    p.fv = -a_v * v * v - 2.0 * a * v;
    if (order == 0) return p;

    const VectorXd a_x = -M.g / (M.v * M.v) + lam.g / den - (lam.v / (den * den)) * eta.g;
    p.fx = -a_x * v * v + gam.g;
    if (order == 1) return p;

    const double a_vv = 2.0 * lam.v / (den * den * den);
    const VectorXd a_xv = -lam.g / (den * den) + (2.0 * lam.v / (den * den * den)) * eta.g;
    const MatrixXd a_xx =
        (2.0 / (M.v * M.v * M.v)) * (M.g * M.g.transpose()) - M.h / (M.v * M.v) + lam.h / den -
        (lam.g * eta.g.transpose() + eta.g * lam.g.transpose()) / (den * den) +
        (2.0 * lam.v / (den * den * den)) * (eta.g * eta.g.transpose()) -
        (lam.v / (den * den)) * eta.h;

    p.fvv = -a_vv * v * v - 4.0 * a_v * v - 2.0 * a;
    p.fxv = -a_xv * v * v - 2.0 * v * a_x;
    p.fxx = -a_xx * v * v + gam.h;
    (void)d;
    return p;
}

ExpansionSolution solve_expansion(const ModelSpec& m, int anchor_node, const VectorXd& x_anchor) {
    if (m.n != 1) throw NumericalError("expansion requires a single security");
    if (!m.factor.present()) throw NumericalError("expansion requires a factor model");
    if (anchor_node < 0 || anchor_node >= m.grid.steps())
        throw NumericalError("expansion anchor must be an interior grid node");
    const int d = m.factor.dim;
    if (x_anchor.size() != d) throw NumericalError("expansion anchor state dimension mismatch");

    const TimeGrid g = m.grid.tail_from(anchor_node);
    const int nn = g.nodes();
    const double h = g.h();

    ExpansionSolution sol;
    sol.grid = g;
    sol.anchor_t = g.start();
    sol.anchor_x = x_anchor;

    // zeroth order factor path
    {
        std::vector<VectorXd> vals(nn), der(nn);
        VectorXd x = x_anchor;
        for (int k = 0; k < nn; ++k) {
            const double t = g.node(k);
            vals[k] = x;
            der[k] = m.factor.mu(t, x);
            if (k + 1 == nn) break;
            const VectorXd k1 = der[k];
            const VectorXd k2 = m.factor.mu(t + 0.5 * h, x + 0.5 * h * k1);
            const VectorXd k3 = m.factor.mu(t + 0.5 * h, x + 0.5 * h * k2);
            const VectorXd k4 = m.factor.mu(t + h, x + h * k3);
            x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        sol.x0 = VectorPath(g, std::move(vals), std::move(der));
    }

    // zeroth order value: dV/ds = -f(X0_s, V)
    {
        auto rhs = [&](double t, double v) {
            return -driver_partials(m, t, sol.x0.at(t), v, 0).f;
        };
        std::vector<double> vals(nn), der(nn);
        double v = eff_xi(m, sol.x0.node(nn - 1), 0).v;
        vals[nn - 1] = v;
        der[nn - 1] = rhs(g.horizon(), v);
        for (int k = nn - 1; k-- > 0;) {
            const double t1 = g.node(k + 1);
            const double k1 = rhs(t1, v);
            const double k2 = rhs(t1 - 0.5 * h, v - 0.5 * h * k1);
            const double k3 = rhs(t1 - 0.5 * h, v - 0.5 * h * k2);
            const double k4 = rhs(t1 - h, v - h * k3);
            v -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if (!std::isfinite(v))
                throw NumericalError("order-0 value solve overflowed at t=" + std::to_string(t1));
            vals[k] = v;
            der[k] = rhs(g.node(k), v);
        }
        sol.v0th = ScalarPath(g, std::move(vals), std::move(der));
    }

    // first order coefficient y
    {
        auto rhs = [&](double t, const VectorXd& y) -> VectorXd {
            const VectorXd x = sol.x0.at(t);
            const double v = sol.v0th.at(t);
            const DriverPartials p = driver_partials(m, t, x, v, 1);
            const MatrixXd dmu = m.factor.dmu(t, x);
            return -(dmu * y) - p.fv * y - p.fx;
        };
        std::vector<VectorXd> vals(nn), der(nn);
        VectorXd y = eff_xi(m, sol.x0.node(nn - 1), 1).g;
        vals[nn - 1] = y;
        der[nn - 1] = rhs(g.horizon(), y);
        for (int k = nn - 1; k-- > 0;) {
            const double t1 = g.node(k + 1);
            const VectorXd k1 = rhs(t1, y);
            const VectorXd k2 = rhs(t1 - 0.5 * h, y - 0.5 * h * k1);
            const VectorXd k3 = rhs(t1 - 0.5 * h, y - 0.5 * h * k2);
            const VectorXd k4 = rhs(t1 - h, y - h * k3);
            y -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if (!y.allFinite())
                throw NumericalError("first-order coefficient overflowed at t=" +
                                     std::to_string(t1));
            vals[k] = y;
            der[k] = rhs(g.node(k), y);
        }
        sol.y = VectorPath(g, std::move(vals), std::move(der));
        sol.y2 = sol.y;  // identical equation and terminal value
    }

    // second order coefficients (y1, y0)
    {
        auto rhs1 = [&](double t, const MatrixXd& y1) -> MatrixXd {
            const VectorXd x = sol.x0.at(t);
            const double v = sol.v0th.at(t);
            const DriverPartials p = driver_partials(m, t, x, v, 2);
            const MatrixXd dmu = m.factor.dmu(t, x);
            const VectorXd y = sol.y.at(t);
            const VectorXd y2v = y;  // y2 == y
            MatrixXd out = -(y1 * dmu.transpose() + dmu * y1) - p.fv * y1;
            for (int k = 0; k < d; ++k)
                out -= 0.5 * y2v[k] * m.factor.hess_mu(k, t, x);
            out -= 0.5 * p.fvv * (y * y.transpose());
            out -= 0.5 * (p.fxv * y.transpose() + y * p.fxv.transpose());
            out -= 0.5 * p.fxx;
            return out;
        };
        std::vector<MatrixXd> vals(nn), der(nn);
        MatrixXd y1 = 0.5 * eff_xi(m, sol.x0.node(nn - 1), 2).h;
        vals[nn - 1] = y1;
        der[nn - 1] = rhs1(g.horizon(), y1);
        for (int k = nn - 1; k-- > 0;) {
            const double t1 = g.node(k + 1);
            const MatrixXd k1 = rhs1(t1, y1);
            const MatrixXd k2 = rhs1(t1 - 0.5 * h, y1 - 0.5 * h * k1);
            const MatrixXd k3 = rhs1(t1 - 0.5 * h, y1 - 0.5 * h * k2);
            const MatrixXd k4 = rhs1(t1 - h, y1 - h * k3);
            y1 -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if (!y1.allFinite())
                throw NumericalError("second-order coefficient overflowed at t=" +
                                     std::to_string(t1));
            y1 = 0.5 * (y1 + y1.transpose());
            vals[k] = y1;
            der[k] = rhs1(g.node(k), y1);
        }
        sol.y1 = MatrixPath(g, std::move(vals), std::move(der));
    }
    {
        auto rhs0 = [&](double t, double y0v) {
            const VectorXd x = sol.x0.at(t);
            const double v = sol.v0th.at(t);
            const DriverPartials p = driver_partials(m, t, x, v, 1);
            const MatrixXd sig = m.factor.sigma(t, x);
            const MatrixXd y1t = sol.y1.at(t);
            return -p.fv * y0v - (y1t * sig * sig.transpose()).trace();
        };
        std::vector<double> vals(nn), der(nn);
        double y0v = 0.0;
        vals[nn - 1] = 0.0;
        der[nn - 1] = rhs0(g.horizon(), y0v);
        for (int k = nn - 1; k-- > 0;) {
            const double t1 = g.node(k + 1);
            const double k1 = rhs0(t1, y0v);
            const double k2 = rhs0(t1 - 0.5 * h, y0v - 0.5 * h * k1);
            const double k3 = rhs0(t1 - 0.5 * h, y0v - 0.5 * h * k2);
            const double k4 = rhs0(t1 - h, y0v - h * k3);
            y0v -= h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
            if (!std::isfinite(y0v))
                throw NumericalError("constant-order coefficient overflowed at t=" +
                                     std::to_string(t1));
            vals[k] = y0v;
            der[k] = rhs0(g.node(k), y0v);
        }
        sol.y0 = ScalarPath(g, std::move(vals), std::move(der));
    }
    return sol;
}

Eigen::VectorXd z1_loading(const ModelSpec& m, const ExpansionSolution& sol, double t) {
    return m.factor.sigma(t, sol.x0.at(t)).transpose() * sol.y.at(t);
}

double approx_value(const ExpansionSolution& sol, int order, double epsilon) {
    if (order < 0 || order > 2)
        throw ConfigError("approx_value: expansion orders above 2 are unsupported");
    const double v0 = sol.v0th.node(0);
    if (order < 2) return v0;
    return v0 + epsilon * epsilon * sol.y0.node(0);
}

ExpansionSimStats simulate_expansion_paths(const ModelSpec& m, const ExpansionSolution& sol,
                                           int n_paths, std::uint64_t seed) {
    const TimeGrid& g = sol.grid;
    const int d = m.factor.dim;
    const int nn = g.nodes();
    const double h = g.h();
    const int mid = nn / 2;

    // deterministic per-node tables
    std::vector<MatrixXd> dmuT(nn), sig(nn);
    std::vector<DriverPartials> fp(nn);
    for (int k = 0; k < nn; ++k) {
        const double t = g.node(k);
        const VectorXd x = sol.x0.node(k);
        dmuT[k] = m.factor.dmu(t, x).transpose();  // Jacobian d mu_i / d x_j
        sig[k] = m.factor.sigma(t, x);
        fp[k] = driver_partials(m, t, x, sol.v0th.node(k), 1);
    }
    const VectorXd yT = sol.y.node(nn - 1);

    ExpansionSimStats st;
    st.n_paths = n_paths;
    std::vector<double> x1t(n_paths), v1t(n_paths), v1m(n_paths), v2m(n_paths), res(n_paths);
    double max1 = 0.0, max2 = 0.0;

    for (int p = 0; p < n_paths; ++p) {
        RngStream rng(seed, 0x45585031, static_cast<std::uint64_t>(p / 2));
        const double sign = (p % 2 == 0) ? 1.0 : -1.0;  // antithetic pairs
        VectorXd x1 = VectorXd::Zero(d), x2 = VectorXd::Zero(d);
        double integral = 0.0;
        double prev_term = fp[0].fv * sol.y.node(0).dot(x1) + fp[0].fx.dot(x1);
        for (int k = 0; k + 1 < nn; ++k) {
            VectorXd dw(d);
            for (int j = 0; j < d; ++j) dw[j] = sign * std::sqrt(h) * rng.next_normal();
            VectorXd noise2 = VectorXd::Zero(d);
            for (int i = 0; i < d; ++i)
                for (int kk = 0; kk < d; ++kk) {
                    const VectorXd ds = m.factor.dsigma(i, kk, g.node(k), sol.x0.node(k));
                    noise2[i] += ds.dot(x1) * dw[kk];
                }
            VectorXd quad(d);
            for (int i = 0; i < d; ++i)
                quad[i] = 0.5 * x1.dot(m.factor.hess_mu(i, g.node(k), sol.x0.node(k)) * x1);
            const VectorXd x1n = x1 + h * (dmuT[k] * x1) + sig[k] * dw;
            const VectorXd x2n = x2 + h * (dmuT[k] * x2 + quad) + noise2;
            x1 = x1n;
            x2 = x2n;
            const double term =
                fp[k + 1].fv * sol.y.node(k + 1).dot(x1) + fp[k + 1].fx.dot(x1);
            integral += 0.5 * h * (prev_term + term);
            prev_term = term;
            max1 = std::max(max1, x1.cwiseAbs().maxCoeff());
            max2 = std::max(max2, x2.cwiseAbs().maxCoeff());
            if (k + 1 == mid) {
                v1m[p] = sol.y.node(mid).dot(x1);
                v2m[p] = sol.y2.node(mid).dot(x2) + x1.dot(sol.y1.node(mid) * x1) +
                         sol.y0.node(mid);
            }
        }
        x1t[p] = x1[0];
        v1t[p] = yT.dot(x1);
        // V^[1]_anchor = 0; residual collects the running driver minus terminal
        res[p] = integral - yT.dot(x1);
    }

    st.x1_terminal = mean_se(x1t);
    st.v1_terminal = mean_se(v1t);
    st.v1_mid = mean_se(v1m);
    st.v2_mid = mean_se(v2m);
    st.bsde_residual = mean_se(res);
    st.max_abs_x1 = max1;
    st.max_abs_x2 = max2;
    return st;
}

namespace {

double interp1(const std::vector<double>& xs, const Eigen::VectorXd& ys, double x) {
    const int n = static_cast<int>(xs.size());
    if (x <= xs.front()) return ys[0];
    if (x >= xs.back()) return ys[n - 1];
    int lo = 0, hi = n - 1;
    while (hi - lo > 1) {
        const int mid = (lo + hi) / 2;
        (xs[mid] <= x ? lo : hi) = mid;
    }
    const double w = (x - xs[lo]) / (xs[lo + 1] - xs[lo]);
    return (1.0 - w) * ys[lo] + w * ys[lo + 1];
}

}  // namespace

double StrategyLattice::v2(double t, double x) const {
    const int nt = static_cast<int>(tnodes.size());
    int lo = 0, hi = nt - 1;
    if (t <= tnodes.front())
        hi = 1;
    else if (t >= tnodes.back())
        lo = nt - 2;
    else
        while (hi - lo > 1) {
            const int mid = (lo + hi) / 2;
            (tnodes[mid] <= t ? lo : hi) = mid;
        }
    const double w = std::clamp((t - tnodes[lo]) / (tnodes[hi] - tnodes[lo]), 0.0, 1.0);
    const double a = interp1(xnodes, v2tab.row(lo), x);
    const double b = interp1(xnodes, v2tab.row(hi), x);
    return (1.0 - w) * a + w * b;
}

double StrategyLattice::v1(double t, double x) const {
    const int nt = static_cast<int>(tnodes.size());
    int lo = 0, hi = nt - 1;
    if (t <= tnodes.front())
        hi = 1;
    else if (t >= tnodes.back())
        lo = nt - 2;
    else
        while (hi - lo > 1) {
            const int mid = (lo + hi) / 2;
            (tnodes[mid] <= t ? lo : hi) = mid;
        }
    const double w = std::clamp((t - tnodes[lo]) / (tnodes[hi] - tnodes[lo]), 0.0, 1.0);
    const double a = interp1(xnodes, v1tab.row(lo), x);
    const double b = interp1(xnodes, v1tab.row(hi), x);
    return (1.0 - w) * a + w * b;
}

StrategyLattice build_strategy_lattice(const ModelSpec& m, const LatticeOptions& opt) {
    if (m.n != 1 || !m.factor.present() || m.factor.dim != 1)
        throw NumericalError("strategy lattice implemented for single-security 1-d factors");
    const TimeGrid& g = m.grid;
    const double T = g.horizon();
    const double eps = m.factor.epsilon;
    const double sig0 = std::fabs(m.factor.vol[0][0].value(0.0, m.factor.x0));
    const double span = opt.span_sigmas * eps * sig0 * std::sqrt(T) + opt.margin;

    StrategyLattice lat;
    lat.order = opt.order;
    for (int k = 0; k < g.steps(); k += opt.time_stride) lat.tnodes.push_back(g.node(k));
    std::vector<int> tindex;
    for (int k = 0; k < g.steps(); k += opt.time_stride) tindex.push_back(k);
    const double x0 = m.factor.x0[0];
    for (int j = 0; j < opt.x_nodes; ++j)
        lat.xnodes.push_back(x0 - span + 2.0 * span * j / (opt.x_nodes - 1));

    const int nt = static_cast<int>(lat.tnodes.size());
    const int nx = static_cast<int>(lat.xnodes.size());
    lat.v2tab.resize(nt, nx);
    lat.v1tab.resize(nt, nx);

    for (int it = 0; it < nt; ++it) {
        const int anchor = tindex[static_cast<std::size_t>(it)];
        for (int jx = 0; jx < nx; ++jx) {
            VectorXd xa(1);
            xa[0] = lat.xnodes[static_cast<std::size_t>(jx)];
            const ExpansionSolution sol = solve_expansion(m, anchor, xa);
            lat.v2tab(it, jx) = approx_value(sol, opt.order, eps);

            // V1 along the frozen zeroth-order path (exponential-kernel form)
            const TimeGrid& sg = sol.grid;
            const int nn = sg.nodes();
            std::vector<double> fvals(nn), fmid(nn - 1), gv(nn);
            auto fval = [&](double t) {
                const VectorXd x = sol.x0.at(t);
                const double v = sol.v0th.at(t);
                const double M = m.impact_M.scalar_value(t, x);
                const double lam = m.dark_lambda.entries[0].value(t, x);
                const double eta =
                    m.eta_tilde.entries[0].value(t, x) + 0.5 * m.beta.scalar_value(t, x);
                return (1.0 / M + lam / (v + eta)) * v;
            };
            for (int k = 0; k < nn; ++k) fvals[k] = fval(sg.node(k));
            for (int k = 0; k + 1 < nn; ++k) fmid[k] = fval(sg.node(k) + 0.5 * sg.h());
            const auto R = simpson_forward_cumulative(fvals, fmid, sg.h());
            for (int k = 0; k < nn; ++k) {
                const double t = sg.node(k);
                const VectorXd x = sol.x0.node(k);
                const FlowMoments mom = m.moments_at(t, x);
                const double b = m.spread_b.value(t, x)[0];
                const double bpsi = b * mom.psi[0];
                const double sbar = m.price_mean_at(t)[0];
                const double lbar = m.repo_l.value(t, x)[0];
                const double beta = m.beta.scalar_value(t, x);
                const double v = sol.v0th.node(k);
                gv[k] = std::exp(-R[k]) * (fvals[k] * 0.5 * sbar -
                                           v * (0.5 * mom.theta[0] + bpsi) -
                                           0.5 * (beta * bpsi - lbar));
            }
            const auto acc = simpson_backward_cumulative(gv, sg.h());
            lat.v1tab(it, jx) = -acc[0];  // exp(-R[0]) = 1 at the anchor
        }
    }
    return lat;
}

}  // namespace mmopt::expansion
