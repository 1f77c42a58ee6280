#include "mmopt/affine.hpp"

#include <cmath>

#include "mmopt/quad.hpp"

namespace mmopt::affine {

using Eigen::MatrixXd;
using Eigen::VectorXd;

MatrixXd eval_A(const ModelSpec& m, const riccati::V2Path& v2, double t) {
    const VectorXd x = m.factor_at(t);
    const MatrixXd mm = m.impact_M.value(t, x);
    const VectorXd eta = m.eta_eff_at(t);
    const VectorXd lam = m.dark_lambda.value(t, x);
    const MatrixXd v = v2.at(t);
    MatrixXd a = mm.ldlt().solve(MatrixXd::Identity(m.n, m.n));
    for (int i = 0; i < m.n; ++i) {
        const double den = v(i, i) + eta[i];
        if (den < 1e-12)
            throw NumericalError("V2+eta denominator below 1e-12 at t=" + std::to_string(t));
        a(i, i) += lam[i] / den;
    }
    return a;
}

MatrixXd eval_F(const ModelSpec& m, const riccati::V2Path& v2, double t) {
    return v2.at(t) * eval_A(m, v2, t);
}

MatrixPath compute_F(const ModelSpec& m, const riccati::V2Path& v2) {
    const TimeGrid& g = m.grid;
    std::vector<MatrixXd> vals(g.nodes()), derivs(g.nodes());
    for (int k = 0; k < g.nodes(); ++k) vals[k] = eval_F(m, v2, g.node(k));
    const double h = g.h();
    for (int k = 0; k < g.nodes(); ++k) {
        if (k == 0)
            derivs[k] = (vals[1] - vals[0]) / h;
        else if (k == g.steps())
            derivs[k] = (vals[k] - vals[k - 1]) / h;
        else
            derivs[k] = (vals[k + 1] - vals[k - 1]) / (2.0 * h);
    }
    return MatrixPath(g, std::move(vals), std::move(derivs));
}

PropagatorPath propagator(const ModelSpec& m, const riccati::V2Path& v2, double anchor) {
    const TimeGrid& g = m.grid;
    const int n = m.n;
    if (anchor < 0.0 || anchor > g.horizon())
        throw NumericalError("propagator anchor outside [0,T]");
    const int ka = g.cell_of(anchor);
    if (std::fabs(g.node(ka) - anchor) > 1e-12 && std::fabs(g.node(ka + 1) - anchor) > 1e-12)
        throw NumericalError("propagator anchor must be a grid node");
    const int anchor_idx = (std::fabs(g.node(ka) - anchor) <= 1e-12) ? ka : ka + 1;

    std::vector<MatrixXd> y(g.nodes()), yi(g.nodes());
    y[anchor_idx] = MatrixXd::Identity(n, n);
    yi[anchor_idx] = MatrixXd::Identity(n, n);

    auto step = [&](int from, int to) {
        const double t0 = g.node(from);
        const double hs = g.node(to) - t0;
        const MatrixXd f1 = eval_F(m, v2, t0);
        const MatrixXd f2 = eval_F(m, v2, t0 + 0.5 * hs);
        const MatrixXd f3 = eval_F(m, v2, t0 + hs);
        {
            const MatrixXd& w = y[from];
            const MatrixXd k1 = f1 * w;
            const MatrixXd k2 = f2 * (w + 0.5 * hs * k1);
            const MatrixXd k3 = f2 * (w + 0.5 * hs * k2);
            const MatrixXd k4 = f3 * (w + hs * k3);
            y[to] = w + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        {
            const MatrixXd& w = yi[from];
            const MatrixXd k1 = -w * f1;
            const MatrixXd k2 = -(w + 0.5 * hs * k1) * f2;
            const MatrixXd k3 = -(w + 0.5 * hs * k2) * f2;
            const MatrixXd k4 = -(w + hs * k3) * f3;
            yi[to] = w + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        if (!y[to].allFinite() || !yi[to].allFinite())
            throw NumericalError("propagator diverged at grid node " + std::to_string(to));
    };
    for (int k = anchor_idx; k < g.steps(); ++k) step(k, k + 1);
    for (int k = anchor_idx; k > 0; --k) step(k, k - 1);

    std::vector<MatrixXd> dy(g.nodes()), dyi(g.nodes());
    for (int k = 0; k < g.nodes(); ++k) {
        const MatrixXd f = eval_F(m, v2, g.node(k));
        dy[k] = f * y[k];
        dyi[k] = -yi[k] * f;
    }
    PropagatorPath out;
    out.y = MatrixPath(g, std::move(y), std::move(dy));
    out.yinv = MatrixPath(g, std::move(yi), std::move(dyi));
    out.anchor = anchor;
    return out;
}

VectorXd v1_inhomogeneity(const ModelSpec& m, const riccati::V2Path& v2, double t) {
    const VectorXd x = m.factor_at(t);
    const FlowMoments mom = m.moments_at(t, x);
    const VectorXd b = m.spread_b.value(t, x);
    const VectorXd bpsi = b.cwiseProduct(mom.psi);
    const VectorXd sbar = m.price_mean_at(t);
    const VectorXd lbar = m.repo_l.value(t, x);
    const MatrixXd bt = m.beta.value(t, x);
    const MatrixXd v = v2.at(t);
    return 0.5 * (eval_F(m, v2, t) * sbar) - v * (0.5 * mom.theta + bpsi) -
           0.5 * (bt * bpsi - lbar);
}

VectorPath solve_v1(const ModelSpec& m, const riccati::V2Path& v2, const PropagatorPath& prop) {
    const TimeGrid& g = m.grid;
    const int n = m.n;
    std::vector<VectorXd> gvals(g.nodes()), w(g.nodes());
    for (int k = 0; k < g.nodes(); ++k) {
        gvals[k] = v1_inhomogeneity(m, v2, g.node(k));
        w[k] = prop.yinv.node(k) * gvals[k];
    }
    // componentwise backward Simpson of Y^-1 g
    std::vector<VectorXd> acc(g.nodes(), VectorXd::Zero(n));
    const double h = g.h();
    std::vector<double> comp(g.nodes());
    std::vector<VectorXd> v1(g.nodes()), dv1(g.nodes());
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < g.nodes(); ++k) comp[k] = w[k][i];
        const auto ci = simpson_backward_cumulative(comp, h);
        for (int k = 0; k < g.nodes(); ++k) acc[k][i] = ci[k];
    }
    for (int k = 0; k < g.nodes(); ++k) {
        v1[k] = -prop.y.node(k) * acc[k];
        dv1[k] = eval_F(m, v2, g.node(k)) * v1[k] + gvals[k];
    }
    return VectorPath(g, std::move(v1), std::move(dv1));
}

ScalarPath solve_v0(const ModelSpec& m, const riccati::V2Path& v2, const VectorPath& v1) {
    const TimeGrid& g = m.grid;
    auto driver = [&](double t, const VectorXd& v1t) {
        const VectorXd x = m.factor_at(t);
        const FlowMoments mom = m.moments_at(t, x);
        const VectorXd b = m.spread_b.value(t, x);
        const VectorXd bpsi = b.cwiseProduct(mom.psi);
        const VectorXd sbar = m.price_mean_at(t);
        const MatrixXd bt = m.beta.value(t, x);
        const MatrixXd mm = m.impact_M.value(t, x);
        const MatrixXd v = v2.at(t);
        const VectorXd q = v1t + 0.5 * sbar;
        double d = q.dot(eval_A(m, v2, t) * q) - (mom.phi + bpsi).dot(v1t);
        for (int i = 0; i < m.n; ++i) d -= v(i, i) * mom.phi2[i];
        double tr = 0.0;
        for (int i = 0; i < m.n; ++i) tr += bt(i, i) * mom.phi2[i];
        d -= 0.5 * (sbar.dot(mom.theta) + tr);
        d += 0.25 * mom.theta.dot(mm * mom.theta);
        return d;
    };
    std::vector<double> dv(g.nodes());
    for (int k = 0; k < g.nodes(); ++k) dv[k] = driver(g.node(k), v1.node(k));
    const auto acc = simpson_backward_cumulative(dv, g.h());
    std::vector<double> v0(g.nodes()), d0(g.nodes());
    for (int k = 0; k < g.nodes(); ++k) {
        v0[k] = -acc[k];
        d0[k] = dv[k];
    }
    return ScalarPath(g, std::move(v0), std::move(d0));
}

AffinePath solve_affine(const ModelSpec& m, const riccati::V2Path& v2) {
    const PropagatorPath prop = propagator(m, v2, 0.0);
    AffinePath out;
    out.v1 = solve_v1(m, v2, prop);
    out.v0 = solve_v0(m, v2, out.v1);
    out.f = compute_F(m, v2);
    out.v0_exact = m.price.deterministic() && m.coeffs_deterministic();
    return out;
}

double value_function(const riccati::V2Path& v2, const AffinePath& a, double t,
                      const Eigen::VectorXd& x) {
    const double T = v2.path.grid().horizon();
    if (t < -1e-12 || t > T * (1.0 + 1e-12))
        throw NumericalError("value_function: t outside [0,T]");
    return x.dot(v2.at(t) * x) + 2.0 * x.dot(a.v1.at(t)) + a.v0.at(t);
}

}  // namespace mmopt::affine
