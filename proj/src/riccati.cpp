#include "mmopt/riccati.hpp"

#include <cmath>
#include <sstream>

namespace mmopt::riccati {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

constexpr double kDenomHard = 1e-12;  // model invalid below this
constexpr double kDenomSoft = 1e-6;   // refine the step below this
constexpr double kRateTarget = 0.02;  // max relative change per substep
constexpr int kMaxSubsteps = 1 << 14;

struct Driver {
    const ModelSpec& m;

    // dV/ds for the backward equation, s increasing toward T.
    MatrixXd operator()(double t, const MatrixXd& v, double* denom_min) const {
        const VectorXd x = m.factor_at(t);
        const MatrixXd mm = m.impact_M.value(t, x);
        const VectorXd eta = m.eta_eff_at(t);
        const VectorXd lam = m.dark_lambda.value(t, x);
        const MatrixXd gam = m.gamma_eff_at(t);
        const int n = m.n;
        MatrixXd a = mm.ldlt().solve(MatrixXd::Identity(n, n));
        double dmin = std::numeric_limits<double>::infinity();
        for (int i = 0; i < n; ++i) {
            const double den = v(i, i) + eta[i];
            dmin = std::min(dmin, den);
            if (den > 0.0) a(i, i) += lam[i] / den;
        }
        if (denom_min) *denom_min = dmin;
        return v * a * v - gam;
    }
};

void check_node(const MatrixXd& v, double t, int n) {
    if (!v.allFinite()) {
        std::ostringstream os;
        os << "V2 solve overflowed at t=" << t;
        throw NumericalError(os.str());
    }
    Eigen::SelfAdjointEigenSolver<MatrixXd> es(v);
    const double lo = es.eigenvalues().minCoeff();
    if (lo < -1e-8) {
        std::ostringstream os;
        os << "V2 lost positive semidefiniteness at t=" << t << " (min eigenvalue " << lo
           << "); model assumptions or step size are inadequate";
        throw NumericalError(os.str());
    }
    (void)n;
}

}  // namespace

V2Path solve_v2_matrix(const ModelSpec& m, const std::optional<MatrixXd>& xi_override) {
    const TimeGrid& g = m.grid;
    const int n = m.n;
    const Driver f{m};

    MatrixXd xi = xi_override ? *xi_override : m.xi_eff();
    if (xi.rows() != n || xi.cols() != n) throw NumericalError("xi dimension mismatch");
    xi = 0.5 * (xi + xi.transpose());

    std::vector<MatrixXd> vals(g.nodes()), derivs(g.nodes());
    MatrixXd v = xi;
    vals[g.steps()] = v;
    derivs[g.steps()] = f(g.horizon(), v, nullptr);

    const double h = g.h();
    for (int k = g.steps(); k-- > 0;) {
        const double t1 = g.node(k + 1);
        // pick substeps so each one changes V by at most kRateTarget
        double dmin = 0.0;
        const MatrixXd rate = f(t1, v, &dmin);
        if (dmin < kDenomHard)
            throw NumericalError("V2+eta denominator below 1e-12; model invalid near t=" +
                                 std::to_string(t1));
        const double rel = h * rate.cwiseAbs().maxCoeff() / (v.cwiseAbs().maxCoeff() + 1.0);
        int sub = 1;
        while (sub < kMaxSubsteps && (rel / sub > kRateTarget || (dmin < kDenomSoft && sub < 2)))
            sub *= 2;

        for (;;) {
            MatrixXd w = v;
            bool ok = true;
            const double hs = h / sub;
            for (int j = 0; j < sub && ok; ++j) {
                const double ta = t1 - j * hs;
                double d1, d2, d3, d4;
                const MatrixXd k1 = f(ta, w, &d1);
                const MatrixXd k2 = f(ta - 0.5 * hs, w - 0.5 * hs * k1, &d2);
                const MatrixXd k3 = f(ta - 0.5 * hs, w - 0.5 * hs * k2, &d3);
                const MatrixXd k4 = f(ta - hs, w - hs * k3, &d4);
                const double dlo = std::min(std::min(d1, d2), std::min(d3, d4));
                if (dlo < kDenomHard)
                    throw NumericalError("V2+eta denominator below 1e-12 inside a step near t=" +
                                         std::to_string(ta));
                if (dlo < kDenomSoft && sub < kMaxSubsteps) {
                    ok = false;
                    break;
                }
                w -= hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
                w = 0.5 * (w + w.transpose());
                if (!w.allFinite()) {
                    ok = false;
                    break;
                }
            }
            if (ok) {
                v = w;
                break;
            }
            if (sub >= kMaxSubsteps)
                throw NumericalError("V2 step rejection overflow near t=" + std::to_string(t1));
            sub *= 2;
        }
        vals[k] = v;
        derivs[k] = f(g.node(k), v, nullptr);
        check_node(v, g.node(k), n);
    }

    V2Path out;
    out.path = MatrixPath(g, std::move(vals), std::move(derivs));
    out.xi = xi;
    out.step = h;
    out.n = n;
    return out;
}

V2Path solve_v2_scalar(const ModelSpec& m, const std::optional<double>& xi_override) {
    if (m.n != 1) throw NumericalError("solve_v2_scalar requires a single security");
    std::optional<MatrixXd> xi;
    if (xi_override) {
        MatrixXd x(1, 1);
        x(0, 0) = *xi_override;
        xi = x;
    }
    return solve_v2_matrix(m, xi);
}

namespace {

// \int_t^T f ds with one Simpson panel per grid cell (partial first cell).
double integral_to_horizon(const ModelSpec& m, double t,
                           const std::function<double(double)>& f) {
    const TimeGrid& g = m.grid;
    const double T = g.horizon();
    if (t >= T) return 0.0;
    double acc = 0.0;
    int k = g.cell_of(t);
    double a = t;
    while (a < T - 1e-15) {
        const double b = std::min(T, g.node(k + 1));
        if (b > a) {
            const double mid = 0.5 * (a + b);
            acc += (b - a) / 6.0 * (f(a) + 4.0 * f(mid) + f(b));
        }
        ++k;
        a = b;
    }
    return acc;
}

double scalar_xi(const ModelSpec& m, const std::optional<double>& xi_override) {
    return xi_override ? *xi_override : m.xi_eff()(0, 0);
}

}  // namespace

std::pair<double, double> v2_bounds(const ModelSpec& m, double t, double eps,
                                    const std::optional<double>& xi_override) {
    if (m.n != 1) throw NumericalError("v2_bounds requires a single security");
    if (!(eps > 0.0)) throw NumericalError("v2_bounds requires eps > 0");
    const double T = m.grid.horizon();
    const double xi = scalar_xi(m, xi_override);
    if (!(xi > 0.0)) throw NumericalError("v2_bounds requires xi > 0");

    const double i_low = integral_to_horizon(m, t, [&](double s) {
        const double mm = m.M_at(s)(0, 0);
        const double lam = m.lambda_at(s)[0];
        const double eta = m.eta_eff_at(s)[0];
        return 1.0 / mm + lam / eta;
    });
    const double lower = 1.0 / (1.0 / xi + i_low);

    const double i_up = integral_to_horizon(m, t, [&](double s) {
        const double mm = m.M_at(s)(0, 0);
        const double gam = m.gamma_eff_at(s)(0, 0);
        const double w = T - s + eps;
        return mm + w * w * gam;
    });
    const double w0 = T - t + eps;
    const double upper = (eps * eps * xi + i_up) / (w0 * w0);
    return {lower, upper};
}

BoundsPath v2_bounds_path(const ModelSpec& m, double eps,
                          const std::optional<double>& xi_override) {
    if (m.n != 1) throw NumericalError("v2_bounds requires a single security");
    if (!(eps > 0.0)) throw NumericalError("v2_bounds requires eps > 0");
    const TimeGrid& g = m.grid;
    const double T = g.horizon();
    const double xi = scalar_xi(m, xi_override);
    if (!(xi > 0.0)) throw NumericalError("v2_bounds requires xi > 0");

    // (T-s+eps)^2 gamma splits into eps-independent moments of gamma, so one
    // cumulative pass serves every node.
    auto cumulative = [&](const std::function<double(double)>& f) {
        std::vector<double> acc(g.nodes(), 0.0);
        for (int k = g.steps(); k-- > 0;) {
            const double a = g.node(k), b = g.node(k + 1);
            acc[k] = acc[k + 1] + (b - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + b)) + f(b));
        }
        return acc;
    };
    auto gam = [&](double s) { return m.gamma_eff_at(s)(0, 0); };
    const auto i_low = cumulative([&](double s) {
        return 1.0 / m.M_at(s)(0, 0) + m.lambda_at(s)[0] / m.eta_eff_at(s)[0];
    });
    const auto i_m = cumulative([&](double s) { return m.M_at(s)(0, 0); });
    const auto j0 = cumulative(gam);
    const auto j1 = cumulative([&](double s) { return (T - s) * gam(s); });
    const auto j2 = cumulative([&](double s) { return (T - s) * (T - s) * gam(s); });

    BoundsPath out;
    out.lower.resize(g.nodes());
    out.upper.resize(g.nodes());
    for (int k = 0; k < g.nodes(); ++k) {
        const double t = g.node(k);
        out.lower[k] = 1.0 / (1.0 / xi + i_low[k]);
        const double w0 = T - t + eps;
        const double i_up = i_m[k] + j2[k] + 2.0 * eps * j1[k] + eps * eps * j0[k];
        out.upper[k] = (eps * eps * xi + i_up) / (w0 * w0);
    }
    return out;
}

}  // namespace mmopt::riccati
