#include "mmopt/model.hpp"

#include <cmath>
#include <set>
#include <sstream>

#include "mmopt/quad.hpp"

namespace mmopt {

using Eigen::MatrixXd;
using Eigen::VectorXd;

// ---------------------------------------------------------------------------
// FlowShape

FlowShape FlowShape::make(Kind kind, double lo, double hi, double tilt) {
    if (!(lo < hi)) throw ConfigError("flow support: need lo < hi");
    if (std::fabs(tilt) > 1.0) throw ConfigError("flow tilt must lie in [-1,1]");
    FlowShape s;
    s.kind = kind;
    s.lo = lo;
    s.hi = hi;
    s.tilt = (kind == Kind::Tilted) ? tilt : 0.0;
    s.zmax = std::max(std::fabs(lo), std::fabs(hi));

    auto dens = [&s](double z) { return s.density(z); };
    auto moment = [&](auto weight) {
        auto f = [&](double z) { return weight(z) * dens(z); };
        if (lo < 0.0 && hi > 0.0)
            return gauss_legendre64(f, lo, 0.0) + gauss_legendre64(f, 0.0, hi);
        return gauss_legendre64(f, lo, hi);
    };
    s.m1 = moment([](double z) { return z; });
    s.mabs = moment([](double z) { return std::fabs(z); });
    s.m2 = moment([](double z) { return z * z; });
    return s;
}

double FlowShape::density(double z) const {
    if (z < lo || z > hi) return 0.0;
    const double w = hi - lo;
    if (kind == Kind::Uniform) return 1.0 / w;
    const double u = 2.0 * (z - lo) / w - 1.0;
    return (1.0 + tilt * u) / w;
}

double FlowShape::sample(double u) const {
    double zt;
    if (kind == Kind::Uniform || tilt == 0.0) {
        zt = u;
    } else {
        // CDF(zt) = zt + tilt*(zt^2 - zt); invert the quadratic.
        const double a = tilt, b = 1.0 - tilt;
        zt = (-b + std::sqrt(b * b + 4.0 * a * u)) / (2.0 * a);
    }
    double z = lo + zt * (hi - lo);
    if (z == 0.0) z = std::nextafter(0.0, hi);  // zero-size orders are impossible
    return z;
}

FlowMoments flow_moments(const std::vector<OrderFlow>& flows, const VectorXd& b, double t,
                         const VectorXd& x) {
    const int n = static_cast<int>(flows.size());
    FlowMoments m;
    m.phi.resize(n);
    m.psi.resize(n);
    m.phi2.resize(n);
    m.theta.resize(n);
    for (int i = 0; i < n; ++i) {
        const double mass = flows[i].mass.value(t, x);
        if (!(mass >= 0.0) || !std::isfinite(mass))
            throw NumericalError("flow intensity mass is negative or non-finite at t=" +
                                 std::to_string(t));
        m.phi[i] = mass * flows[i].shape.m1;
        m.psi[i] = mass * flows[i].shape.mabs;
        m.phi2[i] = mass * flows[i].shape.m2;
        m.theta[i] = m.phi[i] - b[i] * m.psi[i];
    }
    return m;
}

// ---------------------------------------------------------------------------
// PriceSpec

VectorXd PriceSpec::mean_curve(double u) const {
    VectorXd out(n);
    for (int i = 0; i < n; ++i)
        out[i] = (kappa[i] == 0.0) ? (mean[i] + (s0[i] - mean[i]))
                                   : mean[i] + (s0[i] - mean[i]) * std::exp(-kappa[i] * u);
    return out;
}

double PriceSpec::transition(int i, double s_t, double dt, double z) const {
    if (vol[i] == 0.0 && kappa[i] == 0.0) return s_t;
    const double k = kappa[i];
    if (k == 0.0) return s_t + vol[i] * std::sqrt(dt) * z;
    const double e = std::exp(-k * dt);
    const double sd = vol[i] * std::sqrt((1.0 - e * e) / (2.0 * k));
    return mean[i] + (s_t - mean[i]) * e + sd * z;
}

// ---------------------------------------------------------------------------
// Factor dynamics

double DriftForm::value(const VectorXd& x) const {
    double v = a + (b.size() ? b.dot(x) : 0.0);
    if (c != 0.0) v += c * std::tanh(d.dot(x));
    return v;
}

VectorXd DriftForm::grad(const VectorXd& x) const {
    VectorXd g = b.size() ? b : VectorXd::Zero(x.size());
    if (c != 0.0) {
        const double th = std::tanh(d.dot(x));
        g += c * (1.0 - th * th) * d;
    }
    return g;
}

MatrixXd DriftForm::hess(const VectorXd& x) const {
    if (c == 0.0) return MatrixXd::Zero(x.size(), x.size());
    const double th = std::tanh(d.dot(x));
    return (-2.0 * c * th * (1.0 - th * th)) * (d * d.transpose());
}

VectorXd FactorModel::mu(double, const VectorXd& x) const {
    VectorXd out(dim);
    for (int i = 0; i < dim; ++i) out[i] = drift[i].value(x);
    return out;
}

MatrixXd FactorModel::dmu(double, const VectorXd& x) const {
    MatrixXd out(dim, dim);  // out(i,j) = d mu_j / d x_i
    for (int j = 0; j < dim; ++j) out.col(j) = drift[j].grad(x);
    return out;
}

MatrixXd FactorModel::hess_mu(int k, double, const VectorXd& x) const {
    return drift[k].hess(x);
}

MatrixXd FactorModel::sigma(double t, const VectorXd& x) const {
    MatrixXd out(dim, dim);
    for (int i = 0; i < dim; ++i)
        for (int j = 0; j < dim; ++j) out(i, j) = vol[i][j].value(t, x);
    return out;
}

VectorXd FactorModel::dsigma(int i, int k, double t, const VectorXd& x) const {
    return vol[i][k].grad_x(t, x);
}

bool FactorModel::vol_is_zero() const {
    for (const auto& row : vol)
        for (const auto& f : row)
            if (f.kind() != ScalarForm::Kind::Constant || f.value(0.0, VectorXd()) != 0.0)
                return false;
    return true;
}

// ---------------------------------------------------------------------------
// Matrix / vector coefficients

MatrixCoeff MatrixCoeff::scalar(ScalarForm f) {
    MatrixCoeff c;
    c.kind = Kind::Diagonal;
    c.n = 1;
    c.diag.push_back(std::move(f));
    return c;
}

MatrixCoeff MatrixCoeff::zero(int n) {
    MatrixCoeff c;
    c.kind = Kind::Diagonal;
    c.n = n;
    for (int i = 0; i < n; ++i) c.diag.push_back(ScalarForm::constant(0.0));
    return c;
}

MatrixXd MatrixCoeff::value(double t, const VectorXd& x) const {
    if (kind == Kind::Diagonal) {
        MatrixXd out = MatrixXd::Zero(n, n);
        for (int i = 0; i < n; ++i) out(i, i) = diag[i].value(t, x);
        return out;
    }
    return scale.value(t, x) * base;
}

bool MatrixCoeff::time_only() const {
    if (kind == Kind::Diagonal) {
        for (const auto& f : diag)
            if (!f.time_only()) return false;
        return true;
    }
    return scale.time_only();
}

double MatrixCoeff::scalar_value(double t, const VectorXd& x) const {
    if (kind == Kind::Diagonal) return diag[0].value(t, x);
    return scale.value(t, x) * base(0, 0);
}

VectorXd MatrixCoeff::scalar_grad(double t, const VectorXd& x) const {
    if (kind == Kind::Diagonal) return diag[0].grad_x(t, x);
    return base(0, 0) * scale.grad_x(t, x);
}

MatrixXd MatrixCoeff::scalar_hess(double t, const VectorXd& x) const {
    if (kind == Kind::Diagonal) return diag[0].hess_x(t, x);
    return base(0, 0) * scale.hess_x(t, x);
}

VectorXd VectorCoeff::value(double t, const VectorXd& x) const {
    VectorXd out(static_cast<Eigen::Index>(entries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i)
        out[static_cast<Eigen::Index>(i)] = entries[i].value(t, x);
    return out;
}

bool VectorCoeff::time_only() const {
    for (const auto& f : entries)
        if (!f.time_only()) return false;
    return true;
}

// ---------------------------------------------------------------------------
// Validation

bool ValidationReport::ok() const {
    for (const auto& c : checks)
        if (!c.pass) return false;
    return true;
}

std::string ValidationReport::to_string() const {
    std::ostringstream os;
    for (const auto& c : checks)
        os << (c.pass ? "PASS" : "FAIL") << "  Assumption " << c.id << ": " << c.detail << "\n";
    return os.str();
}

void ValidationReport::throw_if_failed() const {
    if (ok()) return;
    std::ostringstream os;
    for (const auto& c : checks)
        if (!c.pass) os << "Assumption " << c.id << " violated: " << c.detail << "; ";
    throw ValidationError(os.str());
}

// ---------------------------------------------------------------------------
// ModelSpec evaluation

VectorXd ModelSpec::factor_at(double t) const {
    if (!factor.present()) return VectorXd();
    return factor_skeleton.at(t);
}

MatrixXd ModelSpec::M_at(double t) const { return impact_M.value(t, factor_at(t)); }

MatrixXd ModelSpec::gamma_eff_at(double t) const {
    const VectorXd x = factor_at(t);
    return gamma_tilde.value(t, x) + 0.5 * mu_beta.value(t, x);
}

MatrixXd ModelSpec::beta_at(double t) const { return beta.value(t, factor_at(t)); }

VectorXd ModelSpec::eta_eff_at(double t) const {
    const VectorXd x = factor_at(t);
    VectorXd out = eta_tilde.value(t, x);
    const MatrixXd bt = beta.value(t, x);
    for (int i = 0; i < n; ++i) out[i] += 0.5 * bt(i, i);
    return out;
}

VectorXd ModelSpec::lambda_at(double t) const { return dark_lambda.value(t, factor_at(t)); }
VectorXd ModelSpec::b_at(double t) const { return spread_b.value(t, factor_at(t)); }
VectorXd ModelSpec::l_at(double t) const { return repo_l.value(t, factor_at(t)); }
VectorXd ModelSpec::price_mean_at(double t) const { return price.mean_curve(t); }

MatrixXd ModelSpec::xi_eff() const {
    const double T = grid.horizon();
    const VectorXd xT = factor_at(T);
    return xi_tilde.value(T, xT) - 0.5 * beta.value(T, xT);
}

MatrixXd ModelSpec::xi_tilde_at_T() const {
    const double T = grid.horizon();
    return xi_tilde.value(T, factor_at(T));
}

FlowMoments ModelSpec::moments_at(double t) const { return moments_at(t, factor_at(t)); }

FlowMoments ModelSpec::moments_at(double t, const VectorXd& x) const {
    return flow_moments(flows, spread_b.value(t, x), t, x);
}

bool ModelSpec::coeffs_deterministic() const {
    if (!factor.present()) return true;
    if (factor.vol_is_zero() || factor.epsilon == 0.0) return true;
    bool all_time_only = xi_tilde.time_only() && gamma_tilde.time_only() &&
                         impact_M.time_only() && beta.time_only() && mu_beta.time_only() &&
                         eta_tilde.time_only() && dark_lambda.time_only() &&
                         spread_b.time_only() && repo_l.time_only();
    for (const auto& f : flows) all_time_only = all_time_only && f.mass.time_only();
    return all_time_only;
}

// ---------------------------------------------------------------------------
// Config parsing

namespace {

ScalarForm parse_scalar_form(const config::Tree& cfg, const std::string& sec) {
    const std::string form = cfg.get_string(sec, "form");
    if (form == "constant") return ScalarForm::constant(cfg.get_double(sec, "value"));
    if (form == "piecewise_const") {
        const VectorXd ts = cfg.get_vector(sec, "times");
        const VectorXd vs = cfg.get_vector(sec, "values");
        return ScalarForm::piecewise_const(std::vector<double>(ts.data(), ts.data() + ts.size()),
                                           std::vector<double>(vs.data(), vs.data() + vs.size()));
    }
    if (form == "softplus_affine")
        return ScalarForm::softplus_affine(cfg.get_double(sec, "floor", 0.0),
                                           cfg.get_double(sec, "a"), cfg.get_vector(sec, "b"));
    if (form == "exp_affine")
        return ScalarForm::exp_affine(cfg.get_double(sec, "a"), cfg.get_vector(sec, "b"));
    if (form == "vol_spread") return ScalarForm::vol_spread(cfg.get_double(sec, "a_hat"));
    throw ConfigError("[" + sec + "]: unknown functional form id '" + form + "'");
}

MatrixCoeff parse_matrix_coeff(const config::Tree& cfg, const std::string& name, int n,
                               double default_value) {
    MatrixCoeff c;
    c.n = n;
    if (!cfg.has_section(name)) {
        for (int i = 0; i < n; ++i) c.diag.push_back(ScalarForm::constant(default_value));
        return c;
    }
    const std::string kind = cfg.get_string(name, "kind", n == 1 ? "scalar" : "diagonal");
    if (kind == "scalar" || kind == "diagonal") {
        c.kind = MatrixCoeff::Kind::Diagonal;
        if (cfg.has_key(name, "values")) {
            const VectorXd v = cfg.get_vector(name, "values");
            if (v.size() != n) throw ConfigError("[" + name + "]: values length != securities");
            for (int i = 0; i < n; ++i) c.diag.push_back(ScalarForm::constant(v[i]));
        } else if (cfg.has_key(name, "form")) {
            const ScalarForm f = parse_scalar_form(cfg, name);
            for (int i = 0; i < n; ++i) c.diag.push_back(f);
        } else {
            for (int i = 0; i < n; ++i) {
                const std::string sub = name + "." + std::to_string(i + 1);
                if (!cfg.has_section(sub))
                    throw ConfigError("[" + name + "]: expected form, values, or [" + sub + "]");
                c.diag.push_back(parse_scalar_form(cfg, sub));
            }
        }
        return c;
    }
    if (kind == "dense") {
        c.kind = MatrixCoeff::Kind::DenseScaled;
        c.base = cfg.get_matrix(name, "rows");
        if (c.base.rows() != n || c.base.cols() != n)
            throw ConfigError("[" + name + "]: rows must be " + std::to_string(n) + "x" +
                              std::to_string(n));
        const std::string scale_sec = name + ".scale";
        c.scale = cfg.has_section(scale_sec) ? parse_scalar_form(cfg, scale_sec)
                                             : ScalarForm::constant(1.0);
        return c;
    }
    throw ConfigError("[" + name + "]: unknown kind '" + kind + "'");
}

VectorCoeff parse_vector_coeff(const config::Tree& cfg, const std::string& name, int n,
                               double default_value) {
    VectorCoeff c;
    if (!cfg.has_section(name)) {
        bool any = false;
        for (int i = 0; i < n; ++i)
            if (cfg.has_section(name + "." + std::to_string(i + 1))) any = true;
        if (!any) {
            for (int i = 0; i < n; ++i) c.entries.push_back(ScalarForm::constant(default_value));
            return c;
        }
    }
    if (cfg.has_section(name) && cfg.has_key(name, "values")) {
        const VectorXd v = cfg.get_vector(name, "values");
        if (v.size() != n) throw ConfigError("[" + name + "]: values length != securities");
        for (int i = 0; i < n; ++i) c.entries.push_back(ScalarForm::constant(v[i]));
        return c;
    }
    for (int i = 0; i < n; ++i) {
        const std::string sub = name + "." + std::to_string(i + 1);
        if (cfg.has_section(sub))
            c.entries.push_back(parse_scalar_form(cfg, sub));
        else if (cfg.has_section(name) && cfg.has_key(name, "form"))
            c.entries.push_back(parse_scalar_form(cfg, name));
        else
            throw ConfigError("[" + name + "]: expected form, values, or per-security [" + sub +
                              "]");
    }
    return c;
}

PriceSpec parse_price(const config::Tree& cfg, int n) {
    PriceSpec p;
    p.n = n;
    p.s0 = VectorXd::Zero(n);
    p.kappa = VectorXd::Zero(n);
    p.mean = VectorXd::Zero(n);
    p.vol = VectorXd::Zero(n);
    if (!cfg.has_section("price")) return p;
    const std::string kind = cfg.get_string("price", "kind", "constant");
    auto broadcast = [&](const char* key, double fallback) -> VectorXd {
        if (!cfg.has_key("price", key)) return VectorXd::Constant(n, fallback);
        VectorXd v = cfg.get_vector("price", key);
        if (v.size() == 1 && n > 1) return VectorXd::Constant(n, v[0]);
        if (v.size() != n) throw ConfigError("[price] " + std::string(key) + ": bad length");
        return v;
    };
    if (kind == "constant") {
        p.s0 = broadcast("value", 0.0);
        p.mean = p.s0;
        return p;
    }
    if (kind == "ou") {
        p.s0 = broadcast("s0", 0.0);
        p.kappa = broadcast("kappa", 0.0);
        p.mean = broadcast("mean", 0.0);
        p.vol = broadcast("vol", 0.0);
        return p;
    }
    throw ConfigError("[price]: unknown kind '" + kind + "'");
}

std::vector<OrderFlow> parse_flows(const config::Tree& cfg, int n) {
    std::vector<OrderFlow> flows;
    for (int i = 0; i < n; ++i) {
        const std::string own = "flow." + std::to_string(i + 1);
        const std::string sec = cfg.has_section(own) ? own : "flow";
        OrderFlow f;
        if (!cfg.has_section(sec)) {
            // no customer flow for this security
            f.shape = FlowShape::make(FlowShape::Kind::Uniform, -1.0, 1.0, 0.0);
            f.mass = ScalarForm::constant(0.0);
            flows.push_back(std::move(f));
            continue;
        }
        const VectorXd sup = cfg.get_vector(sec, "support");
        if (sup.size() != 2) throw ConfigError("[" + sec + "] support: expected [lo, hi]");
        const std::string shape = cfg.get_string(sec, "shape", "uniform");
        FlowShape::Kind kind;
        if (shape == "uniform")
            kind = FlowShape::Kind::Uniform;
        else if (shape == "tilted")
            kind = FlowShape::Kind::Tilted;
        else
            throw ConfigError("[" + sec + "]: unknown shape '" + shape + "'");
        f.shape = FlowShape::make(kind, sup[0], sup[1], cfg.get_double(sec, "tilt", 0.0));
        const std::string mass_sec = sec + ".mass";
        if (!cfg.has_section(mass_sec))
            throw ConfigError("[" + sec + "]: missing [" + mass_sec + "] intensity form");
        f.mass = parse_scalar_form(cfg, mass_sec);
        f.bound = cfg.get_double(sec, "bound", 0.0);
        flows.push_back(std::move(f));
    }
    return flows;
}

FactorModel parse_factor(const config::Tree& cfg) {
    FactorModel f;
    if (!cfg.has_section("factor")) return f;
    f.dim = static_cast<int>(cfg.get_int("factor", "dim", 1));
    f.x0 = cfg.get_vector("factor", "x0");
    if (f.x0.size() != f.dim) throw ConfigError("[factor] x0: length != dim");
    f.epsilon = cfg.get_double("factor", "epsilon", 1.0);
    if (f.epsilon < 0.0 || f.epsilon > 1.0)
        throw ConfigError("[factor] epsilon must lie in [0,1]");
    for (int i = 0; i < f.dim; ++i) {
        const std::string sec = "factor.drift." + std::to_string(i + 1);
        DriftForm d;
        if (cfg.has_section(sec)) {
            d.a = cfg.get_double(sec, "a", 0.0);
            d.b = cfg.has_key(sec, "b") ? cfg.get_vector(sec, "b") : VectorXd::Zero(f.dim);
            if (d.b.size() != f.dim) throw ConfigError("[" + sec + "] b: length != dim");
            d.c = cfg.get_double(sec, "c", 0.0);
            d.d = cfg.has_key(sec, "d") ? cfg.get_vector(sec, "d") : VectorXd::Zero(f.dim);
            if (d.d.size() != f.dim) throw ConfigError("[" + sec + "] d: length != dim");
        } else {
            d.b = VectorXd::Zero(f.dim);
            d.d = VectorXd::Zero(f.dim);
        }
        f.drift.push_back(std::move(d));
    }
    f.vol.resize(f.dim);
    for (int i = 0; i < f.dim; ++i) {
        f.vol[i].resize(f.dim, ScalarForm::constant(0.0));
        for (int j = 0; j < f.dim; ++j) {
            const std::string sec =
                "factor.vol." + std::to_string(i + 1) + "." + std::to_string(j + 1);
            if (cfg.has_section(sec)) f.vol[i][j] = parse_scalar_form(cfg, sec);
        }
    }
    return f;
}

VectorPath integrate_factor_skeleton(const FactorModel& f, const TimeGrid& grid) {
    std::vector<VectorXd> vals(grid.nodes()), derivs(grid.nodes());
    VectorXd x = f.x0;
    const double h = grid.h();
    for (int k = 0; k < grid.nodes(); ++k) {
        const double t = grid.node(k);
        vals[k] = x;
        derivs[k] = f.mu(t, x);
        if (k == grid.steps()) break;
        const VectorXd k1 = derivs[k];
        const VectorXd k2 = f.mu(t + 0.5 * h, x + 0.5 * h * k1);
        const VectorXd k3 = f.mu(t + 0.5 * h, x + 0.5 * h * k2);
        const VectorXd k4 = f.mu(t + h, x + h * k3);
        x += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    }
    return VectorPath(grid, std::move(vals), std::move(derivs));
}

int collect_factor_dims(const ModelSpec& m) {
    int d = 0;
    auto visit = [&d](const ScalarForm& f) { d = std::max(d, f.factor_dim()); };
    auto visit_mat = [&](const MatrixCoeff& c) {
        for (const auto& f : c.diag) visit(f);
        visit(c.scale);
    };
    auto visit_vec = [&](const VectorCoeff& c) {
        for (const auto& f : c.entries) visit(f);
    };
    visit_mat(m.xi_tilde);
    visit_mat(m.gamma_tilde);
    visit_mat(m.impact_M);
    visit_mat(m.beta);
    visit_mat(m.mu_beta);
    visit_mat(m.sigma_beta);
    visit_vec(m.eta_tilde);
    visit_vec(m.dark_lambda);
    visit_vec(m.spread_b);
    visit_vec(m.repo_l);
    for (const auto& f : m.flows) visit(f.mass);
    return d;
}

}  // namespace

ModelSpec build_model_unchecked(const config::Tree& cfg) {
    ModelSpec m;
    m.n = static_cast<int>(cfg.get_int("model", "securities", 1));
    if (m.n < 1) throw ConfigError("[model] securities must be >= 1");
    const double T = cfg.get_double("model", "horizon", 1.0);
    const int steps = static_cast<int>(cfg.get_int("model", "grid_steps", 2000));
    m.grid = TimeGrid(T, steps);
    if (cfg.has_key("model", "position0")) {
        m.position0 = cfg.get_vector("model", "position0");
        if (m.position0.size() == 1 && m.n > 1)
            m.position0 = VectorXd::Constant(m.n, m.position0[0]);
        if (m.position0.size() != m.n) throw ConfigError("[model] position0: bad length");
    } else {
        m.position0 = VectorXd::Zero(m.n);
    }

    m.sym_tol = cfg.get_double("validation", "symmetry_tol", 1e-12);
    m.psd_tol = cfg.get_double("validation", "psd_tol", 1e-10);
    m.strict_floor = cfg.get_double("validation", "strict_floor", 1e-10);

    m.xi_tilde = parse_matrix_coeff(cfg, "terminal_penalty", m.n, 0.0);
    m.gamma_tilde = parse_matrix_coeff(cfg, "running_penalty", m.n, 0.0);
    m.impact_M = parse_matrix_coeff(cfg, "temporary_impact", m.n, 1.0);
    m.beta = parse_matrix_coeff(cfg, "inventory_impact", m.n, 0.0);
    m.mu_beta = parse_matrix_coeff(cfg, "inventory_impact_drift", m.n, 0.0);
    m.sigma_beta = parse_matrix_coeff(cfg, "inventory_impact_vol", m.n, 0.0);
    m.eta_tilde = parse_vector_coeff(cfg, "block_premium", m.n, 1.0);
    m.dark_lambda = parse_vector_coeff(cfg, "dark_intensity", m.n, 0.0);
    m.dark_bound = VectorXd::Zero(m.n);
    if (cfg.has_key("dark_intensity", "bound")) {
        VectorXd b = cfg.get_vector("dark_intensity", "bound");
        if (b.size() == 1 && m.n > 1) b = VectorXd::Constant(m.n, b[0]);
        if (b.size() != m.n) throw ConfigError("[dark_intensity] bound: bad length");
        m.dark_bound = b;
    }
    m.spread_b = parse_vector_coeff(cfg, "spread", m.n, 0.0);
    m.repo_l = parse_vector_coeff(cfg, "repo_rate", m.n, 0.0);
    m.price = parse_price(cfg, m.n);
    m.flows = parse_flows(cfg, m.n);
    m.factor = parse_factor(cfg);

    for (int i = 0; i < m.n; ++i)
        m.spread_b.entries[static_cast<std::size_t>(i)].resolve_vol_spread(m.price.vol[i]);

    const int needed = collect_factor_dims(m);
    if (needed > 0 && !m.factor.present())
        throw ConfigError("factor-dependent coefficient forms require a [factor] section");
    if (m.factor.present() && needed > 0 && needed != m.factor.dim)
        throw ConfigError("coefficient factor loading length does not match [factor] dim");

    if (m.factor.present()) m.factor_skeleton = integrate_factor_skeleton(m.factor, m.grid);
    return m;
}

ModelSpec build_model(const config::Tree& cfg) {
    ModelSpec m = build_model_unchecked(cfg);
    validate_model(m).throw_if_failed();
    return m;
}

// ---------------------------------------------------------------------------
// Assumption checks

namespace {

struct Checker {
    const ModelSpec& m;
    ValidationReport& rep;
    std::vector<VectorXd> states;  // sampled factor states (empty vector = no factor)

    void add(const std::string& id, bool pass, const std::string& detail) {
        rep.checks.push_back({id, detail, pass});
    }

    double sym_defect(const MatrixXd& a) const {
        return (a - a.transpose()).cwiseAbs().maxCoeff();
    }

    double min_eig(const MatrixXd& a) const {
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (a + a.transpose()));
        return es.eigenvalues().minCoeff();
    }

    // Evaluate `f(t, x)` over the grid and sampled states; report the worst
    // offender through `score` (pass when score stays >= threshold).
    template <class F>
    void sweep(const std::string& id, const std::string& what, double threshold, F score) {
        double worst = std::numeric_limits<double>::infinity();
        double worst_t = 0.0;
        const int stride = std::max(1, m.grid.steps() / 400);
        for (int k = 0; k <= m.grid.steps(); k += stride) {
            const double t = m.grid.node(k);
            for (const auto& x : states) {
                const double s = score(t, x);
                if (s < worst) {
                    worst = s;
                    worst_t = t;
                }
            }
        }
        std::ostringstream os;
        os << what << " (worst " << worst << " at t=" << worst_t << ", threshold " << threshold
           << ")";
        add(id, worst >= threshold, os.str());
    }
};

}  // namespace

ValidationReport validate_model(const ModelSpec& m, bool check_assumption_c) {
    ValidationReport rep;
    Checker ck{m, rep, {}};

    // factor states to sample: skeleton plus +-1..3 diffusion widths per dim
    if (m.factor.present()) {
        ck.states.push_back(m.factor.x0);
        const MatrixXd s0 = m.factor.sigma(0.0, m.factor.x0);
        const double T = m.grid.horizon();
        for (int i = 0; i < m.factor.dim; ++i) {
            const double width =
                m.factor.epsilon * std::sqrt((s0 * s0.transpose())(i, i) * T) + 0.1;
            for (int k = 1; k <= 3; ++k) {
                VectorXd xp = m.factor.x0, xm = m.factor.x0;
                xp[i] += k * width;
                xm[i] -= k * width;
                ck.states.push_back(xp);
                ck.states.push_back(xm);
            }
        }
    } else {
        ck.states.push_back(VectorXd());
    }

    // A(a1): unaffected price non-negative (mean curve)
    {
        double worst = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= m.grid.steps(); k += std::max(1, m.grid.steps() / 400))
            worst = std::min(worst, m.price.mean_curve(m.grid.node(k)).minCoeff());
        ck.add("A(a1)", worst >= 0.0,
               "unaffected price mean curve non-negative (min " + std::to_string(worst) + ")");
    }

    // A(a3): mark support excludes zero; intensity mass bounded and non-negative
    for (int i = 0; i < m.n; ++i) {
        const auto& f = m.flows[static_cast<std::size_t>(i)];
        const bool zero_endpoint = (f.shape.lo == 0.0 || f.shape.hi == 0.0);
        ck.add("A(a3)", !zero_endpoint,
               "security " + std::to_string(i + 1) +
                   (zero_endpoint ? ": mark support must exclude zero"
                                  : ": mark support excludes zero"));
        double sup_mass = 0.0, inf_mass = std::numeric_limits<double>::infinity();
        for (int k = 0; k <= m.grid.steps(); k += std::max(1, m.grid.steps() / 400)) {
            const double t = m.grid.node(k);
            for (const auto& x : ck.states) {
                const double v = f.mass.value(t, x);
                sup_mass = std::max(sup_mass, v);
                inf_mass = std::min(inf_mass, v);
            }
        }
        ck.add("A(a3)", inf_mass >= 0.0 && std::isfinite(sup_mass),
               "security " + std::to_string(i + 1) + ": intensity density non-negative, sup " +
                   std::to_string(sup_mass));
        if (!f.mass.time_only())
            ck.add("A(a3)", f.bound > 0.0 && sup_mass <= f.bound,
                   "security " + std::to_string(i + 1) +
                       ": factor-dependent intensity within declared bound " +
                       std::to_string(f.bound));
    }

    // symmetry of matrix coefficients
    ck.sweep("A'(a4')", "running penalty symmetric", -m.sym_tol,
             [&](double t, const VectorXd& x) { return -ck.sym_defect(m.gamma_tilde.value(t, x)); });
    ck.sweep("A'(a4')", "running penalty PSD", -m.psd_tol,
             [&](double t, const VectorXd& x) { return ck.min_eig(m.gamma_tilde.value(t, x)); });
    ck.sweep("A'(a5')", "temporary impact symmetric", -m.sym_tol,
             [&](double t, const VectorXd& x) { return -ck.sym_defect(m.impact_M.value(t, x)); });
    {
        const double T = m.grid.horizon();
        double worst = std::numeric_limits<double>::infinity();
        for (const auto& x : ck.states) worst = std::min(worst, ck.min_eig(m.xi_tilde.value(T, x)));
        ck.add("A'(a6')", worst >= -m.psd_tol,
               "terminal penalty PSD (min eigenvalue " + std::to_string(worst) + ")");
    }
    ck.sweep("A'(a7')", "dark-pool intensity positive", 0.0,
             [&](double t, const VectorXd& x) { return m.dark_lambda.value(t, x).minCoeff(); });
    ck.sweep("A'(a7')", "dark-pool premium positive", 0.0,
             [&](double t, const VectorXd& x) { return m.eta_tilde.value(t, x).minCoeff(); });
    for (int i = 0; i < m.n; ++i) {
        const auto& f = m.dark_lambda.entries[static_cast<std::size_t>(i)];
        if (f.time_only()) continue;
        double sup = 0.0;
        for (int k = 0; k <= m.grid.steps(); k += std::max(1, m.grid.steps() / 400))
            for (const auto& x : ck.states)
                sup = std::max(sup, f.value(m.grid.node(k), x));
        ck.add("A'(a7')", m.dark_bound[i] > 0.0 && sup <= m.dark_bound[i],
               "security " + std::to_string(i + 1) +
                   ": factor-dependent dark intensity within declared bound " +
                   std::to_string(m.dark_bound[i]));
    }
    ck.sweep("A'(a8')", "inventory impact symmetric", -m.sym_tol,
             [&](double t, const VectorXd& x) { return -ck.sym_defect(m.beta.value(t, x)); });
    ck.sweep("B'(b1')", "impact drift symmetric", -m.sym_tol,
             [&](double t, const VectorXd& x) { return -ck.sym_defect(m.mu_beta.value(t, x)); });

    // effective (shifted) coefficients
    {
        const double T = m.grid.horizon();
        double worst = std::numeric_limits<double>::infinity();
        for (const auto& x : ck.states)
            worst = std::min(
                worst, ck.min_eig(m.xi_tilde.value(T, x) - 0.5 * m.beta.value(T, x)));
        ck.add("B'(b2')", worst >= -m.psd_tol,
               "effective terminal penalty PSD (min eigenvalue " + std::to_string(worst) + ")");
    }
    ck.sweep("B'(b3')", "effective running penalty PSD", -m.psd_tol,
             [&](double t, const VectorXd& x) {
                 return ck.min_eig(m.gamma_tilde.value(t, x) + 0.5 * m.mu_beta.value(t, x));
             });
    ck.sweep("B'(b4')", "temporary impact positive definite", m.strict_floor,
             [&](double t, const VectorXd& x) { return ck.min_eig(m.impact_M.value(t, x)); });
    ck.sweep("B'(b4')", "dark-pool lambda*eta floor", m.strict_floor,
             [&](double t, const VectorXd& x) {
                 const VectorXd lam = m.dark_lambda.value(t, x);
                 VectorXd eta = m.eta_tilde.value(t, x);
                 const MatrixXd bt = m.beta.value(t, x);
                 double worst = std::numeric_limits<double>::infinity();
                 for (int i = 0; i < m.n; ++i)
                     worst = std::min(worst, lam[i] * (eta[i] + 0.5 * bt(i, i)));
                 // securities without a dark pool (lambda == 0) are exempt
                 for (int i = 0; i < m.n; ++i)
                     if (lam[i] == 0.0) worst = std::numeric_limits<double>::infinity();
                 return worst;
             });

    // P: uniform ellipticity of the factor diffusion on sampled states
    if (m.factor.present() && !m.factor.vol_is_zero() && m.factor.epsilon > 0.0) {
        double lo = std::numeric_limits<double>::infinity(), hi = 0.0;
        for (int k = 0; k <= m.grid.steps(); k += std::max(1, m.grid.steps() / 100)) {
            const double t = m.grid.node(k);
            for (const auto& x : ck.states) {
                const MatrixXd s = m.factor.sigma(t, x);
                Eigen::SelfAdjointEigenSolver<MatrixXd> es(s * s.transpose());
                lo = std::min(lo, es.eigenvalues().minCoeff());
                hi = std::max(hi, es.eigenvalues().maxCoeff());
            }
        }
        ck.add("P", lo > 0.0 && std::isfinite(hi),
               "factor diffusion uniformly elliptic on sampled states (eigs in [" +
                   std::to_string(lo) + ", " + std::to_string(hi) + "])");
    }

    if (check_assumption_c) {
        const PenaltySweepConstants pc = penalty_sweep_constants(m);
        std::ostringstream os;
        os << "penalty-sweep constants: c=" << pc.c << ", c/(1+lambda_bar)="
           << pc.c / (1.0 + pc.lambda_bar) << " (<1), c_tilde=" << pc.c_tilde << " (<1/2)";
        ck.add("C", pc.assumption_c_ok, os.str());
    }

    return rep;
}

PenaltySweepConstants penalty_sweep_constants(const ModelSpec& m) {
    PenaltySweepConstants pc;
    double m_lo = std::numeric_limits<double>::infinity();
    double eta_lo = std::numeric_limits<double>::infinity();
    for (int k = 0; k <= m.grid.steps(); ++k) {
        const double t = m.grid.node(k);
        const MatrixXd mm = m.M_at(t);
        Eigen::SelfAdjointEigenSolver<MatrixXd> es(0.5 * (mm + mm.transpose()));
        m_lo = std::min(m_lo, es.eigenvalues().minCoeff());
        pc.m_bar = std::max(pc.m_bar, es.eigenvalues().maxCoeff());
        eta_lo = std::min(eta_lo, m.eta_eff_at(t).minCoeff());
        pc.lambda_bar = std::max(pc.lambda_bar, m.lambda_at(t).maxCoeff());
    }
    pc.c = std::min(m_lo, eta_lo);
    pc.c_tilde = pc.c / (pc.m_bar * (1.0 + pc.lambda_bar));
    pc.assumption_c_ok =
        pc.c > 0.0 && pc.c / (1.0 + pc.lambda_bar) < 1.0 && pc.c_tilde < 0.5;
    return pc;
}

}  // namespace mmopt
