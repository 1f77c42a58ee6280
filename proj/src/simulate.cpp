#include "mmopt/simulate.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <functional>
#include <mutex>
#include <thread>

#include "mmopt/rng.hpp"
#include "sim_internal.hpp"

namespace mmopt::sim {

using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {
constexpr std::uint64_t kTagOrder = 0x4f524445'00000000ULL;
constexpr std::uint64_t kTagFill = 0x46494c4c'00000000ULL;
constexpr std::uint64_t kTagTie = 0x54494531'00000000ULL;
constexpr std::uint64_t kTagPrice = 0x50524943'00000000ULL;
constexpr std::uint64_t kTagFactor = 0x46414354'00000000ULL;
}  // namespace

// ---------------------------------------------------------------------------
// Strategy rules

StrategyRule StrategyRule::optimal() { return {}; }

StrategyRule StrategyRule::zero(int n) {
    StrategyRule r;
    r.kind = Kind::Zero;
    r.shift = VectorXd::Zero(n);
    return r;
}

StrategyRule StrategyRule::perturbed(Target target, const VectorXd& shift, double scale) {
    StrategyRule r;
    r.kind = Kind::PerturbedOptimal;
    r.target = target;
    r.shift = shift;
    r.scale = scale;
    return r;
}

StrategyRule StrategyRule::custom_affine(MatrixXd kpi, VectorXd cpi, MatrixXd kdel,
                                         VectorXd cdel) {
    StrategyRule r;
    r.kind = Kind::CustomAffine;
    r.kpi = std::move(kpi);
    r.cpi = std::move(cpi);
    r.kdel = std::move(kdel);
    r.cdel = std::move(cdel);
    return r;
}

StrategyRule StrategyRule::expansion_optimal() {
    StrategyRule r;
    r.kind = Kind::ExpansionOptimal;
    return r;
}

std::string StrategyRule::name() const {
    switch (kind) {
        case Kind::Optimal:
            return "optimal";
        case Kind::Zero:
            return "zero";
        case Kind::CustomAffine:
            return "custom-affine";
        case Kind::ExpansionOptimal:
            return "expansion-optimal";
        case Kind::PerturbedOptimal: {
            std::string leg = target == Target::Pi ? "pi" : (target == Target::Delta ? "delta" : "both");
            char buf[96];
            std::snprintf(buf, sizeof(buf), "perturbed-%s-shift%+.3g-scale%.3g", leg.c_str(),
                          shift.size() ? shift[0] : 0.0, scale);
            return buf;
        }
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Context: solved paths + flattened half-grid tables

const riccati::V2Path& context_v2(const SimContext& c) { return c.v2; }
const affine::AffinePath& context_affine(const SimContext& c) { return c.aff; }
const ModelSpec& context_model(const SimContext& c) { return c.model; }

namespace {

std::vector<MajorantRun> build_majorant(const ModelSpec& m, const ScalarForm& form,
                                        double declared_bound) {
    const TimeGrid& g = m.grid;
    std::vector<MajorantRun> runs;
    if (!form.time_only()) {
        if (declared_bound <= 0.0)
            throw ValidationError(
                "factor-dependent intensity needs a declared bound (Assumption A (a3))");
        runs.push_back({g.horizon(), declared_bound});
        return runs;
    }
    double cur = form.max_on(g.node(0), g.node(1));
    double end = g.node(1);
    for (int k = 1; k < g.steps(); ++k) {
        const double lvl = form.max_on(g.node(k), g.node(k + 1));
        if (lvl == cur) {
            end = g.node(k + 1);
        } else {
            runs.push_back({end, cur});
            cur = lvl;
            end = g.node(k + 1);
        }
    }
    runs.push_back({end, cur});
    return runs;
}

void fill_tables(SimContext& c) {
    const ModelSpec& m = c.model;
    const TimeGrid& g = m.grid;
    const int n = m.n;
    const int J = 2 * g.steps() + 1;
    c.n = n;
    c.half_nodes = J;
    const std::size_t mj = static_cast<std::size_t>(J) * n * n;
    const std::size_t vj = static_cast<std::size_t>(J) * n;
    c.tM.resize(mj);
    c.tMinv.resize(mj);
    c.tBeta.resize(mj);
    c.tGammaEff.resize(mj);
    c.tGammaRaw.resize(mj);
    c.tV2.resize(mj);
    c.tEtaEff.resize(vj);
    c.tEtaRaw.resize(vj);
    c.tLam.resize(vj);
    c.tB.resize(vj);
    c.tL.resize(vj);
    c.tS.resize(vj);
    c.tTheta.resize(vj);
    c.tPhi.resize(vj);
    c.tPsi.resize(vj);
    c.tPhi2.resize(vj);
    c.tMTheta.resize(vj);
    c.tBetaBpsi.resize(vj);
    c.tV1.resize(vj);
    c.tBdPhi2.resize(static_cast<std::size_t>(J));

    for (int j = 0; j < J; ++j) {
        const double t = c.stage_time(j);
        const VectorXd x = m.factor_at(t);
        const MatrixXd M = m.impact_M.value(t, x);
        const MatrixXd Minv = M.ldlt().solve(MatrixXd::Identity(n, n));
        const MatrixXd beta = m.beta.value(t, x);
        const MatrixXd geff = m.gamma_eff_at(t);
        const MatrixXd graw = m.gamma_tilde.value(t, x);
        const MatrixXd v2 = c.v2.at(t);
        const VectorXd v1 = c.aff.v1.at(t);
        const VectorXd etaE = m.eta_eff_at(t);
        const VectorXd etaR = m.eta_tilde.value(t, x);
        const VectorXd lam = m.dark_lambda.value(t, x);
        const VectorXd b = m.spread_b.value(t, x);
        const VectorXd l = m.repo_l.value(t, x);
        const VectorXd s = m.price_mean_at(t);
        const FlowMoments mom = m.moments_at(t, x);
        const VectorXd mtheta = M * mom.theta;
        const VectorXd bpsi = b.cwiseProduct(mom.psi);
        const VectorXd betabpsi = beta * bpsi;
        double bd = 0.0;
        for (int i = 0; i < n; ++i) bd += 0.5 * beta(i, i) * mom.phi2[i];

        for (int r = 0; r < n; ++r)
            for (int cidx = 0; cidx < n; ++cidx) {
                const std::size_t off = (static_cast<std::size_t>(j) * n + r) * n + cidx;
                c.tM[off] = M(r, cidx);
                c.tMinv[off] = Minv(r, cidx);
                c.tBeta[off] = beta(r, cidx);
                c.tGammaEff[off] = geff(r, cidx);
                c.tGammaRaw[off] = graw(r, cidx);
                c.tV2[off] = v2(r, cidx);
            }
        for (int r = 0; r < n; ++r) {
            const std::size_t off = static_cast<std::size_t>(j) * n + r;
            c.tEtaEff[off] = etaE[r];
            c.tEtaRaw[off] = etaR[r];
            c.tLam[off] = lam[r];
            c.tB[off] = b[r];
            c.tL[off] = l[r];
            c.tS[off] = s[r];
            c.tTheta[off] = mom.theta[r];
            c.tPhi[off] = mom.phi[r];
            c.tPsi[off] = mom.psi[r];
            c.tPhi2[off] = mom.phi2[r];
            c.tMTheta[off] = mtheta[r];
            c.tBetaBpsi[off] = betabpsi[r];
            c.tV1[off] = v1[r];
        }
        c.tBdPhi2[static_cast<std::size_t>(j)] = bd;
    }

    c.order_majorant.resize(static_cast<std::size_t>(n));
    c.fill_majorant.resize(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) {
        c.order_majorant[static_cast<std::size_t>(i)] =
            build_majorant(m, m.flows[static_cast<std::size_t>(i)].mass,
                           m.flows[static_cast<std::size_t>(i)].bound);
        c.fill_majorant[static_cast<std::size_t>(i)] =
            build_majorant(m, m.dark_lambda.entries[static_cast<std::size_t>(i)],
                           m.dark_bound[i]);
    }
}

}  // namespace

SimContextPtr make_context(const ModelSpec& m, const std::optional<double>& xi_override) {
    auto ctx = std::make_shared<SimContext>();
    ctx->model = m;
    ctx->xi_override = xi_override;
    std::optional<MatrixXd> xi;
    if (xi_override) {
        if (m.n != 1) throw NumericalError("penalty override is single-security only");
        MatrixXd x(1, 1);
        x(0, 0) = *xi_override;
        xi = x;
    }
    ctx->v2 = riccati::solve_v2_matrix(m, xi);
    ctx->aff = affine::solve_affine(m, ctx->v2);
    ctx->xi_eff_mat = ctx->v2.xi;
    ctx->xi_raw_mat = xi_override
                          ? MatrixXd(ctx->v2.xi + 0.5 * m.beta_at(m.grid.horizon()))
                          : m.xi_tilde_at_T();
    ctx->det_coeffs = m.coeffs_deterministic();
    if (!ctx->det_coeffs)
        throw NumericalError(
            "stochastic-coefficient models need make_expansion_context (re-anchored rule)");
    fill_tables(*ctx);
    return ctx;
}

SimContextPtr make_expansion_context(const ModelSpec& m, const expansion::LatticeOptions& opt) {
    if (m.n != 1 || !m.factor.present() || m.factor.dim != 1)
        throw NumericalError("expansion context requires a single security and a 1-d factor");
    auto ctx = std::make_shared<SimContext>();
    ctx->model = m;
    ctx->det_coeffs = false;
    ctx->lattice = expansion::build_strategy_lattice(m, opt);
    // deterministic-skeleton reference paths are still useful for reports
    ctx->v2 = riccati::solve_v2_matrix(m);
    ctx->aff = affine::solve_affine(m, ctx->v2);
    ctx->xi_eff_mat = ctx->v2.xi;
    ctx->xi_raw_mat = m.xi_tilde_at_T();
    ctx->n = 1;
    const int J = 2 * m.grid.steps() + 1;
    ctx->half_nodes = J;
    ctx->order_majorant.resize(1);
    ctx->fill_majorant.resize(1);
    ctx->order_majorant[0] = build_majorant(m, m.flows[0].mass, m.flows[0].bound);
    ctx->fill_majorant[0] = build_majorant(m, m.dark_lambda.entries[0], m.dark_bound[0]);
    return ctx;
}

// ---------------------------------------------------------------------------
// Event sampling

namespace {

// Thinning against a step-function majorant; `accept_ratio(t)` must be <= 1.
void thin_stream(RngStream& rng, const std::vector<MajorantRun>& runs, double horizon,
                 const std::function<double(double)>& accept_ratio,
                 const std::function<void(double, RngStream&)>& emit) {
    double t = 0.0;
    std::size_t run = 0;
    while (t < horizon && run < runs.size()) {
        const double level = runs[run].level;
        const double end = runs[run].t_end;
        if (level <= 0.0) {
            t = end;
            ++run;
            continue;
        }
        t += -std::log(rng.next_uniform()) / level;
        if (t >= end) {
            // skip ahead run by run, re-scaling the overshoot is unnecessary:
            // restart the clock at the run boundary (memoryless property)
            t = end;
            ++run;
            continue;
        }
        const double ratio = accept_ratio(t) / level;
        if (ratio > 1.0 + 1e-9)
            throw NumericalError("intensity exceeded its thinning majorant at t=" +
                                 std::to_string(t));
        if (rng.next_uniform() <= ratio) emit(t, rng);
    }
}

}  // namespace

std::vector<Event> sample_events(const SimContext& ctx, std::uint64_t seed, int path_index) {
    const ModelSpec& m = ctx.model;
    const double T = m.grid.horizon();
    std::vector<Event> events;

    // factor-dependent intensities are evaluated along the zero-noise skeleton
    // for thinning acceptance in deterministic contexts; stochastic contexts
    // re-thin against the declared bound with the realized factor path later.
    for (int i = 0; i < m.n; ++i) {
        const auto& flow = m.flows[static_cast<std::size_t>(i)];
        RngStream rng(seed, kTagOrder | static_cast<std::uint64_t>(i),
                      static_cast<std::uint64_t>(path_index));
        thin_stream(rng, ctx.order_majorant[static_cast<std::size_t>(i)], T,
                    [&](double t) { return flow.mass.value(t, m.factor_at(t)); },
                    [&](double t, RngStream& r) {
                        double z = 0.0;
                        for (int tries = 0; tries < 8 && z == 0.0; ++tries)
                            z = flow.shape.sample(r.next_uniform());
                        events.push_back({t, Event::Type::Order, i, z});
                    });
        RngStream rngf(seed, kTagFill | static_cast<std::uint64_t>(i),
                       static_cast<std::uint64_t>(path_index));
        thin_stream(rngf, ctx.fill_majorant[static_cast<std::size_t>(i)], T,
                    [&](double t) { return m.dark_lambda.entries[static_cast<std::size_t>(i)]
                                        .value(t, m.factor_at(t)); },
                    [&](double t, RngStream&) {
                        events.push_back({t, Event::Type::Fill, i, 0.0});
                    });
    }

    std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
        if (a.t != b.t) return a.t < b.t;
        if (a.type != b.type) return a.type < b.type;
        return a.security < b.security;
    });
    // no simultaneous events: identical float times are re-drawn in-cell
    bool retied = false;
    RngStream tie(seed, kTagTie, static_cast<std::uint64_t>(path_index));
    for (std::size_t k = 1; k < events.size(); ++k) {
        while (events[k].t == events[k - 1].t) {
            const int cell = m.grid.cell_of(events[k].t);
            events[k].t =
                m.grid.node(cell) + tie.next_uniform() * (m.grid.node(cell + 1) - m.grid.node(cell));
            retied = true;
        }
    }
    if (retied)
        std::sort(events.begin(), events.end(), [](const Event& a, const Event& b) {
            if (a.t != b.t) return a.t < b.t;
            if (a.type != b.type) return a.type < b.type;
            return a.security < b.security;
        });
    return events;
}

// ---------------------------------------------------------------------------
// Deterministic-coefficient path engine

namespace {

// strategy tables at half nodes: pi = Kpi X + cpi + Dpi S, same for delta
struct StrategyTables {
    std::vector<double> kpi, cpi, dpi, kdel, cdel, ddel;
    bool lattice_rule = false;
};

StrategyTables build_tables(const SimContext& c, const StrategyRule& rule) {
    StrategyTables st;
    if (rule.kind == StrategyRule::Kind::ExpansionOptimal) {
        st.lattice_rule = true;
        return st;
    }
    const int n = c.n;
    const int J = c.half_nodes;
    const std::size_t mj = static_cast<std::size_t>(J) * n * n;
    const std::size_t vj = static_cast<std::size_t>(J) * n;
    st.kpi.assign(mj, 0.0);
    st.dpi.assign(mj, 0.0);
    st.kdel.assign(mj, 0.0);
    st.ddel.assign(mj, 0.0);
    st.cpi.assign(vj, 0.0);
    st.cdel.assign(vj, 0.0);
    if (rule.kind == StrategyRule::Kind::Zero) return st;

    const bool touch_pi = rule.kind != StrategyRule::Kind::PerturbedOptimal ||
                          rule.target != StrategyRule::Target::Delta;
    const bool touch_del = rule.kind != StrategyRule::Kind::PerturbedOptimal ||
                           rule.target != StrategyRule::Target::Pi;
    const double spi = (rule.kind == StrategyRule::Kind::PerturbedOptimal && touch_pi)
                           ? rule.scale
                           : 1.0;
    const double sdel = (rule.kind == StrategyRule::Kind::PerturbedOptimal && touch_del)
                            ? rule.scale
                            : 1.0;

    for (int j = 0; j < J; ++j) {
        const std::size_t mo = static_cast<std::size_t>(j) * n * n;
        const std::size_t vo = static_cast<std::size_t>(j) * n;
        if (rule.kind == StrategyRule::Kind::CustomAffine) {
            for (int r = 0; r < n; ++r) {
                for (int q = 0; q < n; ++q) {
                    st.kpi[mo + r * n + q] = rule.kpi(r, q);
                    st.kdel[mo + r * n + q] = rule.kdel(r, q);
                }
                st.cpi[vo + r] = rule.cpi[r];
                st.cdel[vo + r] = rule.cdel[r];
            }
            continue;
        }
        // optimal feedback (optionally scaled/shifted)
        for (int r = 0; r < n; ++r) {
            double cp = 0.0;
            for (int q = 0; q < n; ++q) {
                double kp = 0.0;
                for (int s = 0; s < n; ++s)
                    kp -= c.tMinv[mo + r * n + s] * c.tV2[mo + s * n + q];
                st.kpi[mo + r * n + q] = spi * kp;
                st.dpi[mo + r * n + q] = spi * (-0.5 * c.tMinv[mo + r * n + q]);
            }
            for (int s = 0; s < n; ++s) cp -= c.tMinv[mo + r * n + s] * c.tV1[vo + s];
            cp -= 0.5 * c.tTheta[vo + r];
            st.cpi[vo + r] = spi * cp;

            const double den = c.tV2[mo + r * n + r] + c.tEtaEff[vo + r];
            for (int q = 0; q < n; ++q)
                st.kdel[mo + r * n + q] = sdel * (-c.tV2[mo + r * n + q] / den);
            st.ddel[mo + r * n + r] = sdel * (-0.5 / den);
            st.cdel[vo + r] = sdel * (-c.tV1[vo + r] / den);
        }
        if (rule.kind == StrategyRule::Kind::PerturbedOptimal && rule.shift.size()) {
            for (int r = 0; r < n; ++r) {
                if (touch_pi) st.cpi[vo + r] += rule.shift[r];
                if (touch_del) st.cdel[vo + r] += rule.shift[r];
            }
        }
    }
    return st;
}

// accumulator layout after the n position entries
enum Acc {
    kJGamma = 0,
    kJXflow,
    kJTrade,
    kJDark,
    kJConst,
    kRGamma,
    kRExchange,
    kRRepo,
    kAccCount
};

struct Workspace {
    int n = 1;
    std::vector<double> state, k1, k2, k3, k4, g1, g2, g3, g4, stage, pi, del;
    std::vector<double> gen;  // generic stage coefficient block
    void init(int nn) {
        n = nn;
        const int na = kAccCount + 2 * nn;
        state.assign(static_cast<std::size_t>(nn + na), 0.0);
        k1.assign(static_cast<std::size_t>(nn), 0.0);
        k2.assign(static_cast<std::size_t>(nn), 0.0);
        k3.assign(static_cast<std::size_t>(nn), 0.0);
        k4.assign(static_cast<std::size_t>(nn), 0.0);
        g1.assign(static_cast<std::size_t>(na), 0.0);
        g2.assign(static_cast<std::size_t>(na), 0.0);
        g3.assign(static_cast<std::size_t>(na), 0.0);
        g4.assign(static_cast<std::size_t>(na), 0.0);
        stage.assign(static_cast<std::size_t>(nn), 0.0);
        pi.assign(static_cast<std::size_t>(nn), 0.0);
        del.assign(static_cast<std::size_t>(nn), 0.0);
    }
    int state_size() const { return n + kAccCount + 2 * n; }
};

// one stage-coefficient view: raw pointers into tables or scratch
struct StageView {
    const double *M, *beta, *gammaEff, *gammaRaw, *etaEff, *etaRaw, *lam, *b, *l, *S, *theta,
        *phi, *psi, *phi2, *mtheta, *betabpsi, *bdphi2;
    const double *kpi, *cpi, *dpi, *kdel, *cdel, *ddel;
};

int packed_stride(int n) { return 8 * n * n + 14 * n + 1; }

// interleave model and strategy tables into one cache-friendly record per
// half node; StageView pointers land inside a single stretch of memory
void pack_tables(const SimContext& c, const StrategyTables& st, std::vector<double>* out) {
    const int n = c.n;
    const int J = c.half_nodes;
    const int stride = packed_stride(n);
    out->assign(static_cast<std::size_t>(J) * stride, 0.0);
    for (int j = 0; j < J; ++j) {
        double* p = out->data() + static_cast<std::size_t>(j) * stride;
        const std::size_t mo = static_cast<std::size_t>(j) * n * n;
        const std::size_t vo = static_cast<std::size_t>(j) * n;
        auto put = [&p](const double* src, int count) {
            std::memcpy(p, src, static_cast<std::size_t>(count) * sizeof(double));
            p += count;
        };
        put(&st.kpi[mo], n * n);
        put(&st.cpi[vo], n);
        put(&st.dpi[mo], n * n);
        put(&st.kdel[mo], n * n);
        put(&st.cdel[vo], n);
        put(&st.ddel[mo], n * n);
        put(&c.tM[mo], n * n);
        put(&c.tBeta[mo], n * n);
        put(&c.tGammaEff[mo], n * n);
        put(&c.tGammaRaw[mo], n * n);
        put(&c.tEtaEff[vo], n);
        put(&c.tEtaRaw[vo], n);
        put(&c.tLam[vo], n);
        put(&c.tB[vo], n);
        put(&c.tL[vo], n);
        put(&c.tS[vo], n);
        put(&c.tTheta[vo], n);
        put(&c.tPhi[vo], n);
        put(&c.tPsi[vo], n);
        put(&c.tPhi2[vo], n);
        put(&c.tMTheta[vo], n);
        put(&c.tBetaBpsi[vo], n);
        put(&c.tBdPhi2[static_cast<std::size_t>(j)], 1);
    }
}

StageView packed_view(const double* packed, int stride, int n, int j) {
    const double* p = packed + static_cast<std::size_t>(j) * stride;
    StageView v;
    auto take = [&p](int count) {
        const double* q = p;
        p += count;
        return q;
    };
    v.kpi = take(n * n);
    v.cpi = take(n);
    v.dpi = take(n * n);
    v.kdel = take(n * n);
    v.cdel = take(n);
    v.ddel = take(n * n);
    v.M = take(n * n);
    v.beta = take(n * n);
    v.gammaEff = take(n * n);
    v.gammaRaw = take(n * n);
    v.etaEff = take(n);
    v.etaRaw = take(n);
    v.lam = take(n);
    v.b = take(n);
    v.l = take(n);
    v.S = take(n);
    v.theta = take(n);
    v.phi = take(n);
    v.psi = take(n);
    v.phi2 = take(n);
    v.mtheta = take(n);
    v.betabpsi = take(n);
    v.bdphi2 = take(1);
    return v;
}

StageView table_view(const SimContext& c, const StrategyTables& st, int j) {
    StageView v;
    const int n = c.n;
    const std::size_t mo = static_cast<std::size_t>(j) * n * n;
    const std::size_t vo = static_cast<std::size_t>(j) * n;
    v.M = &c.tM[mo];
    v.beta = &c.tBeta[mo];
    v.gammaEff = &c.tGammaEff[mo];
    v.gammaRaw = &c.tGammaRaw[mo];
    v.etaEff = &c.tEtaEff[vo];
    v.etaRaw = &c.tEtaRaw[vo];
    v.lam = &c.tLam[vo];
    v.b = &c.tB[vo];
    v.l = &c.tL[vo];
    v.S = &c.tS[vo];
    v.theta = &c.tTheta[vo];
    v.phi = &c.tPhi[vo];
    v.psi = &c.tPsi[vo];
    v.phi2 = &c.tPhi2[vo];
    v.mtheta = &c.tMTheta[vo];
    v.betabpsi = &c.tBetaBpsi[vo];
    v.bdphi2 = &c.tBdPhi2[static_cast<std::size_t>(j)];
    v.kpi = &st.kpi[mo];
    v.cpi = &st.cpi[vo];
    v.dpi = &st.dpi[mo];
    v.kdel = &st.kdel[mo];
    v.cdel = &st.cdel[vo];
    v.ddel = &st.ddel[mo];
    return v;
}

// generic (off-grid) stage coefficients, written into ws.gen
StageView generic_view(const SimContext& c, const StrategyTables& st, const StrategyRule& rule,
                       double t, Workspace& ws) {
    const ModelSpec& m = c.model;
    const int n = c.n;
    const VectorXd x = m.factor_at(t);
    const MatrixXd M = m.impact_M.value(t, x);
    const MatrixXd Minv = M.ldlt().solve(MatrixXd::Identity(n, n));
    const MatrixXd beta = m.beta.value(t, x);
    const MatrixXd ge = m.gamma_eff_at(t);
    const MatrixXd gr = m.gamma_tilde.value(t, x);
    const MatrixXd v2 = c.v2.at(t);
    const VectorXd v1 = c.aff.v1.at(t);
    const VectorXd etaE = m.eta_eff_at(t);
    const VectorXd etaR = m.eta_tilde.value(t, x);
    const VectorXd lam = m.dark_lambda.value(t, x);
    const VectorXd b = m.spread_b.value(t, x);
    const VectorXd l = m.repo_l.value(t, x);
    const VectorXd s = m.price_mean_at(t);
    const FlowMoments mom = m.moments_at(t, x);
    const VectorXd mtheta = M * mom.theta;
    const VectorXd bpsi = b.cwiseProduct(mom.psi);
    const VectorXd betabpsi = beta * bpsi;
    double bd = 0.0;
    for (int i = 0; i < n; ++i) bd += 0.5 * beta(i, i) * mom.phi2[i];

    const std::size_t nm = static_cast<std::size_t>(n) * n;
    ws.gen.assign(6 * nm + 12 * static_cast<std::size_t>(n) + 1 + 4 * nm + 2 * n, 0.0);
    double* p = ws.gen.data();
    auto put_mat = [&](const MatrixXd& a) {
        double* q = p;
        for (int r = 0; r < n; ++r)
            for (int cc = 0; cc < n; ++cc) *p++ = a(r, cc);
        return q;
    };
    auto put_vec = [&](const VectorXd& a) {
        double* q = p;
        for (int r = 0; r < n; ++r) *p++ = a[r];
        return q;
    };
    StageView v;
    v.M = put_mat(M);
    v.beta = put_mat(beta);
    v.gammaEff = put_mat(ge);
    v.gammaRaw = put_mat(gr);
    v.etaEff = put_vec(etaE);
    v.etaRaw = put_vec(etaR);
    v.lam = put_vec(lam);
    v.b = put_vec(b);
    v.l = put_vec(l);
    v.S = put_vec(s);
    v.theta = put_vec(mom.theta);
    v.phi = put_vec(mom.phi);
    v.psi = put_vec(mom.psi);
    v.phi2 = put_vec(mom.phi2);
    v.mtheta = put_vec(mtheta);
    v.betabpsi = put_vec(betabpsi);
    double* bdp = p;
    *p++ = bd;
    v.bdphi2 = bdp;

    // strategy block
    MatrixXd kpi = MatrixXd::Zero(n, n), dpi = MatrixXd::Zero(n, n),
             kdel = MatrixXd::Zero(n, n), ddel = MatrixXd::Zero(n, n);
    VectorXd cpi = VectorXd::Zero(n), cdel = VectorXd::Zero(n);
    if (rule.kind == StrategyRule::Kind::CustomAffine) {
        kpi = rule.kpi;
        cpi = rule.cpi;
        kdel = rule.kdel;
        cdel = rule.cdel;
    } else if (rule.kind != StrategyRule::Kind::Zero) {
        const bool touch_pi = rule.kind != StrategyRule::Kind::PerturbedOptimal ||
                              rule.target != StrategyRule::Target::Delta;
        const bool touch_del = rule.kind != StrategyRule::Kind::PerturbedOptimal ||
                               rule.target != StrategyRule::Target::Pi;
        const double spi =
            (rule.kind == StrategyRule::Kind::PerturbedOptimal && touch_pi) ? rule.scale : 1.0;
        const double sdel =
            (rule.kind == StrategyRule::Kind::PerturbedOptimal && touch_del) ? rule.scale : 1.0;
        kpi = -spi * (Minv * v2);
        dpi = -0.5 * spi * Minv;
        cpi = -spi * (Minv * v1 + 0.5 * mom.theta);
        for (int r = 0; r < n; ++r) {
            const double den = v2(r, r) + etaE[r];
            for (int q = 0; q < n; ++q) kdel(r, q) = -sdel * v2(r, q) / den;
            ddel(r, r) = -0.5 * sdel / den;
            cdel[r] = -sdel * v1[r] / den;
        }
        if (rule.kind == StrategyRule::Kind::PerturbedOptimal && rule.shift.size()) {
            if (touch_pi) cpi += rule.shift;
            if (touch_del) cdel += rule.shift;
        }
    }
    v.kpi = put_mat(kpi);
    v.cpi = put_vec(cpi);
    v.dpi = put_mat(dpi);
    v.kdel = put_mat(kdel);
    v.cdel = put_vec(cdel);
    v.ddel = put_mat(ddel);
    (void)st;
    return v;
}

// one stage: position derivative plus accumulator integrands (the
// accumulators never feed back, so RK4 only propagates the position)
void stage_eval(const StageView& v, int n, const double* X, const double* sprice,
                Workspace& ws, double* dx, double* acc) {
    double* pi = ws.pi.data();
    double* del = ws.del.data();
    for (int r = 0; r < n; ++r) {
        double a = v.cpi[r], d = v.cdel[r];
        for (int q = 0; q < n; ++q) {
            a += v.kpi[r * n + q] * X[q] + v.dpi[r * n + q] * sprice[q];
            d += v.kdel[r * n + q] * X[q] + v.ddel[r * n + q] * sprice[q];
        }
        pi[r] = a;
        del[r] = d;
        dx[r] = a;
    }
    double jg = 0, jx = 0, jt = 0, jd = 0, jc = 0, rg = 0, rex = 0, rrepo = 0;
    for (int r = 0; r < n; ++r) {
        double geX = 0, grX = 0, mpi = 0, btX = 0;
        for (int q = 0; q < n; ++q) {
            geX += v.gammaEff[r * n + q] * X[q];
            grX += v.gammaRaw[r * n + q] * X[q];
            mpi += v.M[r * n + q] * pi[q];
            btX += v.beta[r * n + q] * X[q];
        }
        jg += X[r] * geX;
        rg += X[r] * grX;
        jx += X[r] * (v.betabpsi[r] - v.l[r]);
        jt += pi[r] * mpi + (sprice[r] + v.mtheta[r]) * pi[r];
        jd += v.lam[r] * (v.etaEff[r] * del[r] * del[r] + sprice[r] * del[r]);
        jc += sprice[r] * v.theta[r];
        rex += (sprice[r] + mpi - btX) * pi[r];
        rrepo -= v.l[r] * X[r];
    }
    jc += *v.bdphi2;
    acc[kJGamma] = jg;
    acc[kJXflow] = jx;
    acc[kJTrade] = jt;
    acc[kJDark] = jd;
    acc[kJConst] = jc;
    acc[kRGamma] = rg;
    acc[kRExchange] = rex;
    acc[kRRepo] = rrepo;
    for (int r = 0; r < n; ++r) {
        acc[kAccCount + r] = -v.phi[r];
        acc[kAccCount + n + r] = -v.lam[r];
    }
}

struct SegmentStages {
    StageView a, mid, b;
    const double *sa, *smid, *sb;  // realized price at the three stage times
};

void rk4_segment(const SegmentStages& sv, int n, double h, Workspace& ws) {
    const int na = kAccCount + 2 * n;
    double* X = ws.state.data();          // first n entries: position
    double* A = ws.state.data() + n;      // then the accumulators
    double* x2 = ws.stage.data();
    double* dx1 = ws.k1.data();
    double* dx2 = ws.k2.data();
    double* dx3 = ws.k3.data();
    double* dx4 = ws.k4.data();
    double* g1 = ws.g1.data();
    double* g2 = ws.g2.data();
    double* g3 = ws.g3.data();
    double* g4 = ws.g4.data();
    stage_eval(sv.a, n, X, sv.sa, ws, dx1, g1);
    for (int i = 0; i < n; ++i) x2[i] = X[i] + 0.5 * h * dx1[i];
    stage_eval(sv.mid, n, x2, sv.smid, ws, dx2, g2);
    for (int i = 0; i < n; ++i) x2[i] = X[i] + 0.5 * h * dx2[i];
    stage_eval(sv.mid, n, x2, sv.smid, ws, dx3, g3);
    for (int i = 0; i < n; ++i) x2[i] = X[i] + h * dx3[i];
    stage_eval(sv.b, n, x2, sv.sb, ws, dx4, g4);
    for (int i = 0; i < n; ++i)
        X[i] += h / 6.0 * (dx1[i] + 2.0 * dx2[i] + 2.0 * dx3[i] + dx4[i]);
    for (int i = 0; i < na; ++i)
        A[i] += h / 6.0 * (g1[i] + 2.0 * g2[i] + 2.0 * g3[i] + g4[i]);
}

// strategy values at an arbitrary time (jump handling)
void eval_strategy_at(const StageView& v, int n, const double* X, const double* sprice,
                      double* pi, double* del) {
    for (int r = 0; r < n; ++r) {
        double a = v.cpi[r], d = v.cdel[r];
        for (int q = 0; q < n; ++q) {
            a += v.kpi[r * n + q] * X[q] + v.dpi[r * n + q] * sprice[q];
            d += v.kdel[r * n + q] * X[q] + v.ddel[r * n + q] * sprice[q];
        }
        pi[r] = a;
        del[r] = d;
    }
}

}  // namespace

namespace {

// Exact per-cell reduction for deterministic prices: over an event-free cell
// the RK4 update is affine in the entering position and every accumulator
// increment is quadratic in it, so both are extracted once per strategy by
// basis evaluation and replayed in a few flops per cell.
struct CellMaps {
    int n = 0;
    int na = 0;
    // per cell: A (n*n), b (n), then per accumulator (Q n*n, q n, s)
    std::vector<double> data;
    int stride = 0;
    bool valid = false;
    const double* cell(int k) const { return data.data() + static_cast<std::size_t>(k) * stride; }
};

void build_cell_maps(const SimContext& ctx, const double* packed, CellMaps* maps) {
    const int n = ctx.n;
    const int na = kAccCount + 2 * n;
    const TimeGrid& g = ctx.model.grid;
    maps->n = n;
    maps->na = na;
    maps->stride = n * n + n + na * (n * n + n + 1);
    maps->data.assign(static_cast<std::size_t>(g.steps()) * maps->stride, 0.0);
    maps->valid = true;

    const int stride = packed_stride(n);
    Workspace ws;
    ws.init(n);
    const double h = g.h();
    // basis states: 0, +e_i, -e_i, e_i + e_j (i<j)
    std::vector<Eigen::VectorXd> basis;
    basis.push_back(Eigen::VectorXd::Zero(n));
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
        e[i] = 1.0;
        basis.push_back(e);
        basis.push_back(-e);
    }
    std::vector<std::pair<int, int>> pairs;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            Eigen::VectorXd e = Eigen::VectorXd::Zero(n);
            e[i] = 1.0;
            e[j] = 1.0;
            basis.push_back(e);
            pairs.emplace_back(i, j);
        }

    std::vector<Eigen::VectorXd> xout(basis.size());
    std::vector<Eigen::VectorXd> aout(basis.size());
    for (int k = 0; k < g.steps(); ++k) {
        SegmentStages sv;
        sv.a = packed_view(packed, stride, n, 2 * k);
        sv.mid = packed_view(packed, stride, n, 2 * k + 1);
        sv.b = packed_view(packed, stride, n, 2 * k + 2);
        sv.sa = sv.a.S;
        sv.smid = sv.mid.S;
        sv.sb = sv.b.S;
        for (std::size_t bi = 0; bi < basis.size(); ++bi) {
            for (int i = 0; i < n; ++i) ws.state[static_cast<std::size_t>(i)] = basis[bi][i];
            for (int i = 0; i < na; ++i) ws.state[static_cast<std::size_t>(n + i)] = 0.0;
            rk4_segment(sv, n, h, ws);
            xout[bi].resize(n);
            aout[bi].resize(na);
            for (int i = 0; i < n; ++i) xout[bi][i] = ws.state[static_cast<std::size_t>(i)];
            for (int i = 0; i < na; ++i)
                aout[bi][i] = ws.state[static_cast<std::size_t>(n + i)];
        }
        double* rec = maps->data.data() + static_cast<std::size_t>(k) * maps->stride;
        // affine map: A col i = f(e_i) - f(0), b = f(0)
        for (int i = 0; i < n; ++i)
            for (int c = 0; c < n; ++c) rec[i * n + c] = xout[1 + 2 * c][i] - xout[0][i];
        for (int i = 0; i < n; ++i) rec[n * n + i] = xout[0][i];
        double* arec = rec + n * n + n;
        for (int a = 0; a < na; ++a) {
            double* q2 = arec;        // Q, n*n
            double* q1 = arec + n * n;  // q, n
            double* q0 = q1 + n;        // s
            for (int i = 0; i < n; ++i) {
                const double gp = aout[1 + 2 * i][a], gm = aout[2 + 2 * i][a],
                             g0 = aout[0][a];
                q2[i * n + i] = 0.5 * (gp + gm) - g0;
                q1[i] = 0.5 * (gp - gm);
            }
            for (std::size_t pi = 0; pi < pairs.size(); ++pi) {
                const auto [i, j] = pairs[pi];
                const double gij = aout[1 + 2 * n + pi][a];
                const double mixed = 0.5 * (gij - aout[1 + 2 * i][a] - aout[1 + 2 * j][a] +
                                            aout[0][a]);
                q2[i * n + j] = mixed;
                q2[j * n + i] = mixed;
            }
            *q0 = aout[0][a];
            arec += n * n + n + 1;
        }
    }
}

inline void apply_cell_map(const CellMaps& maps, int k, double* X, double* A, double* xtmp) {
    const int n = maps.n;
    const int na = maps.na;
    const double* rec = maps.cell(k);
    for (int i = 0; i < n; ++i) {
        double v = rec[n * n + i];
        for (int c = 0; c < n; ++c) v += rec[i * n + c] * X[c];
        xtmp[i] = v;
    }
    const double* arec = rec + n * n + n;
    for (int a = 0; a < na; ++a) {
        double v = arec[n * n + n];  // s
        for (int i = 0; i < n; ++i) {
            double qx = 0.0;
            for (int c = 0; c < n; ++c) qx += arec[i * n + c] * X[c];
            v += X[i] * qx + arec[n * n + i] * X[i];
        }
        A[a] += v;
        arec += n * n + n + 1;
    }
    for (int i = 0; i < n; ++i) X[i] = xtmp[i];
}

PathRecord run_path_det(const SimContext& ctx, const StrategyTables& st,
                        const double* packed, const CellMaps* maps, const StrategyRule& rule,
                        const VectorXd& x0, std::uint64_t seed, int path_index,
                        bool record_log) {
    const ModelSpec& m = ctx.model;
    const TimeGrid& g = m.grid;
    const int n = ctx.n;
    if (x0.size() != n) throw NumericalError("simulate_path: x0 dimension mismatch");

    std::vector<Event> events = sample_events(ctx, seed, path_index);

    PathRecord rec;
    rec.event_hash = fnv1a64(events.data(), events.size() * sizeof(Event));
    const double guard = 1e6 * (1.0 + x0.cwiseAbs().maxCoeff());

    // realized price at stepping points (exact OU transitions); deterministic
    // prices read the tables instead.
    const bool stoch_price = !m.price.deterministic();
    RngStream price_rng(seed, kTagPrice, static_cast<std::uint64_t>(path_index));

    Workspace ws;
    ws.init(n);
    for (int r = 0; r < n; ++r) ws.state[static_cast<std::size_t>(r)] = x0[r];

    std::vector<double> s_cur(static_cast<std::size_t>(n)), s_next(static_cast<std::size_t>(n)),
        s_mid(static_cast<std::size_t>(n)), s_evt(static_cast<std::size_t>(n));
    for (int r = 0; r < n; ++r) s_cur[static_cast<std::size_t>(r)] = m.price.s0[r];

    auto running_j = [&] {
        return ws.state[static_cast<std::size_t>(n + kJGamma)] +
               ws.state[static_cast<std::size_t>(n + kJXflow)] +
               ws.state[static_cast<std::size_t>(n + kJTrade)] +
               ws.state[static_cast<std::size_t>(n + kJDark)] +
               ws.state[static_cast<std::size_t>(n + kJConst)];
    };
    if (record_log) {
        rec.node_position.reserve(static_cast<std::size_t>(g.nodes()) * n);
        for (int r = 0; r < n; ++r) rec.node_position.push_back(ws.state[static_cast<std::size_t>(r)]);
        rec.node_running_j.push_back(0.0);
    }

    std::vector<double> pre_x(static_cast<std::size_t>(n)), xtmp(static_cast<std::size_t>(n));
    const bool cell_maps_ok = maps && maps->valid && !stoch_price;
    std::size_t ev = 0;
    double t_cur = 0.0;
    for (int k = 0; k < g.steps(); ++k) {
        const double t0 = g.node(k), t1 = g.node(k + 1);
        // event-free cell with a precomputed map: one affine/quadratic step
        if (cell_maps_ok && !(ev < events.size() && events[ev].t <= t1)) {
            if (record_log)
                for (int r = 0; r < n; ++r)
                    pre_x[static_cast<std::size_t>(r)] = ws.state[static_cast<std::size_t>(r)];
            apply_cell_map(*maps, k, ws.state.data(), ws.state.data() + n, xtmp.data());
            t_cur = t1;
            if (record_log) {
                for (int r = 0; r < n; ++r)
                    rec.drift_increments.push_back(ws.state[static_cast<std::size_t>(r)] -
                                                   pre_x[static_cast<std::size_t>(r)]);
                for (int r = 0; r < n; ++r)
                    rec.node_position.push_back(ws.state[static_cast<std::size_t>(r)]);
                rec.node_running_j.push_back(running_j());
            }
            double xmax = 0.0;
            for (int r = 0; r < n; ++r)
                xmax = std::max(xmax, std::fabs(ws.state[static_cast<std::size_t>(r)]));
            if (xmax > guard)
                throw NumericalError("position overflow guard tripped on path " +
                                     std::to_string(path_index));
            continue;
        }
        while (t_cur < t1 - 1e-15) {
            const bool has_event = ev < events.size() && events[ev].t <= t1;
            const double t_next = has_event ? events[ev].t : t1;
            if (t_next > t_cur + 1e-15) {
                const bool aligned = (t_cur == t0 && t_next == t1);
                const double h = t_next - t_cur;
                if (record_log)
                    for (int r = 0; r < n; ++r)
                        pre_x[static_cast<std::size_t>(r)] = ws.state[static_cast<std::size_t>(r)];
                if (stoch_price) {
                    for (int r = 0; r < n; ++r) {
                        const double z = price_rng.next_normal();
                        s_next[static_cast<std::size_t>(r)] =
                            m.price.transition(r, s_cur[static_cast<std::size_t>(r)], h, z);
                        s_mid[static_cast<std::size_t>(r)] =
                            0.5 * (s_cur[static_cast<std::size_t>(r)] +
                                   s_next[static_cast<std::size_t>(r)]);
                    }
                }
                if (aligned) {
                    const int stride = packed_stride(n);
                    SegmentStages sv;
                    if (packed) {
                        sv.a = packed_view(packed, stride, n, 2 * k);
                        sv.mid = packed_view(packed, stride, n, 2 * k + 1);
                        sv.b = packed_view(packed, stride, n, 2 * k + 2);
                    } else {
                        sv.a = table_view(ctx, st, 2 * k);
                        sv.mid = table_view(ctx, st, 2 * k + 1);
                        sv.b = table_view(ctx, st, 2 * k + 2);
                    }
                    sv.sa = stoch_price ? s_cur.data() : sv.a.S;
                    sv.smid = stoch_price ? s_mid.data() : sv.mid.S;
                    sv.sb = stoch_price ? s_next.data() : sv.b.S;
                    rk4_segment(sv, n, h, ws);
                } else {
                    Workspace wa, wmid, wb;  // generic stage views own their scratch
                    wa.init(n);
                    wmid.init(n);
                    wb.init(n);
                    SegmentStages sv;
                    sv.a = generic_view(ctx, st, rule, t_cur, wa);
                    sv.mid = generic_view(ctx, st, rule, 0.5 * (t_cur + t_next), wmid);
                    sv.b = generic_view(ctx, st, rule, t_next, wb);
                    sv.sa = stoch_price ? s_cur.data() : sv.a.S;
                    sv.smid = stoch_price ? s_mid.data() : sv.mid.S;
                    sv.sb = stoch_price ? s_next.data() : sv.b.S;
                    rk4_segment(sv, n, h, ws);
                }
                if (stoch_price) s_cur = s_next;
                if (record_log)
                    for (int r = 0; r < n; ++r)
                        rec.drift_increments.push_back(ws.state[static_cast<std::size_t>(r)] -
                                                       pre_x[static_cast<std::size_t>(r)]);
            }
            t_cur = t_next;
            if (has_event) {
                Event e = events[ev];
                Workspace wj;
                wj.init(n);
                const StageView v = generic_view(ctx, st, rule, e.t, wj);
                const double* sp = stoch_price ? s_cur.data() : v.S;
                eval_strategy_at(v, n, ws.state.data(), sp, ws.pi.data(), ws.del.data());
                const int i = e.security;
                double btX = 0.0, mpi = 0.0;
                for (int q = 0; q < n; ++q) {
                    btX += v.beta[i * n + q] * ws.state[static_cast<std::size_t>(q)];
                    mpi += v.M[i * n + q] * ws.pi[static_cast<std::size_t>(q)];
                }
                if (e.type == Event::Type::Order) {
                    const double z = e.mark;
                    const double stilde = sp[i] + mpi - btX;
                    const double sgn = (z > 0.0) ? 1.0 : -1.0;
                    rec.r_spread += stilde * (1.0 - sgn * v.b[i]) * z;
                    rec.spread_markup += stilde * v.b[i] * std::fabs(z);
                    ws.state[static_cast<std::size_t>(i)] += z;
                    ws.state[static_cast<std::size_t>(n + kAccCount + i)] += z;
                } else {
                    const double d = ws.del[static_cast<std::size_t>(i)];
                    rec.r_dark += (sp[i] - btX) * d + v.etaRaw[i] * d * d;
                    ws.state[static_cast<std::size_t>(i)] += d;
                    ws.state[static_cast<std::size_t>(n + kAccCount + n + i)] += 1.0;
                    e.mark = d;  // executed block size
                }
                if (record_log) {
                    rec.events.push_back(e);
                    rec.event_after_segment.push_back(
                        static_cast<int>(rec.drift_increments.size()) / n);
                }
                ++ev;
            }
            double xmax = 0.0;
            for (int r = 0; r < n; ++r)
                xmax = std::max(xmax, std::fabs(ws.state[static_cast<std::size_t>(r)]));
            if (xmax > guard)
                throw NumericalError("position overflow guard tripped on path " +
                                     std::to_string(path_index));
        }
        if (record_log) {
            for (int r = 0; r < n; ++r)
                rec.node_position.push_back(ws.state[static_cast<std::size_t>(r)]);
            rec.node_running_j.push_back(running_j());
        }
    }

    rec.terminal_position.resize(n);
    for (int r = 0; r < n; ++r) rec.terminal_position[r] = ws.state[static_cast<std::size_t>(r)];
    rec.comp_orders.resize(n);
    rec.comp_fills.resize(n);
    for (int r = 0; r < n; ++r) {
        rec.comp_orders[r] = ws.state[static_cast<std::size_t>(n + kAccCount + r)];
        rec.comp_fills[r] = ws.state[static_cast<std::size_t>(n + kAccCount + n + r)];
    }
    rec.j_gamma = ws.state[static_cast<std::size_t>(n + kJGamma)];
    rec.j_xflow = ws.state[static_cast<std::size_t>(n + kJXflow)];
    rec.j_trade = ws.state[static_cast<std::size_t>(n + kJTrade)];
    rec.j_dark = ws.state[static_cast<std::size_t>(n + kJDark)];
    rec.j_const = ws.state[static_cast<std::size_t>(n + kJConst)];
    rec.r_gamma = ws.state[static_cast<std::size_t>(n + kRGamma)];
    rec.r_exchange = ws.state[static_cast<std::size_t>(n + kRExchange)];
    rec.r_repo = ws.state[static_cast<std::size_t>(n + kRRepo)];
    rec.j_terminal = rec.terminal_position.dot(ctx.xi_eff_mat * rec.terminal_position);
    rec.r_terminal = rec.terminal_position.dot(ctx.xi_raw_mat * rec.terminal_position);
    if (!record_log) rec.events = std::move(events);
    return rec;
}

}  // namespace

PathRecord simulate_path(const SimContext& ctx, const StrategyRule& rule, const VectorXd& x0,
                         std::uint64_t seed, int path_index, bool record_log) {
    if (rule.kind == StrategyRule::Kind::ExpansionOptimal || !ctx.det_coeffs)
        throw NumericalError("simulate_path: stochastic-coefficient engine is separate");
    const StrategyTables st = build_tables(ctx, rule);
    std::vector<double> packed;
    pack_tables(ctx, st, &packed);
    return run_path_det(ctx, st, packed.data(), nullptr, rule, x0, seed, path_index,
                        record_log);
}

// ---------------------------------------------------------------------------
// Stochastic-coefficient engine (single security, 1-d factor, lattice rule)

namespace {

struct ScalarState {
    double x;  // position
    double jg, jx, jt, jd, jc, rg, rex, rrepo, cn, ch;
};

PathRecord simulate_path_stochastic(const SimContext& ctx, const StrategyRule& rule,
                                    double x0, std::uint64_t seed, int path_index,
                                    bool record_log) {
    const ModelSpec& m = ctx.model;
    const TimeGrid& g = m.grid;
    if (!ctx.lattice) throw NumericalError("stochastic engine needs an expansion context");
    if (rule.kind == StrategyRule::Kind::CustomAffine)
        throw NumericalError("custom-affine rules are deterministic-context only");
    const auto& lat = *ctx.lattice;
    const double eps = m.factor.epsilon;

    // realized factor path (Euler on the shared grid)
    std::vector<double> fac(static_cast<std::size_t>(g.nodes()));
    {
        RngStream rng(seed, kTagFactor, static_cast<std::uint64_t>(path_index));
        double x = m.factor.x0[0];
        VectorXd xv(1);
        for (int k = 0; k < g.nodes(); ++k) {
            fac[static_cast<std::size_t>(k)] = x;
            if (k == g.steps()) break;
            xv[0] = x;
            const double t = g.node(k);
            const double mu = m.factor.drift[0].value(xv);
            const double sg = m.factor.vol[0][0].value(t, xv);
            x += mu * g.h() + eps * sg * std::sqrt(g.h()) * rng.next_normal();
        }
    }
    auto fac_at = [&](double t) {
        const int k = g.cell_of(t);
        const double w = (t - g.node(k)) / g.h();
        return (1.0 - w) * fac[static_cast<std::size_t>(k)] +
               w * fac[static_cast<std::size_t>(k + 1)];
    };

    // events thinned against the realized intensity
    std::vector<Event> events;
    {
        const auto& flow = m.flows[0];
        VectorXd xv(1);
        RngStream rng(seed, kTagOrder, static_cast<std::uint64_t>(path_index));
        thin_stream(rng, ctx.order_majorant[0], g.horizon(),
                    [&](double t) {
                        xv[0] = fac_at(t);
                        return flow.mass.value(t, xv);
                    },
                    [&](double t, RngStream& r) {
                        double z = 0.0;
                        for (int tries = 0; tries < 8 && z == 0.0; ++tries)
                            z = flow.shape.sample(r.next_uniform());
                        events.push_back({t, Event::Type::Order, 0, z});
                    });
        RngStream rngf(seed, kTagFill, static_cast<std::uint64_t>(path_index));
        thin_stream(rngf, ctx.fill_majorant[0], g.horizon(),
                    [&](double t) {
                        xv[0] = fac_at(t);
                        return m.dark_lambda.entries[0].value(t, xv);
                    },
                    [&](double t, RngStream&) {
                        events.push_back({t, Event::Type::Fill, 0, 0.0});
                    });
        std::sort(events.begin(), events.end(),
                  [](const Event& a, const Event& b) { return a.t < b.t; });
        RngStream tie(seed, kTagTie, static_cast<std::uint64_t>(path_index));
        for (std::size_t k = 1; k < events.size(); ++k)
            while (events[k].t == events[k - 1].t) {
                const int cell = g.cell_of(events[k].t);
                events[k].t = g.node(cell) + tie.next_uniform() * g.h();
            }
        std::sort(events.begin(), events.end(),
                  [](const Event& a, const Event& b) { return a.t < b.t; });
    }

    PathRecord rec;
    rec.event_hash = fnv1a64(events.data(), events.size() * sizeof(Event));
    const double guard = 1e6 * (1.0 + std::fabs(x0));

    const bool stoch_price = !m.price.deterministic();
    RngStream price_rng(seed, kTagPrice, static_cast<std::uint64_t>(path_index));
    double s_cur = m.price.s0[0];

    struct Coef {
        double M, beta, geff, graw, etaE, etaR, lam, b, l, theta, phi, psi, phi2, v2, v1;
    };
    VectorXd xv(1);
    auto coef_at = [&](double t) {
        Coef c;
        xv[0] = fac_at(t);
        c.M = m.impact_M.scalar_value(t, xv);
        c.beta = m.beta.scalar_value(t, xv);
        const double mb = m.mu_beta.scalar_value(t, xv);
        c.graw = m.gamma_tilde.scalar_value(t, xv);
        c.geff = c.graw + 0.5 * mb;
        c.etaR = m.eta_tilde.entries[0].value(t, xv);
        c.etaE = c.etaR + 0.5 * c.beta;
        c.lam = m.dark_lambda.entries[0].value(t, xv);
        c.b = m.spread_b.entries[0].value(t, xv);
        c.l = m.repo_l.entries[0].value(t, xv);
        const double mass = m.flows[0].mass.value(t, xv);
        c.phi = mass * m.flows[0].shape.m1;
        c.psi = mass * m.flows[0].shape.mabs;
        c.phi2 = mass * m.flows[0].shape.m2;
        c.theta = c.phi - c.b * c.psi;
        c.v2 = lat.v2(t, xv[0]);
        c.v1 = lat.v1(t, xv[0]);
        return c;
    };
    const bool zero_rule = rule.kind == StrategyRule::Kind::Zero;
    const bool touch_pi = rule.kind != StrategyRule::Kind::PerturbedOptimal ||
                          rule.target != StrategyRule::Target::Delta;
    const bool touch_del = rule.kind != StrategyRule::Kind::PerturbedOptimal ||
                           rule.target != StrategyRule::Target::Pi;
    const double spi =
        (rule.kind == StrategyRule::Kind::PerturbedOptimal && touch_pi) ? rule.scale : 1.0;
    const double sdel =
        (rule.kind == StrategyRule::Kind::PerturbedOptimal && touch_del) ? rule.scale : 1.0;
    const double shift = (rule.kind == StrategyRule::Kind::PerturbedOptimal && rule.shift.size())
                             ? rule.shift[0]
                             : 0.0;
    auto controls = [&](const Coef& c, double x, double s, double* pi, double* del) {
        if (zero_rule) {
            *pi = 0.0;
            *del = 0.0;
            return;
        }
        const double den = c.v2 + c.etaE;
        if (den < 1e-12) throw NumericalError("lattice rule: V2+eta denominator below 1e-12");
        double p = -(c.v2 * x + c.v1 + 0.5 * (s + c.M * c.theta)) / c.M;
        double d = -(c.v2 * x + c.v1 + 0.5 * s) / den;
        p = spi * p + (touch_pi ? shift : 0.0);
        d = sdel * d + (touch_del ? shift : 0.0);
        *pi = p;
        *del = d;
    };
    auto deriv = [&](const Coef& c, double s, const ScalarState& st, ScalarState* out) {
        double pi, del;
        controls(c, st.x, s, &pi, &del);
        out->x = pi;
        out->jg = c.geff * st.x * st.x;
        out->jx = st.x * (c.beta * c.b * c.psi - c.l);
        out->jt = c.M * pi * pi + (s + c.M * c.theta) * pi;
        out->jd = c.lam * (c.etaE * del * del + s * del);
        out->jc = s * c.theta + 0.5 * c.beta * c.phi2;
        out->rg = c.graw * st.x * st.x;
        out->rex = (s + c.M * pi - c.beta * st.x) * pi;
        out->rrepo = -c.l * st.x;
        out->cn = -c.phi;
        out->ch = -c.lam;
    };
    auto axpy = [](const ScalarState& a, double w, const ScalarState& d) {
        ScalarState r = a;
        r.x += w * d.x;
        r.jg += w * d.jg;
        r.jx += w * d.jx;
        r.jt += w * d.jt;
        r.jd += w * d.jd;
        r.jc += w * d.jc;
        r.rg += w * d.rg;
        r.rex += w * d.rex;
        r.rrepo += w * d.rrepo;
        r.cn += w * d.cn;
        r.ch += w * d.ch;
        return r;
    };

    ScalarState st{x0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0};
    if (record_log) {
        rec.node_position.push_back(st.x);
        rec.node_running_j.push_back(0.0);
    }
    std::size_t ev = 0;
    double t_cur = 0.0;
    for (int k = 0; k < g.steps(); ++k) {
        const double t1 = g.node(k + 1);
        while (t_cur < t1 - 1e-15) {
            const bool has_event = ev < events.size() && events[ev].t <= t1;
            const double t_next = has_event ? events[ev].t : t1;
            if (t_next > t_cur + 1e-15) {
                const double h = t_next - t_cur;
                double s_next = s_cur;
                if (stoch_price)
                    s_next = m.price.transition(0, s_cur, h, price_rng.next_normal());
                else
                    s_next = m.price_mean_at(t_next)[0];
                const double s_half = stoch_price ? 0.5 * (s_cur + s_next)
                                                  : m.price_mean_at(0.5 * (t_cur + t_next))[0];
                const Coef ca = coef_at(t_cur);
                const Coef cm = coef_at(0.5 * (t_cur + t_next));
                const Coef cb = coef_at(t_next);
                ScalarState k1, k2, k3, k4;
                deriv(ca, s_cur, st, &k1);
                ScalarState tmp = axpy(st, 0.5 * h, k1);
                deriv(cm, s_half, tmp, &k2);
                tmp = axpy(st, 0.5 * h, k2);
                deriv(cm, s_half, tmp, &k3);
                tmp = axpy(st, h, k3);
                deriv(cb, s_next, tmp, &k4);
                ScalarState sum = axpy(st, h / 6.0, k1);
                sum = axpy(sum, h / 3.0, k2);
                sum = axpy(sum, h / 3.0, k3);
                sum = axpy(sum, h / 6.0, k4);
                const double pre = st.x;
                st = sum;
                s_cur = s_next;
                if (record_log) rec.drift_increments.push_back(st.x - pre);
            }
            t_cur = t_next;
            if (has_event) {
                Event e = events[ev];
                const Coef c = coef_at(e.t);
                double pi, del;
                controls(c, st.x, s_cur, &pi, &del);
                if (e.type == Event::Type::Order) {
                    const double z = e.mark;
                    const double stilde = s_cur + c.M * pi - c.beta * st.x;
                    const double sgn = (z > 0.0) ? 1.0 : -1.0;
                    rec.r_spread += stilde * (1.0 - sgn * c.b) * z;
                    rec.spread_markup += stilde * c.b * std::fabs(z);
                    st.x += z;
                    st.cn += z;
                } else {
                    rec.r_dark += (s_cur - c.beta * st.x) * del + c.etaR * del * del;
                    st.x += del;
                    st.ch += 1.0;
                    e.mark = del;
                }
                if (record_log) {
                    rec.events.push_back(e);
                    rec.event_after_segment.push_back(
                        static_cast<int>(rec.drift_increments.size()));
                }
                ++ev;
            }
            if (std::fabs(st.x) > guard)
                throw NumericalError("position overflow guard tripped on path " +
                                     std::to_string(path_index));
        }
        if (record_log) {
            rec.node_position.push_back(st.x);
            rec.node_running_j.push_back(st.jg + st.jx + st.jt + st.jd + st.jc);
        }
    }

    rec.terminal_position.resize(1);
    rec.terminal_position[0] = st.x;
    rec.comp_orders.resize(1);
    rec.comp_fills.resize(1);
    rec.comp_orders[0] = st.cn;
    rec.comp_fills[0] = st.ch;
    rec.j_gamma = st.jg;
    rec.j_xflow = st.jx;
    rec.j_trade = st.jt;
    rec.j_dark = st.jd;
    rec.j_const = st.jc;
    rec.r_gamma = st.rg;
    rec.r_exchange = st.rex;
    rec.r_repo = st.rrepo;
    xv[0] = fac[static_cast<std::size_t>(g.steps())];
    const double T = g.horizon();
    const double xi_raw = m.xi_tilde.scalar_value(T, xv);
    const double xi_eff = xi_raw - 0.5 * m.beta.scalar_value(T, xv);
    rec.j_terminal = xi_eff * st.x * st.x;
    rec.r_terminal = xi_raw * st.x * st.x;
    if (!record_log) rec.events = std::move(events);
    return rec;
}

}  // namespace

namespace detail {

struct PreparedStrategy {
    StrategyTables tables;
    std::vector<double> packed;
    CellMaps maps;
};

std::shared_ptr<const PreparedStrategy> prepare_strategy(const SimContext& ctx,
                                                         const StrategyRule& rule) {
    auto p = std::make_shared<PreparedStrategy>();
    if (!ctx.lattice && rule.kind != StrategyRule::Kind::ExpansionOptimal) {
        p->tables = build_tables(ctx, rule);
        pack_tables(ctx, p->tables, &p->packed);
        if (ctx.model.price.deterministic())
            build_cell_maps(ctx, p->packed.data(), &p->maps);
    }
    return p;
}

void parallel_for(int count, int workers, const std::function<void(int)>& fn) {
    workers = std::max(1, std::min(workers, count));
    if (workers == 1) {
        for (int i = 0; i < count; ++i) fn(i);
        return;
    }
    std::vector<std::thread> pool;
    std::atomic<int> failed{0};
    std::string first_error;
    std::mutex err_mu;
    for (int w = 0; w < workers; ++w) {
        const int lo = static_cast<int>(static_cast<long long>(count) * w / workers);
        const int hi = static_cast<int>(static_cast<long long>(count) * (w + 1) / workers);
        pool.emplace_back([&, lo, hi] {
            try {
                for (int i = lo; i < hi; ++i) fn(i);
            } catch (const std::exception& e) {
                std::lock_guard<std::mutex> lk(err_mu);
                if (!failed.exchange(1)) first_error = e.what();
            }
        });
    }
    for (auto& th : pool) th.join();
    if (failed.load()) throw NumericalError(first_error);
}

PathRecord run_one(const SimContext& ctx, const StrategyRule& rule, const VectorXd& x0,
                   std::uint64_t seed, int path, bool record_log,
                   const PreparedStrategy* prep) {
    if (ctx.lattice || rule.kind == StrategyRule::Kind::ExpansionOptimal)
        return simulate_path_stochastic(ctx, rule, x0[0], seed, path, record_log);
    if (prep)
        return run_path_det(ctx, prep->tables, prep->packed.data(), &prep->maps, rule, x0,
                            seed, path, record_log);
    const StrategyTables st = build_tables(ctx, rule);
    std::vector<double> packed;
    pack_tables(ctx, st, &packed);
    return run_path_det(ctx, st, packed.data(), nullptr, rule, x0, seed, path, record_log);
}

CostEstimate run_estimator(const SimContext& ctx, const StrategyRule& rule, const VectorXd& x0,
                           int n_paths, std::uint64_t seed, int workers, bool raw,
                           std::vector<double>* spread_rev, std::vector<double>* x2) {
    CostEstimate out;
    out.n_paths = n_paths;
    out.seed = seed;
    out.per_path.assign(static_cast<std::size_t>(n_paths), 0.0);
    const int terms = 6;
    std::vector<std::vector<double>> term_vals(terms);
    for (auto& v : term_vals) v.assign(static_cast<std::size_t>(n_paths), 0.0);
    std::vector<double> comp_n(static_cast<std::size_t>(n_paths)),
        comp_h(static_cast<std::size_t>(n_paths));
    if (spread_rev) spread_rev->assign(static_cast<std::size_t>(n_paths), 0.0);
    if (x2) x2->assign(static_cast<std::size_t>(n_paths), 0.0);

    const auto prep = prepare_strategy(ctx, rule);
    parallel_for(n_paths, workers, [&](int p) {
        const PathRecord rec = run_one(ctx, rule, x0, seed, p, false, prep.get());
        const auto q = static_cast<std::size_t>(p);
        if (raw) {
            out.per_path[q] = rec.r_total();
            term_vals[0][q] = rec.r_terminal;
            term_vals[1][q] = rec.r_gamma;
            term_vals[2][q] = rec.r_exchange;
            term_vals[3][q] = rec.r_spread;
            term_vals[4][q] = rec.r_dark;
            term_vals[5][q] = rec.r_repo;
        } else {
            out.per_path[q] = rec.j_total();
            term_vals[0][q] = rec.j_terminal;
            term_vals[1][q] = rec.j_gamma;
            term_vals[2][q] = rec.j_xflow;
            term_vals[3][q] = rec.j_trade;
            term_vals[4][q] = rec.j_dark;
            term_vals[5][q] = rec.j_const;
        }
        comp_n[q] = rec.comp_orders.sum();
        comp_h[q] = rec.comp_fills.sum();
        if (spread_rev) (*spread_rev)[q] = rec.spread_markup;
        if (x2) (*x2)[q] = rec.terminal_position.squaredNorm();
    });

    out.total = mean_se(out.per_path);
    static const char* jnames[] = {"terminal", "running_penalty", "position_flow",
                                   "exchange_trading", "dark_pool", "flow_constant"};
    static const char* rnames[] = {"terminal", "running_penalty", "exchange",
                                   "spread", "dark_pool", "repo"};
    for (int i = 0; i < terms; ++i)
        out.breakdown[(raw ? rnames : jnames)[i]] = mean_se(term_vals[static_cast<std::size_t>(i)]).mean;
    out.breakdown["compensated_orders"] = mean_se(comp_n).mean;
    out.breakdown["compensated_fills"] = mean_se(comp_h).mean;
    return out;
}

}  // namespace detail

CostEstimate estimate_cost(const SimContext& ctx, const StrategyRule& rule, const VectorXd& x0,
                           int n_paths, std::uint64_t seed, int workers) {
    return detail::run_estimator(ctx, rule, x0, n_paths, seed, workers, false, nullptr, nullptr);
}

CostEstimate estimate_raw_cost(const SimContext& ctx, const StrategyRule& rule,
                               const VectorXd& x0, int n_paths, std::uint64_t seed,
                               int workers) {
    return detail::run_estimator(ctx, rule, x0, n_paths, seed, workers, true, nullptr, nullptr);
}

std::vector<double> per_path_spread_revenue(const SimContext& ctx, const StrategyRule& rule,
                                            const VectorXd& x0, int n_paths, std::uint64_t seed,
                                            int workers) {
    std::vector<double> rev;
    detail::run_estimator(ctx, rule, x0, n_paths, seed, workers, true, &rev, nullptr);
    return rev;
}

// ---------------------------------------------------------------------------
// Closed-form position reconstruction (single security, optimal rule)

std::vector<double> reconstruct_position_closed_form(const SimContext& ctx,
                                                     const PathRecord& rec, double x0) {
    if (ctx.n != 1 || !ctx.det_coeffs)
        throw NumericalError("position reconstruction: single security, deterministic only");
    const ModelSpec& m = ctx.model;
    const TimeGrid& g = m.grid;
    const double h = g.h();

    auto r_at = [&](double t) {
        const double v2 = ctx.v2.scalar_at(t);
        const VectorXd x = m.factor_at(t);
        const double M = m.impact_M.scalar_value(t, x);
        const double lam = m.dark_lambda.entries[0].value(t, x);
        const double eta = m.eta_eff_at(t)[0];
        return (1.0 / M + lam / (v2 + eta)) * v2;
    };
    // q(s, X_s) = A (V1 + S/2) + Theta/2 + lambda * delta*(s, X_s)
    auto q_at = [&](double t, double xpos) {
        const double v2 = ctx.v2.scalar_at(t);
        const double v1 = ctx.aff.v1.at(t)[0];
        const VectorXd x = m.factor_at(t);
        const double M = m.impact_M.scalar_value(t, x);
        const double lam = m.dark_lambda.entries[0].value(t, x);
        const double eta = m.eta_eff_at(t)[0];
        const double s = m.price_mean_at(t)[0];
        const FlowMoments mom = m.moments_at(t, x);
        const double a = 1.0 / M + lam / (v2 + eta);
        const double del = -(v2 * xpos + v1 + 0.5 * s) / (v2 + eta);
        return a * (v1 + 0.5 * s) + 0.5 * mom.theta[0] + lam * del;
    };
    // optimal drift for mid-segment replay
    auto drift = [&](double t, double xpos) {
        const double v2 = ctx.v2.scalar_at(t);
        const double v1 = ctx.aff.v1.at(t)[0];
        const VectorXd x = m.factor_at(t);
        const double M = m.impact_M.scalar_value(t, x);
        const double s = m.price_mean_at(t)[0];
        const FlowMoments mom = m.moments_at(t, x);
        return -(v2 * xpos + v1 + 0.5 * (s + M * mom.theta[0])) / M;
    };
    auto rk4_x = [&](double a, double b, double xa) {
        const double hs = b - a;
        const double k1 = drift(a, xa);
        const double k2 = drift(a + 0.5 * hs, xa + 0.5 * hs * k1);
        const double k3 = drift(a + 0.5 * hs, xa + 0.5 * hs * k2);
        const double k4 = drift(b, xa + hs * k3);
        return xa + hs / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
    };

    // cumulative R on nodes
    std::vector<double> rnode(static_cast<std::size_t>(g.nodes()));
    rnode[0] = 0.0;
    for (int k = 0; k < g.steps(); ++k) {
        const double a = g.node(k), b = g.node(k + 1);
        rnode[static_cast<std::size_t>(k + 1)] =
            rnode[static_cast<std::size_t>(k)] +
            h / 6.0 * (r_at(a) + 4.0 * r_at(0.5 * (a + b)) + r_at(b));
    }
    auto r_cum = [&](double t) {
        const int k = g.cell_of(t);
        const double a = g.node(k);
        if (t <= a) return rnode[static_cast<std::size_t>(k)];
        return rnode[static_cast<std::size_t>(k)] +
               (t - a) / 6.0 * (r_at(a) + 4.0 * r_at(0.5 * (a + t)) + r_at(t));
    };

    std::vector<double> out(static_cast<std::size_t>(g.nodes()));
    out[0] = x0;
    double integral = 0.0;  // int_0^t exp(R_s) q ds
    double kicks = 0.0;     // sum exp(R_tau) * jump
    std::size_t ev = 0;
    double t_cur = 0.0;
    double x_cur = x0;

    for (int k = 0; k < g.steps(); ++k) {
        const double t1 = g.node(k + 1);
        while (t_cur < t1 - 1e-15) {
            const bool has_event = ev < rec.events.size() && rec.events[ev].t <= t1;
            const double t_next = has_event ? rec.events[ev].t : t1;
            if (t_next > t_cur + 1e-15) {
                const double tm = 0.5 * (t_cur + t_next);
                const double xm = rk4_x(t_cur, tm, x_cur);
                const double xb = rk4_x(tm, t_next, xm);
                const double wa = std::exp(r_cum(t_cur)) * q_at(t_cur, x_cur);
                const double wm = std::exp(r_cum(tm)) * q_at(tm, xm);
                const double wb = std::exp(r_cum(t_next)) * q_at(t_next, xb);
                integral += (t_next - t_cur) / 6.0 * (wa + 4.0 * wm + wb);
                x_cur = xb;
            }
            t_cur = t_next;
            if (has_event) {
                kicks += std::exp(r_cum(t_cur)) * rec.events[ev].mark;
                x_cur += rec.events[ev].mark;
                ++ev;
            }
        }
        out[static_cast<std::size_t>(k + 1)] =
            std::exp(-rnode[static_cast<std::size_t>(k + 1)]) * (x0 - integral + kicks);
    }
    return out;
}

}  // namespace mmopt::sim
