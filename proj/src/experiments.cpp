#include <algorithm>
#include <cmath>

#include "mmopt/simulate.hpp"
#include "sim_internal.hpp"

namespace mmopt::sim {

using Eigen::VectorXd;

MartingaleReport martingale_diagnostics(const SimContext& ctx, const StrategyRule& rule,
                                        const VectorXd& x0, int n_paths, std::uint64_t seed,
                                        int workers, int buckets) {
    if (ctx.lattice)
        throw NumericalError("martingale diagnostics run on deterministic contexts");
    const ModelSpec& m = ctx.model;
    const TimeGrid& g = m.grid;
    buckets = std::max(1, std::min(buckets, g.steps()));

    std::vector<int> edges(static_cast<std::size_t>(buckets) + 1);
    for (int k = 0; k <= buckets; ++k)
        edges[static_cast<std::size_t>(k)] =
            static_cast<int>(static_cast<long long>(g.steps()) * k / buckets);

    const int n = m.n;
    auto value_at_node = [&](int node, const double* xpos) {
        const Eigen::MatrixXd v2 = ctx.v2.path.node(node);
        const VectorXd v1 = ctx.aff.v1.node(node);
        double q = ctx.aff.v0.node(node);
        for (int r = 0; r < n; ++r) {
            q += 2.0 * xpos[r] * v1[r];
            for (int c = 0; c < n; ++c) q += xpos[r] * v2(r, c) * xpos[c];
        }
        return q;
    };

    std::vector<std::vector<double>> bucket_vals(static_cast<std::size_t>(buckets));
    for (auto& v : bucket_vals) v.assign(static_cast<std::size_t>(n_paths), 0.0);
    std::vector<double> overall(static_cast<std::size_t>(n_paths), 0.0);

    const auto prep = detail::prepare_strategy(ctx, rule);
    detail::parallel_for(n_paths, workers, [&](int p) {
        const PathRecord rec = detail::run_one(ctx, rule, x0, seed, p, true, prep.get());
        std::vector<double> mvals(static_cast<std::size_t>(buckets) + 1);
        for (int k = 0; k <= buckets; ++k) {
            const int node = edges[static_cast<std::size_t>(k)];
            mvals[static_cast<std::size_t>(k)] =
                value_at_node(node, &rec.node_position[static_cast<std::size_t>(node) * n]) +
                rec.node_running_j[static_cast<std::size_t>(node)];
        }
        for (int k = 0; k < buckets; ++k)
            bucket_vals[static_cast<std::size_t>(k)][static_cast<std::size_t>(p)] =
                mvals[static_cast<std::size_t>(k) + 1] - mvals[static_cast<std::size_t>(k)];
        overall[static_cast<std::size_t>(p)] =
            mvals[static_cast<std::size_t>(buckets)] - mvals[0];
    });

    MartingaleReport rep;
    rep.n_paths = n_paths;
    rep.overall = mean_se(overall);
    rep.bucket_mean.resize(static_cast<std::size_t>(buckets));
    rep.bucket_se.resize(static_cast<std::size_t>(buckets));
    rep.bucket_start.resize(static_cast<std::size_t>(buckets));
    for (int k = 0; k < buckets; ++k) {
        const MeanSe ms = mean_se(bucket_vals[static_cast<std::size_t>(k)]);
        rep.bucket_mean[static_cast<std::size_t>(k)] = ms.mean;
        rep.bucket_se[static_cast<std::size_t>(k)] = ms.se;
        rep.bucket_start[static_cast<std::size_t>(k)] =
            g.node(edges[static_cast<std::size_t>(k)]);
    }
    return rep;
}

PenaltySweepResult penalty_sweep(const ModelSpec& m, const std::vector<double>& penalties,
                                 int n_paths, std::uint64_t seed, int workers) {
    if (m.n != 1) throw NumericalError("penalty sweep is single-security");
    PenaltySweepResult res;
    const PenaltySweepConstants pc = penalty_sweep_constants(m);
    res.two_c_tilde = 2.0 * pc.c_tilde;
    res.assumption_c_ok = pc.assumption_c_ok;
    const double T = m.grid.horizon();

    for (const double L : penalties) {
        if (!(L > 1.0)) throw NumericalError("penalty sweep requires L > 1");
        const SimContextPtr ctx = make_context(m, L);
        std::vector<double> x2;
        detail::run_estimator(*ctx, StrategyRule::optimal(), m.position0, n_paths, seed, workers,
                              false, nullptr, &x2);
        PenaltySweepRow row;
        row.penalty = L;
        const MeanSe ms = mean_se(x2);
        row.ex2_mean = ms.mean;
        row.ex2_se = ms.se;
        const double eps_l = 1.0 / L;
        row.ratio = eps_l / (T + eps_l);
        res.rows.push_back(row);
        res.per_path_x2.push_back(std::move(x2));
    }

    // log-log slope of E|X_T|^2 against the ratio
    const std::size_t nrows = res.rows.size();
    if (nrows >= 2) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (const auto& r : res.rows) {
            const double lx = std::log(r.ratio), ly = std::log(std::max(r.ex2_mean, 1e-300));
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
        }
        const double nn = static_cast<double>(nrows);
        res.fitted_slope = (nn * sxy - sx * sy) / (nn * sxx - sx * sx);
    }
    // bound constant fitted at the smallest penalty
    std::size_t base = 0;
    for (std::size_t i = 1; i < nrows; ++i)
        if (res.rows[i].penalty < res.rows[base].penalty) base = i;
    if (nrows > 0) {
        res.fitted_c =
            res.rows[base].ex2_mean / std::pow(res.rows[base].ratio, res.two_c_tilde);
        for (auto& r : res.rows) r.bound = res.fitted_c * std::pow(r.ratio, res.two_c_tilde);
    }
    return res;
}

namespace {

double quantile_sorted(const std::vector<double>& sorted, double q) {
    if (sorted.empty()) return 0.0;
    const double pos = q * static_cast<double>(sorted.size() - 1);
    const std::size_t lo = static_cast<std::size_t>(std::floor(pos));
    const std::size_t hi = std::min(lo + 1, sorted.size() - 1);
    const double w = pos - static_cast<double>(lo);
    return (1.0 - w) * sorted[lo] + w * sorted[hi];
}

}  // namespace

std::vector<SpreadSweepRow> spread_sweep(const ModelSpec& m, const std::vector<double>& a_hats,
                                         int n_paths, std::uint64_t seed, int workers) {
    std::vector<SpreadSweepRow> rows;
    for (const double a : a_hats) {
        ModelSpec mm = m;
        for (int i = 0; i < mm.n; ++i) {
            ScalarForm f = ScalarForm::vol_spread(a);
            f.resolve_vol_spread(mm.price.vol[i]);
            mm.spread_b.entries[static_cast<std::size_t>(i)] = f;
        }
        const SimContextPtr ctx = make_context(mm);
        std::vector<double> rev;
        const CostEstimate cost = estimate_cost(*ctx, StrategyRule::optimal(), mm.position0,
                                                n_paths, seed, workers);
        detail::run_estimator(*ctx, StrategyRule::optimal(), mm.position0, n_paths, seed,
                              workers, true, &rev, nullptr);
        SpreadSweepRow row;
        row.a_hat = a;
        row.cost_mean = cost.total.mean;
        row.cost_se = cost.total.se;
        row.spread_revenue_mean = mean_se(rev).mean;
        std::sort(rev.begin(), rev.end());
        row.q05 = quantile_sorted(rev, 0.05);
        row.q25 = quantile_sorted(rev, 0.25);
        row.q50 = quantile_sorted(rev, 0.50);
        row.q75 = quantile_sorted(rev, 0.75);
        row.q95 = quantile_sorted(rev, 0.95);
        rows.push_back(row);
    }
    return rows;
}

}  // namespace mmopt::sim
