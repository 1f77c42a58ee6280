#pragma once

// Engine internals shared by the path simulator and the experiment drivers.

#include <optional>
#include <vector>

#include "mmopt/simulate.hpp"

namespace mmopt::sim {

struct MajorantRun {
    double t_end;
    double level;
};

struct SimContext {
    ModelSpec model;
    riccati::V2Path v2;
    affine::AffinePath aff;
    std::optional<expansion::StrategyLattice> lattice;
    std::optional<double> xi_override;
    Eigen::MatrixXd xi_eff_mat, xi_raw_mat;
    bool det_coeffs = true;

    int n = 1;
    int half_nodes = 0;  // 2N+1 stage points
    std::vector<double> tM, tMinv, tBeta, tGammaEff, tGammaRaw, tEtaEff, tEtaRaw, tLam, tB, tL,
        tS, tTheta, tPhi, tPsi, tPhi2, tMTheta, tBetaBpsi, tBdPhi2, tV2, tV1;
    std::vector<std::vector<MajorantRun>> order_majorant, fill_majorant;

    double stage_time(int j) const {
        const TimeGrid& g = model.grid;
        return (j % 2 == 0) ? g.node(j / 2) : g.node(j / 2) + 0.5 * g.h();
    }
};

namespace detail {

// Per-strategy stage tables, built once and shared read-only across paths.
struct PreparedStrategy;
std::shared_ptr<const PreparedStrategy> prepare_strategy(const SimContext& ctx,
                                                         const StrategyRule& rule);

PathRecord run_one(const SimContext& ctx, const StrategyRule& rule, const Eigen::VectorXd& x0,
                   std::uint64_t seed, int path, bool record_log,
                   const PreparedStrategy* prep = nullptr);

void parallel_for(int count, int workers, const std::function<void(int)>& fn);

CostEstimate run_estimator(const SimContext& ctx, const StrategyRule& rule,
                           const Eigen::VectorXd& x0, int n_paths, std::uint64_t seed,
                           int workers, bool raw, std::vector<double>* spread_rev,
                           std::vector<double>* x2);

}  // namespace detail

}  // namespace mmopt::sim
