#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "mmopt/affine.hpp"
#include "mmopt/expansion.hpp"
#include "mmopt/model.hpp"
#include "mmopt/quad.hpp"
#include "mmopt/riccati.hpp"

namespace mmopt::sim {

// Trading rule. The optimal rule is the linear feedback
//   pi  = -M^-1 (V2 X- + V1 + (S + M Theta)/2)
//   del_i = -[V2 X- + V1 + S/2]_i / ([V2]_ii + eta_i)
// and the battery rules are affine transformations of it (all Markovian in X-).
struct StrategyRule {
    enum class Kind { Optimal, Zero, PerturbedOptimal, CustomAffine, ExpansionOptimal };
    enum class Target { Pi, Delta, Both };

    Kind kind = Kind::Optimal;
    Target target = Target::Both;
    Eigen::VectorXd shift;  // added to the targeted leg(s)
    double scale = 1.0;     // multiplies the targeted leg(s)
    // custom affine tables (constant in time): pi = Kpi X + cpi, del = Kdel X + cdel
    Eigen::MatrixXd kpi, kdel;
    Eigen::VectorXd cpi, cdel;

    static StrategyRule optimal();
    static StrategyRule zero(int n);
    static StrategyRule perturbed(Target target, const Eigen::VectorXd& shift, double scale);
    static StrategyRule custom_affine(Eigen::MatrixXd kpi, Eigen::VectorXd cpi,
                                      Eigen::MatrixXd kdel, Eigen::VectorXd cdel);
    static StrategyRule expansion_optimal();
    std::string name() const;
};

struct Event {
    double t = 0.0;
    enum class Type { Order, Fill } type = Type::Order;
    int security = 0;
    double mark = 0.0;  // order size z; fill size is decided by the strategy
};

// One simulated trajectory. Cash-flow accumulators follow the objective's
// decomposition; compensated residuals track int z dN~ and int dH~.
struct PathRecord {
    std::vector<Event> events;
    std::vector<double> node_position;      // flattened n per grid node
    Eigen::VectorXd terminal_position;
    // J-form accumulators
    double j_gamma = 0, j_xflow = 0, j_trade = 0, j_dark = 0, j_const = 0, j_terminal = 0;
    // raw accumulators
    double r_gamma = 0, r_exchange = 0, r_spread = 0, r_dark = 0, r_repo = 0, r_terminal = 0;
    double spread_markup = 0;  // the b-proportional earnings inside the spread term
    Eigen::VectorXd comp_orders;  // per security: sum z - int Phi dt
    Eigen::VectorXd comp_fills;   // per security: #fills - int lambda dt
    std::vector<double> node_running_j;    // running J-integrand per grid node (log mode)
    std::vector<double> drift_increments;  // flattened n per segment (replay support)
    std::vector<int> event_after_segment;  // segment count preceding each event
    std::uint64_t event_hash = 0;

    double j_total() const { return j_terminal + j_gamma + j_xflow + j_trade + j_dark + j_const; }
    double r_total() const {
        return r_terminal + r_gamma + r_exchange + r_spread + r_dark + r_repo;
    }
};

struct CostEstimate {
    MeanSe total;
    int n_paths = 0;
    std::uint64_t seed = 0;
    std::map<std::string, double> breakdown;  // per-term means
    std::vector<double> per_path;             // totals, path-indexed (pairing support)
};

// Solved coefficient paths plus flattened per-half-node tables for the
// deterministic fast path. Immutable; shared read-only across workers.
struct SimContext;
using SimContextPtr = std::shared_ptr<const SimContext>;

SimContextPtr make_context(const ModelSpec& m,
                           const std::optional<double>& xi_override = std::nullopt);
// Context for stochastic-coefficient runs: the rule evaluates V2, V1 through
// the re-anchored order-2 expansion lattice.
SimContextPtr make_expansion_context(const ModelSpec& m,
                                     const expansion::LatticeOptions& opt = {});

const riccati::V2Path& context_v2(const SimContext& ctx);
const affine::AffinePath& context_affine(const SimContext& ctx);
const ModelSpec& context_model(const SimContext& ctx);

// Customer orders and dark-pool execution times by thinning against per-cell
// majorants; marks from the normalized density. Streams are keyed by
// (seed, purpose, security, path) so event streams are strategy-independent.
std::vector<Event> sample_events(const SimContext& ctx, std::uint64_t seed, int path_index);

PathRecord simulate_path(const SimContext& ctx, const StrategyRule& rule,
                         const Eigen::VectorXd& x0, std::uint64_t seed, int path_index,
                         bool record_log = true);

CostEstimate estimate_cost(const SimContext& ctx, const StrategyRule& rule,
                           const Eigen::VectorXd& x0, int n_paths, std::uint64_t seed,
                           int workers = 1);
CostEstimate estimate_raw_cost(const SimContext& ctx, const StrategyRule& rule,
                               const Eigen::VectorXd& x0, int n_paths, std::uint64_t seed,
                               int workers = 1);

// Variation-of-constants reconstruction of the optimal position from the
// event log (single security): decayed initial position, decayed drift
// integral and compensated jump kicks.
std::vector<double> reconstruct_position_closed_form(const SimContext& ctx,
                                                     const PathRecord& rec, double x0);

struct MartingaleReport {
    MeanSe overall;                    // m_T - m_0 per path
    std::vector<double> bucket_mean;   // coarse time buckets
    std::vector<double> bucket_se;
    std::vector<double> bucket_start;
    int n_paths = 0;
};
MartingaleReport martingale_diagnostics(const SimContext& ctx, const StrategyRule& rule,
                                        const Eigen::VectorXd& x0, int n_paths,
                                        std::uint64_t seed, int workers = 1, int buckets = 20);

struct PenaltySweepRow {
    double penalty = 0.0;     // L
    double ex2_mean = 0.0;    // E |X_T|^2
    double ex2_se = 0.0;
    double ratio = 0.0;       // eps_L / (T + eps_L)
    double bound = 0.0;       // fitted C * ratio^(2 c~)
};
struct PenaltySweepResult {
    std::vector<PenaltySweepRow> rows;
    double fitted_slope = 0.0;
    double two_c_tilde = 0.0;
    double fitted_c = 0.0;
    bool assumption_c_ok = false;
    std::vector<std::vector<double>> per_path_x2;  // per L, path-indexed (pairing)
};
PenaltySweepResult penalty_sweep(const ModelSpec& m, const std::vector<double>& penalties,
                                 int n_paths, std::uint64_t seed, int workers = 1);

struct SpreadSweepRow {
    double a_hat = 0.0;
    double cost_mean = 0.0, cost_se = 0.0;
    double spread_revenue_mean = 0.0;
    double q05 = 0, q25 = 0, q50 = 0, q75 = 0, q95 = 0;  // revenue quantiles
};
std::vector<SpreadSweepRow> spread_sweep(const ModelSpec& m, const std::vector<double>& a_hats,
                                         int n_paths, std::uint64_t seed, int workers = 1);

// Per-path spread-revenue values (used by the sweep and its tests).
std::vector<double> per_path_spread_revenue(const SimContext& ctx, const StrategyRule& rule,
                                            const Eigen::VectorXd& x0, int n_paths,
                                            std::uint64_t seed, int workers = 1);

}  // namespace mmopt::sim
