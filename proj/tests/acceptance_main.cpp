// Acceptance suite: one pass/fail line per criterion, nonzero exit on any
// failure. Tolerances are pinned in code next to each check.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <sys/wait.h>

#include "mmopt/affine.hpp"
#include "mmopt/expansion.hpp"
#include "mmopt/oracle.hpp"
#include "mmopt/riccati.hpp"
#include "mmopt/simulate.hpp"
#include "support/test_models.hpp"
#include "support/v1_routes.hpp"

namespace fs = std::filesystem;
using namespace mmopt;
using mmtest::ScalarParams;

namespace {

int failures = 0;

struct Timer {
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();
    double seconds() const {
        return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    }
};

void report(int id, const std::string& title, bool pass, const std::string& detail,
            double seconds) {
    std::printf("%s  criterion %2d  %-28s  %s  [%.1f s]\n", pass ? "PASS" : "FAIL", id,
                title.c_str(), detail.c_str(), seconds);
    std::fflush(stdout);
    if (!pass) ++failures;
}

int workers() { return 2; }

ModelSpec config_model(const char* leaf) {
    return build_model(config::Tree::parse_file(std::string(MMOPT_CONFIG_DIR) + "/" + leaf));
}

double ls_slope(const std::vector<double>& xs, const std::vector<double>& ys) {
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    const double n = static_cast<double>(xs.size());
    for (std::size_t i = 0; i < xs.size(); ++i) {
        const double lx = std::log(xs[i]), ly = std::log(ys[i]);
        sx += lx;
        sy += ly;
        sxx += lx * lx;
        sxy += lx * ly;
    }
    return (n * sxy - sx * sy) / (n * sxx - sx * sx);
}

// 1. scalar solve against the separable closed form, 50 random draws
void criterion1() {
    Timer timer;
    std::mt19937_64 rng(101);
    auto u = [&](double lo, double hi) {
        return lo + (hi - lo) * std::uniform_real_distribution<double>(0.0, 1.0)(rng);
    };
    double worst = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        ScalarParams p;
        p.xi_tilde = u(0.3, 4.0);
        p.impact = u(0.3, 3.0);
        p.horizon = u(0.4, 2.0);
        p.gamma_tilde = 0.0;
        p.lambda = 0.0;
        p.beta = 0.0;
        p.flow_mass = 0.0;
        p.spread = 0.0;
        p.repo = 0.0;
        p.price = 0.0;
        const ModelSpec m = mmtest::scalar_model(p);
        const riccati::V2Path v2 = riccati::solve_v2_scalar(m);
        for (int k = 0; k < m.grid.nodes(); ++k)
            worst = std::max(worst,
                             std::fabs(v2.path.node(k)(0, 0) -
                                       oracle::closed_form_riccati(p.xi_tilde, p.impact,
                                                                   p.horizon, m.grid.node(k))));
    }
    const double secs = timer.seconds();
    std::ostringstream os;
    os << "max |V2 - closed form| = " << worst << " (tol 1e-8)";
    report(1, "closed-form agreement", worst <= 1e-8 && secs < 5.0, os.str(), secs);
}

// 2. analytic envelope sandwiches the solution, eps in {1, 0.1}
void criterion2() {
    Timer timer;
    std::mt19937_64 rng(202);
    double worst_slack = 0.0;
    for (int rep = 0; rep < 50; ++rep) {
        ScalarParams p = mmtest::random_scalar_params(rng);
        const ModelSpec m = mmtest::scalar_model(p);
        const riccati::V2Path v2 = riccati::solve_v2_matrix(m);
        for (const double eps : {1.0, 0.1}) {
            const riccati::BoundsPath bp = riccati::v2_bounds_path(m, eps);
            for (int k = 0; k < m.grid.nodes(); ++k) {
                const double v = v2.path.node(k)(0, 0);
                worst_slack = std::max(worst_slack, bp.lower[static_cast<std::size_t>(k)] - v);
                worst_slack = std::max(worst_slack, v - bp.upper[static_cast<std::size_t>(k)]);
            }
        }
    }
    const double secs = timer.seconds();
    std::ostringstream os;
    os << "worst envelope violation = " << worst_slack << " (tol 1e-8)";
    report(2, "bound sandwich", worst_slack <= 1e-8 && secs < 10.0, os.str(), secs);
}

// 3. matrix solve: symmetry/PSD facts plus diagonal decoupling
void criterion3() {
    Timer timer;
    std::mt19937_64 rng(303);
    double worst_sym = 0.0, worst_eig = 0.0, worst_diag = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        const ModelSpec m =
            build_model(config::Tree::parse(mmtest::dense_model_text(rng, 3, 2000)));
        const riccati::V2Path v2 = riccati::solve_v2_matrix(m);
        for (int k = 0; k < m.grid.nodes(); ++k) {
            const Eigen::MatrixXd& v = v2.path.node(k);
            worst_sym = std::max(worst_sym, (v - v.transpose()).cwiseAbs().maxCoeff());
            Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(v);
            worst_eig = std::max(worst_eig, -es.eigenvalues().minCoeff());
        }
    }
    for (int rep = 0; rep < 5; ++rep) {
        std::vector<ScalarParams> parts;
        const ModelSpec m = build_model(
            config::Tree::parse(mmtest::diagonal_model_text(rng, 3, &parts, 2000)));
        const riccati::V2Path v2 = riccati::solve_v2_matrix(m);
        for (int i = 0; i < 3; ++i) {
            const riccati::V2Path si =
                riccati::solve_v2_scalar(mmtest::scalar_model(parts[static_cast<std::size_t>(i)]));
            for (int k = 0; k < m.grid.nodes(); k += 5)
                worst_diag = std::max(
                    worst_diag, std::fabs(v2.path.node(k)(i, i) - si.path.node(k)(0, 0)));
        }
    }
    std::ostringstream os;
    os << "sym " << worst_sym << " (1e-10), eig " << worst_eig << " (1e-8), diag "
       << worst_diag << " (1e-8)";
    report(3, "matrix PSD/symmetry", worst_sym <= 1e-10 && worst_eig <= 1e-8 &&
                                         worst_diag <= 1e-8,
           os.str(), timer.seconds());
}

// 4. three independent V1 routes agree to 1e-6 relative
void criterion4() {
    Timer timer;
    std::mt19937_64 rng(404);
    double worst = 0.0;
    for (int rep = 0; rep < 20; ++rep) {
        const ScalarParams p = mmtest::random_scalar_params(rng);
        const ModelSpec m = mmtest::scalar_model(p);
        const riccati::V2Path v2 = riccati::solve_v2_matrix(m);
        const affine::AffinePath aff = affine::solve_affine(m, v2);
        const auto ode = mmtest::v1_direct_ode(m, v2);
        const auto kern = mmtest::v1_exponential_kernel(m, v2);
        double sup = 0.0, d1 = 0.0, d2 = 0.0, d3 = 0.0;
        for (int k = 0; k < m.grid.nodes(); ++k) {
            const double a = aff.v1.node(k)[0];
            const double b = ode[static_cast<std::size_t>(k)][0];
            const double c = kern[static_cast<std::size_t>(k)];
            sup = std::max({sup, std::fabs(a), std::fabs(b), std::fabs(c)});
            d1 = std::max(d1, std::fabs(a - b));
            d2 = std::max(d2, std::fabs(a - c));
            d3 = std::max(d3, std::fabs(b - c));
        }
        worst = std::max(worst, std::max({d1, d2, d3}) / std::max(sup, 1e-9));
    }
    std::ostringstream os;
    os << "max pairwise relative gap = " << worst << " (tol 1e-6)";
    report(4, "V1 triple agreement", worst <= 1e-6, os.str(), timer.seconds());
}

// 5. anchored expansion error against the reference PDE solve
void criterion5() {
    Timer timer;
    const ModelSpec m = config_model("factor1d.cfg");
    const expansion::ExpansionSolution sol = expansion::solve_expansion(m, 0, m.factor.x0);
    const std::vector<double> epss{0.4, 0.2, 0.1, 0.05};
    std::vector<double> e0, e2;
    oracle::PdeOptions popt;
    popt.levels = 3;
    for (const double eps : epss) {
        const oracle::PdeGridSolution pde = oracle::solve_pde_1d(m, eps, popt);
        const double ref = pde.v00_extrapolated;
        e0.push_back(std::max(std::fabs(expansion::approx_value(sol, 0, eps) - ref) -
                                  pde.grid_error,
                              1e-12));
        e2.push_back(std::max(std::fabs(expansion::approx_value(sol, 2, eps) - ref) -
                                  pde.grid_error,
                              1e-12));
    }
    const double s0 = ls_slope(epss, e0);
    const double s2 = ls_slope(epss, e2);
    const double secs = timer.seconds();
    std::ostringstream os;
    os << "slope order-0 = " << s0 << " (>= 0.8), order-2 = " << s2 << " (>= 2.7)";
    report(5, "expansion convergence", s0 >= 0.8 && s2 >= 2.7 && secs < 120.0, os.str(), secs);
}

// 6. optimality at desk scale with common random numbers
void criterion6() {
    Timer timer;
    const ModelSpec m = config_model("good.cfg");
    const sim::SimContextPtr ctx = sim::make_context(m);
    const double value0 = affine::value_function(sim::context_v2(*ctx),
                                                 sim::context_affine(*ctx), 0.0, m.position0);
    const int n_paths = 100000;
    const std::uint64_t seed = 2025;
    const sim::CostEstimate opt = sim::estimate_cost(*ctx, sim::StrategyRule::optimal(),
                                                     m.position0, n_paths, seed, workers());
    bool pass = std::fabs(opt.total.mean - value0) <= 3.0 * opt.total.se;
    std::ostringstream os;
    os << "optimal " << opt.total.mean << " vs value " << value0 << " (|z| = "
       << std::fabs(opt.total.mean - value0) / opt.total.se << ")";

    using SR = sim::StrategyRule;
    const Eigen::VectorXd up = Eigen::VectorXd::Constant(1, 0.1);
    const Eigen::VectorXd dn = Eigen::VectorXd::Constant(1, -0.1);
    const std::vector<std::pair<std::string, SR>> battery = {
        {"pi+0.1", SR::perturbed(SR::Target::Pi, up, 1.0)},
        {"pi-0.1", SR::perturbed(SR::Target::Pi, dn, 1.0)},
        {"delta+0.1", SR::perturbed(SR::Target::Delta, up, 1.0)},
        {"delta-0.1", SR::perturbed(SR::Target::Delta, dn, 1.0)},
        {"scale1.2", SR::perturbed(SR::Target::Both, Eigen::VectorXd::Zero(1), 1.2)},
        {"scale0.8", SR::perturbed(SR::Target::Both, Eigen::VectorXd::Zero(1), 0.8)},
    };
    double min_z = 1e300;
    for (const auto& [name, rule] : battery) {
        const sim::CostEstimate pert =
            sim::estimate_cost(*ctx, rule, m.position0, n_paths, seed, workers());
        std::vector<double> diff(pert.per_path.size());
        for (std::size_t i = 0; i < diff.size(); ++i)
            diff[i] = pert.per_path[i] - opt.per_path[i];
        const MeanSe ms = mean_se(diff);
        min_z = std::min(min_z, ms.mean / ms.se);
    }
    pass = pass && min_z >= 3.0;
    os << ", weakest perturbation z = " << min_z << " (>= 3)";
    const double secs = timer.seconds();
    report(6, "optimality", pass && secs < 180.0, os.str(), secs);
}

// 7. raw objective equals the shifted objective plus beta x^2 / 2
void criterion7() {
    Timer timer;
    const ModelSpec m = config_model("good.cfg");
    const sim::SimContextPtr ctx = sim::make_context(m);
    const double shift_term = 0.5 * m.position0.dot(m.beta_at(0.0) * m.position0);
    const int n_paths = 50000;
    double worst_z = 0.0;
    for (const auto& rule : {sim::StrategyRule::optimal(), sim::StrategyRule::zero(1)}) {
        const sim::CostEstimate j =
            sim::estimate_cost(*ctx, rule, m.position0, n_paths, 31, workers());
        const sim::CostEstimate r =
            sim::estimate_raw_cost(*ctx, rule, m.position0, n_paths, 31, workers());
        std::vector<double> d(j.per_path.size());
        for (std::size_t i = 0; i < d.size(); ++i)
            d[i] = r.per_path[i] - j.per_path[i] - shift_term;
        const MeanSe ms = mean_se(d);
        worst_z = std::max(worst_z, std::fabs(ms.mean) / ms.se);
    }
    std::ostringstream os;
    os << "worst |z| of raw - (J + beta x^2/2) = " << worst_z << " (<= 3)";
    report(7, "cost equivalence", worst_z <= 3.0, os.str(), timer.seconds());
}

// 8. optimality-principle process: flat for the optimum, upward drift for zero
void criterion8() {
    Timer timer;
    const ModelSpec m = config_model("good.cfg");
    const sim::SimContextPtr ctx = sim::make_context(m);
    const int n_paths = 50000;
    const sim::MartingaleReport opt = sim::martingale_diagnostics(
        *ctx, sim::StrategyRule::optimal(), m.position0, n_paths, 41, workers());
    const sim::MartingaleReport zero = sim::martingale_diagnostics(
        *ctx, sim::StrategyRule::zero(1), m.position0, n_paths, 41, workers());
    const double z_opt = std::fabs(opt.overall.mean) / opt.overall.se;
    const double z_zero = zero.overall.mean / zero.overall.se;
    const bool pass = z_opt <= 3.0 && z_zero >= 3.0;
    std::ostringstream os;
    os << "optimal |z| = " << z_opt << " (<= 3), zero-drift z = " << z_zero << " (>= 3)";
    report(8, "martingale diagnostics", pass, os.str(), timer.seconds());
}

// 9. terminal-penalty sweep: strict decay and the fitted-ratio bound
void criterion9() {
    Timer timer;
    const ModelSpec m = config_model("liquidation-sweep.cfg");
    const std::vector<double> ls{10.0, 40.0, 160.0, 640.0};
    const sim::PenaltySweepResult res = sim::penalty_sweep(m, ls, 20000, 53, workers());
    bool decreasing = true;
    double min_z = 1e300;
    for (std::size_t i = 0; i + 1 < res.rows.size(); ++i) {
        std::vector<double> d(res.per_path_x2[i].size());
        for (std::size_t p = 0; p < d.size(); ++p)
            d[p] = res.per_path_x2[i][p] - res.per_path_x2[i + 1][p];
        const MeanSe ms = mean_se(d);
        min_z = std::min(min_z, ms.mean / ms.se);
        decreasing = decreasing && (ms.mean >= 3.0 * ms.se);
    }
    bool bound_ok = res.assumption_c_ok;
    for (std::size_t i = 1; i < res.rows.size(); ++i)
        bound_ok = bound_ok &&
                   res.rows[i].ex2_mean <= res.rows[i].bound + 3.0 * res.rows[i].ex2_se;
    const double secs = timer.seconds();
    std::ostringstream os;
    os << "weakest adjacent-decrease z = " << min_z << " (>= 3), slope " << res.fitted_slope
       << ", 2c~ = " << res.two_c_tilde << ", bound " << (bound_ok ? "held" : "violated");
    report(9, "penalty sweep", decreasing && bound_ok && secs < 300.0, os.str(), secs);
}

// 10. byte-identical CSVs for repeated stochastic runs
void criterion10() {
    Timer timer;
    const std::string cli = MMOPT_CLI_PATH;
    const fs::path root = fs::temp_directory_path() / "mmopt-acceptance";
    fs::remove_all(root);
    fs::create_directories(root);
    auto slurp = [](const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::stringstream ss;
        ss << in.rdbuf();
        return ss.str();
    };
    auto run_dir = [](const fs::path& out) -> fs::path {
        for (const auto& e : fs::directory_iterator(out))
            if (e.is_directory()) return e.path();
        return {};
    };
    bool pass = true;
    std::string detail;
    const std::vector<std::pair<std::string, std::string>> cases = {
        {"experiment penalty-sweep --config " + std::string(MMOPT_CONFIG_DIR) +
             "/liquidation-sweep.cfg --seed 7 --paths 1000 --grid-steps 600 --penalties 10,40",
         "penalty-sweep.csv"},
        {"simulate --config " + std::string(MMOPT_CONFIG_DIR) +
             "/good.cfg --seed 9 --paths 500 --grid-steps 600",
         "estimate.csv"},
    };
    int idx = 0;
    for (const auto& [args, leaf] : cases) {
        const fs::path o1 = root / ("a" + std::to_string(idx));
        const fs::path o2 = root / ("b" + std::to_string(idx));
        fs::create_directories(o1);
        fs::create_directories(o2);
        const std::string c1 =
            cli + " " + args + " --workers 2 --out " + o1.string() + " >/dev/null 2>&1";
        const std::string c2 =
            cli + " " + args + " --workers 1 --out " + o2.string() + " >/dev/null 2>&1";
        if (std::system(c1.c_str()) != 0 || std::system(c2.c_str()) != 0) {
            pass = false;
            detail += leaf + ": run failed; ";
            ++idx;
            continue;
        }
        const std::string a = slurp(run_dir(o1) / leaf);
        const std::string b = slurp(run_dir(o2) / leaf);
        if (a.empty() || a != b) {
            pass = false;
            detail += leaf + ": outputs differ; ";
        } else {
            detail += leaf + ": identical; ";
        }
        ++idx;
    }
    report(10, "determinism", pass, detail, timer.seconds());
}

}  // namespace

int main() {
    criterion1();
    criterion2();
    criterion3();
    criterion4();
    criterion5();
    criterion6();
    criterion7();
    criterion8();
    criterion9();
    criterion10();
    if (failures) std::printf("%d criterion(s) failed\n", failures);
    else std::printf("all criteria passed\n");
    return failures;
}
