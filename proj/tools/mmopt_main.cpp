// Command-line front end: wires configuration files to the solvers and the
// simulation experiments, writing CSV reports plus a run manifest.

#include <chrono>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "mmopt/affine.hpp"
#include "mmopt/csv.hpp"
#include "mmopt/expansion.hpp"
#include "mmopt/manifest.hpp"
#include "mmopt/model.hpp"
#include "mmopt/oracle.hpp"
#include "mmopt/riccati.hpp"
#include "mmopt/simulate.hpp"

namespace fs = std::filesystem;
using namespace mmopt;

namespace {

struct CommonOpts {
    std::string config_path;
    std::uint64_t seed = 0;
    bool seed_set = false;
    int paths = 10000;
    int grid_steps = 0;  // 0 = keep config value
    int workers = 0;     // 0 = auto
    std::string out_dir;
};

int auto_workers(int requested) {
    if (requested > 0) return requested;
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::min<unsigned>(hw ? hw : 1, 8));
}

std::string default_out_root() {
    if (const char* env = std::getenv("MMOPT_OUT_ROOT")) return env;
    return "runs";
}

std::string hash_hex(std::uint64_t h) {
    char buf[20];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

struct RunScope {
    RunManifest manifest;
    fs::path dir;
    std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

    RunScope(const std::string& name, const CommonOpts& o, const config::Tree& cfg) {
        manifest.subcommand = name;
        manifest.config_path = o.config_path;
        manifest.config_hash = hash_hex(cfg.hash());
        manifest.seed = o.seed;
        manifest.paths = o.paths;
        manifest.workers = auto_workers(o.workers);
        const std::string root = o.out_dir.empty() ? default_out_root() : o.out_dir;
        std::ostringstream leaf;
        leaf << name << "-" << manifest.config_hash.substr(0, 8) << "-s" << o.seed;
        dir = fs::path(root) / leaf.str();
        fs::create_directories(dir);
    }

    std::string file(const std::string& leafname) {
        manifest.outputs.push_back(leafname);
        return (dir / leafname).string();
    }

    void finish() {
        manifest.duration_seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        manifest.write((dir / "manifest.json").string());
        std::cout << "outputs written to " << dir.string() << "\n";
    }
};

config::Tree load_config(CommonOpts& o) {
    config::Tree cfg = config::Tree::parse_file(o.config_path);
    if (o.grid_steps > 0)
        cfg.set("model", "grid_steps", std::to_string(o.grid_steps));
    return cfg;
}

std::vector<double> parse_list(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stod(tok));
    return out;
}

std::vector<std::string> v2_header(int n, bool bounds) {
    std::vector<std::string> h{"t"};
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            h.push_back("V2_" + std::to_string(i + 1) + std::to_string(j + 1));
    if (bounds) {
        h.push_back("lower_bound");
        h.push_back("upper_bound");
    }
    return h;
}

int cmd_validate(CommonOpts& o, bool check_c) {
    config::Tree cfg = load_config(o);
    const ModelSpec m = build_model_unchecked(cfg);
    const ValidationReport rep = validate_model(m, check_c);
    std::cout << rep.to_string();
    RunScope run("validate", o, cfg);
    csv::Writer w(run.file("report.csv"), {"assumption", "pass", "detail"});
    for (const auto& c : rep.checks)
        w.row({"\"" + c.id + "\"", c.pass ? "1" : "0", "\"" + c.detail + "\""});
    run.finish();
    return rep.ok() ? 0 : 2;
}

int cmd_solve_v2(CommonOpts& o, double eps) {
    config::Tree cfg = load_config(o);
    const ModelSpec m = build_model(cfg);
    const riccati::V2Path v2 = riccati::solve_v2_matrix(m);
    RunScope run("solve-v2", o, cfg);
    run.manifest.grid_steps = m.grid.steps();
    run.manifest.flags["eps"] = csv::format(eps);
    const bool bounds = (m.n == 1);
    riccati::BoundsPath bp;
    if (bounds) bp = riccati::v2_bounds_path(m, eps);
    csv::Writer w(run.file("v2.csv"), v2_header(m.n, bounds));
    for (int k = 0; k < m.grid.nodes(); ++k) {
        std::vector<double> vals{m.grid.node(k)};
        const Eigen::MatrixXd& v = v2.path.node(k);
        for (int i = 0; i < m.n; ++i)
            for (int j = 0; j < m.n; ++j) vals.push_back(v(i, j));
        if (bounds) {
            vals.push_back(bp.lower[static_cast<std::size_t>(k)]);
            vals.push_back(bp.upper[static_cast<std::size_t>(k)]);
        }
        w.row({}, vals);
    }
    run.finish();
    return 0;
}

int cmd_solve_affine(CommonOpts& o) {
    config::Tree cfg = load_config(o);
    const ModelSpec m = build_model(cfg);
    const riccati::V2Path v2 = riccati::solve_v2_matrix(m);
    const affine::AffinePath aff = affine::solve_affine(m, v2);
    RunScope run("solve-affine", o, cfg);
    run.manifest.grid_steps = m.grid.steps();
    std::vector<std::string> h{"t"};
    for (int i = 0; i < m.n; ++i) h.push_back("V1_" + std::to_string(i + 1));
    h.push_back("V0");
    for (int i = 0; i < m.n; ++i)
        for (int j = 0; j < m.n; ++j)
            h.push_back("F_" + std::to_string(i + 1) + std::to_string(j + 1));
    csv::Writer w(run.file("affine.csv"), h);
    for (int k = 0; k < m.grid.nodes(); ++k) {
        std::vector<double> vals{m.grid.node(k)};
        for (int i = 0; i < m.n; ++i) vals.push_back(aff.v1.node(k)[i]);
        vals.push_back(aff.v0.node(k));
        const Eigen::MatrixXd& f = aff.f.node(k);
        for (int i = 0; i < m.n; ++i)
            for (int j = 0; j < m.n; ++j) vals.push_back(f(i, j));
        w.row({}, vals);
    }
    if (!aff.v0_exact)
        std::cerr << "note: stochastic price, V0 uses the mean curve (approximate)\n";
    run.finish();
    return 0;
}

int cmd_expand(CommonOpts& o, const std::string& eps_list) {
    config::Tree cfg = load_config(o);
    const ModelSpec m = build_model(cfg);
    const int d = m.factor.dim;
    const expansion::ExpansionSolution sol = expansion::solve_expansion(m, 0, m.factor.x0);
    RunScope run("expand", o, cfg);
    run.manifest.grid_steps = m.grid.steps();
    run.manifest.flags["eps_list"] = eps_list;

    std::vector<std::string> h{"t"};
    for (int i = 0; i < d; ++i) h.push_back("X0_" + std::to_string(i + 1));
    h.push_back("V0th");
    for (int i = 0; i < d; ++i) h.push_back("y_" + std::to_string(i + 1));
    for (int i = 0; i < d; ++i) h.push_back("y2_" + std::to_string(i + 1));
    for (int i = 0; i < d; ++i)
        for (int j = 0; j < d; ++j)
            h.push_back("y1_" + std::to_string(i + 1) + std::to_string(j + 1));
    h.push_back("y0");
    csv::Writer w(run.file("expansion.csv"), h);
    for (int k = 0; k < sol.grid.nodes(); ++k) {
        std::vector<double> vals{sol.grid.node(k)};
        for (int i = 0; i < d; ++i) vals.push_back(sol.x0.node(k)[i]);
        vals.push_back(sol.v0th.node(k));
        for (int i = 0; i < d; ++i) vals.push_back(sol.y.node(k)[i]);
        for (int i = 0; i < d; ++i) vals.push_back(sol.y2.node(k)[i]);
        const Eigen::MatrixXd& y1 = sol.y1.node(k);
        for (int i = 0; i < d; ++i)
            for (int j = 0; j < d; ++j) vals.push_back(y1(i, j));
        vals.push_back(sol.y0.node(k));
        w.row({}, vals);
    }

    // anchored convergence study against the finite-difference reference
    const std::vector<double> epss = parse_list(eps_list);
    std::vector<double> e0(epss.size()), e2(epss.size()), e0a(epss.size()), e2a(epss.size());
    oracle::PdeOptions popt;
    popt.levels = 3;
    for (std::size_t i = 0; i < epss.size(); ++i) {
        const oracle::PdeGridSolution pde = oracle::solve_pde_1d(m, epss[i], popt);
        const double ref = pde.v00_extrapolated;
        e0[i] = std::fabs(expansion::approx_value(sol, 0, epss[i]) - ref);
        e2[i] = std::fabs(expansion::approx_value(sol, 2, epss[i]) - ref);
        e0a[i] = std::max(e0[i] - pde.grid_error, 1e-12);
        e2a[i] = std::max(e2[i] - pde.grid_error, 1e-12);
    }
    auto slope = [&](const std::vector<double>& err) {
        double sx = 0, sy = 0, sxx = 0, sxy = 0;
        for (std::size_t i = 0; i < epss.size(); ++i) {
            const double lx = std::log(epss[i]), ly = std::log(err[i]);
            sx += lx;
            sy += ly;
            sxx += lx * lx;
            sxy += lx * ly;
        }
        const double nn = static_cast<double>(epss.size());
        return (nn * sxy - sx * sy) / (nn * sxx - sx * sx);
    };
    const double s0 = slope(e0a), s2 = slope(e2a);
    csv::Writer cw(run.file("convergence.csv"),
                   {"epsilon", "error_order0", "error_order2", "error_order0_adj",
                    "error_order2_adj", "slope0", "slope2"});
    for (std::size_t i = 0; i < epss.size(); ++i)
        cw.row({}, {epss[i], e0[i], e2[i], e0a[i], e2a[i], s0, s2});
    run.finish();
    return 0;
}

int cmd_oracle(CommonOpts& o, double epsilon, int nx, int nt) {
    config::Tree cfg = load_config(o);
    const ModelSpec m = build_model(cfg);
    oracle::PdeOptions opt;
    if (nx > 0) opt.nx = nx;
    if (nt > 0) opt.nt = nt;
    const oracle::PdeGridSolution sol = oracle::solve_pde_1d(m, epsilon, opt);
    RunScope run("oracle", o, cfg);
    run.manifest.flags["epsilon"] = csv::format(epsilon);
    csv::Writer w(run.file("pde.csv"), {"t", "x", "v"});
    for (std::size_t s = 0; s < sol.tgrid.size(); ++s)
        for (std::size_t i = 0; i < sol.xgrid.size(); ++i)
            w.row({}, {sol.tgrid[s], sol.xgrid[i], sol.v[s][i]});
    csv::Writer sw(run.file("summary.csv"),
                   {"v00", "v00_fine", "v00_extrapolated", "grid_error", "min_value",
                    "boundary_warning"});
    sw.row({}, {sol.v00, sol.v00_fine, sol.v00_extrapolated, sol.grid_error, sol.min_value,
                sol.boundary_warning ? 1.0 : 0.0});
    if (sol.boundary_warning)
        std::cerr << "warning: anchor state is within 10% of the truncation boundary\n";
    run.finish();
    return 0;
}

sim::StrategyRule parse_strategy(const std::string& name, int n) {
    if (name == "optimal") return sim::StrategyRule::optimal();
    if (name == "zero") return sim::StrategyRule::zero(n);
    if (name == "expansion") return sim::StrategyRule::expansion_optimal();
    throw ConfigError("unknown strategy '" + name + "' (optimal|zero|expansion)");
}

int cmd_simulate(CommonOpts& o, const std::string& strategy, int dump_events) {
    config::Tree cfg = load_config(o);
    const ModelSpec m = build_model(cfg);
    const sim::StrategyRule rule = parse_strategy(strategy, m.n);
    const sim::SimContextPtr ctx = (rule.kind == sim::StrategyRule::Kind::ExpansionOptimal)
                                       ? sim::make_expansion_context(m)
                                       : sim::make_context(m);
    RunScope run("simulate", o, cfg);
    run.manifest.grid_steps = m.grid.steps();
    run.manifest.flags["strategy"] = strategy;
    const int workers = auto_workers(o.workers);

    const sim::CostEstimate j = sim::estimate_cost(*ctx, rule, m.position0, o.paths, o.seed,
                                                   workers);
    const sim::CostEstimate r = sim::estimate_raw_cost(*ctx, rule, m.position0, o.paths, o.seed,
                                                       workers);
    csv::Writer w(run.file("estimate.csv"), {"objective", "term", "value"});
    w.row({"\"j-form\"", "\"mean\""}, {j.total.mean});
    w.row({"\"j-form\"", "\"std_error\""}, {j.total.se});
    for (const auto& [k, v] : j.breakdown) w.row({"\"j-form\"", "\"" + k + "\""}, {v});
    w.row({"\"raw\"", "\"mean\""}, {r.total.mean});
    w.row({"\"raw\"", "\"std_error\""}, {r.total.se});
    for (const auto& [k, v] : r.breakdown) w.row({"\"raw\"", "\"" + k + "\""}, {v});

    for (int p = 0; p < dump_events && p < o.paths; ++p) {
        const sim::PathRecord rec =
            sim::simulate_path(*ctx, rule, m.position0, o.seed, p, true);
        csv::Writer ew(run.file("events-" + std::to_string(p) + ".csv"),
                       {"t", "type", "security", "size"});
        for (const auto& e : rec.events)
            ew.row({csv::format(e.t),
                    e.type == sim::Event::Type::Order ? "\"order\"" : "\"fill\"",
                    std::to_string(e.security + 1), csv::format(e.mark)});
    }
    run.finish();
    return 0;
}

std::vector<std::pair<std::string, sim::StrategyRule>> optimality_battery(int n) {
    using SR = sim::StrategyRule;
    const Eigen::VectorXd up = Eigen::VectorXd::Constant(n, 0.1);
    const Eigen::VectorXd dn = Eigen::VectorXd::Constant(n, -0.1);
    std::vector<std::pair<std::string, SR>> out;
    out.emplace_back("optimal", SR::optimal());
    out.emplace_back("pi+0.1", SR::perturbed(SR::Target::Pi, up, 1.0));
    out.emplace_back("pi-0.1", SR::perturbed(SR::Target::Pi, dn, 1.0));
    out.emplace_back("delta+0.1", SR::perturbed(SR::Target::Delta, up, 1.0));
    out.emplace_back("delta-0.1", SR::perturbed(SR::Target::Delta, dn, 1.0));
    out.emplace_back("scale1.2", SR::perturbed(SR::Target::Both, Eigen::VectorXd::Zero(n), 1.2));
    out.emplace_back("scale0.8", SR::perturbed(SR::Target::Both, Eigen::VectorXd::Zero(n), 0.8));
    return out;
}

int cmd_experiment(CommonOpts& o, const std::string& which, const std::string& penalties,
                   const std::string& spreads) {
    config::Tree cfg = load_config(o);
    const ModelSpec m = build_model(cfg);
    const int workers = auto_workers(o.workers);
    RunScope run("experiment-" + which, o, cfg);
    run.manifest.grid_steps = m.grid.steps();

    if (which == "optimality") {
        const sim::SimContextPtr ctx = sim::make_context(m);
        const double value0 = affine::value_function(sim::context_v2(*ctx),
                                                     sim::context_affine(*ctx), 0.0, m.position0);
        const auto battery = optimality_battery(m.n);
        std::vector<sim::CostEstimate> est;
        for (const auto& [name, rule] : battery)
            est.push_back(sim::estimate_cost(*ctx, rule, m.position0, o.paths, o.seed, workers));
        csv::Writer w(run.file("optimality.csv"),
                      {"strategy", "mean", "std_error", "diff_vs_optimal", "paired_se",
                       "value_function_0"});
        for (std::size_t i = 0; i < battery.size(); ++i) {
            double dmean = 0.0, dse = 0.0;
            if (i > 0) {
                std::vector<double> diff(est[i].per_path.size());
                for (std::size_t p = 0; p < diff.size(); ++p)
                    diff[p] = est[i].per_path[p] - est[0].per_path[p];
                const MeanSe ms = mean_se(diff);
                dmean = ms.mean;
                dse = ms.se;
            }
            w.row({"\"" + battery[i].first + "\""},
                  {est[i].total.mean, est[i].total.se, dmean, dse, value0});
        }
        run.finish();
        return 0;
    }
    if (which == "equivalence") {
        const sim::SimContextPtr ctx = sim::make_context(m);
        const double shift_term =
            0.5 * m.position0.dot(m.beta_at(0.0) * m.position0);
        csv::Writer w(run.file("equivalence.csv"),
                      {"strategy", "raw_mean", "j_mean", "shift_term", "diff_mean", "diff_se"});
        for (const std::string name : {"optimal", "zero"}) {
            const sim::StrategyRule rule = parse_strategy(name, m.n);
            const sim::CostEstimate j =
                sim::estimate_cost(*ctx, rule, m.position0, o.paths, o.seed, workers);
            const sim::CostEstimate r =
                sim::estimate_raw_cost(*ctx, rule, m.position0, o.paths, o.seed, workers);
            std::vector<double> diff(j.per_path.size());
            for (std::size_t p = 0; p < diff.size(); ++p)
                diff[p] = r.per_path[p] - j.per_path[p] - shift_term;
            const MeanSe ms = mean_se(diff);
            w.row({"\"" + name + "\""},
                  {r.total.mean, j.total.mean, shift_term, ms.mean, ms.se});
        }
        run.finish();
        return 0;
    }
    if (which == "penalty-sweep") {
        const auto ls = parse_list(penalties);
        const sim::PenaltySweepResult res = sim::penalty_sweep(m, ls, o.paths, o.seed, workers);
        if (!res.assumption_c_ok)
            std::cerr << "warning: Assumption C constants violated; theoretical bound not "
                         "guaranteed\n";
        csv::Writer w(run.file("penalty-sweep.csv"),
                      {"penalty", "ex2_mean", "ex2_se", "ratio", "bound", "fitted_slope",
                       "two_c_tilde"});
        for (const auto& row : res.rows)
            w.row({}, {row.penalty, row.ex2_mean, row.ex2_se, row.ratio, row.bound,
                       res.fitted_slope, res.two_c_tilde});
        run.finish();
        return 0;
    }
    if (which == "spread-sweep") {
        const auto as = parse_list(spreads);
        const auto rows = sim::spread_sweep(m, as, o.paths, o.seed, workers);
        csv::Writer w(run.file("spread-sweep.csv"),
                      {"a_hat", "cost_mean", "cost_se", "spread_revenue_mean", "rev_q05",
                       "rev_q25", "rev_q50", "rev_q75", "rev_q95"});
        for (const auto& r : rows)
            w.row({}, {r.a_hat, r.cost_mean, r.cost_se, r.spread_revenue_mean, r.q05, r.q25,
                       r.q50, r.q75, r.q95});
        run.finish();
        return 0;
    }
    if (which == "martingale") {
        const sim::SimContextPtr ctx = sim::make_context(m);
        csv::Writer w(run.file("martingale.csv"),
                      {"strategy", "bucket_start", "mean_increment", "std_error"});
        for (const std::string name : {"optimal", "zero"}) {
            const sim::StrategyRule rule = parse_strategy(name, m.n);
            const sim::MartingaleReport rep = sim::martingale_diagnostics(
                *ctx, rule, m.position0, o.paths, o.seed, workers);
            for (std::size_t k = 0; k < rep.bucket_mean.size(); ++k)
                w.row({"\"" + name + "\""},
                      {rep.bucket_start[k], rep.bucket_mean[k], rep.bucket_se[k]});
            w.row({"\"" + name + "-overall\""}, {0.0, rep.overall.mean, rep.overall.se});
        }
        run.finish();
        return 0;
    }
    throw ConfigError("unknown experiment '" + which + "'");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"market-maker position management: solvers, simulation, experiments"};
    app.require_subcommand(1);

    CommonOpts o;
    auto add_common = [&](CLI::App* sub, bool needs_seed) {
        sub->add_option("--config", o.config_path, "model configuration file")->required();
        auto* seed_opt = sub->add_option("--seed", o.seed, "master RNG seed");
        if (needs_seed) seed_opt->required();
        sub->add_option("--paths", o.paths, "Monte Carlo paths");
        sub->add_option("--grid-steps", o.grid_steps, "override the shared time grid");
        sub->add_option("--workers", o.workers, "worker threads (0 = auto)");
        sub->add_option("--out", o.out_dir, "output root (default $MMOPT_OUT_ROOT or ./runs)");
    };

    auto* validate = app.add_subcommand("validate", "check the standing model assumptions");
    bool check_c = false;
    add_common(validate, false);
    validate->add_flag("--check-c", check_c, "also check the penalty-sweep constants");

    auto* solvev2 = app.add_subcommand("solve-v2", "solve the terminal-penalty equation");
    double eps = 1.0;
    add_common(solvev2, false);
    solvev2->add_option("--eps", eps, "envelope parameter for the bound columns");

    auto* solveaff = app.add_subcommand("solve-affine", "solve the linear/constant coefficients");
    add_common(solveaff, false);

    auto* expand = app.add_subcommand("expand", "small-noise expansion + convergence study");
    std::string eps_list = "0.4,0.2,0.1,0.05";
    add_common(expand, false);
    expand->add_option("--eps-list", eps_list, "comma-separated diffusion scales");

    auto* oraclecmd = app.add_subcommand("oracle", "finite-difference reference solve");
    double oeps = 1.0;
    int onx = 0, ont = 0;
    add_common(oraclecmd, false);
    oraclecmd->add_option("--epsilon", oeps, "diffusion scale")->required();
    oraclecmd->add_option("--nx", onx, "space nodes");
    oraclecmd->add_option("--nt", ont, "time steps");

    auto* simulate = app.add_subcommand("simulate", "Monte Carlo cost estimate");
    std::string strategy = "optimal";
    int dump_events = 0;
    add_common(simulate, true);
    simulate->add_option("--strategy", strategy, "optimal|zero|expansion");
    simulate->add_option("--dump-events", dump_events, "write event logs for the first K paths");

    auto* experiment = app.add_subcommand("experiment", "verification experiments");
    std::string which;
    std::string penalties = "10,40,160,640";
    std::string spreads = "0.0,0.25,0.5,1.0";
    add_common(experiment, true);
    experiment
        ->add_option("which", which,
                     "optimality|equivalence|penalty-sweep|spread-sweep|martingale")
        ->required();
    experiment->add_option("--penalties", penalties, "penalty-sweep levels");
    experiment->add_option("--spreads", spreads, "spread-sweep a-hat values");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 64;
    }

    try {
        if (app.got_subcommand(validate)) return cmd_validate(o, check_c);
        if (app.got_subcommand(solvev2)) return cmd_solve_v2(o, eps);
        if (app.got_subcommand(solveaff)) return cmd_solve_affine(o);
        if (app.got_subcommand(expand)) return cmd_expand(o, eps_list);
        if (app.got_subcommand(oraclecmd)) return cmd_oracle(o, oeps, onx, ont);
        if (app.got_subcommand(simulate)) return cmd_simulate(o, strategy, dump_events);
        if (app.got_subcommand(experiment)) return cmd_experiment(o, which, penalties, spreads);
    } catch (const ValidationError& e) {
        std::cerr << "validation failure: " << e.what() << "\n";
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    }
    return 64;
}
