#include "mfbsde/cli.hpp"

#include "mfbsde/config.hpp"
#include "mfbsde/fixpoint.hpp"
#include "mfbsde/lqgame.hpp"

#include "CLI11.hpp"
#include "json.hpp"

#include <omp.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

namespace mfbsde {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

enum Exit { kOk = 0, kConfig = 1, kCondition = 2, kNotConverged = 3, kDeviation = 4 };

struct SolveFlags {
    std::string config;
    std::string out_dir;
    std::size_t particles = 0;
    std::size_t steps = 0;
    std::uint64_t seed = 0;
    double delta = 0.0;
    double tol = 0.0;
    std::size_t max_outer = 0;
    std::size_t inner_sweeps = 0;
    unsigned basis_degree = 0;
    std::vector<CLI::Option*> given;
};

void add_solver_flags(CLI::App& cmd, SolveFlags& f) {
    cmd.add_option("config", f.config, "JSON configuration file")->required();
    cmd.add_option("--out", f.out_dir, "Directory for diagnostics.jsonl, moments.csv, report.json");
    f.given = {
        cmd.add_option("--particles", f.particles, "Number of particles"),
        cmd.add_option("--steps", f.steps, "Number of time steps"),
        cmd.add_option("--seed", f.seed, "Seed of the Brownian bundle"),
        cmd.add_option("--delta", f.delta, "Perturbation delta of the scheme"),
        cmd.add_option("--tol", f.tol, "Stop when the Cauchy gap falls below tol^2"),
        cmd.add_option("--max-outer", f.max_outer, "Maximum number of outer iterations"),
        cmd.add_option("--inner-sweeps", f.inner_sweeps, "Forward/backward sweeps per outer step"),
        cmd.add_option("--basis-degree", f.basis_degree, "Polynomial degree of the regression basis"),
    };
}

// Command-line values take precedence over the configuration file.
void apply_overrides(const SolveFlags& f, SolverSettings& s) {
    if (f.given[0]->count()) s.params.particles = f.particles;
    if (f.given[1]->count()) s.steps = f.steps;
    if (f.given[2]->count()) s.seed = f.seed;
    if (f.given[3]->count()) s.params.delta = f.delta;
    if (f.given[4]->count()) s.params.tol = f.tol;
    if (f.given[5]->count()) s.params.max_outer = f.max_outer;
    if (f.given[6]->count()) s.params.inner_sweeps = f.inner_sweeps;
    if (f.given[7]->count()) s.params.basis.degree = f.basis_degree;
}

ordered_json finite_or_null(double v) {
    return std::isfinite(v) ? ordered_json(v) : ordered_json(nullptr);
}

ordered_json vec_json(const Vec& v) {
    ordered_json a = ordered_json::array();
    for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(finite_or_null(v[i]));
    return a;
}

Vec node_mean(const PathEnsemble& e, std::size_t node) {
    return e.slice(node).colwise().mean().transpose();
}

PathEnsemble stack_xy(const PathEnsemble& x, const PathEnsemble& y) {
    PathEnsemble s(x.particles(), x.nodes(), x.dim() + y.dim());
    for (std::size_t k = 0; k < x.nodes(); ++k) {
        s.slice(k).leftCols(static_cast<Eigen::Index>(x.dim())) = x.slice(k);
        s.slice(k).rightCols(static_cast<Eigen::Index>(y.dim())) = y.slice(k);
    }
    return s;
}

ordered_json diagnostics_summary(const IterationDiagnostics& d) {
    ordered_json j;
    j["status"] = to_string(d.status);
    j["outer_iterations"] = d.history.size();
    j["final_gap"] = d.history.empty() ? ordered_json(nullptr) : finite_or_null(d.history.back().gap());
    j["theory_ratio"] = finite_or_null(d.theory_ratio);
    return j;
}

void write_file(const std::filesystem::path& p, const std::string& text) {
    std::ofstream f(p, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + p.string());
    f << text;
}

void write_outputs(const std::string& dir, const IterationDiagnostics& diag,
                   const MfSolution* sol, const ordered_json& report) {
    if (dir.empty()) return;
    std::filesystem::create_directories(dir);
    std::ostringstream d;
    write_diagnostics_jsonl(d, diag);
    write_file(std::filesystem::path(dir) / "diagnostics.jsonl", d.str());
    if (sol) {
        std::ostringstream m;
        write_moments_csv(m, stack_xy(sol->x, sol->y), *sol->grid);
        write_file(std::filesystem::path(dir) / "moments.csv", m.str());
    }
    write_file(std::filesystem::path(dir) / "report.json", report.dump(2) + "\n");
}

int cmd_check(const std::string& path, std::size_t samples, std::uint64_t seed,
              std::ostream& out) {
    const Config c = load_config(path);
    ordered_json j;
    bool pass = false;
    if (c.is_game()) {
        const H2Report r = check_H2(*c.game, TimeGrid(c.game->horizon, c.solver.steps));
        j["type"] = "game";
        j["h2"] = to_json(r);
        pass = r.pass;
    } else {
        const MfProblem& p = *c.problem;
        const MonotonicityReport mono = check_H1(p, samples, seed);
        const ConditionReport small = check_smallness(p.lipschitz, p.monotonicity);
        j["type"] = "linear";
        j["monotonicity"] = to_json(mono);
        j["smallness"] = to_json(small);
        const SchemeParams& sp = c.solver.params;
        if (sp.delta > 0.0 && p.monotonicity.k > 0.0 && p.monotonicity.k_prime > 0.0) {
            const auto cc = contraction_constants(
                p.lipschitz, p.monotonicity, sp.eps,
                sp.alpha.value_or(canonical_alpha(p.monotonicity.variant)), sp.rho, sp.delta);
            j["contraction"] = {{"lambda", cc.lambda}, {"theta", cc.theta},
                                {"ratio", finite_or_null(cc.ratio())}, {"contracts", cc.contracts()}};
        }
        pass = mono.pass && small.pass;
    }
    j["pass"] = pass;
    out << j.dump(2) << '\n';
    return pass ? kOk : kCondition;
}

int cmd_solve(SolveFlags& f, std::ostream& out) {
    Config c = load_config(f.config);
    apply_overrides(f, c.solver);
    c.solver.params.validate();
    const MfProblem p = c.is_game() ? build_aggregated(*c.game, true) : *c.problem;
    const TimeGrid grid(p.horizon, c.solver.steps);

    ordered_json report;
    try {
        const MfSolution sol = solve(p, grid, c.solver.params, c.solver.seed);
        const Residuals r = residual(p, sol);
        report = diagnostics_summary(sol.diagnostics);
        report["residuals"] = {{"forward", r.forward}, {"backward", r.backward}, {"terminal", r.terminal}};
        report["Y0_mean"] = vec_json(node_mean(sol.y, 0));
        report["XT_mean"] = vec_json(node_mean(sol.x, grid.steps()));
        write_outputs(f.out_dir, sol.diagnostics, &sol, report);
        out << report.dump(2) << '\n';
        return sol.diagnostics.converged() ? kOk : kNotConverged;
    } catch (const Diverged& e) {
        report = diagnostics_summary(e.diagnostics());
        report["message"] = e.what();
        write_outputs(f.out_dir, e.diagnostics(), nullptr, report);
        out << report.dump(2) << '\n';
        return kNotConverged;
    }
}

int cmd_game(SolveFlags& f, std::size_t deviations, double magnitude, double corrupt,
             std::ostream& out) {
    Config c = load_config(f.config);
    if (!c.is_game()) throw ConfigError("field 'type': the game command needs a game config");
    apply_overrides(f, c.solver);
    c.solver.params.validate();
    const GameSpec& gs = *c.game;
    const TimeGrid grid(gs.horizon, c.solver.steps);

    ordered_json report;
    NashResult nash = [&]() -> NashResult {
        try {
            return solve_nash(gs, grid, c.solver.params, c.solver.seed);
        } catch (const Diverged& e) {
            report = diagnostics_summary(e.diagnostics());
            report["message"] = e.what();
            write_outputs(f.out_dir, e.diagnostics(), nullptr, report);
            out << report.dump(2) << '\n';
            throw;
        }
    }();

    report = diagnostics_summary(nash.aggregated.diagnostics);
    ordered_json costs = ordered_json::array();
    for (std::size_t i = 0; i < gs.m(); ++i)
        costs.push_back({{"player", i}, {"J", nash.costs[i].value}, {"stderr", nash.costs[i].std_error}});
    report["costs"] = costs;
    report["aggregation_residual"] = nash.aggregation_residual;
    report["adjoint_passes"] = nash.adjoint_passes;

    if (!nash.converged()) {
        write_outputs(f.out_dir, nash.aggregated.diagnostics, &nash.aggregated, report);
        out << report.dump(2) << '\n';
        return kNotConverged;
    }

    if (corrupt != 0.0)
        for (auto& u : nash.u)
            for (std::size_t k = 0; k < u.nodes(); ++k) u.slice(k).array() += corrupt;

    bool pass = true;
    ordered_json devs = ordered_json::array();
    for (std::size_t i = 0; i < gs.m(); ++i) {
        const DeviationReport d =
            deviation_test(gs, nash, i, deviations, magnitude, c.solver.seed + 1000 + i);
        pass = pass && d.pass;
        devs.push_back(to_json(d));
    }
    report["deviations"] = devs;
    report["deviation_pass"] = pass;
    write_outputs(f.out_dir, nash.aggregated.diagnostics, &nash.aggregated, report);
    out << report.dump(2) << '\n';
    return pass ? kOk : kDeviation;
}

ordered_json mean_report(double T) {
    const auto r = solve_mean_fbode(counterexample_game(T));
    ordered_json j;
    j["T"] = T;
    if (const auto* none = std::get_if<Nonexistence>(&r)) {
        j["status"] = "nonexistence";
        j["det"] = none->det;
        j["cond"] = finite_or_null(none->cond);
        return j;
    }
    const auto& s = std::get<MeanSolution>(r);
    j["status"] = "solution";
    j["det"] = s.det();
    j["cond"] = s.cond();
    j["Y_T"] = vec_json(s.mean_x(T));
    ordered_json u = ordered_json::array();
    for (std::size_t i = 0; i < 2; ++i) u.push_back(vec_json(s.mean_control(i, 0.0)));
    j["controls"] = u;
    return j;
}

double det_at(double T) {
    const auto r = solve_mean_fbode(counterexample_game(T));
    if (const auto* none = std::get_if<Nonexistence>(&r)) return none->det;
    return std::get<MeanSolution>(r).det();
}

int cmd_counterexample(double T, const std::string& sweep, std::ostream& out) {
    if (!sweep.empty()) {
        double a = 0.0, b = 0.0, step = 0.0;
        char c1 = 0, c2 = 0;
        std::istringstream in(sweep);
        if (!(in >> a >> c1 >> b >> c2 >> step) || c1 != ':' || c2 != ':' || !(in >> std::ws).eof())
            throw ConfigError("--T-sweep: expected a:b:step");
        if (!(step > 0.0) || !(b >= a) || a < 0.0)
            throw ConfigError("--T-sweep: need 0 <= a <= b and step > 0");
        const auto n = static_cast<std::size_t>(std::floor((b - a) / step + 1e-9)) + 1;
        out << "T,det\n" << std::setprecision(17);
        for (std::size_t j = 0; j < n; ++j) {
            const double t = a + static_cast<double>(j) * step;
            out << t << ',' << det_at(t) << '\n';
        }
        return kOk;
    }
    if (!(T > 0.0) || !std::isfinite(T)) throw ConfigError("--T: horizon must be positive");
    out << mean_report(T).dump(2) << '\n';
    return kOk;
}

void configure_threads(int threads) {
    if (threads <= 0) {
        if (const char* env = std::getenv("MFBSDE_THREADS")) threads = std::atoi(env);
    }
    if (threads > 0) omp_set_num_threads(threads);
}

} // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Particle solver for coupled mean-field forward-backward SDEs and LQ games"};
    app.name("mfbsde");
    app.require_subcommand(1);
    int threads = 0;
    app.add_option("--threads", threads, "Worker threads (default: MFBSDE_THREADS or all cores)");

    auto* check = app.add_subcommand("check", "Check the structural conditions of a config");
    std::string check_path;
    std::size_t samples = 2000;
    std::uint64_t check_seed = 7;
    check->add_option("config", check_path, "JSON configuration file")->required();
    check->add_option("--samples", samples, "Random probes of the monotonicity condition");
    check->add_option("--seed", check_seed, "Seed of the probes");

    auto* solve_cmd = app.add_subcommand("solve", "Run the fixed-point scheme on a config");
    SolveFlags solve_flags;
    add_solver_flags(*solve_cmd, solve_flags);

    auto* game = app.add_subcommand("game", "Compute a Nash equilibrium and test deviations");
    SolveFlags game_flags;
    add_solver_flags(*game, game_flags);
    std::size_t deviations = 20;
    double magnitude = 0.1;
    double corrupt = 0.0;
    game->add_option("--deviations", deviations, "Perturbations per player");
    game->add_option("--magnitude", magnitude, "Size of each perturbation");
    game->add_option("--corrupt-control", corrupt,
                     "Shift every equilibrium control before the deviation test (testing aid)");

    auto* counter = app.add_subcommand("counterexample",
                                       "Mean boundary problem of the planar game without equilibrium at T = 1");
    double T = 1.0;
    std::string sweep;
    auto* t_opt = counter->add_option("--T", T, "Horizon");
    counter->add_option("--T-sweep", sweep, "a:b:step; prints T,det as CSV")->excludes(t_opt);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kConfig;
    }
    configure_threads(threads);

    try {
        if (*check) return cmd_check(check_path, samples, check_seed, out);
        if (*solve_cmd) return cmd_solve(solve_flags, out);
        if (*game) return cmd_game(game_flags, deviations, magnitude, corrupt, out);
        if (*counter) return cmd_counterexample(T, sweep, out);
    } catch (const Diverged&) {
        return kNotConverged;
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << '\n';
        return kConfig;
    } catch (const std::invalid_argument& e) {
        err << "invalid input: " << e.what() << '\n';
        return kConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kConfig;
    }
    return kConfig;
}

} // namespace mfbsde
