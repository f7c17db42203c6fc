// One line per criterion; exit status is nonzero when any criterion fails.

#include "mfbsde/backward.hpp"
#include "mfbsde/cli.hpp"
#include "mfbsde/fixpoint.hpp"
#include "mfbsde/lqgame.hpp"
#include "mfbsde/measure.hpp"

#include "support.hpp"

#include "json.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

using namespace mfbsde;
using nlohmann::json;
namespace fs = std::filesystem;
namespace ts = testing_support;

namespace {

struct Verdict {
    bool pass = true;
    std::string detail;

    void require(bool ok, const std::string& what) {
        if (!ok) {
            pass = false;
            detail += (detail.empty() ? "" : "; ") + what;
        }
    }
};

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.4g", v);
    return buf;
}

int run_cli_capture(std::vector<std::string> args, std::string& out) {
    args.insert(args.begin(), "mfbsde");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream o, e;
    const int code = run_cli(static_cast<int>(argv.size()), argv.data(), o, e);
    out = o.str() + e.str();
    return code;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

// Means of the planar game: p_i constant, so (I + T S) m_T = x0 and m is linear in t.
Vec planar_terminal_mean(double T) {
    Mat S(2, 2);
    S << 1, -2, -2, 1;
    Vec x0(2);
    x0 << 1, 2;
    return (Mat::Identity(2, 2) + T * S).fullPivLu().solve(x0);
}

Verdict counterexample_reproduction() {
    Verdict v;
    for (double T : {0.25, 0.5, 0.75, 1.0}) {
        std::string out;
        const int code = run_cli_capture({"counterexample", "--T", fmt(T)}, out);
        v.require(code == 0, "exit " + std::to_string(code) + " at T=" + fmt(T));
        if (code != 0) continue;
        const json j = json::parse(out);
        const double det = j["det"].get<double>();
        const double expected = (1 - T) * (1 + 3 * T);
        v.require(std::abs(det - expected) < 1e-9, "det error " + fmt(det - expected) + " at T=" + fmt(T));
        const bool none = j["status"] == "nonexistence";
        v.require(none == (T == 1.0), "status " + j["status"].get<std::string>() + " at T=" + fmt(T));
        if (T == 0.5 && !none) {
            const Vec m = planar_terminal_mean(0.5);
            const double u1 = -(1.0 * m[0]);  // -C_1' Q_1 m_T
            const double u2 = -(1.0 * m[1]);  // -C_2' Q_2 m_T
            double err = std::max({std::abs(j["Y_T"][0].get<double>() - 2.8),
                                   std::abs(j["Y_T"][1].get<double>() - 3.2),
                                   std::abs(j["Y_T"][0].get<double>() - m[0]),
                                   std::abs(j["Y_T"][1].get<double>() - m[1]),
                                   std::abs(j["controls"][0][0].get<double>() - u1),
                                   std::abs(j["controls"][1][0].get<double>() - u2),
                                   std::abs(u1 + 2.8), std::abs(u2 + 3.2)});
            v.require(err < 1e-9, "T=0.5 mean/control error " + fmt(err));
        }
    }
    if (v.pass) v.detail = "det (1-T)(1+3T) matched, nonexistence at T=1";
    return v;
}

Verdict condition_gate() {
    Verdict v;
    const H2Report bad = check_H2(counterexample_game(1.0), TimeGrid(1.0, 10));
    // sym(sum K_i Q_i) = [[1,-2],[-2,1]] has eigenvalues -1 and 3.
    const Eigen::SelfAdjointEigenSolver<Mat> eig(0.5 * (bad.sum_KQ + bad.sum_KQ.transpose()));
    v.require(std::abs(eig.eigenvalues()[0] + 1.0) < 1e-10 && std::abs(eig.eigenvalues()[1] - 3.0) < 1e-10,
              "eigenvalues of sum K_i Q_i");
    v.require(!bad.pass_eta1, "eta1 reported positive");
    v.require(std::abs(bad.norm_D - 1.0) < 1e-10 && !bad.pass_D, "||D|| = 1 not flagged");
    v.require(!bad.pass, "counterexample passed the gate");

    const GameSpec ok = ts::scalar_game(0.0, 1, 1, 1, 1, 0.5);
    const H2Report good = check_H2(ok, TimeGrid(1.0, 10));
    v.require(good.pass, "scalar spec rejected");
    v.require(std::abs(good.eta1 - 1.0) < 1e-10 && std::abs(good.eta2 - 1.0) < 1e-10,
              "scalar eta values");
    if (v.pass) v.detail = "counterexample rejected (eigs -1, 3; ||D||=1), scalar accepted";
    return v;
}

Verdict contraction_property() {
    Verdict v;
    const MfProblem p = ts::toy_problem(0.1);
    SchemeParams sp;
    sp.particles = 5000;
    sp.delta = 0.01;
    sp.tol = 1e-7;
    sp.max_outer = 20;
    const MfSolution sol = solve(p, TimeGrid(1.0, 100), sp, 2024);

    // theta / lambda for k = k' = 1, C = C_g = 0.1, eps = 1, alpha = sqrt2/2.
    const double a = std::sqrt(2.0) / 2.0, c = 0.1, delta = 0.01;
    const double lambda = std::min(1.0 - c / 2.0, delta / 2.0 + 1.0 - c / (2.0 * a));
    const double theta = std::max(c / 2.0, delta / 2.0 + a * c);
    const double bound = theta / lambda;
    v.require(std::abs(bound - 0.081) < 1e-3, "theta/lambda " + fmt(bound));
    v.require(std::abs(sol.diagnostics.theory_ratio - bound) < 1e-12, "reported theory ratio");

    const auto& h = sol.diagnostics.history;
    v.require(h.size() >= 6, "only " + std::to_string(h.size()) + " outer iterations");
    double worst = 0.0;
    // gap(n+1)/gap(n) for n = 2..5 sits in records n+1.
    for (std::size_t n = 2; n <= 5 && n < h.size(); ++n) {
        const double r = h[n].ratio;
        worst = std::max(worst, r);
        v.require(r <= bound + 0.15, "ratio " + fmt(r) + " at n=" + std::to_string(n));
    }
    if (v.pass) v.detail = "max ratio " + fmt(worst) + " <= " + fmt(bound + 0.15);
    return v;
}

MfProblem brownian_problem(double a, double c0, double c1) {
    MfProblem p;
    p.dim = 1;
    p.noise_dim = 1;
    p.x0 = StateVec::Constant(1, 0.5);
    p.horizon = 1.0;
    p.drift = [](double, const StateVec& x, const StateVec&, const NoiseMat&,
                 const EmpiricalMeasure&) { return StateVec(StateVec::Zero(x.size())); };
    p.diffusion = [](double, const StateVec&, const StateVec&, const NoiseMat&,
                     const EmpiricalMeasure*) { return NoiseMat::Constant(1, 1, 1.0); };
    p.driver = [a](double, const StateVec&, const StateVec& y, const NoiseMat&,
                   const EmpiricalMeasure&) { return StateVec(-a * y); };
    p.terminal = [c0, c1](const StateVec& x, const EmpiricalMeasure&) {
        return StateVec(StateVec::Constant(1, c0) + c1 * x);
    };
    p.law_free_sigma = true;
    return p;
}

Verdict bsde_oracle() {
    Verdict v;
    const std::size_t n = 10000;
    const TimeGrid g(1.0, 100);
    const auto bundle = BrownianBundle::make(g, n, 1, 77);
    PathEnsemble x(n, g.nodes(), 1);
    for (std::size_t i = 0; i < n; ++i) {
        double w = 0.0;
        x.at(i, 0, 0) = 0.5;
        for (std::size_t k = 0; k < g.steps(); ++k) {
            w += bundle.increment(i, k, 0);
            x.at(i, k + 1, 0) = 0.5 + w;
        }
    }
    const std::vector<EmpiricalMeasure> flow(g.nodes(), EmpiricalMeasure::point_mass(Vec::Zero(2)));
    const EmpiricalMeasure law = marginal(x, g.steps());

    // Martingale: Y_0 = E[X_T] = x0, Z = 1.
    const MfProblem mart = brownian_problem(0.0, 0.0, 1.0);
    const auto r = solve_backward(mart, g, bundle, x, flow, law, RegressionBasis{1});
    double mean_xt = 0.0, var_xt = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean_xt += x.at(i, g.steps(), 0);
    mean_xt /= static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) var_xt += std::pow(x.at(i, g.steps(), 0) - mean_xt, 2);
    const double se_y = std::sqrt(var_xt / (n - 1.0) / n);
    const double y0 = r.y.at(0, 0, 0);
    v.require(std::abs(y0 - 0.5) < 3 * se_y, "Y0 " + fmt(y0) + " se " + fmt(se_y));

    // Time-averaged Z: each step's mean is a sample mean of (dY dW / dt).
    double z_sum = 0.0, se2_sum = 0.0;
    for (std::size_t k = 0; k < g.steps(); ++k) {
        double zm = 0.0, tm = 0.0, tv = 0.0;
        std::vector<double> t(n);
        for (std::size_t i = 0; i < n; ++i) {
            zm += r.z.at(i, k, 0);
            t[i] = (r.y.at(i, k + 1, 0) - r.y.at(i, k, 0)) * bundle.increment(i, k, 0) / g.dt();
            tm += t[i];
        }
        zm /= static_cast<double>(n);
        tm /= static_cast<double>(n);
        for (double s : t) tv += (s - tm) * (s - tm);
        z_sum += zm;
        se2_sum += tv / (n - 1.0) / n;
    }
    const double steps = static_cast<double>(g.steps());
    const double z_bar = z_sum / steps;
    const double se_z = std::sqrt(se2_sum) / steps;
    v.require(std::abs(z_bar - 1.0) < 3 * se_z, "mean Z " + fmt(z_bar) + " se " + fmt(se_z));

    // Linear driver h = -a y with g = 1: Y_0 = e^{aT}.
    const double a = 0.5;
    const auto lin = solve_backward(brownian_problem(a, 1.0, 0.0), g, bundle, x, flow, law,
                                    RegressionBasis{1}, 4);
    const double rel = std::abs(lin.y.at(0, 0, 0) / std::exp(a) - 1.0);
    v.require(rel < 0.01, "exp driver relative error " + fmt(rel));
    if (v.pass)
        v.detail = "Y0 " + fmt(y0) + ", mean Z " + fmt(z_bar) + ", exp error " + fmt(rel);
    return v;
}

double brute_force_w2_sq(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    std::vector<std::size_t> perm(a.size());
    std::iota(perm.begin(), perm.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    do {
        double c = 0.0;
        for (std::size_t i = 0; i < perm.size(); ++i)
            c += (a.points().row(static_cast<Eigen::Index>(i)) -
                  b.points().row(static_cast<Eigen::Index>(perm[i])))
                     .squaredNorm();
        best = std::min(best, c);
    } while (std::next_permutation(perm.begin(), perm.end()));
    return best / static_cast<double>(a.size());
}

Verdict wasserstein_oracle() {
    Verdict v;
    std::mt19937_64 rng(99);
    std::uniform_int_distribution<std::size_t> size(1, 8), dim(1, 3);
    std::normal_distribution<double> g;
    double worst = 0.0;
    for (int trial = 0; trial < 200; ++trial) {
        const std::size_t n = size(rng), d = dim(rng);
        EmpiricalMeasure::Points pa(n, d), pb(n, d);
        for (Eigen::Index i = 0; i < pa.size(); ++i) pa.data()[i] = g(rng);
        for (Eigen::Index i = 0; i < pb.size(); ++i) pb.data()[i] = g(rng);
        const EmpiricalMeasure a(pa), b(pb);
        const double exact = w2_exact(a, b);
        const double err = std::abs(exact * exact - brute_force_w2_sq(a, b));
        worst = std::max(worst, err);
        v.require(err < 1e-12, "trial " + std::to_string(trial) + " error " + fmt(err));
        v.require(w2_paired_bound(a, b) >= exact - 1e-12, "paired bound below exact");
    }
    if (v.pass) v.detail = "200 instances, max cost error " + fmt(worst);
    return v;
}

Verdict nash_verification() {
    Verdict v;
    const double a = 0.1, x0 = 1.0;
    const GameSpec gs = ts::scalar_game(a, 1, 1, 1, 1, 0.5, x0);
    SchemeParams sp;
    sp.particles = 10000;
    sp.delta = 0.01;
    sp.tol = 1e-5;
    const NashResult nash = solve_nash(gs, TimeGrid(1.0, 100), sp, 11);
    v.require(nash.converged(), "aggregated system did not converge");
    double y0 = 0.0;
    for (std::size_t i = 0; i < sp.particles; ++i) y0 += nash.p[0].at(i, 0, 0);
    y0 /= static_cast<double>(sp.particles);
    const double oracle = ts::riccati_at_zero(a, 1, 1, 1, 1.0) * x0;
    const double rel = std::abs(y0 / oracle - 1.0);
    v.require(rel < 0.02, "Y0 " + fmt(y0) + " vs Riccati " + fmt(oracle));

    const DeviationReport dev = deviation_test(gs, nash, 0, 20, 0.1, 1011);
    v.require(dev.pass, "deviation test rejected the equilibrium (min delta " + fmt(dev.min_delta) + ")");
    NashResult bad = nash;
    for (std::size_t k = 0; k < bad.u[0].nodes(); ++k) bad.u[0].slice(k).array() += 0.5;
    const DeviationReport corrupt = deviation_test(gs, bad, 0, 20, 0.1, 1011);
    v.require(!corrupt.pass, "deviation test accepted a corrupted control");
    if (v.pass)
        v.detail = "Y0 " + fmt(y0) + " vs " + fmt(oracle) + " (rel " + fmt(rel) + "), min delta " +
                   fmt(dev.min_delta) + ", corrupted min delta " + fmt(corrupt.min_delta);
    return v;
}

Verdict mean_consistency() {
    Verdict v;
    const double T = 0.25;
    const GameSpec gs = counterexample_game(T);
    SchemeParams sp;
    sp.particles = 10000;
    sp.delta = 0.001;
    sp.tol = 1e-5;
    const TimeGrid grid(T, 100);
    const NashResult nash = solve_nash(gs, grid, sp, 5);
    v.require(nash.converged(), "aggregated system did not converge");

    const auto ref = solve_mean_fbode(gs);
    v.require(std::holds_alternative<MeanSolution>(ref), "mean boundary problem singular");
    const Vec mT = planar_terminal_mean(T);
    Vec x0(2);
    x0 << 1, 2;
    double worst = 0.0, worst_ref = 0.0;
    for (std::size_t k = 0; k < grid.nodes(); ++k) {
        const double t = grid.time(k);
        const Vec m = nash.aggregated.x.slice(k).colwise().mean().transpose();
        const Vec oracle = x0 + (t / T) * (mT - x0);
        worst = std::max(worst, (m - oracle).cwiseAbs().maxCoeff());
        if (const auto* s = std::get_if<MeanSolution>(&ref))
            worst_ref = std::max(worst_ref, (s->mean_x(t) - oracle).cwiseAbs().maxCoeff());
    }
    const double threshold = 3.0 * (grid.dt() + 1.0 / std::sqrt(static_cast<double>(sp.particles)));
    v.require(worst < threshold, "mean error " + fmt(worst) + " >= " + fmt(threshold));
    v.require(worst_ref < 1e-9, "boundary solver off the closed form by " + fmt(worst_ref));
    if (v.pass) v.detail = "max mean error " + fmt(worst) + " < " + fmt(threshold);
    return v;
}

Verdict determinism() {
    Verdict v;
    const fs::path base = fs::temp_directory_path() / "mfbsde_acceptance_determinism";
    fs::remove_all(base);
    std::string out;
    for (const char* run : {"a", "b"}) {
        const int code = run_cli_capture({"solve", ts::data("toy_linear.json"), "--seed", "5",
                                          "--out", (base / run).string()},
                                         out);
        v.require(code == 0, std::string("run ") + run + " exit " + std::to_string(code));
    }
    for (const char* f : {"diagnostics.jsonl", "moments.csv"}) {
        const std::string a = slurp(base / "a" / f), b = slurp(base / "b" / f);
        v.require(!a.empty() && a == b, std::string(f) + " differs");
    }
    fs::remove_all(base);
    if (v.pass) v.detail = "diagnostics.jsonl and moments.csv byte-identical";
    return v;
}

} // namespace

int main() {
    const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria{
        {"counterexample reproduction", counterexample_reproduction},
        {"condition gate", condition_gate},
        {"contraction property", contraction_property},
        {"BSDE oracle", bsde_oracle},
        {"Wasserstein oracle", wasserstein_oracle},
        {"Nash verification", nash_verification},
        {"mean consistency", mean_consistency},
        {"determinism", determinism},
    };
    int failed = 0;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const auto start = std::chrono::steady_clock::now();
        Verdict v;
        try {
            v = criteria[i].second();
        } catch (const std::exception& e) {
            v.pass = false;
            v.detail = std::string("exception: ") + e.what();
        }
        const double secs =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        std::printf("%s [%zu] %s (%.1fs): %s\n", v.pass ? "PASS" : "FAIL", i + 1,
                    criteria[i].first.c_str(), secs, v.detail.c_str());
        std::fflush(stdout);
        if (!v.pass) ++failed;
    }
    return failed == 0 ? 0 : 1;
}
