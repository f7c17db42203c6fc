#include "mfbsde/fixpoint.hpp"

#include "json.hpp"

#include <cmath>
#include <limits>
#include <ostream>

namespace mfbsde {

void SchemeParams::validate() const {
    if (!(delta >= 0.0)) throw std::invalid_argument("SchemeParams: delta must be >= 0");
    if (!(eps > 0.0) || !(rho > 0.0) || (alpha && !(*alpha > 0.0)))
        throw std::invalid_argument("SchemeParams: eps, alpha, rho must be positive");
    if (!(tol > 0.0)) throw std::invalid_argument("SchemeParams: tol must be positive");
    if (max_outer < 1) throw std::invalid_argument("SchemeParams: max_outer must be >= 1");
    if (inner_sweeps < 1) throw std::invalid_argument("SchemeParams: inner_sweeps must be >= 1");
    if (particles < 1) throw std::invalid_argument("SchemeParams: particles must be >= 1");
    if (picard_inner < 1) throw std::invalid_argument("SchemeParams: picard_inner must be >= 1");
    if (!(relaxation > 0.0 && relaxation <= 1.0))
        throw std::invalid_argument("SchemeParams: relaxation must lie in (0, 1]");
}

std::string to_string(SolveStatus s) {
    switch (s) {
    case SolveStatus::Converged: return "converged";
    case SolveStatus::MaxOuter: return "max_outer";
    case SolveStatus::Diverged: return "diverged";
    }
    return "unknown";
}

namespace {

nlohmann::json number_or_null(double v) {
    return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr);
}

std::vector<EmpiricalMeasure> joint_flow(const PathEnsemble& x, const PathEnsemble& y) {
    std::vector<EmpiricalMeasure> flow;
    flow.reserve(x.nodes());
    for (std::size_t k = 0; k < x.nodes(); ++k) flow.push_back(joint_marginal(x, y, k));
    return flow;
}

double theory_ratio_for(const MfProblem& p, const SchemeParams& params) {
    if (!(params.delta > 0.0)) return std::numeric_limits<double>::quiet_NaN();
    try {
        p.monotonicity.validate();
        const double alpha = params.alpha.value_or(canonical_alpha(p.monotonicity.variant));
        const auto cc = contraction_constants(p.lipschitz, p.monotonicity, params.eps, alpha,
                                              params.rho, params.delta);
        if (cc.lambda <= 0.0) return std::numeric_limits<double>::quiet_NaN();
        return cc.ratio();
    } catch (const std::invalid_argument&) {
        return std::numeric_limits<double>::quiet_NaN();
    }
}

struct Gaps {
    double xt = 0.0;
    double u = 0.0;
};

Gaps cauchy_gaps(const TimeGrid& grid, const PathEnsemble& x1, const PathEnsemble& x0,
                 const PathEnsemble& y1, const PathEnsemble& y0, const PathEnsemble& z1,
                 const PathEnsemble& z0) {
    const double n = static_cast<double>(x1.particles());
    const double dt = grid.dt();
    const std::size_t last = grid.steps();
    Gaps g;
    g.xt = (x1.slice(last) - x0.slice(last)).squaredNorm() / n;
    for (std::size_t k = 0; k <= last; ++k) {
        const double w = (k == 0 || k == last) ? 0.5 * dt : dt;
        g.u += w * ((x1.slice(k) - x0.slice(k)).squaredNorm() +
                    (y1.slice(k) - y0.slice(k)).squaredNorm()) / n;
    }
    for (std::size_t k = 0; k < last; ++k)
        g.u += dt * (z1.slice(k) - z0.slice(k)).squaredNorm() / n;
    return g;
}

bool blowing_up(const std::vector<OuterRecord>& h) {
    if (h.size() < 4) return false;
    const std::size_t m = h.size() - 1;
    for (std::size_t j = m - 2; j <= m; ++j)
        if (!(h[j].gap() > h[j - 1].gap())) return false;
    return h[m].gap() > 10.0 * h[m - 3].gap();
}

} // namespace

void write_diagnostics_jsonl(std::ostream& out, const IterationDiagnostics& diag) {
    for (const auto& r : diag.history) {
        nlohmann::ordered_json j;
        j["n"] = r.n;
        j["gap_XT"] = number_or_null(r.gap_xt);
        j["gap_U"] = number_or_null(r.gap_u);
        j["ratio"] = number_or_null(r.ratio);
        j["theory_ratio"] = number_or_null(r.theory_ratio);
        out << j.dump() << '\n';
    }
}

MfSolution MfSolution::from_paths(PathEnsemble x, PathEnsemble y, PathEnsemble z,
                                  std::shared_ptr<const BrownianBundle> bundle,
                                  std::shared_ptr<const TimeGrid> grid) {
    if (x.particles() != y.particles() || x.nodes() != y.nodes() ||
        z.particles() != x.particles() || z.nodes() + 1 != x.nodes())
        throw std::invalid_argument("MfSolution: inconsistent ensemble shapes");
    auto flow = joint_flow(x, y);
    auto terminal = marginal(x, x.nodes() - 1);
    return MfSolution{std::move(x), std::move(y),    std::move(z),      std::move(flow),
                      std::move(terminal), {},       std::move(bundle), std::move(grid),
                      {}};
}

MfSolution solve(const MfProblem& p, const TimeGrid& grid, const SchemeParams& params,
                 std::uint64_t seed, const MfSolution* warm_start) {
    p.validate();
    params.validate();
    if (std::abs(p.horizon - grid.horizon()) > 1e-12 * std::max(1.0, p.horizon))
        throw std::invalid_argument("solve: grid horizon differs from problem horizon");

    const std::size_t n = params.particles;
    const std::size_t d = p.dim;
    const std::size_t q = p.noise_dim;
    auto grid_ptr = std::make_shared<const TimeGrid>(grid);
    auto bundle = std::make_shared<const BrownianBundle>(BrownianBundle::make(grid, n, q, seed));

    PathEnsemble x(n, grid.nodes(), d);
    PathEnsemble y(n, grid.nodes(), d);
    PathEnsemble z(n, grid.steps(), d * q);
    DecouplingField field;
    if (warm_start) {
        if (warm_start->x.particles() != n || warm_start->x.nodes() != grid.nodes() ||
            warm_start->x.dim() != d || warm_start->z.dim() != d * q)
            throw std::invalid_argument("solve: warm start does not match the configuration");
        x = warm_start->x;
        y = warm_start->y;
        z = warm_start->z;
        field = warm_start->field;
    }

    IterationDiagnostics diag;
    diag.theory_ratio = theory_ratio_for(p, params);
    const double stop = params.tol * params.tol;

    for (std::size_t outer = 1; outer <= params.max_outer; ++outer) {
        const std::vector<EmpiricalMeasure> flow = joint_flow(x, y);
        const EmpiricalMeasure mu = marginal(x, grid.steps());

        PathEnsemble x_next;
        BackwardResult back;
        try {
            for (std::size_t s = 0; s < params.inner_sweeps; ++s) {
                x_next = field.empty()
                             ? propagate(p, grid, *bundle, y, z, y, z, flow, params.delta)
                             : propagate(p, grid, *bundle, field, y, z, flow, params.delta);
                back = solve_backward(p, grid, *bundle, x_next, flow, mu, params.basis,
                                      params.picard_inner, field.empty() ? nullptr : &field,
                                      params.relaxation);
                field = back.field;
            }
        } catch (const NumericalError& e) {
            diag.status = SolveStatus::Diverged;
            throw Diverged(std::string("non-finite iterate: ") + e.what(), diag);
        }

        const Gaps g = cauchy_gaps(grid, x_next, x, back.y, y, back.z, z);
        OuterRecord rec;
        rec.n = outer;
        rec.gap_xt = g.xt;
        rec.gap_u = g.u;
        rec.ratio = diag.history.empty() ? std::numeric_limits<double>::quiet_NaN()
                                         : rec.gap() / diag.history.back().gap();
        rec.theory_ratio = diag.theory_ratio;
        rec.max_regression_residual = back.diagnostics.max_residual();
        rec.ridge_used = !back.diagnostics.ridge_steps.empty();
        diag.history.push_back(rec);

        if (!std::isfinite(rec.gap())) {
            diag.status = SolveStatus::Diverged;
            throw Diverged("non-finite Cauchy gap", diag);
        }

        x = std::move(x_next);
        y = std::move(back.y);
        z = std::move(back.z);

        if (rec.gap() < stop) {
            diag.status = SolveStatus::Converged;
            break;
        }
        if (blowing_up(diag.history)) {
            diag.status = SolveStatus::Diverged;
            throw Diverged("Cauchy gap grew by more than 10x over three outer steps", diag);
        }
    }

    MfSolution sol = MfSolution::from_paths(std::move(x), std::move(y), std::move(z),
                                            std::move(bundle), std::move(grid_ptr));
    sol.diagnostics = std::move(diag);
    sol.field = std::move(field);
    return sol;
}

Residuals residual(const MfProblem& p, const MfSolution& sol) {
    p.validate();
    if (!sol.bundle || !sol.grid) throw std::invalid_argument("residual: solution lacks grid/bundle");
    const TimeGrid& grid = *sol.grid;
    const BrownianBundle& bundle = *sol.bundle;
    const std::size_t n = sol.x.particles();
    const std::size_t d = p.dim;
    const std::size_t q = p.noise_dim;
    const double dt = grid.dt();
    if (bundle.particles() != n || sol.x.nodes() != grid.nodes() || sol.x.dim() != d ||
        sol.z.dim() != d * q)
        throw std::invalid_argument("residual: solution shape does not match problem");

    Residuals r;
    for (std::size_t k = 0; k < grid.steps(); ++k) {
        const double t = grid.time(k);
        const EmpiricalMeasure& nu = sol.flow[k];
        double fwd = 0.0;
        double bwd = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const StateVec xk = sol.x.value(i, k);
            const StateVec yk = sol.y.value(i, k);
            const NoiseMat zk = load_noise(sol.z, i, k, d, q);
            const StateVec dw = bundle.increment(i, k);
            const StateVec f = p.drift(t, xk, yk, zk, nu);
            const NoiseMat s = p.diffusion(t, xk, yk, zk, p.law_free_sigma ? nullptr : &nu);
            const StateVec h = p.driver(t, xk, yk, zk, nu);
            fwd += (sol.x.value(i, k + 1) - xk - f * dt - s * dw).squaredNorm();
            bwd += (yk - sol.y.value(i, k + 1) + h * dt + zk * dw).squaredNorm();
        }
        r.forward = std::max(r.forward, fwd / static_cast<double>(n));
        r.backward = std::max(r.backward, bwd / static_cast<double>(n));
    }
    double term = 0.0;
    for (std::size_t i = 0; i < n; ++i)
        term += (sol.y.value(i, grid.steps()) -
                 p.terminal(sol.x.value(i, grid.steps()), sol.terminal_law))
                    .squaredNorm();
    r.terminal = term / static_cast<double>(n);
    return r;
}

} // namespace mfbsde
