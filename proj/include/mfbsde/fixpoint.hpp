#pragma once

#include "mfbsde/backward.hpp"
#include "mfbsde/forward.hpp"
#include "mfbsde/paths.hpp"
#include "mfbsde/problem.hpp"

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

namespace mfbsde {

struct SchemeParams {
    double delta = 1e-3;
    double eps = 1.0;
    /// Unset means the canonical value for the problem's monotonicity variant.
    std::optional<double> alpha;
    double rho = 1.0;
    double tol = 1e-4;
    std::size_t max_outer = 50;
    std::size_t inner_sweeps = 3;
    /// Under-relaxation of the decoupling field between sweeps; 1 disables it.
    double relaxation = 0.5;
    std::size_t particles = 2000;
    std::size_t picard_inner = 2;
    RegressionBasis basis;

    void validate() const;
};

struct OuterRecord {
    std::size_t n = 0;
    double gap_xt = 0.0;
    double gap_u = 0.0;
    /// gap(n) / gap(n-1); NaN for the first record.
    double ratio = 0.0;
    /// theta / lambda of the contraction estimate; NaN when unavailable.
    double theory_ratio = 0.0;
    double max_regression_residual = 0.0;
    bool ridge_used = false;

    double gap() const { return gap_xt + gap_u; }
};

enum class SolveStatus { Converged, MaxOuter, Diverged };

std::string to_string(SolveStatus s);

struct IterationDiagnostics {
    std::vector<OuterRecord> history;
    SolveStatus status = SolveStatus::MaxOuter;
    double theory_ratio = 0.0;

    bool converged() const { return status == SolveStatus::Converged; }
};

/// One JSON object per outer iteration: {n, gap_XT, gap_U, ratio, theory_ratio}.
void write_diagnostics_jsonl(std::ostream& out, const IterationDiagnostics& diag);

struct MfSolution {
    PathEnsemble x;
    PathEnsemble y;
    PathEnsemble z;
    /// Joint (X, Y) cloud at every node.
    std::vector<EmpiricalMeasure> flow;
    EmpiricalMeasure terminal_law;
    IterationDiagnostics diagnostics;
    std::shared_ptr<const BrownianBundle> bundle;
    std::shared_ptr<const TimeGrid> grid;
    /// Fitted (Y, Z) maps of the final backward sweep.
    DecouplingField field;

    /// Builds flow and terminal law from the ensembles.
    static MfSolution from_paths(PathEnsemble x, PathEnsemble y, PathEnsemble z,
                                 std::shared_ptr<const BrownianBundle> bundle,
                                 std::shared_ptr<const TimeGrid> grid);
};

/// Thrown when the outer gaps blow up; carries the history so far.
class Diverged : public std::runtime_error {
public:
    Diverged(const std::string& why, IterationDiagnostics diag)
        : std::runtime_error(why), diagnostics_(std::move(diag)) {}

    const IterationDiagnostics& diagnostics() const noexcept { return diagnostics_; }

private:
    IterationDiagnostics diagnostics_;
};

/// Measure-freezing delta-scheme. Starting from the zero triple, each outer
/// step freezes the laws of the current iterate and solves the resulting
/// standard FBSDE by `inner_sweeps` forward/backward alternations, then
/// records the Cauchy gaps
///   gap_XT = E|X^{n+1}_T - X^n_T|^2,  gap_U = E int |U^{n+1} - U^n|^2 dt.
/// Stops when gap_XT + gap_U < tol^2. One Brownian bundle is shared by every
/// iteration.
///
/// Throws Diverged when the gap grows for three consecutive outer steps by a
/// total factor above 10, or when the particle system produces non-finite
/// values. `warm_start`, when given, replaces the zero initial iterate.
MfSolution solve(const MfProblem& p, const TimeGrid& grid, const SchemeParams& params,
                 std::uint64_t seed, const MfSolution* warm_start = nullptr);

struct Residuals {
    double forward = 0.0;
    double backward = 0.0;
    double terminal = 0.0;
};

/// Discrete residuals of the original (unfrozen, unperturbed) system,
/// evaluated with the solution's own laws:
///   forward  = max_k E|X_{k+1} - X_k - f dt - sigma dW|^2
///   backward = max_k E|Y_k - Y_{k+1} + h dt + Z dW|^2
///   terminal = E|Y_T - g(X_T, mu_T)|^2
Residuals residual(const MfProblem& p, const MfSolution& sol);

} // namespace mfbsde
