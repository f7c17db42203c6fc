#pragma once

#include "mfbsde/forward.hpp"
#include "mfbsde/paths.hpp"
#include "mfbsde/problem.hpp"
#include "mfbsde/regression.hpp"

#include <span>
#include <vector>

namespace mfbsde {

/// Regression maps x -> (Y_k(x), Z_k(x)) for k = 0 .. N_t - 1, as fitted by
/// the last backward sweep.
class DecouplingField final : public CouplingSource {
public:
    struct Step {
        SliceRegression regression;
        Mat y_coef; // basis x d
        Mat z_coef; // basis x (d*q), column-major flattening of Z
    };

    DecouplingField() = default;
    DecouplingField(std::size_t dim, std::size_t noise_dim, std::vector<Step> steps)
        : dim_(dim), noise_dim_(noise_dim), steps_(std::move(steps)) {}

    bool empty() const noexcept { return steps_.empty(); }
    std::size_t steps() const noexcept { return steps_.size(); }

    void evaluate(std::size_t step, std::size_t particle, const StateVec& x, StateVec& y,
                  NoiseMat& z) const override;

private:
    std::size_t dim_ = 0;
    std::size_t noise_dim_ = 0;
    std::vector<Step> steps_;
};

struct BackwardDiagnostics {
    /// Root-mean-square residual of the final Y regression at each step.
    std::vector<double> residual_rms;
    /// Steps whose design matrix needed the ridge fallback.
    std::vector<std::size_t> ridge_steps;

    double max_residual() const;
};

struct BackwardResult {
    PathEnsemble y; // N_t + 1 nodes, d components
    PathEnsemble z; // N_t steps, d*q components
    DecouplingField field;
    BackwardDiagnostics diagnostics;
};

/// Least-squares Monte Carlo for the backward equation along given forward
/// paths. Y_{N_t} = g(X_T, terminal_law); for k = N_t - 1 .. 0
///   Z_k = E_k[(Y_{k+1} - E_k Y_{k+1}) dW_k^T] / dt
///   Y_k = E_k[Y_{k+1} - h(t_k, X_k, Y_k, Z_k, nu_k) dt]
/// with conditional expectations regressed on basis(X_k) and the implicit Y_k
/// inside h resolved by `picard_inner` fixed-point passes started at Y_{k+1}.
/// `frozen_flow` and `terminal_law` are the previous iterate's laws.
///
/// When `relax_from` is given, the returned field is
///   relax * (fitted maps) + (1 - relax) * relax_from
/// projected on the same basis; the returned Y and Z ensembles are not blended.
BackwardResult solve_backward(const MfProblem& p, const TimeGrid& grid,
                              const BrownianBundle& bundle, const PathEnsemble& x,
                              std::span<const EmpiricalMeasure> frozen_flow,
                              const EmpiricalMeasure& terminal_law,
                              const RegressionBasis& basis, std::size_t picard_inner = 2,
                              const DecouplingField* relax_from = nullptr, double relax = 1.0);

} // namespace mfbsde
