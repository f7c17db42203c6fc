#pragma once

#include "mfbsde/paths.hpp"
#include "mfbsde/problem.hpp"

#include <span>

namespace mfbsde {

/// Flattens a d x q matrix column by column into PathEnsemble components.
void store_noise(PathEnsemble& z, std::size_t particle, std::size_t step, const NoiseMat& value);
NoiseMat load_noise(const PathEnsemble& z, std::size_t particle, std::size_t step,
                    std::size_t rows, std::size_t cols);

/// Supplies the backward pair (Y_k, Z_k) a forward sweep plugs into f and sigma.
class CouplingSource {
public:
    virtual ~CouplingSource() = default;
    virtual void evaluate(std::size_t step, std::size_t particle, const StateVec& x,
                          StateVec& y, NoiseMat& z) const = 0;
};

/// Reads Y and Z from stored ensembles, ignoring the current state.
class EnsembleCoupling final : public CouplingSource {
public:
    EnsembleCoupling(const PathEnsemble& y, const PathEnsemble& z, std::size_t dim,
                     std::size_t noise_dim)
        : y_(y), z_(z), dim_(dim), noise_dim_(noise_dim) {}

    void evaluate(std::size_t step, std::size_t particle, const StateVec&, StateVec& y,
                  NoiseMat& z) const override {
        y = y_.value(particle, step);
        z = load_noise(z_, particle, step, dim_, noise_dim_);
    }

private:
    const PathEnsemble& y_;
    const PathEnsemble& z_;
    std::size_t dim_;
    std::size_t noise_dim_;
};

/// Euler-Maruyama sweep of the forward equation under a frozen flow:
///   X_{k+1} = X_k + [f(t_k, U_k, nu_k) - delta (Y_k - Yprev_k)] dt
///                 + [sigma(t_k, U_k, nu_k) - delta (Z_k - Zprev_k)] dW_k
/// with X_0 = x0. For law-free sigma the delta term in the diffusion is
/// dropped and sigma receives no law.
///
/// `y`, `y_prev` hold N_t + 1 nodes; `z`, `z_prev` hold N_t steps with d*q
/// components; `frozen_flow` holds one joint (X, Y) cloud per node.
PathEnsemble propagate(const MfProblem& p, const TimeGrid& grid, const BrownianBundle& bundle,
                       const PathEnsemble& y, const PathEnsemble& z,
                       const PathEnsemble& y_prev, const PathEnsemble& z_prev,
                       std::span<const EmpiricalMeasure> frozen_flow, double delta);

/// Same sweep, but (Y_k, Z_k) come from `coupling` evaluated at the freshly
/// propagated X_k.
PathEnsemble propagate(const MfProblem& p, const TimeGrid& grid, const BrownianBundle& bundle,
                       const CouplingSource& coupling, const PathEnsemble& y_prev,
                       const PathEnsemble& z_prev,
                       std::span<const EmpiricalMeasure> frozen_flow, double delta);

} // namespace mfbsde
