#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <stdexcept>
#include <string>

namespace mfbsde {

/// Largest state / noise dimension supported by the particle solvers.
/// Per-particle values live on the stack up to this size.
inline constexpr int kMaxDim = 8;

using StateVec = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kMaxDim, 1>;
using NoiseMat =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, 0, kMaxDim, kMaxDim>;

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;

/// Non-finite value produced while stepping a particle system.
class NumericalError : public std::runtime_error {
public:
    NumericalError(const std::string& what, std::size_t step)
        : std::runtime_error(what + " (step " + std::to_string(step) + ")"),
          step_(step) {}

    std::size_t step() const noexcept { return step_; }

private:
    std::size_t step_;
};

} // namespace mfbsde
