#pragma once

#include "mfbsde/measure.hpp"
#include "mfbsde/types.hpp"

#include <cstdint>
#include <functional>
#include <string>

namespace mfbsde {

/// Forward drift f and backward driver h: (t, x, y, z, nu) -> R^d.
/// `nu` is the joint law of (X_t, Y_t) as a cloud in R^{2d}, X coordinates first.
using CoefficientFn = std::function<StateVec(double t, const StateVec& x, const StateVec& y,
                                             const NoiseMat& z, const EmpiricalMeasure& nu)>;

/// Diffusion sigma: (t, x, y, z, nu) -> d x q matrix. For law-free problems
/// `nu` is null and must not be dereferenced.
using DiffusionFn = std::function<NoiseMat(double t, const StateVec& x, const StateVec& y,
                                           const NoiseMat& z, const EmpiricalMeasure* nu)>;

/// Terminal condition g: (x_T, mu_T) -> R^d.
using TerminalFn = std::function<StateVec(const StateVec& x, const EmpiricalMeasure& mu)>;

struct LipschitzProfile {
    double c_u = 0.0;
    double c_nu = 0.0;
    double c_g_x = 0.0;
    double c_g_nu = 0.0;

    void validate() const;
};

enum class MonotonicityVariant { H1, H1Prime };

std::string to_string(MonotonicityVariant v);

struct MonotonicityProfile {
    double k = 1.0;
    double k_prime = 1.0;
    MonotonicityVariant variant = MonotonicityVariant::H1Prime;

    /// Throws unless k > 0 and k' > 0.
    void validate() const;
};

/// Coupled mean-field forward-backward system
///   X_t = x0 + int f(s, U_s, nu_s) ds + int sigma(s, U_s, nu_s) dW_s
///   Y_t = g(X_T, mu_T) - int_t^T h(s, U_s, nu_s) ds - int_t^T Z_s dW_s
/// with nu_s = Law(X_s, Y_s), mu_T = Law(X_T).
struct MfProblem {
    std::size_t dim = 1;
    std::size_t noise_dim = 1;
    StateVec x0;
    double horizon = 1.0;

    CoefficientFn drift;
    DiffusionFn diffusion;
    CoefficientFn driver;
    TerminalFn terminal;

    /// sigma ignores the law argument; selects the scheme without the
    /// delta-perturbation in the diffusion.
    bool law_free_sigma = false;

    LipschitzProfile lipschitz;
    MonotonicityProfile monotonicity;

    /// Checks dimensions and that every callback is set.
    void validate() const;
};

/// One argument triple u = (x, y, z).
struct Point {
    StateVec x;
    StateVec y;
    NoiseMat z;
};

/// Monotonicity functional
///   (f(u) - f(u')).(y - y') + (h(u) - h(u')).(x - x') + [sigma(u) - sigma(u'), z - z']
/// where [A, B] sums the inner products of matching columns.
double eval_A(const MfProblem& p, double t, const Point& u, const Point& u_prime,
              const EmpiricalMeasure& nu);

struct MonotonicityReport {
    MonotonicityVariant variant = MonotonicityVariant::H1Prime;
    std::size_t samples = 0;
    bool pass_operator = false;
    bool pass_terminal = false;
    bool pass = false;
    /// min over probes of -A - k * |du|^2 with the declared k (>= 0 when it holds).
    double worst_margin_operator = 0.0;
    /// min over probes of (g - g').dx - k' |dx|^2 with the declared k'.
    double worst_margin_terminal = 0.0;
    /// Largest k, k' consistent with every probe.
    double k_estimate = 0.0;
    double k_prime_estimate = 0.0;
};

/// Randomized probe of the monotonicity assumptions. Probed, not proven:
/// a pass only says no probe violated the declared constants.
MonotonicityReport check_H1(const MfProblem& p, std::size_t samples, std::uint64_t seed);

struct ConditionReport {
    MonotonicityVariant variant = MonotonicityVariant::H1Prime;
    double bound = 0.0;
    double c_nu = 0.0;
    double c_g_nu = 0.0;
    double margin_c_nu = 0.0;
    double margin_c_g_nu = 0.0;
    bool pass = false;
};

/// Mean-field smallness condition: C_g^nu and C^nu both strictly below
///   min{(sqrt3 - 1) k', k / sqrt3}           (H1)
///   min{2 (sqrt2 - 1) k', k / sqrt2}         (H1')
ConditionReport check_smallness(const LipschitzProfile& prof, const MonotonicityProfile& mono);

struct ContractionConstants {
    double lambda = 0.0;
    double theta = 0.0;
    double ratio() const { return theta / lambda; }
    bool contracts() const { return lambda > 0.0 && theta < lambda; }
};

/// Contraction constants of the delta-scheme for Young parameters
/// (eps, alpha, rho) and perturbation delta. rho only enters the H1 variant.
ContractionConstants contraction_constants(const LipschitzProfile& prof,
                                           const MonotonicityProfile& mono, double eps,
                                           double alpha, double rho, double delta);

/// Canonical Young parameter alpha for a variant: 1/sqrt3 (H1), 1/sqrt2 (H1').
double canonical_alpha(MonotonicityVariant v);

struct ContractionSearch {
    bool found = false;
    double eps = 0.0;
    double alpha = 0.0;
    double rho = 1.0;
    double delta = 0.0;
    ContractionConstants constants;
};

/// Grid search over (eps, alpha, delta) with rho = 1 for the smallest theta/lambda.
ContractionSearch search_contraction_parameters(const LipschitzProfile& prof,
                                                const MonotonicityProfile& mono);

} // namespace mfbsde
