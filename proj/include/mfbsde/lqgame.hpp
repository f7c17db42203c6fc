#pragma once

#include "mfbsde/fixpoint.hpp"
#include "mfbsde/paths.hpp"
#include "mfbsde/problem.hpp"

#include <cstdint>
#include <optional>
#include <variant>
#include <vector>

namespace mfbsde {

/// Piecewise-constant matrix-valued function of time. Piece j holds on
/// [t_from_j, t_from_{j+1}); the first piece starts at 0.
class CoefficientPath {
public:
    CoefficientPath() = default;
    static CoefficientPath constant(Mat value);
    static CoefficientPath piecewise(std::vector<double> t_from, std::vector<Mat> values);

    const Mat& at(double t) const;
    Eigen::Index rows() const { return values_.empty() ? 0 : values_.front().rows(); }
    Eigen::Index cols() const { return values_.empty() ? 0 : values_.front().cols(); }
    bool empty() const noexcept { return values_.empty(); }
    bool is_constant() const noexcept { return values_.size() == 1; }

    const std::vector<double>& t_from() const noexcept { return t_from_; }
    const std::vector<Mat>& values() const noexcept { return values_; }

    /// Largest spectral norm over the pieces.
    double sup_norm() const;
    bool is_zero() const;

private:
    std::vector<double> t_from_;
    std::vector<Mat> values_;
};

struct PlayerSpec {
    Mat C;                 // n x m_i
    Mat N;                 // m_i x m_i, symmetric positive definite
    CoefficientPath M;     // n x n running state cost
    CoefficientPath Gamma; // n x n running mean cost
    Mat Q;                 // n x n terminal state cost
    Mat R;                 // n x n terminal mean cost

    Eigen::Index controls() const { return C.cols(); }
};

/// Linear-quadratic mean-field game driven by a scalar Brownian motion:
///   dX = (A X + sum_i C_i u_i + D E[X] + beta) dt + (sigma X + alpha) dW,
///   J_i = 1/2 E[X_T'Q_i X_T] + 1/2 E[X_T]'R_i E[X_T]
///       + 1/2 E int (X'M_i X + u_i'N_i u_i + E[X]'Gamma_i E[X]) dt.
struct GameSpec {
    std::size_t n = 1;
    double horizon = 1.0;
    Vec x0;
    CoefficientPath A;     // n x n
    CoefficientPath D;     // n x n
    CoefficientPath beta;  // n x 1
    CoefficientPath sigma; // n x n
    CoefficientPath alpha; // n x 1
    std::vector<PlayerSpec> players;

    std::size_t m() const noexcept { return players.size(); }

    /// Shapes, symmetry to 1e-12 and positive definiteness of every N_i.
    void validate() const;

    /// 0, every breakpoint inside (0, T), and T.
    std::vector<double> breakpoints() const;
};

/// K_i = C_i N_i^{-1} C_i'.
std::vector<Mat> gain_matrices(const GameSpec& gs);

struct H2Report {
    std::vector<Mat> K;
    Mat sum_KQ;
    Mat sum_KR;
    /// Smallest eigenvalue of sym(sum K_i Q_i); the monotonicity constant
    /// exists only when this is positive.
    double eta1 = 0.0;
    /// Smallest eigenvalue of sym(sum K_i M_i(t)) over the grid.
    double eta2 = 0.0;
    double commutation_A = 0.0;
    double commutation_D = 0.0;
    double commutation_sigma = 0.0;
    double norm_KR = 0.0;
    double norm_D = 0.0;
    /// min{2(sqrt2 - 1) eta1, 1/sqrt2, eta2/sqrt2}
    double bound = 0.0;

    bool pass_commutation = false;
    bool pass_eta1 = false;
    bool pass_eta2 = false;
    bool pass_KR = false;
    bool pass_D = false;
    bool pass = false;
};

/// Structural and smallness conditions for the game, with the matrix norm
/// taken as the spectral norm and suprema over grid nodes and breakpoints.
H2Report check_H2(const GameSpec& gs, const TimeGrid& grid);

/// Aggregated mean-field system in (X, sum K_i p_i, sum K_i q_i):
///   f = A x - y + D E[x] + beta
///   sigma = sigma_t x + alpha
///   h = -A'y - (sum K_i M_i) x - D' E[y] - (sum K_i Gamma_i) E[x] - sigma_t' z
///   g = (sum K_i Q_i) x + (sum K_i R_i) E[x]
/// Throws when eta1 or eta2 is not positive or the commutation residuals
/// exceed 1e-10, unless `force`. A forced build can carry a nonpositive k'.
MfProblem build_aggregated(const GameSpec& gs, bool force = false);

struct CostEstimate {
    double value = 0.0;
    double std_error = 0.0;
};

struct NashResult {
    MfSolution aggregated;
    std::vector<PathEnsemble> p; // per player, nodes, n components
    std::vector<PathEnsemble> q; // per player, steps, n components
    std::vector<PathEnsemble> u; // per player, nodes, m_i components
    std::vector<CostEstimate> costs;
    /// max_k mean |sum K_i p_i(t_k) - Y(t_k)|^2
    double aggregation_residual = 0.0;
    /// Fixed-point passes on E[p_i] needed per player; 0 means not settled.
    std::vector<std::size_t> adjoint_passes;

    bool converged() const { return aggregated.diagnostics.converged(); }
};

/// Solves the aggregated system, then each player's adjoint equation
///   p_i(T) = Q_i X_T + R_i E[X_T]
///   -dp_i = (A'p_i + M_i X + D'E[p_i] + Gamma_i E[X] + sigma'q_i) dt - q_i dW
/// by regression along the solved X, and sets u_i = -N_i^{-1} C_i' p_i.
/// Propagates Diverged.
NashResult solve_nash(const GameSpec& gs, const TimeGrid& grid, const SchemeParams& params,
                      std::uint64_t seed);

/// Monte Carlo estimate of J_i with trapezoidal time quadrature. The
/// standard error uses the delta-method influence of each particle.
CostEstimate cost(const GameSpec& gs, const TimeGrid& grid, std::size_t player,
                  const PathEnsemble& x, const std::vector<PathEnsemble>& controls);

struct DeviationReport {
    std::size_t player = 0;
    double magnitude = 0.0;
    double baseline_cost = 0.0;
    /// J_i(deviated) - J_i(baseline) and its paired standard error.
    std::vector<double> deltas;
    std::vector<double> stderrs;
    double min_delta = 0.0;
    /// Stderr belonging to the smallest delta.
    double min_delta_stderr = 0.0;
    bool pass = false;
};

/// Unilateral deviation check for player i. Perturbations alternate between
/// constant directions c and affine feedback c + K (X_t - E[X_t]), each used
/// with both signs; the state is re-simulated on the solution's Brownian
/// bundle with the other players' controls held fixed. Passes when every
/// cost change is at least -3 paired standard errors.
DeviationReport deviation_test(const GameSpec& gs, const NashResult& nash, std::size_t player,
                               std::size_t perturbations, double magnitude, std::uint64_t seed);

/// H_i = p'(A x + sum_k C_k u_k + D zeta + beta)
///       + 1/2 (x'M_i x + u_i'N_i u_i + zeta'Gamma_i zeta) + (sigma x + alpha)'q.
double hamiltonian(const GameSpec& gs, std::size_t player, double t, const Vec& x,
                   const std::vector<Vec>& u, const Vec& zeta, const Vec& p, const Vec& q);

/// Two-player planar game whose mean boundary problem becomes singular at T = 1.
GameSpec counterexample_game(double horizon);

/// Mean trajectories of the game: m = E[X], pbar_i = E[p_i].
class MeanSolution {
public:
    struct Piece {
        double t0;
        double t1;
        Mat L;
        Vec b;
    };

    MeanSolution(const GameSpec& gs, std::vector<Piece> pieces, Vec w0, double det,
                 double cond);

    double det() const noexcept { return det_; }
    double cond() const noexcept { return cond_; }

    /// (m, pbar_1, ..., pbar_m) at time t.
    Vec state(double t) const;
    Vec mean_x(double t) const;
    Vec mean_p(std::size_t player, double t) const;
    /// -N_i^{-1} C_i' pbar_i(t)
    Vec mean_control(std::size_t player, double t) const;

private:
    std::size_t n_;
    std::vector<Mat> gain_; // -N_i^{-1} C_i'
    std::vector<Piece> pieces_;
    Vec w0_;
    double det_;
    double cond_;
};

struct Nonexistence {
    double det = 0.0;
    double cond = 0.0;
};

/// Deterministic two-point boundary problem for the means
///   m' = (A + D) m - sum_i K_i pbar_i + beta,        m(0) = x0
///   pbar_i' = -(A + D)' pbar_i - (M_i + Gamma_i) m,  pbar_i(T) = (Q_i + R_i) m(T)
/// solved by exact propagation over each constant piece. Returns
/// Nonexistence when |det B| < 1e-9 times the product of B's row norms.
/// Rejects games with nonzero sigma, whose adjoint mean is not closed.
std::variant<MeanSolution, Nonexistence> solve_mean_fbode(const GameSpec& gs);

} // namespace mfbsde
