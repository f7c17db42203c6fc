#include "mfbsde/lqgame.hpp"

#include "support.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <variant>

using namespace mfbsde;
using testing_support::riccati_at_zero;
using testing_support::scalar;
using testing_support::scalar_game;

namespace {

Vec vec2(double a, double b) {
    Vec v(2);
    v << a, b;
    return v;
}

// Independent oracle for the counterexample means: p_i is constant, so
// m_T solves (I + T S) m_T = x0 with S = sum_i K_i Q_i.
Vec counterexample_terminal_mean(double T) {
    Mat S(2, 2);
    S << 1, -2, -2, 1;
    return (Mat::Identity(2, 2) + T * S).inverse() * vec2(1.0, 2.0);
}

} // namespace

TEST(CoefficientPath, PiecewiseLookup) {
    const auto p = CoefficientPath::piecewise({0.0, 0.5}, {scalar(1.0), scalar(3.0)});
    EXPECT_EQ(p.at(0.0)(0, 0), 1.0);
    EXPECT_EQ(p.at(0.49)(0, 0), 1.0);
    EXPECT_EQ(p.at(0.5)(0, 0), 3.0);
    EXPECT_EQ(p.at(2.0)(0, 0), 3.0);
    EXPECT_DOUBLE_EQ(p.sup_norm(), 3.0);
    EXPECT_FALSE(p.is_zero());
    EXPECT_THROW(CoefficientPath::piecewise({0.1}, {scalar(1.0)}), std::invalid_argument);
    EXPECT_THROW(CoefficientPath::piecewise({0.0, 0.0}, {scalar(1.0), scalar(2.0)}),
                 std::invalid_argument);
}

TEST(GameSpec, BreakpointsMergeAllPaths) {
    GameSpec gs = scalar_game(0.1, 1, 1, 1, 1, 0.5, 1.0, 2.0);
    gs.A = CoefficientPath::piecewise({0.0, 0.5, 3.0}, {scalar(0), scalar(1), scalar(2)});
    gs.players[0].M = CoefficientPath::piecewise({0.0, 1.5}, {scalar(1), scalar(2)});
    EXPECT_EQ(gs.breakpoints(), (std::vector<double>{0.0, 0.5, 1.5, 2.0}));
}

TEST(GameSpec, ValidateRejectsBadInputs) {
    GameSpec gs = scalar_game(0.1, 1, 1, 1, 1, 0.5);
    EXPECT_NO_THROW(gs.validate());
    GameSpec g = gs;
    g.players[0].N = scalar(-1.0);
    EXPECT_THROW(g.validate(), std::invalid_argument);
    g = gs;
    g.players[0].C = Mat::Ones(2, 1);
    EXPECT_THROW(g.validate(), std::invalid_argument);
    g = counterexample_game(1.0);
    g.players[1].N = Mat::Identity(2, 2);
    EXPECT_THROW(g.validate(), std::invalid_argument);
    g = counterexample_game(1.0);
    Mat q(2, 2);
    q << 1, 0.5, 0, 1;
    g.players[0].Q = q;
    EXPECT_THROW(g.validate(), std::invalid_argument);
    g = gs;
    g.players.clear();
    EXPECT_THROW(g.validate(), std::invalid_argument);
}

TEST(H2, CounterexampleFailsMonotonicity) {
    const GameSpec gs = counterexample_game(1.0);
    const auto rep = check_H2(gs, TimeGrid(1.0, 10));
    Mat K1(2, 2), K2(2, 2);
    K1 << 1, -2, -2, 4;
    K2 << 4, -2, -2, 1;
    EXPECT_LT((rep.K[0] - K1).norm(), 1e-14);
    EXPECT_LT((rep.K[1] - K2).norm(), 1e-14);
    Mat S(2, 2);
    S << 1, -2, -2, 1;
    EXPECT_LT((rep.sum_KQ - S).norm(), 1e-14);
    EXPECT_NEAR(rep.eta1, -1.0, 1e-12);
    EXPECT_FALSE(rep.pass_eta1);
    EXPECT_FALSE(rep.pass);
    EXPECT_THROW(build_aggregated(gs), std::invalid_argument);
    EXPECT_NO_THROW(build_aggregated(gs, true));
}

TEST(H2, ScalarGamePassesAndDBoundIsSharp) {
    GameSpec gs = scalar_game(0.1, 1, 1, 1, 1, 0.5);
    const TimeGrid grid(1.0, 10);
    auto rep = check_H2(gs, grid);
    EXPECT_TRUE(rep.pass);
    EXPECT_NEAR(rep.eta1, 1.0, 1e-14);
    EXPECT_NEAR(rep.eta2, 1.0, 1e-14);
    const double bound = std::min(2 * (std::sqrt(2.0) - 1), std::sqrt(0.5));
    EXPECT_NEAR(rep.bound, bound, 1e-14);

    gs.D = CoefficientPath::constant(scalar(0.9 * bound));
    EXPECT_TRUE(check_H2(gs, grid).pass);
    gs.D = CoefficientPath::constant(scalar(-1.1 * bound));
    rep = check_H2(gs, grid);
    EXPECT_FALSE(rep.pass_D);
    EXPECT_FALSE(rep.pass);
}

TEST(H2, AggregatedConstantsAndMonotonicity) {
    GameSpec gs = scalar_game(0.2, 1, 1, 2, 1, 0.5);
    gs.D = CoefficientPath::constant(scalar(0.3));
    const MfProblem p = build_aggregated(gs);
    EXPECT_NEAR(p.lipschitz.c_nu, 0.3, 1e-14);
    EXPECT_NEAR(p.lipschitz.c_g_nu, 0.0, 1e-14);
    EXPECT_NEAR(p.monotonicity.k, 1.0, 1e-14);   // min(1, eta2 = 2)
    EXPECT_NEAR(p.monotonicity.k_prime, 1.0, 1e-14);

    // A(u, u') = -|dy|^2 - dx K M dx for law-free sigma and equal laws.
    const auto nu = EmpiricalMeasure::point_mass(vec2(0.4, -0.1), 2);
    const Point u{StateVec::Constant(1, 1.0), StateVec::Constant(1, 0.5), NoiseMat::Constant(1, 1, 0.2)};
    const Point v{StateVec::Constant(1, -0.5), StateVec::Constant(1, 2.0), NoiseMat::Constant(1, 1, -1.0)};
    EXPECT_NEAR(eval_A(p, 0.3, u, v, nu), -(1.5 * 1.5) - 2.0 * (1.5 * 1.5), 1e-12);
    EXPECT_TRUE(check_H1(p, 300, 1).pass);
}

TEST(MeanBoundary, DeterminantMatchesClosedForm) {
    for (double T : {0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.5}) {
        const auto r = solve_mean_fbode(counterexample_game(T));
        ASSERT_TRUE(std::holds_alternative<MeanSolution>(r)) << "T=" << T;
        EXPECT_NEAR(std::get<MeanSolution>(r).det(), (1 - T) * (1 + 3 * T), 1e-9) << "T=" << T;
    }
    const auto r = solve_mean_fbode(counterexample_game(1.0));
    ASSERT_TRUE(std::holds_alternative<Nonexistence>(r));
    EXPECT_NEAR(std::get<Nonexistence>(r).det, 0.0, 1e-9);
}

TEST(MeanBoundary, TerminalMeanAndControlsAtHalf) {
    const auto r = solve_mean_fbode(counterexample_game(0.5));
    const auto& s = std::get<MeanSolution>(r);
    const Vec mT = s.mean_x(0.5);
    EXPECT_NEAR(mT[0], 2.8, 1e-9);
    EXPECT_NEAR(mT[1], 3.2, 1e-9);
    EXPECT_LT((mT - counterexample_terminal_mean(0.5)).norm(), 1e-9);
    for (double t : {0.0, 0.25, 0.5}) {
        EXPECT_NEAR(s.mean_control(0, t)[0], -2.8, 1e-9);
        EXPECT_NEAR(s.mean_control(1, t)[0], -3.2, 1e-9);
    }
    // m is linear in t because the controls are constant.
    const Vec mid = s.mean_x(0.25);
    EXPECT_LT((mid - 0.5 * (vec2(1, 2) + mT)).norm(), 1e-9);
}

TEST(MeanBoundary, ScalarGameMatchesRiccati) {
    const GameSpec gs = scalar_game(0.1, 1, 1, 1, 1, 0.5);
    const auto r = solve_mean_fbode(gs);
    const auto& s = std::get<MeanSolution>(r);
    EXPECT_NEAR(s.mean_p(0, 0.0)[0], riccati_at_zero(0.1, 1, 1, 1, 1.0), 1e-8);
}

TEST(MeanBoundary, RejectsStateDependentNoise) {
    GameSpec gs = scalar_game(0.1, 1, 1, 1, 1, 0.5);
    gs.sigma = CoefficientPath::constant(scalar(0.2));
    EXPECT_THROW(solve_mean_fbode(gs), std::invalid_argument);
}

TEST(Hamiltonian, ReferenceValueAndMinimiser) {
    const GameSpec gs = counterexample_game(0.5);
    const Vec x = vec2(0.5, -1.0), zeta = vec2(1.0, 1.0), p = vec2(0.3, 0.7), q = vec2(0.1, 0.2);
    const std::vector<Vec> u{Vec::Constant(1, 0.4), Vec::Constant(1, -0.6)};
    // drift = x - zeta + C1 u1 + C2 u2 = (-0.5, -2) + (0.4, -0.8) + (1.2, -0.6)
    const Vec drift = vec2(1.1, -3.4);
    const double expected = p.dot(drift) + 0.5 * 0.16 + q.dot(vec2(1, 1));
    EXPECT_NEAR(hamiltonian(gs, 0, 0.1, x, u, zeta, p, q), expected, 1e-12);

    // Grid search over u_1 lands on -N^{-1} C_1' p.
    const double ustar = -(1.0 * 0.3 - 2.0 * 0.7);
    double best = 1e300, arg = 0.0;
    for (int j = -5000; j <= 5000; ++j) {
        std::vector<Vec> w = u;
        w[0][0] = j * 1e-3;
        const double h = hamiltonian(gs, 0, 0.1, x, w, zeta, p, q);
        if (h < best) {
            best = h;
            arg = w[0][0];
        }
    }
    EXPECT_NEAR(arg, ustar, 1e-3);
}

TEST(Cost, DeterministicExamples) {
    const TimeGrid grid(1.0, 10);
    // Pure control cost: A = 0, no noise, J = 1/2 |c|^2 T.
    GameSpec gs = scalar_game(0.0, 1, 1, 0, 0, 0.0, 0.0);
    PathEnsemble x(4, grid.nodes(), 1);
    const double c = 0.7;
    PathEnsemble u(4, grid.nodes(), 1, c);
    auto e = cost(gs, grid, 0, x, {u});
    EXPECT_NEAR(e.value, 0.5 * c * c, 1e-12);
    EXPECT_NEAR(e.std_error, 0.0, 1e-12);

    // X = 1 throughout, u = 0: 1/2 Q + 1/2 R + 1/2 M T.
    gs = scalar_game(0.0, 1, 1, 1, 1, 0.0, 1.0);
    gs.players[0].R = scalar(1.0);
    PathEnsemble ones(4, grid.nodes(), 1, 1.0);
    PathEnsemble zero(4, grid.nodes(), 1, 0.0);
    EXPECT_NEAR(cost(gs, grid, 0, ones, {zero}).value, 1.5, 1e-12);
    gs.players[0].Gamma = CoefficientPath::constant(scalar(1.0));
    EXPECT_NEAR(cost(gs, grid, 0, ones, {zero}).value, 2.0, 1e-12);
}

TEST(Cost, StandardErrorOfSpreadTerminal) {
    // Q = 1, X_T = +-1 with equal frequency: J = 1/2, influence has zero spread.
    const TimeGrid grid(1.0, 2);
    GameSpec gs = scalar_game(0.0, 1, 1, 0, 1, 0.0, 0.0);
    PathEnsemble x(4, grid.nodes(), 1);
    for (std::size_t i = 0; i < 4; ++i) x.at(i, 2, 0) = (i % 2 == 0) ? 1.0 : -1.0;
    PathEnsemble u(4, grid.nodes(), 1);
    const auto e = cost(gs, grid, 0, x, {u});
    EXPECT_NEAR(e.value, 0.5, 1e-14);
    EXPECT_NEAR(e.std_error, 0.0, 1e-14);
    // X_T in {0, 2}: values 0 and 2, sample sd sqrt(4/3), se = sd / 2.
    for (std::size_t i = 0; i < 4; ++i) x.at(i, 2, 0) = (i % 2 == 0) ? 2.0 : 0.0;
    const auto f = cost(gs, grid, 0, x, {u});
    EXPECT_NEAR(f.value, 1.0, 1e-14);
    EXPECT_NEAR(f.std_error, std::sqrt(4.0 / 3.0) / 2.0, 1e-12);
}

TEST(Nash, ZeroCostGameHasZeroAdjoint) {
    const GameSpec gs = scalar_game(0.1, 1, 1, 0, 0, 0.5);
    SchemeParams sp;
    sp.particles = 300;
    sp.delta = 0.01;
    sp.tol = 1e-6;
    const auto nash = solve_nash(gs, TimeGrid(1.0, 10), sp, 2);
    ASSERT_TRUE(nash.converged());
    for (std::size_t k = 0; k < 11; ++k)
        for (std::size_t i = 0; i < 300; i += 37) {
            EXPECT_NEAR(nash.p[0].at(i, k, 0), 0.0, 1e-12);
            EXPECT_NEAR(nash.u[0].at(i, k, 0), 0.0, 1e-12);
        }
    EXPECT_NEAR(nash.costs[0].value, 0.0, 1e-12);
}

TEST(Nash, ScalarGameAgainstRiccatiAndDeviations) {
    const GameSpec gs = scalar_game(0.1, 1, 1, 1, 1, 0.5);
    SchemeParams sp;
    sp.particles = 2000;
    sp.delta = 0.01;
    sp.tol = 1e-5;
    const auto nash = solve_nash(gs, TimeGrid(1.0, 50), sp, 11);
    ASSERT_TRUE(nash.converged());
    double y0 = 0.0;
    for (std::size_t i = 0; i < 2000; ++i) y0 += nash.p[0].at(i, 0, 0);
    y0 /= 2000.0;
    const double oracle = riccati_at_zero(0.1, 1, 1, 1, 1.0);
    EXPECT_NEAR(y0 / oracle, 1.0, 0.03);
    EXPECT_LT(nash.aggregation_residual, 1e-10);
    EXPECT_GT(nash.adjoint_passes[0], 0u);

    const auto zero = deviation_test(gs, nash, 0, 4, 0.0, 5);
    for (double d : zero.deltas) EXPECT_EQ(d, 0.0);

    const auto dev = deviation_test(gs, nash, 0, 6, 0.1, 5);
    EXPECT_TRUE(dev.pass);
    EXPECT_EQ(dev.deltas.size(), 6u);

    NashResult bad = nash;
    for (std::size_t i = 0; i < 2000; ++i)
        for (std::size_t k = 0; k < 51; ++k) bad.u[0].at(i, k, 0) += 0.5;
    EXPECT_FALSE(deviation_test(gs, bad, 0, 6, 0.1, 5).pass);
}
