#pragma once

#include "mfbsde/config.hpp"
#include "mfbsde/lqgame.hpp"

#include <string>

namespace testing_support {

using namespace mfbsde;

inline std::string data(const std::string& name) { return std::string(MFBSDE_TEST_DATA) + "/" + name; }

inline Mat scalar(double v) { return Mat::Constant(1, 1, v); }

// d = 1: f = -y + c E[x], sigma = 1, h = -x + c E[y], g = x + c E[x].
inline MfProblem toy_problem(double c = 0.1, double horizon = 1.0) {
    LinearSpec s;
    s.dim = 1;
    s.noise_dim = 1;
    s.horizon = horizon;
    s.x0 = Vec::Ones(1);
    const Mat z = scalar(0.0);
    s.Fx = z;
    s.Fy = scalar(-1.0);
    s.Fmx = scalar(c);
    s.Fmy = z;
    s.f0 = Vec::Zero(1);
    s.Sx = {z};
    s.S0 = scalar(1.0);
    s.Hx = scalar(-1.0);
    s.Hy = z;
    s.Hz = {z};
    s.Hmx = z;
    s.Hmy = scalar(c);
    s.h0 = Vec::Zero(1);
    s.Gx = scalar(1.0);
    s.Gm = scalar(c);
    s.g0 = Vec::Zero(1);
    s.lipschitz = LipschitzProfile{1.0, c, 1.0, c};
    s.monotonicity = {1.0, 1.0, MonotonicityVariant::H1Prime};
    return build_linear(s);
}

// One player, n = 1, constant coefficients, D = R = Gamma = 0.
inline GameSpec scalar_game(double a, double C, double N, double M, double Q, double alpha,
                            double x0 = 1.0, double horizon = 1.0) {
    GameSpec gs;
    gs.n = 1;
    gs.horizon = horizon;
    gs.x0 = Vec::Constant(1, x0);
    gs.A = CoefficientPath::constant(scalar(a));
    gs.D = CoefficientPath::constant(scalar(0.0));
    gs.beta = CoefficientPath::constant(scalar(0.0));
    gs.sigma = CoefficientPath::constant(scalar(0.0));
    gs.alpha = CoefficientPath::constant(scalar(alpha));
    PlayerSpec p;
    p.C = scalar(C);
    p.N = scalar(N);
    p.M = CoefficientPath::constant(scalar(M));
    p.Gamma = CoefficientPath::constant(scalar(0.0));
    p.Q = scalar(Q);
    p.R = scalar(0.0);
    gs.players = {p};
    return gs;
}

// Backward RK4 for P' = -2aP + K P^2 - M, P(T) = Q; returns P(0).
inline double riccati_at_zero(double a, double K, double M, double Q, double T,
                              int steps = 100000) {
    auto F = [&](double p) { return -2.0 * a * p + K * p * p - M; };
    const double h = T / steps;
    double P = Q;
    for (int i = 0; i < steps; ++i) {
        const double k1 = F(P);
        const double k2 = F(P - 0.5 * h * k1);
        const double k3 = F(P - 0.5 * h * k2);
        const double k4 = F(P - h * k3);
        P -= h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4);
    }
    return P;
}

} // namespace testing_support
