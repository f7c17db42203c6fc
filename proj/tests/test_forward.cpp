#include "mfbsde/forward.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace mfbsde;

namespace {

// dX = (a X + b Y) dt + s dW in one dimension, law-free.
MfProblem linear_forward(double a, double b, double s, bool law_free = true) {
    MfProblem p;
    p.dim = 1;
    p.noise_dim = 1;
    p.x0 = StateVec::Constant(1, 1.0);
    p.horizon = 1.0;
    p.drift = [a, b](double, const StateVec& x, const StateVec& y, const NoiseMat&,
                     const EmpiricalMeasure&) { return StateVec(a * x + b * y); };
    p.diffusion = [s](double, const StateVec&, const StateVec&, const NoiseMat&,
                      const EmpiricalMeasure*) { return NoiseMat::Constant(1, 1, s); };
    p.driver = [](double, const StateVec& x, const StateVec&, const NoiseMat&,
                  const EmpiricalMeasure&) { return StateVec(StateVec::Zero(x.size())); };
    p.terminal = [](const StateVec& x, const EmpiricalMeasure&) { return x; };
    p.law_free_sigma = law_free;
    return p;
}

std::vector<EmpiricalMeasure> zero_flow(const TimeGrid& g, std::size_t dim) {
    return std::vector<EmpiricalMeasure>(g.nodes(),
                                         EmpiricalMeasure::point_mass(Vec::Zero(2 * dim)));
}

} // namespace

TEST(Forward, NoiselessEulerIsExactGeometricProduct) {
    const double a = 0.7;
    const MfProblem p = linear_forward(a, 0.0, 0.0);
    const TimeGrid g(1.0, 20);
    const auto bundle = BrownianBundle::make(g, 3, 1, 5);
    const PathEnsemble y(3, g.nodes(), 1), z(3, g.steps(), 1);
    const auto flow = zero_flow(g, 1);
    const PathEnsemble x = propagate(p, g, bundle, y, z, y, z, flow, 0.0);
    double expected = 1.0;
    for (std::size_t k = 0; k < g.nodes(); ++k) {
        for (std::size_t i = 0; i < 3; ++i) EXPECT_NEAR(x.at(i, k, 0), expected, 1e-14);
        expected *= 1.0 + a * g.dt();
    }
}

TEST(Forward, AdditiveNoiseReproducesBrownianPath) {
    const MfProblem p = linear_forward(0.0, 0.0, 2.0);
    const TimeGrid g(1.0, 10);
    const auto bundle = BrownianBundle::make(g, 4, 1, 9);
    const PathEnsemble y(4, g.nodes(), 1), z(4, g.steps(), 1);
    const auto flow = zero_flow(g, 1);
    const PathEnsemble x = propagate(p, g, bundle, y, z, y, z, flow, 0.0);
    for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t k = 0; k < g.nodes(); ++k)
            EXPECT_NEAR(x.at(i, k, 0), 1.0 + 2.0 * bundle.brownian(i, k)[0], 1e-12);
}

TEST(Forward, DeltaTermPullsTowardsPreviousY) {
    // f = 0, sigma = 0, Y = 1, Yprev = 0: X_k = x0 - delta * k * dt.
    const MfProblem p = linear_forward(0.0, 0.0, 0.0);
    const TimeGrid g(1.0, 8);
    const auto bundle = BrownianBundle::make(g, 2, 1, 1);
    const PathEnsemble y(2, g.nodes(), 1, 1.0), y_prev(2, g.nodes(), 1, 0.0);
    const PathEnsemble z(2, g.steps(), 1);
    const auto flow = zero_flow(g, 1);
    const double delta = 0.3;
    const PathEnsemble x = propagate(p, g, bundle, y, z, y_prev, z, flow, delta);
    for (std::size_t k = 0; k < g.nodes(); ++k)
        EXPECT_NEAR(x.at(0, k, 0), 1.0 - delta * static_cast<double>(k) * g.dt(), 1e-14);
}

TEST(Forward, DeltaTermInDiffusionOnlyWhenLawDependent) {
    // sigma = 0, Z = 1, Zprev = 0: the diffusion picks up -delta dW only when sigma sees the law.
    const TimeGrid g(1.0, 6);
    const auto bundle = BrownianBundle::make(g, 2, 1, 4);
    const PathEnsemble y(2, g.nodes(), 1);
    const PathEnsemble z(2, g.steps(), 1, 1.0), z_prev(2, g.steps(), 1, 0.0);
    const auto flow = zero_flow(g, 1);
    const double delta = 0.5;

    const PathEnsemble free = propagate(linear_forward(0, 0, 0, true), g, bundle, y, z, y, z_prev,
                                        flow, delta);
    EXPECT_DOUBLE_EQ(free.at(1, g.steps(), 0), 1.0);

    const PathEnsemble dep = propagate(linear_forward(0, 0, 0, false), g, bundle, y, z, y,
                                       z_prev, flow, delta);
    EXPECT_NEAR(dep.at(1, g.steps(), 0), 1.0 - delta * bundle.brownian(1, g.steps())[0], 1e-12);
}

TEST(Forward, CouplingSourceSeesFreshState) {
    // Y = x through the coupling: dX = X dt, so the Euler product appears again.
    struct Identity final : CouplingSource {
        void evaluate(std::size_t, std::size_t, const StateVec& x, StateVec& y,
                      NoiseMat& z) const override {
            y = x;
            z = NoiseMat::Zero(1, 1);
        }
    };
    const MfProblem p = linear_forward(0.0, 1.0, 0.0);
    const TimeGrid g(1.0, 16);
    const auto bundle = BrownianBundle::make(g, 2, 1, 1);
    const PathEnsemble y(2, g.nodes(), 1), z(2, g.steps(), 1);
    const auto flow = zero_flow(g, 1);
    const PathEnsemble x = propagate(p, g, bundle, Identity{}, y, z, flow, 0.0);
    EXPECT_NEAR(x.at(0, g.steps(), 0), std::pow(1.0 + g.dt(), 16.0), 1e-12);
}

TEST(Forward, NonFiniteStateRaisesWithStep) {
    MfProblem p = linear_forward(0.0, 0.0, 0.0);
    p.drift = [](double t, const StateVec& x, const StateVec&, const NoiseMat&,
                 const EmpiricalMeasure&) {
        return StateVec(StateVec::Constant(x.size(), t > 0.5 ? NAN : 0.0));
    };
    const TimeGrid g(1.0, 10);
    const auto bundle = BrownianBundle::make(g, 3, 1, 1);
    const PathEnsemble y(3, g.nodes(), 1), z(3, g.steps(), 1);
    const auto flow = zero_flow(g, 1);
    try {
        propagate(p, g, bundle, y, z, y, z, flow, 0.0);
        FAIL() << "expected NumericalError";
    } catch (const NumericalError& e) {
        EXPECT_EQ(e.step(), 6u);
    }
}

TEST(Forward, ShapeErrors) {
    const MfProblem p = linear_forward(0.0, 0.0, 1.0);
    const TimeGrid g(1.0, 10);
    const auto bundle = BrownianBundle::make(g, 3, 1, 1);
    const PathEnsemble y(3, g.nodes(), 1), z(3, g.steps(), 1);
    const auto flow = zero_flow(g, 1);
    const PathEnsemble bad_y(3, g.steps(), 1);
    EXPECT_THROW(propagate(p, g, bundle, bad_y, z, bad_y, z, flow, 0.0), std::invalid_argument);
    const std::vector<EmpiricalMeasure> short_flow(flow.begin(), flow.end() - 1);
    EXPECT_THROW(propagate(p, g, bundle, y, z, y, z, short_flow, 0.0), std::invalid_argument);
    const auto other = BrownianBundle::make(TimeGrid(1.0, 5), 3, 1, 1);
    EXPECT_THROW(propagate(p, g, other, y, z, y, z, flow, 0.0), std::invalid_argument);
    EXPECT_THROW(propagate(p, g, bundle, y, z, y, z, flow, -1.0), std::invalid_argument);
}

TEST(Forward, NoiseStoreLoadRoundTrip) {
    PathEnsemble z(2, 3, 6);
    NoiseMat m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    store_noise(z, 1, 2, m);
    EXPECT_EQ(load_noise(z, 1, 2, 2, 3), m);
    // Column-major flattening.
    EXPECT_EQ(z.at(1, 2, 1), 4.0);
    EXPECT_EQ(z.at(1, 2, 2), 2.0);
}
