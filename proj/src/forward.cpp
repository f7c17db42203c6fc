#include "mfbsde/forward.hpp"

#include <atomic>
#include <limits>
#include <stdexcept>

namespace mfbsde {

void store_noise(PathEnsemble& z, std::size_t particle, std::size_t step, const NoiseMat& value) {
    std::size_t c = 0;
    for (Eigen::Index j = 0; j < value.cols(); ++j)
        for (Eigen::Index i = 0; i < value.rows(); ++i) z.at(particle, step, c++) = value(i, j);
}

NoiseMat load_noise(const PathEnsemble& z, std::size_t particle, std::size_t step,
                    std::size_t rows, std::size_t cols) {
    NoiseMat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    std::size_t c = 0;
    for (Eigen::Index j = 0; j < m.cols(); ++j)
        for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = z.at(particle, step, c++);
    return m;
}

namespace {

void check_shapes(const MfProblem& p, const TimeGrid& grid, const BrownianBundle& bundle,
                  const PathEnsemble& y_prev, const PathEnsemble& z_prev,
                  std::span<const EmpiricalMeasure> flow, double delta) {
    p.validate();
    const std::size_t n = bundle.particles();
    if (bundle.steps() != grid.steps() || bundle.dim() != p.noise_dim)
        throw std::invalid_argument("propagate: Brownian bundle does not match grid/problem");
    if (y_prev.particles() != n || y_prev.nodes() != grid.nodes() || y_prev.dim() != p.dim)
        throw std::invalid_argument("propagate: previous Y ensemble has wrong shape");
    if (z_prev.particles() != n || z_prev.nodes() != grid.steps() ||
        z_prev.dim() != p.dim * p.noise_dim)
        throw std::invalid_argument("propagate: previous Z ensemble has wrong shape");
    if (flow.size() != grid.nodes())
        throw std::invalid_argument("propagate: frozen flow needs one cloud per node");
    for (const auto& nu : flow)
        if (nu.dim() != 2 * p.dim)
            throw std::invalid_argument("propagate: frozen flow clouds must live in R^{2d}");
    if (!(delta >= 0.0)) throw std::invalid_argument("propagate: delta must be >= 0");
}

PathEnsemble sweep(const MfProblem& p, const TimeGrid& grid, const BrownianBundle& bundle,
                   const CouplingSource& coupling, const PathEnsemble& y_prev,
                   const PathEnsemble& z_prev, std::span<const EmpiricalMeasure> flow,
                   double delta) {
    const std::size_t n = bundle.particles();
    const std::size_t d = p.dim;
    const std::size_t q = p.noise_dim;
    const double dt = grid.dt();

    PathEnsemble x(n, grid.nodes(), d);
    for (std::size_t i = 0; i < n; ++i) x.set(i, 0, p.x0);

    std::atomic<std::size_t> bad_step{std::numeric_limits<std::size_t>::max()};

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(n); ++pi) {
        const auto i = static_cast<std::size_t>(pi);
        StateVec xk = p.x0;
        StateVec yk(static_cast<Eigen::Index>(d));
        NoiseMat zk(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(q));
        for (std::size_t k = 0; k < grid.steps(); ++k) {
            const double t = grid.time(k);
            coupling.evaluate(k, i, xk, yk, zk);
            const EmpiricalMeasure& nu = flow[k];

            StateVec drift = p.drift(t, xk, yk, zk, nu);
            NoiseMat vol = p.diffusion(t, xk, yk, zk, p.law_free_sigma ? nullptr : &nu);
            if (delta > 0.0) {
                drift -= delta * (yk - y_prev.value(i, k));
                if (!p.law_free_sigma) vol -= delta * (zk - load_noise(z_prev, i, k, d, q));
            }
            xk += drift * dt + vol * bundle.increment(i, k);
            if (!xk.allFinite()) {
                std::size_t expected = bad_step.load();
                while (k < expected && !bad_step.compare_exchange_weak(expected, k)) {
                }
                break;
            }
            x.set(i, k + 1, xk);
        }
    }

    if (bad_step.load() != std::numeric_limits<std::size_t>::max())
        throw NumericalError("propagate: non-finite forward state", bad_step.load());
    return x;
}

} // namespace

PathEnsemble propagate(const MfProblem& p, const TimeGrid& grid, const BrownianBundle& bundle,
                       const PathEnsemble& y, const PathEnsemble& z,
                       const PathEnsemble& y_prev, const PathEnsemble& z_prev,
                       std::span<const EmpiricalMeasure> frozen_flow, double delta) {
    check_shapes(p, grid, bundle, y_prev, z_prev, frozen_flow, delta);
    if (!y.same_shape(y_prev) || !z.same_shape(z_prev))
        throw std::invalid_argument("propagate: Y/Z ensembles have wrong shape");
    const EnsembleCoupling coupling(y, z, p.dim, p.noise_dim);
    return sweep(p, grid, bundle, coupling, y_prev, z_prev, frozen_flow, delta);
}

PathEnsemble propagate(const MfProblem& p, const TimeGrid& grid, const BrownianBundle& bundle,
                       const CouplingSource& coupling, const PathEnsemble& y_prev,
                       const PathEnsemble& z_prev,
                       std::span<const EmpiricalMeasure> frozen_flow, double delta) {
    check_shapes(p, grid, bundle, y_prev, z_prev, frozen_flow, delta);
    return sweep(p, grid, bundle, coupling, y_prev, z_prev, frozen_flow, delta);
}

} // namespace mfbsde
