#include "mfbsde/backward.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mfbsde {

void DecouplingField::evaluate(std::size_t step, std::size_t, const StateVec& x, StateVec& y,
                               NoiseMat& z) const {
    const Step& s = steps_.at(step);
    FeatureRow row;
    s.regression.features(x, row);
    y = (row * s.y_coef).transpose();
    const auto d = static_cast<Eigen::Index>(dim_);
    const auto q = static_cast<Eigen::Index>(noise_dim_);
    z.resize(d, q);
    for (Eigen::Index j = 0; j < q; ++j)
        for (Eigen::Index i = 0; i < d; ++i) z(i, j) = row.dot(s.z_coef.col(j * d + i));
}

double BackwardDiagnostics::max_residual() const {
    double m = 0.0;
    for (double r : residual_rms) m = std::max(m, r);
    return m;
}

BackwardResult solve_backward(const MfProblem& p, const TimeGrid& grid,
                              const BrownianBundle& bundle, const PathEnsemble& x,
                              std::span<const EmpiricalMeasure> frozen_flow,
                              const EmpiricalMeasure& terminal_law,
                              const RegressionBasis& basis, std::size_t picard_inner,
                              const DecouplingField* relax_from, double relax) {
    p.validate();
    const std::size_t n = bundle.particles();
    const std::size_t d = p.dim;
    const std::size_t q = p.noise_dim;
    const std::size_t steps = grid.steps();
    const double dt = grid.dt();
    const auto di = static_cast<Eigen::Index>(d);
    const auto qi = static_cast<Eigen::Index>(q);

    if (bundle.steps() != steps || bundle.dim() != q)
        throw std::invalid_argument("solve_backward: Brownian bundle does not match");
    if (x.particles() != n || x.nodes() != grid.nodes() || x.dim() != d)
        throw std::invalid_argument("solve_backward: forward ensemble has wrong shape");
    if (frozen_flow.size() != grid.nodes())
        throw std::invalid_argument("solve_backward: frozen flow needs one cloud per node");
    if (terminal_law.dim() != d)
        throw std::invalid_argument("solve_backward: terminal law must live in R^d");
    if (picard_inner == 0)
        throw std::invalid_argument("solve_backward: picard_inner must be >= 1");
    if (!(relax > 0.0 && relax <= 1.0))
        throw std::invalid_argument("solve_backward: relax must lie in (0, 1]");
    const bool blend = relax_from && !relax_from->empty() && relax < 1.0;
    if (blend && relax_from->steps() != steps)
        throw std::invalid_argument("solve_backward: relaxation field has wrong length");
    if (!x.all_finite()) throw NumericalError("solve_backward: non-finite forward state", 0);

    BackwardResult out{PathEnsemble(n, grid.nodes(), d), PathEnsemble(n, steps, d * q), {}, {}};
    out.diagnostics.residual_rms.assign(steps, 0.0);

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(n); ++pi) {
        const auto i = static_cast<std::size_t>(pi);
        out.y.set(i, steps, p.terminal(x.value(i, steps), terminal_law));
    }
    if (!out.y.slice(steps).allFinite())
        throw NumericalError("solve_backward: non-finite terminal value", steps);

    std::vector<DecouplingField::Step> field(steps);
    Mat next(n, d);
    Mat target(n, d);
    Mat z_target(n, d * q);

    for (std::size_t k = steps; k-- > 0;) {
        const double t = grid.time(k);
        const EmpiricalMeasure& nu = frozen_flow[k];
        SliceRegression reg(basis, x.slice(k));

        next = out.y.slice(k + 1);
        const Mat cond_coef = reg.fit(next);
        const Mat cond = reg.predict(cond_coef);

        for (std::size_t i = 0; i < n; ++i)
            for (std::size_t j = 0; j < q; ++j) {
                const double w = bundle.increment(i, k, j) / dt;
                for (std::size_t r = 0; r < d; ++r)
                    z_target(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j * d + r)) =
                        (next(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r)) -
                         cond(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(r))) * w;
            }
        Mat z_coef = reg.fit(z_target);
        const Mat z_fit = reg.predict(z_coef);

        Mat y_cur = next;
        Mat y_coef;
        for (std::size_t it = 0; it < picard_inner; ++it) {
#pragma omp parallel for schedule(static)
            for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(n); ++pi) {
                const auto row = static_cast<Eigen::Index>(pi);
                const auto i = static_cast<std::size_t>(pi);
                NoiseMat zk(di, qi);
                for (Eigen::Index j = 0; j < qi; ++j)
                    for (Eigen::Index r = 0; r < di; ++r) zk(r, j) = z_fit(row, j * di + r);
                const StateVec xk = x.value(i, k);
                const StateVec yk = y_cur.row(row).transpose();
                const StateVec h = p.driver(t, xk, yk, zk, nu);
                target.row(row) = next.row(row) - dt * h.transpose();
            }
            y_coef = reg.fit(target);
            y_cur = reg.predict(y_coef);
        }
        if (!y_cur.allFinite() || !z_fit.allFinite())
            throw NumericalError("solve_backward: non-finite regression output", k);

        out.y.slice(k) = y_cur;
        out.z.slice(k) = z_fit;
        out.diagnostics.residual_rms[k] =
            std::sqrt((target - y_cur).squaredNorm() / static_cast<double>(n));
        if (reg.ridge()) out.diagnostics.ridge_steps.push_back(k);

        if (blend) {
            // The old maps evaluated on this slice, projected on the new basis.
            Mat y_old(n, d);
            Mat z_old(n, d * q);
#pragma omp parallel for schedule(static)
            for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(n); ++pi) {
                const auto i = static_cast<std::size_t>(pi);
                StateVec yv;
                NoiseMat zv;
                relax_from->evaluate(k, i, x.value(i, k), yv, zv);
                y_old.row(pi) = yv.transpose();
                for (Eigen::Index j = 0; j < qi; ++j)
                    for (Eigen::Index r = 0; r < di; ++r) z_old(pi, j * di + r) = zv(r, j);
            }
            y_coef = relax * y_coef + (1.0 - relax) * reg.fit(y_old);
            z_coef = relax * z_coef + (1.0 - relax) * reg.fit(z_old);
        }

        reg.release_design();
        field[k] = {std::move(reg), std::move(y_coef), std::move(z_coef)};
    }
    std::reverse(out.diagnostics.ridge_steps.begin(), out.diagnostics.ridge_steps.end());
    out.field = DecouplingField(d, q, std::move(field));
    return out;
}

} // namespace mfbsde
