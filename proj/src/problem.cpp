#include "mfbsde/problem.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>
#include <stdexcept>

namespace mfbsde {

void LipschitzProfile::validate() const {
    if (!(c_u >= 0.0 && c_nu >= 0.0 && c_g_x >= 0.0 && c_g_nu >= 0.0))
        throw std::invalid_argument("LipschitzProfile: constants must be nonnegative");
}

std::string to_string(MonotonicityVariant v) {
    return v == MonotonicityVariant::H1 ? "H1" : "H1prime";
}

void MonotonicityProfile::validate() const {
    if (!(k > 0.0) || !(k_prime > 0.0))
        throw std::invalid_argument("MonotonicityProfile: k and k' must be positive");
}

void MfProblem::validate() const {
    if (dim == 0 || dim > static_cast<std::size_t>(kMaxDim))
        throw std::invalid_argument("MfProblem: state dimension out of range");
    if (noise_dim == 0 || noise_dim > static_cast<std::size_t>(kMaxDim))
        throw std::invalid_argument("MfProblem: noise dimension out of range");
    if (static_cast<std::size_t>(x0.size()) != dim)
        throw std::invalid_argument("MfProblem: x0 has wrong dimension");
    if (!(horizon > 0.0))
        throw std::invalid_argument("MfProblem: horizon must be positive");
    if (!drift || !diffusion || !driver || !terminal)
        throw std::invalid_argument("MfProblem: missing coefficient callback");
}

double eval_A(const MfProblem& p, double t, const Point& u, const Point& v,
              const EmpiricalMeasure& nu) {
    const auto d = static_cast<Eigen::Index>(p.dim);
    const auto q = static_cast<Eigen::Index>(p.noise_dim);
    for (const Point* w : {&u, &v})
        if (w->x.size() != d || w->y.size() != d || w->z.rows() != d || w->z.cols() != q)
            throw std::invalid_argument("eval_A: argument dimension mismatch");
    if (nu.dim() != 2 * p.dim)
        throw std::invalid_argument("eval_A: law must live in R^{2d}");

    const EmpiricalMeasure* law = p.law_free_sigma ? nullptr : &nu;
    const StateVec df = p.drift(t, u.x, u.y, u.z, nu) - p.drift(t, v.x, v.y, v.z, nu);
    const StateVec dh = p.driver(t, u.x, u.y, u.z, nu) - p.driver(t, v.x, v.y, v.z, nu);
    const NoiseMat ds = p.diffusion(t, u.x, u.y, u.z, law) - p.diffusion(t, v.x, v.y, v.z, law);
    return df.dot(u.y - v.y) + dh.dot(u.x - v.x) + (ds.array() * (u.z - v.z).array()).sum();
}

namespace {

struct Prober {
    std::mt19937_64 rng;
    std::normal_distribution<double> normal{0.0, 1.0};

    StateVec vec(std::size_t n) {
        StateVec v(static_cast<Eigen::Index>(n));
        for (Eigen::Index i = 0; i < v.size(); ++i) v[i] = normal(rng);
        return v;
    }
    NoiseMat mat(std::size_t r, std::size_t c) {
        NoiseMat m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
        for (Eigen::Index j = 0; j < m.cols(); ++j)
            for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = normal(rng);
        return m;
    }
    EmpiricalMeasure cloud(std::size_t n, std::size_t dim) {
        EmpiricalMeasure::Points pts(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(dim));
        for (Eigen::Index i = 0; i < pts.rows(); ++i)
            for (Eigen::Index j = 0; j < pts.cols(); ++j) pts(i, j) = normal(rng);
        return EmpiricalMeasure(std::move(pts));
    }
};

constexpr std::size_t kProbeCloud = 64;
constexpr double kProbeTolerance = 1e-9;

} // namespace

MonotonicityReport check_H1(const MfProblem& p, std::size_t samples, std::uint64_t seed) {
    p.validate();
    if (samples == 0) throw std::invalid_argument("check_H1: samples must be >= 1");

    MonotonicityReport rep;
    rep.variant = p.monotonicity.variant;
    rep.samples = samples;

    Prober pr{std::mt19937_64(seed)};
    std::uniform_real_distribution<double> time(0.0, p.horizon);
    const bool with_z = p.monotonicity.variant == MonotonicityVariant::H1;

    double worst_op = std::numeric_limits<double>::infinity();
    double worst_term = std::numeric_limits<double>::infinity();
    double k_est = std::numeric_limits<double>::infinity();
    double kp_est = std::numeric_limits<double>::infinity();
    bool op_ok = true;
    bool term_ok = true;

    for (std::size_t s = 0; s < samples; ++s) {
        const double t = time(pr.rng);
        const Point u{pr.vec(p.dim), pr.vec(p.dim), pr.mat(p.dim, p.noise_dim)};
        const Point v{pr.vec(p.dim), pr.vec(p.dim), pr.mat(p.dim, p.noise_dim)};
        const EmpiricalMeasure nu = pr.cloud(kProbeCloud, 2 * p.dim);

        const double a = eval_A(p, t, u, v, nu);
        double denom = (u.x - v.x).squaredNorm() + (u.y - v.y).squaredNorm();
        if (with_z) denom += (u.z - v.z).squaredNorm();
        const double margin = -a - p.monotonicity.k * denom;
        worst_op = std::min(worst_op, margin);
        k_est = std::min(k_est, -a / denom);
        if (margin < -kProbeTolerance * std::max(1.0, denom)) op_ok = false;

        const StateVec x = pr.vec(p.dim);
        const StateVec xp = pr.vec(p.dim);
        const EmpiricalMeasure mu = pr.cloud(kProbeCloud, p.dim);
        const double dx2 = (x - xp).squaredNorm();
        const double inner = (p.terminal(x, mu) - p.terminal(xp, mu)).dot(x - xp);
        const double tmargin = inner - p.monotonicity.k_prime * dx2;
        worst_term = std::min(worst_term, tmargin);
        kp_est = std::min(kp_est, inner / dx2);
        if (tmargin < -kProbeTolerance * std::max(1.0, dx2)) term_ok = false;
    }

    rep.worst_margin_operator = worst_op;
    rep.worst_margin_terminal = worst_term;
    rep.k_estimate = k_est;
    rep.k_prime_estimate = kp_est;
    rep.pass_operator = op_ok && k_est > 0.0 && p.monotonicity.k > 0.0;
    rep.pass_terminal = term_ok && kp_est > 0.0 && p.monotonicity.k_prime > 0.0;
    rep.pass = rep.pass_operator && rep.pass_terminal;
    return rep;
}

ConditionReport check_smallness(const LipschitzProfile& prof, const MonotonicityProfile& mono) {
    prof.validate();
    ConditionReport rep;
    rep.variant = mono.variant;
    if (mono.variant == MonotonicityVariant::H1)
        rep.bound = std::min((std::sqrt(3.0) - 1.0) * mono.k_prime, std::sqrt(3.0) / 3.0 * mono.k);
    else
        rep.bound = std::min(2.0 * (std::sqrt(2.0) - 1.0) * mono.k_prime, std::sqrt(2.0) / 2.0 * mono.k);
    rep.c_nu = prof.c_nu;
    rep.c_g_nu = prof.c_g_nu;
    rep.margin_c_nu = rep.bound - prof.c_nu;
    rep.margin_c_g_nu = rep.bound - prof.c_g_nu;
    rep.pass = mono.k > 0.0 && mono.k_prime > 0.0 && rep.margin_c_nu > 0.0 &&
               rep.margin_c_g_nu > 0.0;
    return rep;
}

ContractionConstants contraction_constants(const LipschitzProfile& prof,
                                           const MonotonicityProfile& mono, double eps,
                                           double alpha, double rho, double delta) {
    if (!(eps > 0.0) || !(alpha > 0.0) || !(rho > 0.0) || !(delta > 0.0))
        throw std::invalid_argument("contraction_constants: parameters must be positive");
    prof.validate();
    const double cg = prof.c_g_nu;
    const double c = prof.c_nu;
    ContractionConstants out;
    if (mono.variant == MonotonicityVariant::H1) {
        const double base = mono.k - c / (2.0 * alpha);
        out.lambda = std::min({mono.k_prime - cg * eps / 2.0, base,
                               delta * (1.0 - rho / 2.0) + base});
        out.theta = std::max(cg / (2.0 * eps), delta / (2.0 * rho) + 1.5 * alpha * c);
    } else {
        out.lambda = std::min(mono.k_prime - cg * eps / 2.0, delta / 2.0 + mono.k - c / (2.0 * alpha));
        out.theta = std::max(cg / (2.0 * eps), delta / 2.0 + alpha * c);
    }
    return out;
}

double canonical_alpha(MonotonicityVariant v) {
    return v == MonotonicityVariant::H1 ? std::sqrt(3.0) / 3.0 : std::sqrt(2.0) / 2.0;
}

ContractionSearch search_contraction_parameters(const LipschitzProfile& prof,
                                                const MonotonicityProfile& mono) {
    ContractionSearch best;
    double best_ratio = std::numeric_limits<double>::infinity();

    std::vector<double> eps_grid{1.0};
    std::vector<double> alpha_grid{canonical_alpha(mono.variant)};
    for (int i = -30; i <= 30; ++i) {
        eps_grid.push_back(std::pow(10.0, i / 10.0));
        alpha_grid.push_back(std::pow(10.0, i / 10.0));
    }
    const double delta_grid[] = {1e-8, 1e-6, 1e-4, 1e-3, 1e-2, 1e-1};

    for (double eps : eps_grid)
        for (double alpha : alpha_grid)
            for (double delta : delta_grid) {
                const auto cc = contraction_constants(prof, mono, eps, alpha, 1.0, delta);
                if (cc.lambda <= 0.0) continue;
                if (cc.ratio() < best_ratio) {
                    best_ratio = cc.ratio();
                    best = {cc.contracts(), eps, alpha, 1.0, delta, cc};
                }
            }
    return best;
}

} // namespace mfbsde
