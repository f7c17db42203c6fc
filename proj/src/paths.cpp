#include "mfbsde/paths.hpp"

#include <cmath>
#include <ostream>
#include <random>
#include <stdexcept>

namespace mfbsde {

TimeGrid::TimeGrid(double horizon, std::size_t steps) : horizon_(horizon), steps_(steps) {
    if (!(horizon > 0.0) || !std::isfinite(horizon))
        throw std::invalid_argument("TimeGrid: horizon must be positive");
    if (steps == 0)
        throw std::invalid_argument("TimeGrid: steps must be positive");
}

double TimeGrid::time(std::size_t k) const {
    if (k > steps_) throw std::out_of_range("TimeGrid: node out of range");
    if (k == steps_) return horizon_;
    return static_cast<double>(k) * dt();
}

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
}

} // namespace

BrownianBundle BrownianBundle::make(const TimeGrid& grid, std::size_t particles,
                                    std::size_t dim, std::uint64_t seed) {
    if (particles == 0) throw std::invalid_argument("BrownianBundle: zero particles");
    if (dim == 0) throw std::invalid_argument("BrownianBundle: zero dimension");
    if (dim > static_cast<std::size_t>(kMaxDim))
        throw std::invalid_argument("BrownianBundle: dimension exceeds kMaxDim");

    BrownianBundle b;
    b.particles_ = particles;
    b.steps_ = grid.steps();
    b.dim_ = dim;
    b.seed_ = seed;
    b.data_.resize(particles * b.steps_ * dim);

    const double sd = std::sqrt(grid.dt());
    const std::size_t per_particle = b.steps_ * dim;
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t pi = 0; pi < static_cast<std::ptrdiff_t>(particles); ++pi) {
        const auto p = static_cast<std::size_t>(pi);
        std::mt19937_64 rng(splitmix64(seed ^ splitmix64(p + 1)));
        std::normal_distribution<double> normal(0.0, sd);
        double* out = b.data_.data() + p * per_particle;
        for (std::size_t j = 0; j < per_particle; ++j) out[j] = normal(rng);
    }
    return b;
}

StateVec BrownianBundle::increment(std::size_t particle, std::size_t step) const {
    StateVec w(static_cast<Eigen::Index>(dim_));
    for (std::size_t c = 0; c < dim_; ++c) w[c] = increment(particle, step, c);
    return w;
}

StateVec BrownianBundle::brownian(std::size_t particle, std::size_t node) const {
    if (node > steps_) throw std::out_of_range("BrownianBundle: node out of range");
    StateVec w = StateVec::Zero(static_cast<Eigen::Index>(dim_));
    for (std::size_t k = 0; k < node; ++k) w += increment(particle, k);
    return w;
}

PathEnsemble::PathEnsemble(std::size_t particles, std::size_t nodes, std::size_t dim,
                           double fill)
    : particles_(particles), nodes_(nodes), dim_(dim),
      data_(particles * nodes * dim, fill) {
    if (particles == 0 || nodes == 0 || dim == 0)
        throw std::invalid_argument("PathEnsemble: zero size");
}

StateVec PathEnsemble::value(std::size_t particle, std::size_t node) const {
    StateVec v(static_cast<Eigen::Index>(dim_));
    const double* src = data_.data() + index(particle, node);
    for (std::size_t c = 0; c < dim_; ++c) v[c] = src[c];
    return v;
}

void PathEnsemble::set(std::size_t particle, std::size_t node, const StateVec& v) {
    double* dst = data_.data() + index(particle, node);
    for (std::size_t c = 0; c < dim_; ++c) dst[c] = v[c];
}

Eigen::Map<const EmpiricalMeasure::Points> PathEnsemble::slice(std::size_t node) const {
    if (node >= nodes_) throw std::out_of_range("PathEnsemble: node out of range");
    return {data_.data() + index(0, node), static_cast<Eigen::Index>(particles_),
            static_cast<Eigen::Index>(dim_)};
}

Eigen::Map<EmpiricalMeasure::Points> PathEnsemble::slice(std::size_t node) {
    if (node >= nodes_) throw std::out_of_range("PathEnsemble: node out of range");
    return {data_.data() + index(0, node), static_cast<Eigen::Index>(particles_),
            static_cast<Eigen::Index>(dim_)};
}

bool PathEnsemble::all_finite() const {
    for (double v : data_)
        if (!std::isfinite(v)) return false;
    return true;
}

EmpiricalMeasure marginal(const PathEnsemble& e, std::size_t node, std::size_t first,
                          std::size_t count) {
    if (node >= e.nodes()) throw std::out_of_range("marginal: node out of range");
    if (count == 0 || first + count > e.dim())
        throw std::out_of_range("marginal: component range out of range");
    return EmpiricalMeasure(e.slice(node).middleCols(static_cast<Eigen::Index>(first),
                                                     static_cast<Eigen::Index>(count)));
}

EmpiricalMeasure marginal(const PathEnsemble& e, std::size_t node) {
    return marginal(e, node, 0, e.dim());
}

EmpiricalMeasure joint_marginal(const PathEnsemble& x, const PathEnsemble& y,
                                std::size_t node) {
    if (x.particles() != y.particles())
        throw std::invalid_argument("joint_marginal: particle count mismatch");
    if (node >= x.nodes() || node >= y.nodes())
        throw std::out_of_range("joint_marginal: node out of range");
    EmpiricalMeasure::Points pts(static_cast<Eigen::Index>(x.particles()),
                                 static_cast<Eigen::Index>(x.dim() + y.dim()));
    pts.leftCols(static_cast<Eigen::Index>(x.dim())) = x.slice(node);
    pts.rightCols(static_cast<Eigen::Index>(y.dim())) = y.slice(node);
    return EmpiricalMeasure(std::move(pts));
}

namespace {

void check_grid(const PathEnsemble& e, const TimeGrid& grid) {
    if (e.nodes() != grid.nodes() && e.nodes() != grid.steps())
        throw std::invalid_argument("PathEnsemble does not match the time grid");
}

} // namespace

void write_paths_csv(std::ostream& out, const PathEnsemble& e, const TimeGrid& grid) {
    check_grid(e, grid);
    out << "time,particle";
    for (std::size_t c = 0; c < e.dim(); ++c) out << ",component_" << c;
    out << '\n';
    out.precision(17);
    for (std::size_t k = 0; k < e.nodes(); ++k)
        for (std::size_t p = 0; p < e.particles(); ++p) {
            out << grid.time(k) << ',' << p;
            for (std::size_t c = 0; c < e.dim(); ++c) out << ',' << e.at(p, k, c);
            out << '\n';
        }
}

void write_moments_csv(std::ostream& out, const PathEnsemble& e, const TimeGrid& grid) {
    check_grid(e, grid);
    out << "time";
    for (std::size_t c = 0; c < e.dim(); ++c) out << ",mean_" << c;
    for (std::size_t c = 0; c < e.dim(); ++c) out << ",var_" << c;
    out << '\n';
    out.precision(17);
    const double n = static_cast<double>(e.particles());
    for (std::size_t k = 0; k < e.nodes(); ++k) {
        const auto s = e.slice(k);
        const Eigen::RowVectorXd m = s.colwise().mean();
        const Eigen::RowVectorXd var =
            (s.rowwise() - m).array().square().colwise().sum() / n;
        out << grid.time(k);
        for (std::size_t c = 0; c < e.dim(); ++c) out << ',' << m[c];
        for (std::size_t c = 0; c < e.dim(); ++c) out << ',' << var[c];
        out << '\n';
    }
}

} // namespace mfbsde
