#pragma once

#include "mfbsde/measure.hpp"
#include "mfbsde/types.hpp"

#include <cstdint>
#include <iosfwd>
#include <vector>

namespace mfbsde {

/// Uniform grid t_k = k * T / steps on [0, T].
class TimeGrid {
public:
    TimeGrid(double horizon, std::size_t steps);

    double horizon() const noexcept { return horizon_; }
    std::size_t steps() const noexcept { return steps_; }
    std::size_t nodes() const noexcept { return steps_ + 1; }
    double dt() const noexcept { return horizon_ / static_cast<double>(steps_); }
    double time(std::size_t k) const;

private:
    double horizon_;
    std::size_t steps_;
};

/// Brownian increments dW ~ N(0, dt), indexed [particle][step][component].
///
/// Each particle draws from its own stream keyed by (seed, particle), so the
/// bundle is identical whatever order or thread the particles are filled in.
class BrownianBundle {
public:
    static BrownianBundle make(const TimeGrid& grid, std::size_t particles,
                               std::size_t dim, std::uint64_t seed);

    std::size_t particles() const noexcept { return particles_; }
    std::size_t steps() const noexcept { return steps_; }
    std::size_t dim() const noexcept { return dim_; }
    std::uint64_t seed() const noexcept { return seed_; }

    double increment(std::size_t particle, std::size_t step, std::size_t component) const {
        return data_[(particle * steps_ + step) * dim_ + component];
    }

    /// All components of one increment.
    StateVec increment(std::size_t particle, std::size_t step) const;

    /// W at node k for one particle (sum of the first k increments).
    StateVec brownian(std::size_t particle, std::size_t node) const;

    bool operator==(const BrownianBundle&) const = default;

private:
    BrownianBundle() = default;

    std::size_t particles_ = 0;
    std::size_t steps_ = 0;
    std::size_t dim_ = 0;
    std::uint64_t seed_ = 0;
    std::vector<double> data_;
};

/// Per-particle process values on grid nodes (X, Y) or on steps (Z).
///
/// Stored node-major so that a whole time slice is contiguous.
class PathEnsemble {
public:
    PathEnsemble() = default;
    PathEnsemble(std::size_t particles, std::size_t nodes, std::size_t dim,
                 double fill = 0.0);

    std::size_t particles() const noexcept { return particles_; }
    std::size_t nodes() const noexcept { return nodes_; }
    std::size_t dim() const noexcept { return dim_; }

    double& at(std::size_t particle, std::size_t node, std::size_t component) {
        return data_[index(particle, node) + component];
    }
    double at(std::size_t particle, std::size_t node, std::size_t component) const {
        return data_[index(particle, node) + component];
    }

    StateVec value(std::size_t particle, std::size_t node) const;
    void set(std::size_t particle, std::size_t node, const StateVec& v);

    /// Time slice as a (particles x dim) row-major block.
    Eigen::Map<const EmpiricalMeasure::Points> slice(std::size_t node) const;
    Eigen::Map<EmpiricalMeasure::Points> slice(std::size_t node);

    bool same_shape(const PathEnsemble& other) const noexcept {
        return particles_ == other.particles_ && nodes_ == other.nodes_ &&
               dim_ == other.dim_;
    }
    bool all_finite() const;

    bool operator==(const PathEnsemble&) const = default;

private:
    std::size_t index(std::size_t particle, std::size_t node) const noexcept {
        return (node * particles_ + particle) * dim_;
    }

    std::size_t particles_ = 0;
    std::size_t nodes_ = 0;
    std::size_t dim_ = 0;
    std::vector<double> data_;
};

/// Cloud of components [first, first + count) at one node.
EmpiricalMeasure marginal(const PathEnsemble& e, std::size_t node,
                          std::size_t first, std::size_t count);

/// Cloud of all components at one node.
EmpiricalMeasure marginal(const PathEnsemble& e, std::size_t node);

/// Joint (X, Y) cloud at one node, X coordinates first.
EmpiricalMeasure joint_marginal(const PathEnsemble& x, const PathEnsemble& y,
                                std::size_t node);

/// Columns: time, particle, component_0, ...
void write_paths_csv(std::ostream& out, const PathEnsemble& e, const TimeGrid& grid);

/// Columns: time, mean_0.., var_0..; one row per node.
/// Ensembles with one node fewer than the grid (Z) are stamped at left endpoints.
void write_moments_csv(std::ostream& out, const PathEnsemble& e, const TimeGrid& grid);

} // namespace mfbsde
