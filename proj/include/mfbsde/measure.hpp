#pragma once

#include "mfbsde/types.hpp"

#include <cstddef>
#include <vector>

namespace mfbsde {

/// Uniform-weight particle cloud in R^d. Rows of `points()` are the atoms.
///
/// The coordinate mean is computed once at construction, so mean-field
/// coefficients that only need first moments can query it in O(1).
class EmpiricalMeasure {
public:
    using Points =
        Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

    explicit EmpiricalMeasure(Points points);

    /// N copies of `value`.
    static EmpiricalMeasure point_mass(const Vec& value, std::size_t copies = 1);

    std::size_t size() const noexcept { return static_cast<std::size_t>(points_.rows()); }
    std::size_t dim() const noexcept { return static_cast<std::size_t>(points_.cols()); }

    const Points& points() const noexcept { return points_; }
    const Vec& mean() const noexcept { return mean_; }

    /// Mean of the coordinates [first, first + count).
    Vec mean_segment(std::size_t first, std::size_t count) const;

    EmpiricalMeasure translated(const Vec& shift) const;

private:
    Points points_;
    Vec mean_;
};

Vec mean(const EmpiricalMeasure& m);

struct W2Options {
    /// Largest cloud solved by exact assignment when dim > 1.
    std::size_t assignment_cap = 512;
};

/// Exact 2-Wasserstein distance between equal-size uniform clouds.
/// Sorting in one dimension, Hungarian assignment otherwise.
double w2_exact(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                const W2Options& options = {});

/// sqrt(mean_i |a_i - b_i|^2): the cost of the index coupling, an upper bound
/// on w2_exact when particle i of both clouds is the same sample path.
double w2_paired_bound(const EmpiricalMeasure& a, const EmpiricalMeasure& b);

namespace detail {

/// Minimum-cost perfect matching on a square cost matrix.
/// Returns assignment[row] = column.
std::vector<std::size_t> min_cost_assignment(const Mat& cost);

} // namespace detail

} // namespace mfbsde
