#include "mfbsde/measure.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace mfbsde {

EmpiricalMeasure::EmpiricalMeasure(Points points) : points_(std::move(points)) {
    if (points_.rows() == 0 || points_.cols() == 0)
        throw std::invalid_argument("EmpiricalMeasure: empty cloud");
    if (!points_.allFinite())
        throw std::invalid_argument("EmpiricalMeasure: non-finite coordinate");
    mean_ = points_.colwise().mean().transpose();
}

EmpiricalMeasure EmpiricalMeasure::point_mass(const Vec& value, std::size_t copies) {
    if (copies == 0)
        throw std::invalid_argument("EmpiricalMeasure: empty cloud");
    Points pts(static_cast<Eigen::Index>(copies), value.size());
    pts.rowwise() = value.transpose();
    return EmpiricalMeasure(std::move(pts));
}

Vec EmpiricalMeasure::mean_segment(std::size_t first, std::size_t count) const {
    if (first + count > dim())
        throw std::out_of_range("EmpiricalMeasure: segment out of range");
    return mean_.segment(static_cast<Eigen::Index>(first), static_cast<Eigen::Index>(count));
}

EmpiricalMeasure EmpiricalMeasure::translated(const Vec& shift) const {
    if (static_cast<std::size_t>(shift.size()) != dim())
        throw std::invalid_argument("EmpiricalMeasure: shift dimension mismatch");
    Points pts = points_;
    pts.rowwise() += shift.transpose();
    return EmpiricalMeasure(std::move(pts));
}

Vec mean(const EmpiricalMeasure& m) { return m.mean(); }

namespace {

void require_comparable(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    if (a.dim() != b.dim())
        throw std::invalid_argument("w2: dimension mismatch");
    if (a.size() != b.size())
        throw std::invalid_argument("w2: cardinality mismatch");
}

} // namespace

double w2_exact(const EmpiricalMeasure& a, const EmpiricalMeasure& b,
                const W2Options& options) {
    require_comparable(a, b);
    const std::size_t n = a.size();

    if (a.dim() == 1) {
        std::vector<double> sa(a.points().data(), a.points().data() + n);
        std::vector<double> sb(b.points().data(), b.points().data() + n);
        std::stable_sort(sa.begin(), sa.end());
        std::stable_sort(sb.begin(), sb.end());
        double acc = 0.0;
        for (std::size_t i = 0; i < n; ++i) {
            const double d = sa[i] - sb[i];
            acc += d * d;
        }
        return std::sqrt(acc / static_cast<double>(n));
    }

    if (n > options.assignment_cap)
        throw std::invalid_argument(
            "w2_exact: cloud exceeds assignment cap; use w2_paired_bound");

    Mat cost(n, n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
            cost(i, j) = (a.points().row(i) - b.points().row(j)).squaredNorm();

    const auto match = detail::min_cost_assignment(cost);
    double acc = 0.0;
    for (std::size_t i = 0; i < n; ++i) acc += cost(i, match[i]);
    return std::sqrt(acc / static_cast<double>(n));
}

double w2_paired_bound(const EmpiricalMeasure& a, const EmpiricalMeasure& b) {
    require_comparable(a, b);
    const double acc = (a.points() - b.points()).rowwise().squaredNorm().sum();
    return std::sqrt(acc / static_cast<double>(a.size()));
}

namespace detail {

// Shortest augmenting path with row/column potentials, O(n^3).
std::vector<std::size_t> min_cost_assignment(const Mat& cost) {
    if (cost.rows() != cost.cols())
        throw std::invalid_argument("min_cost_assignment: cost must be square");
    const std::size_t n = static_cast<std::size_t>(cost.rows());
    constexpr double inf = std::numeric_limits<double>::infinity();

    // 1-based; column 0 is a virtual source.
    std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0);
    std::vector<std::size_t> row_of(n + 1, 0), way(n + 1, 0);

    for (std::size_t i = 1; i <= n; ++i) {
        row_of[0] = i;
        std::size_t j0 = 0;
        std::vector<double> minv(n + 1, inf);
        std::vector<char> used(n + 1, 0);
        do {
            used[j0] = 1;
            const std::size_t i0 = row_of[j0];
            double delta = inf;
            std::size_t j1 = 0;
            for (std::size_t j = 1; j <= n; ++j) {
                if (used[j]) continue;
                const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if (cur < minv[j]) {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if (minv[j] < delta) {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for (std::size_t j = 0; j <= n; ++j) {
                if (used[j]) {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
        } while (row_of[j0] != 0);
        do {
            const std::size_t j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
        } while (j0 != 0);
    }

    std::vector<std::size_t> assignment(n);
    for (std::size_t j = 1; j <= n; ++j) assignment[row_of[j] - 1] = j - 1;
    return assignment;
}

} // namespace detail

} // namespace mfbsde
