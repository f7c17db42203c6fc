#pragma once

#include "mfbsde/measure.hpp"
#include "mfbsde/types.hpp"

#include <vector>

namespace mfbsde {

inline constexpr int kMaxBasis = 165;
using FeatureRow = Eigen::Matrix<double, 1, Eigen::Dynamic, Eigen::RowMajor, 1, kMaxBasis>;

/// Polynomial basis in the (standardized) state components.
struct RegressionBasis {
    unsigned degree = 1;
    /// Include mixed monomials such as x_0 x_1; otherwise only pure powers.
    bool include_cross = true;

    /// Exponent vectors, constant term first.
    std::vector<std::vector<unsigned>> exponents(std::size_t dim) const;
    std::size_t size(std::size_t dim) const { return exponents(dim).size(); }
};

/// Least-squares projection onto span{basis(X_k)} for one time slice.
///
/// Inputs are centered and scaled before the basis is applied. When the Gram
/// matrix is numerically singular (for instance at t = 0, where every particle
/// sits at x0) a ridge term of relative size kRidge is added and `ridge()`
/// reports it.
class SliceRegression {
public:
    static constexpr double kRidge = 1e-10;

    SliceRegression() = default;
    SliceRegression(const RegressionBasis& basis,
                    const Eigen::Ref<const EmpiricalMeasure::Points>& states);

    std::size_t basis_size() const noexcept { return exponents_.size(); }
    bool ridge() const noexcept { return ridge_; }

    /// Coefficients (basis_size x targets.cols()).
    Mat fit(const Mat& targets) const;

    /// Fitted values on the slice this regression was built from.
    Mat predict(const Mat& coef) const { return design_ * coef; }

    void features(const StateVec& x, FeatureRow& out) const;

    /// Drops the stored design matrix; `features` keeps working.
    void release_design() { design_.resize(0, 0); }

private:
    std::vector<std::vector<unsigned>> exponents_;
    Vec center_;
    Vec scale_;
    Mat design_;
    Eigen::LDLT<Mat> gram_;
    bool ridge_ = false;
};

} // namespace mfbsde
