#include "mfbsde/regression.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <functional>
#include <stdexcept>

namespace mfbsde {

std::vector<std::vector<unsigned>> RegressionBasis::exponents(std::size_t dim) const {
    std::vector<std::vector<unsigned>> out;
    std::vector<unsigned> e(dim, 0);
    // Graded order: total degree 0, 1, ..., degree.
    for (unsigned total = 0; total <= degree; ++total) {
        std::function<void(std::size_t, unsigned)> rec = [&](std::size_t pos, unsigned left) {
            if (pos + 1 == dim) {
                e[pos] = left;
                unsigned nonzero = 0;
                for (unsigned v : e) nonzero += v > 0 ? 1 : 0;
                if (include_cross || nonzero <= 1) out.push_back(e);
                return;
            }
            for (unsigned v = left + 1; v-- > 0;) {
                e[pos] = v;
                rec(pos + 1, left - v);
            }
        };
        rec(0, total);
    }
    if (out.size() > static_cast<std::size_t>(kMaxBasis))
        throw std::invalid_argument("RegressionBasis: too many basis functions");
    return out;
}

SliceRegression::SliceRegression(const RegressionBasis& basis,
                                 const Eigen::Ref<const EmpiricalMeasure::Points>& states)
    : exponents_(basis.exponents(static_cast<std::size_t>(states.cols()))) {
    const Eigen::Index n = states.rows();
    const Eigen::Index d = states.cols();
    if (n == 0) throw std::invalid_argument("SliceRegression: empty slice");

    center_ = states.colwise().mean().transpose();
    scale_.resize(d);
    for (Eigen::Index j = 0; j < d; ++j) {
        const double var = (states.col(j).array() - center_[j]).square().mean();
        const double sd = std::sqrt(var);
        scale_[j] = sd > 1e-12 * (1.0 + std::abs(center_[j])) ? sd : 1.0;
    }

    const auto p = static_cast<Eigen::Index>(exponents_.size());
    design_.resize(n, p);
    FeatureRow row(p);
    for (Eigen::Index i = 0; i < n; ++i) {
        features(states.row(i).transpose(), row);
        design_.row(i) = row;
    }

    Mat gram = design_.transpose() * design_ / static_cast<double>(n);
    const Eigen::SelfAdjointEigenSolver<Mat> eig(gram, Eigen::EigenvaluesOnly);
    const double top = eig.eigenvalues().maxCoeff();
    if (!(eig.eigenvalues().minCoeff() > 1e-12 * top)) {
        ridge_ = true;
        gram.diagonal().array() += kRidge * std::max(top, 1e-300);
    }
    gram_.compute(gram);
}

Mat SliceRegression::fit(const Mat& targets) const {
    if (targets.rows() != design_.rows())
        throw std::invalid_argument("SliceRegression: target count mismatch");
    const Mat rhs = design_.transpose() * targets / static_cast<double>(design_.rows());
    return gram_.solve(rhs);
}

void SliceRegression::features(const StateVec& x, FeatureRow& out) const {
    const Eigen::Index d = center_.size();
    StateVec s(d);
    for (Eigen::Index j = 0; j < d; ++j) s[j] = (x[j] - center_[j]) / scale_[j];
    out.resize(static_cast<Eigen::Index>(exponents_.size()));
    for (std::size_t b = 0; b < exponents_.size(); ++b) {
        double v = 1.0;
        for (Eigen::Index j = 0; j < d; ++j)
            for (unsigned e = 0; e < exponents_[b][static_cast<std::size_t>(j)]; ++e) v *= s[j];
        out[static_cast<Eigen::Index>(b)] = v;
    }
}

} // namespace mfbsde
