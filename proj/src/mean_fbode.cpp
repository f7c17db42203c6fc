#include "mfbsde/lqgame.hpp"

#include <unsupported/Eigen/MatrixFunctions>

#include <cmath>
#include <limits>
#include <stdexcept>

namespace mfbsde {

namespace {

// exp of [[L, b], [0, 0]] * h: the flow of w' = L w + b over a step h.
Mat affine_flow(const Mat& L, const Vec& b, double h) {
    const Eigen::Index n = L.rows();
    Mat aug = Mat::Zero(n + 1, n + 1);
    aug.topLeftCorner(n, n) = L * h;
    aug.topRightCorner(n, 1) = b * h;
    return aug.exp();
}

} // namespace

MeanSolution::MeanSolution(const GameSpec& gs, std::vector<Piece> pieces, Vec w0, double det,
                           double cond)
    : n_(gs.n), pieces_(std::move(pieces)), w0_(std::move(w0)), det_(det), cond_(cond) {
    for (const auto& pl : gs.players)
        gain_.push_back(-Eigen::LLT<Mat>(pl.N).solve(pl.C.transpose()));
}

Vec MeanSolution::state(double t) const {
    Vec w = w0_;
    const Eigen::Index n = w.size();
    for (const Piece& p : pieces_) {
        if (t <= p.t0) break;
        const double h = std::min(t, p.t1) - p.t0;
        const Mat phi = affine_flow(p.L, p.b, h);
        w = phi.topLeftCorner(n, n) * w + phi.topRightCorner(n, 1);
    }
    return w;
}

Vec MeanSolution::mean_x(double t) const {
    return state(t).head(static_cast<Eigen::Index>(n_));
}

Vec MeanSolution::mean_p(std::size_t player, double t) const {
    if (player >= gain_.size()) throw std::out_of_range("MeanSolution: player out of range");
    const auto n = static_cast<Eigen::Index>(n_);
    return state(t).segment(n * static_cast<Eigen::Index>(player + 1), n);
}

Vec MeanSolution::mean_control(std::size_t player, double t) const {
    return gain_.at(player) * mean_p(player, t);
}

std::variant<MeanSolution, Nonexistence> solve_mean_fbode(const GameSpec& gs) {
    gs.validate();
    if (!gs.sigma.is_zero())
        throw std::invalid_argument(
            "solve_mean_fbode: state-dependent volatility leaves the adjoint mean unclosed");

    const auto n = static_cast<Eigen::Index>(gs.n);
    const auto m = static_cast<Eigen::Index>(gs.m());
    const Eigen::Index w = n * (1 + m);
    const std::vector<Mat> K = gain_matrices(gs);

    std::vector<MeanSolution::Piece> pieces;
    const std::vector<double> bp = gs.breakpoints();
    Mat phi = Mat::Identity(w + 1, w + 1);
    for (std::size_t j = 0; j + 1 < bp.size(); ++j) {
        const double t0 = bp[j];
        const Mat AD = gs.A.at(t0) + gs.D.at(t0);
        Mat L = Mat::Zero(w, w);
        Vec b = Vec::Zero(w);
        L.topLeftCorner(n, n) = AD;
        b.head(n) = gs.beta.at(t0).col(0);
        for (Eigen::Index i = 0; i < m; ++i) {
            const auto& pl = gs.players[static_cast<std::size_t>(i)];
            const Eigen::Index off = n * (i + 1);
            L.block(0, off, n, n) = -K[static_cast<std::size_t>(i)];
            L.block(off, 0, n, n) = -(pl.M.at(t0) + pl.Gamma.at(t0));
            L.block(off, off, n, n) = -AD.transpose();
        }
        phi = affine_flow(L, b, bp[j + 1] - t0) * phi;
        pieces.push_back({t0, bp[j + 1], std::move(L), std::move(b)});
    }

    // Terminal condition pbar(T) = G m(T) with unknown pbar(0).
    Mat G(n * m, n);
    for (Eigen::Index i = 0; i < m; ++i) {
        const auto& pl = gs.players[static_cast<std::size_t>(i)];
        G.block(n * i, 0, n, n) = pl.Q + pl.R;
    }
    const Eigen::Index np = n * m;
    const Mat phi_mm = phi.block(0, 0, n, n);
    const Mat phi_mp = phi.block(0, n, n, np);
    const Mat phi_pm = phi.block(n, 0, np, n);
    const Mat phi_pp = phi.block(n, n, np, np);
    const Vec psi_m = phi.block(0, w, n, 1);
    const Vec psi_p = phi.block(n, w, np, 1);

    const Mat B = phi_pp - G * phi_mp;
    const Vec rhs = G * (phi_mm * gs.x0 + psi_m) - (phi_pm * gs.x0 + psi_p);

    const double det = B.determinant();
    double scale = 1.0;
    for (Eigen::Index r = 0; r < B.rows(); ++r) scale *= B.row(r).norm();
    const Vec sv = Eigen::JacobiSVD<Mat>(B).singularValues();
    const double smin = sv(sv.size() - 1);
    const double cond = smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
    if (std::abs(det) < 1e-9 * scale) return Nonexistence{det, cond};

    Vec w0(w);
    w0.head(n) = gs.x0;
    w0.tail(np) = B.partialPivLu().solve(rhs);
    return MeanSolution(gs, std::move(pieces), std::move(w0), det, cond);
}

GameSpec counterexample_game(double horizon) {
    GameSpec gs;
    gs.n = 2;
    gs.horizon = horizon;
    gs.x0 = Vec(2);
    gs.x0 << 1.0, 2.0;
    gs.A = CoefficientPath::constant(Mat::Identity(2, 2));
    gs.D = CoefficientPath::constant(-Mat::Identity(2, 2));
    gs.beta = CoefficientPath::constant(Mat::Zero(2, 1));
    gs.sigma = CoefficientPath::constant(Mat::Zero(2, 2));
    gs.alpha = CoefficientPath::constant(Mat::Ones(2, 1));

    auto player = [](double c0, double c1, double q0, double q1) {
        PlayerSpec p;
        p.C = Mat(2, 1);
        p.C << c0, c1;
        p.N = Mat::Identity(1, 1);
        p.M = CoefficientPath::constant(Mat::Zero(2, 2));
        p.Gamma = CoefficientPath::constant(Mat::Zero(2, 2));
        p.Q = Mat::Zero(2, 2);
        p.Q(0, 0) = q0;
        p.Q(1, 1) = q1;
        p.R = Mat::Zero(2, 2);
        return p;
    };
    gs.players = {player(1.0, -2.0, 1.0, 0.0), player(-2.0, 1.0, 0.0, 1.0)};
    return gs;
}

} // namespace mfbsde
