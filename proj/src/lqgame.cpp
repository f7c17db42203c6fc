#include "mfbsde/lqgame.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <random>
#include <stdexcept>
#include <string>

namespace mfbsde {

CoefficientPath CoefficientPath::constant(Mat value) {
    CoefficientPath p;
    p.t_from_ = {0.0};
    p.values_ = {std::move(value)};
    return p;
}

CoefficientPath CoefficientPath::piecewise(std::vector<double> t_from, std::vector<Mat> values) {
    if (t_from.empty() || t_from.size() != values.size())
        throw std::invalid_argument("CoefficientPath: need one start time per piece");
    if (t_from.front() != 0.0)
        throw std::invalid_argument("CoefficientPath: first piece must start at t = 0");
    for (std::size_t j = 1; j < t_from.size(); ++j) {
        if (!(t_from[j] > t_from[j - 1]))
            throw std::invalid_argument("CoefficientPath: start times must increase");
        if (values[j].rows() != values[0].rows() || values[j].cols() != values[0].cols())
            throw std::invalid_argument("CoefficientPath: pieces differ in shape");
    }
    CoefficientPath p;
    p.t_from_ = std::move(t_from);
    p.values_ = std::move(values);
    return p;
}

const Mat& CoefficientPath::at(double t) const {
    if (values_.empty()) throw std::logic_error("CoefficientPath: empty path");
    const auto it = std::upper_bound(t_from_.begin(), t_from_.end(), t);
    const auto j = it == t_from_.begin() ? 0 : static_cast<std::size_t>(it - t_from_.begin()) - 1;
    return values_[j];
}

namespace {

double spectral_norm(const Mat& m) {
    if (m.size() == 0) return 0.0;
    return Eigen::JacobiSVD<Mat>(m).singularValues()(0);
}

double min_sym_eigenvalue(const Mat& m) {
    const Mat s = 0.5 * (m + m.transpose());
    return Eigen::SelfAdjointEigenSolver<Mat>(s, Eigen::EigenvaluesOnly).eigenvalues().minCoeff();
}

bool symmetric(const Mat& m) {
    return m.rows() == m.cols() &&
           (m - m.transpose()).cwiseAbs().maxCoeff() <= 1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff());
}

void require_shape(const Mat& m, Eigen::Index r, Eigen::Index c, const std::string& what) {
    if (m.rows() != r || m.cols() != c)
        throw std::invalid_argument("GameSpec: " + what + " must be " + std::to_string(r) + "x" +
                                    std::to_string(c));
    if (!m.allFinite()) throw std::invalid_argument("GameSpec: " + what + " is not finite");
}

void require_shape(const CoefficientPath& p, Eigen::Index r, Eigen::Index c,
                   const std::string& what) {
    if (p.empty()) throw std::invalid_argument("GameSpec: " + what + " is missing");
    for (const Mat& v : p.values()) require_shape(v, r, c, what);
}

void require_sym_psd(const Mat& m, const std::string& what) {
    if (!symmetric(m)) throw std::invalid_argument("GameSpec: " + what + " is not symmetric");
    if (min_sym_eigenvalue(m) < -1e-12 * std::max(1.0, m.cwiseAbs().maxCoeff()))
        throw std::invalid_argument("GameSpec: " + what + " is not nonnegative");
}

// Every coefficient frozen on one interval between breakpoints.
struct Slab {
    Mat A, At, D, Dt, beta, sigma, sigmat, alpha;
    Mat KM, KGamma;
    std::vector<Mat> M, Gamma;
};

struct SlabTable {
    std::vector<double> starts;
    std::vector<Slab> slabs;

    const Slab& at(double t) const {
        const auto it = std::upper_bound(starts.begin(), starts.end(), t);
        return slabs[it == starts.begin() ? 0 : static_cast<std::size_t>(it - starts.begin()) - 1];
    }
};

std::shared_ptr<const SlabTable> make_table(const GameSpec& gs, const std::vector<Mat>& K) {
    auto table = std::make_shared<SlabTable>();
    std::vector<double> bp = gs.breakpoints();
    if (bp.size() > 1) bp.pop_back();
    const auto n = static_cast<Eigen::Index>(gs.n);
    for (double t0 : bp) {
        Slab s;
        s.A = gs.A.at(t0);
        s.At = s.A.transpose();
        s.D = gs.D.at(t0);
        s.Dt = s.D.transpose();
        s.beta = gs.beta.at(t0);
        s.sigma = gs.sigma.at(t0);
        s.sigmat = s.sigma.transpose();
        s.alpha = gs.alpha.at(t0);
        s.KM = Mat::Zero(n, n);
        s.KGamma = Mat::Zero(n, n);
        for (std::size_t i = 0; i < gs.m(); ++i) {
            s.M.push_back(gs.players[i].M.at(t0));
            s.Gamma.push_back(gs.players[i].Gamma.at(t0));
            s.KM += K[i] * s.M.back();
            s.KGamma += K[i] * s.Gamma.back();
        }
        table->starts.push_back(t0);
        table->slabs.push_back(std::move(s));
    }
    return table;
}

StateVec zero_state(std::size_t n) { return StateVec::Zero(static_cast<Eigen::Index>(n)); }

} // namespace

double CoefficientPath::sup_norm() const {
    double s = 0.0;
    for (const Mat& v : values_) s = std::max(s, spectral_norm(v));
    return s;
}

bool CoefficientPath::is_zero() const {
    for (const Mat& v : values_)
        if (v.size() > 0 && v.cwiseAbs().maxCoeff() != 0.0) return false;
    return true;
}

void GameSpec::validate() const {
    if (n == 0 || n > static_cast<std::size_t>(kMaxDim))
        throw std::invalid_argument("GameSpec: state dimension out of range");
    if (!(horizon >= 0.0) || !std::isfinite(horizon))
        throw std::invalid_argument("GameSpec: horizon must be finite and >= 0");
    const auto d = static_cast<Eigen::Index>(n);
    if (x0.size() != d || !x0.allFinite())
        throw std::invalid_argument("GameSpec: x0 must have n finite entries");
    require_shape(A, d, d, "A");
    require_shape(D, d, d, "D");
    require_shape(beta, d, 1, "beta");
    require_shape(sigma, d, d, "sigma");
    require_shape(alpha, d, 1, "alpha");
    if (players.empty()) throw std::invalid_argument("GameSpec: at least one player required");
    for (std::size_t i = 0; i < players.size(); ++i) {
        const PlayerSpec& pl = players[i];
        const std::string tag = "player " + std::to_string(i) + " ";
        if (pl.C.cols() < 1 || pl.C.cols() > kMaxDim)
            throw std::invalid_argument("GameSpec: " + tag + "control dimension out of range");
        require_shape(pl.C, d, pl.C.cols(), tag + "C");
        require_shape(pl.N, pl.C.cols(), pl.C.cols(), tag + "N");
        if (!symmetric(pl.N)) throw std::invalid_argument("GameSpec: " + tag + "N is not symmetric");
        if (Eigen::LLT<Mat>(pl.N).info() != Eigen::Success)
            throw std::invalid_argument("GameSpec: " + tag + "N is not positive definite");
        require_shape(pl.M, d, d, tag + "M");
        require_shape(pl.Gamma, d, d, tag + "Gamma");
        for (const Mat& v : pl.M.values()) require_sym_psd(v, tag + "M");
        for (const Mat& v : pl.Gamma.values()) require_sym_psd(v, tag + "Gamma");
        require_shape(pl.Q, d, d, tag + "Q");
        require_shape(pl.R, d, d, tag + "R");
        require_sym_psd(pl.Q, tag + "Q");
        require_sym_psd(pl.R, tag + "R");
    }
}

std::vector<double> GameSpec::breakpoints() const {
    std::vector<double> out{0.0, horizon};
    auto add = [&](const CoefficientPath& p) {
        for (double t : p.t_from())
            if (t > 0.0 && t < horizon) out.push_back(t);
    };
    add(A);
    add(D);
    add(beta);
    add(sigma);
    add(alpha);
    for (const auto& pl : players) {
        add(pl.M);
        add(pl.Gamma);
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
}

std::vector<Mat> gain_matrices(const GameSpec& gs) {
    std::vector<Mat> K;
    for (const auto& pl : gs.players) {
        const Eigen::LLT<Mat> llt(pl.N);
        if (llt.info() != Eigen::Success)
            throw std::invalid_argument("gain_matrices: N is not positive definite");
        Mat k = pl.C * llt.solve(pl.C.transpose());
        K.push_back(0.5 * (k + k.transpose()));
    }
    return K;
}

H2Report check_H2(const GameSpec& gs, const TimeGrid& grid) {
    gs.validate();
    H2Report r;
    r.K = gain_matrices(gs);
    const auto d = static_cast<Eigen::Index>(gs.n);
    r.sum_KQ = Mat::Zero(d, d);
    r.sum_KR = Mat::Zero(d, d);
    for (std::size_t i = 0; i < gs.m(); ++i) {
        r.sum_KQ += r.K[i] * gs.players[i].Q;
        r.sum_KR += r.K[i] * gs.players[i].R;
    }
    r.eta1 = min_sym_eigenvalue(r.sum_KQ);

    std::vector<double> times = gs.breakpoints();
    for (std::size_t k = 0; k < grid.nodes(); ++k) times.push_back(grid.time(k));

    r.eta2 = std::numeric_limits<double>::infinity();
    for (double t : times) {
        Mat km = Mat::Zero(d, d);
        for (std::size_t i = 0; i < gs.m(); ++i) km += r.K[i] * gs.players[i].M.at(t);
        r.eta2 = std::min(r.eta2, min_sym_eigenvalue(km));
        const Mat at = gs.A.at(t).transpose();
        const Mat dt = gs.D.at(t).transpose();
        const Mat st = gs.sigma.at(t).transpose();
        for (const Mat& k : r.K) {
            r.commutation_A = std::max(r.commutation_A, spectral_norm(k * at - at * k));
            r.commutation_D = std::max(r.commutation_D, spectral_norm(k * dt - dt * k));
            r.commutation_sigma = std::max(r.commutation_sigma, spectral_norm(k * st - st * k));
        }
        r.norm_D = std::max(r.norm_D, spectral_norm(gs.D.at(t)));
    }
    r.norm_KR = spectral_norm(r.sum_KR);

    const double s2 = std::sqrt(2.0);
    r.bound = std::min({2.0 * (s2 - 1.0) * r.eta1, s2 / 2.0, s2 / 2.0 * r.eta2});
    r.pass_commutation =
        r.commutation_A < 1e-10 && r.commutation_D < 1e-10 && r.commutation_sigma < 1e-10;
    r.pass_eta1 = r.eta1 > 0.0;
    r.pass_eta2 = r.eta2 > 0.0;
    r.pass_KR = r.norm_KR < r.bound;
    r.pass_D = r.norm_D < r.bound;
    r.pass = r.pass_commutation && r.pass_eta1 && r.pass_eta2 && r.pass_KR && r.pass_D;
    return r;
}

MfProblem build_aggregated(const GameSpec& gs, bool force) {
    gs.validate();
    if (!(gs.horizon > 0.0)) throw std::invalid_argument("build_aggregated: horizon must be > 0");
    // Grid only matters for eta2 and the commutation sup; breakpoints cover
    // every distinct coefficient value.
    const H2Report h2 = check_H2(gs, TimeGrid(gs.horizon, 1));
    if (!force) {
        if (!h2.pass_eta1 || !h2.pass_eta2)
            throw std::invalid_argument("build_aggregated: monotonicity constants eta1/eta2 are not positive");
        if (!h2.pass_commutation)
            throw std::invalid_argument("build_aggregated: gain matrices do not commute with A', D', sigma'");
    }

    const std::size_t n = gs.n;
    const auto table = make_table(gs, h2.K);
    const Mat kq = h2.sum_KQ;
    const Mat kr = h2.sum_KR;

    MfProblem p;
    p.dim = n;
    p.noise_dim = 1;
    p.x0 = gs.x0;
    p.horizon = gs.horizon;
    p.law_free_sigma = true;

    p.drift = [table, n](double t, const StateVec& x, const StateVec& y, const NoiseMat&,
                         const EmpiricalMeasure& nu) {
        const Slab& s = table->at(t);
        const auto d = static_cast<Eigen::Index>(n);
        StateVec r(d);
        r.noalias() = s.A * x;
        r.noalias() += s.D * nu.mean().head(d);
        r += s.beta.col(0) - y;
        return r;
    };
    p.diffusion = [table, n](double t, const StateVec& x, const StateVec&, const NoiseMat&,
                             const EmpiricalMeasure*) {
        const Slab& s = table->at(t);
        NoiseMat r(static_cast<Eigen::Index>(n), 1);
        r.col(0).noalias() = s.sigma * x;
        r.col(0) += s.alpha.col(0);
        return r;
    };
    p.driver = [table, n](double t, const StateVec& x, const StateVec& y, const NoiseMat& z,
                          const EmpiricalMeasure& nu) {
        const Slab& s = table->at(t);
        const auto d = static_cast<Eigen::Index>(n);
        StateVec r(d);
        r.noalias() = -(s.At * y);
        r.noalias() -= s.KM * x;
        r.noalias() -= s.Dt * nu.mean().segment(d, d);
        r.noalias() -= s.KGamma * nu.mean().head(d);
        r.noalias() -= s.sigmat * z.col(0);
        return r;
    };
    p.terminal = [kq, kr](const StateVec& x, const EmpiricalMeasure& mu) {
        StateVec r(x.size());
        r.noalias() = kq * x;
        r.noalias() += kr * mu.mean();
        return r;
    };

    double norm_a = gs.A.sup_norm();
    double norm_sigma = gs.sigma.sup_norm();
    double norm_km = 0.0;
    double norm_kgamma = 0.0;
    for (const Slab& s : table->slabs) {
        norm_km = std::max(norm_km, spectral_norm(s.KM));
        norm_kgamma = std::max(norm_kgamma, spectral_norm(s.KGamma));
    }
    p.lipschitz.c_u = std::max({norm_a, 1.0, norm_km, norm_sigma});
    p.lipschitz.c_nu = h2.norm_D + norm_kgamma;
    p.lipschitz.c_g_x = spectral_norm(kq);
    p.lipschitz.c_g_nu = h2.norm_KR;
    p.monotonicity.variant = MonotonicityVariant::H1Prime;
    p.monotonicity.k = std::min(1.0, h2.eta2);
    p.monotonicity.k_prime = h2.eta1;
    return p;
}

namespace {

// Player i's adjoint as a backward problem along fixed forward paths. The
// flow clouds only carry the means (E[X], E[p_i]) the driver reads.
MfProblem adjoint_problem(const GameSpec& gs, std::shared_ptr<const SlabTable> table,
                          std::size_t player) {
    const std::size_t n = gs.n;
    MfProblem p;
    p.dim = n;
    p.noise_dim = 1;
    p.x0 = gs.x0;
    p.horizon = gs.horizon;
    p.law_free_sigma = true;
    p.drift = [n](double, const StateVec&, const StateVec&, const NoiseMat&,
                  const EmpiricalMeasure&) { return zero_state(n); };
    p.diffusion = [n](double, const StateVec&, const StateVec&, const NoiseMat&,
                      const EmpiricalMeasure*) {
        return NoiseMat::Zero(static_cast<Eigen::Index>(n), 1).eval();
    };
    p.driver = [table, n, player](double t, const StateVec& x, const StateVec& y,
                                  const NoiseMat& z, const EmpiricalMeasure& nu) {
        const Slab& s = table->at(t);
        const auto d = static_cast<Eigen::Index>(n);
        StateVec r(d);
        r.noalias() = -(s.At * y);
        r.noalias() -= s.M[player] * x;
        r.noalias() -= s.Dt * nu.mean().segment(d, d);
        r.noalias() -= s.Gamma[player] * nu.mean().head(d);
        r.noalias() -= s.sigmat * z.col(0);
        return r;
    };
    const Mat q = gs.players[player].Q;
    const Mat rr = gs.players[player].R;
    p.terminal = [q, rr](const StateVec& x, const EmpiricalMeasure& mu) {
        StateVec r(x.size());
        r.noalias() = q * x;
        r.noalias() += rr * mu.mean();
        return r;
    };
    return p;
}

Vec node_mean(const PathEnsemble& e, std::size_t node) {
    return e.slice(node).colwise().mean().transpose();
}

// Per-particle influence of J_i; the mean of the returned values is J_i.
std::vector<double> cost_influence(const GameSpec& gs, const TimeGrid& grid, std::size_t player,
                                   const PathEnsemble& x, const PathEnsemble& u) {
    const std::size_t n = x.particles();
    const PlayerSpec& pl = gs.players[player];
    if (x.nodes() != grid.nodes() || x.dim() != gs.n || u.particles() != n ||
        u.nodes() != grid.nodes() || u.dim() != static_cast<std::size_t>(pl.controls()))
        throw std::invalid_argument("cost: ensemble shapes do not match the game");
    const double dt = grid.dt();
    const std::size_t last = grid.steps();
    std::vector<double> psi(n, 0.0);

    const Vec mT = node_mean(x, last);
    const Vec rm = pl.R * mT;
    const double mrm = mT.dot(rm);
    for (std::size_t i = 0; i < n; ++i) {
        const Vec xT = x.value(i, last);
        psi[i] += 0.5 * (xT.dot(pl.Q * xT) + 2.0 * rm.dot(xT) - mrm);
    }
    for (std::size_t k = 0; k <= last; ++k) {
        const double t = grid.time(k);
        const double w = 0.5 * ((k == 0 || k == last) ? 0.5 * dt : dt);
        const Mat& M = pl.M.at(t);
        const Mat& G = pl.Gamma.at(t);
        const Vec m = node_mean(x, k);
        const Vec gm = G * m;
        const double mgm = m.dot(gm);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec xi = x.value(i, k);
            const Vec ui = u.value(i, k);
            psi[i] += w * (xi.dot(M * xi) + ui.dot(pl.N * ui) + 2.0 * gm.dot(xi) - mgm);
        }
    }
    return psi;
}

CostEstimate mean_and_error(const std::vector<double>& v) {
    const double n = static_cast<double>(v.size());
    double mean = 0.0;
    for (double x : v) mean += x;
    mean /= n;
    double var = 0.0;
    for (double x : v) var += (x - mean) * (x - mean);
    var = v.size() > 1 ? var / (n - 1.0) : 0.0;
    return {mean, std::sqrt(var / n)};
}

struct Deviation {
    Vec c;
    Mat K; // zero for constant deviations
    double scale = 0.0;
};

// Euler scheme for the state under fixed controls of the other players and a
// deviated control for `player`. Returns X and the player's control.
std::pair<PathEnsemble, PathEnsemble> simulate_deviation(const GameSpec& gs, const TimeGrid& grid,
                                                         const BrownianBundle& bundle,
                                                         const std::vector<PathEnsemble>& u,
                                                         std::size_t player,
                                                         const Deviation& dev) {
    const std::size_t n = bundle.particles();
    const auto mi = gs.players[player].controls();
    const double dt = grid.dt();
    PathEnsemble x(n, grid.nodes(), gs.n);
    PathEnsemble ui(n, grid.nodes(), static_cast<std::size_t>(mi));
    for (std::size_t i = 0; i < n; ++i) x.set(i, 0, gs.x0);

    auto own_control = [&](std::size_t i, std::size_t k, const Vec& m) {
        Vec v = u[player].value(i, k);
        if (dev.scale != 0.0) {
            Vec phi = dev.c;
            if (dev.K.size() > 0) phi += dev.K * (x.value(i, k) - m);
            v += dev.scale * phi;
        }
        return v;
    };

    for (std::size_t k = 0; k <= grid.steps(); ++k) {
        const double t = grid.time(k);
        const Vec m = node_mean(x, k);
        for (std::size_t i = 0; i < n; ++i) ui.set(i, k, own_control(i, k, m));
        if (k == grid.steps()) break;
        const Mat& A = gs.A.at(t);
        const Vec dm = gs.D.at(t) * m + gs.beta.at(t).col(0);
        const Mat& S = gs.sigma.at(t);
        const Vec al = gs.alpha.at(t).col(0);
        for (std::size_t i = 0; i < n; ++i) {
            const Vec xi = x.value(i, k);
            Vec drift = A * xi + dm;
            for (std::size_t j = 0; j < gs.m(); ++j)
                drift += gs.players[j].C *
                         (j == player ? Vec(ui.value(i, k)) : Vec(u[j].value(i, k)));
            const Vec next = xi + drift * dt + (S * xi + al) * bundle.increment(i, k, 0);
            x.set(i, k + 1, next);
        }
    }
    return {std::move(x), std::move(ui)};
}

} // namespace

NashResult solve_nash(const GameSpec& gs, const TimeGrid& grid, const SchemeParams& params,
                      std::uint64_t seed) {
    const MfProblem agg = build_aggregated(gs, true);
    NashResult out{solve(agg, grid, params, seed), {}, {}, {}, {}, 0.0, {}};
    const MfSolution& sol = out.aggregated;
    const std::vector<Mat> K = gain_matrices(gs);
    const auto table = make_table(gs, K);
    const std::size_t np = sol.x.particles();
    const auto d = static_cast<Eigen::Index>(gs.n);

    const Vec mT = node_mean(sol.x, grid.steps());
    const EmpiricalMeasure terminal = EmpiricalMeasure::point_mass(mT);
    std::vector<Vec> mx(grid.nodes());
    for (std::size_t k = 0; k < grid.nodes(); ++k) mx[k] = node_mean(sol.x, k);

    for (std::size_t i = 0; i < gs.m(); ++i) {
        const MfProblem adj = adjoint_problem(gs, table, i);
        std::vector<Vec> mp(grid.nodes(), Vec::Zero(d));
        BackwardResult back;
        std::size_t passes = 0;
        for (std::size_t it = 1; it <= 50; ++it) {
            std::vector<EmpiricalMeasure> flow;
            flow.reserve(grid.nodes());
            for (std::size_t k = 0; k < grid.nodes(); ++k) {
                Vec w(2 * d);
                w << mx[k], mp[k];
                flow.push_back(EmpiricalMeasure::point_mass(w));
            }
            back = solve_backward(adj, grid, *sol.bundle, sol.x, flow, terminal, params.basis,
                                  params.picard_inner);
            double change = 0.0;
            double scale = 1.0;
            for (std::size_t k = 0; k < grid.nodes(); ++k) {
                const Vec m = node_mean(back.y, k);
                change = std::max(change, (m - mp[k]).cwiseAbs().maxCoeff());
                scale = std::max(scale, m.cwiseAbs().maxCoeff());
                mp[k] = m;
            }
            if (change <= 1e-12 * scale) {
                passes = it;
                break;
            }
        }
        out.adjoint_passes.push_back(passes);

        const PlayerSpec& pl = gs.players[i];
        const Mat gain = -Eigen::LLT<Mat>(pl.N).solve(pl.C.transpose());
        PathEnsemble u(np, grid.nodes(), static_cast<std::size_t>(pl.controls()));
        for (std::size_t k = 0; k < grid.nodes(); ++k)
            for (std::size_t j = 0; j < np; ++j) u.set(j, k, gain * back.y.value(j, k));
        out.p.push_back(std::move(back.y));
        out.q.push_back(std::move(back.z));
        out.u.push_back(std::move(u));
    }

    for (std::size_t k = 0; k < grid.nodes(); ++k) {
        EmpiricalMeasure::Points diff = sol.y.slice(k);
        for (std::size_t i = 0; i < gs.m(); ++i)
            diff -= out.p[i].slice(k) * K[i].transpose();
        out.aggregation_residual = std::max(out.aggregation_residual,
                                            diff.squaredNorm() / static_cast<double>(np));
    }
    for (std::size_t i = 0; i < gs.m(); ++i) out.costs.push_back(cost(gs, grid, i, sol.x, out.u));
    return out;
}

CostEstimate cost(const GameSpec& gs, const TimeGrid& grid, std::size_t player,
                  const PathEnsemble& x, const std::vector<PathEnsemble>& controls) {
    if (player >= gs.m() || controls.size() != gs.m())
        throw std::invalid_argument("cost: player index or control count out of range");
    return mean_and_error(cost_influence(gs, grid, player, x, controls[player]));
}

DeviationReport deviation_test(const GameSpec& gs, const NashResult& nash, std::size_t player,
                               std::size_t perturbations, double magnitude, std::uint64_t seed) {
    if (player >= gs.m()) throw std::invalid_argument("deviation_test: player out of range");
    const MfSolution& sol = nash.aggregated;
    const TimeGrid& grid = *sol.grid;
    const BrownianBundle& bundle = *sol.bundle;
    const auto mi = gs.players[player].controls();
    const auto d = static_cast<Eigen::Index>(gs.n);

    DeviationReport rep;
    rep.player = player;
    rep.magnitude = magnitude;

    const auto base = simulate_deviation(gs, grid, bundle, nash.u, player, Deviation{});
    const std::vector<double> psi0 = cost_influence(gs, grid, player, base.first, base.second);
    rep.baseline_cost = mean_and_error(psi0).value;

    std::mt19937_64 rng(seed);
    std::normal_distribution<double> normal;
    Deviation dev;
    rep.pass = true;
    rep.min_delta = std::numeric_limits<double>::infinity();
    for (std::size_t j = 0; j < perturbations; ++j) {
        if (j % 2 == 0) {
            dev.c = Vec(mi);
            for (Eigen::Index a = 0; a < mi; ++a) dev.c[a] = normal(rng);
            dev.c /= std::max(dev.c.norm(), 1e-300);
            if ((j / 2) % 2 == 1) {
                dev.K = Mat(mi, d);
                for (Eigen::Index a = 0; a < dev.K.size(); ++a) dev.K.data()[a] = normal(rng);
                dev.K /= std::max(spectral_norm(dev.K), 1e-300);
            } else {
                dev.K.resize(0, 0);
            }
            dev.scale = magnitude;
        } else {
            dev.scale = -magnitude;
        }
        const auto sim = simulate_deviation(gs, grid, bundle, nash.u, player, dev);
        const std::vector<double> psi = cost_influence(gs, grid, player, sim.first, sim.second);
        std::vector<double> diff(psi.size());
        for (std::size_t a = 0; a < psi.size(); ++a) diff[a] = psi[a] - psi0[a];
        const CostEstimate e = mean_and_error(diff);
        rep.deltas.push_back(e.value);
        rep.stderrs.push_back(e.std_error);
        if (e.value < rep.min_delta) {
            rep.min_delta = e.value;
            rep.min_delta_stderr = e.std_error;
        }
        if (e.value < -3.0 * e.std_error) rep.pass = false;
    }
    if (perturbations == 0) rep.min_delta = 0.0;
    return rep;
}

double hamiltonian(const GameSpec& gs, std::size_t player, double t, const Vec& x,
                   const std::vector<Vec>& u, const Vec& zeta, const Vec& p, const Vec& q) {
    if (player >= gs.m() || u.size() != gs.m())
        throw std::invalid_argument("hamiltonian: player index or control count out of range");
    const auto d = static_cast<Eigen::Index>(gs.n);
    if (x.size() != d || zeta.size() != d || p.size() != d || q.size() != d)
        throw std::invalid_argument("hamiltonian: vector dimension mismatch");
    Vec drift = gs.A.at(t) * x + gs.D.at(t) * zeta + gs.beta.at(t).col(0);
    for (std::size_t k = 0; k < gs.m(); ++k) {
        if (u[k].size() != gs.players[k].controls())
            throw std::invalid_argument("hamiltonian: control dimension mismatch");
        drift += gs.players[k].C * u[k];
    }
    const PlayerSpec& pl = gs.players[player];
    const Vec vol = gs.sigma.at(t) * x + gs.alpha.at(t).col(0);
    return p.dot(drift) +
           0.5 * (x.dot(pl.M.at(t) * x) + u[player].dot(pl.N * u[player]) +
                  zeta.dot(pl.Gamma.at(t) * zeta)) +
           vol.dot(q);
}

} // namespace mfbsde
