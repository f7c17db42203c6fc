#include "mfbsde/config.hpp"

#include <cmath>
#include <fstream>
#include <sstream>

namespace mfbsde {

using nlohmann::json;
using nlohmann::ordered_json;

namespace {

[[noreturn]] void fail(const std::string& field, const std::string& why) {
    throw ConfigError("field '" + field + "': " + why);
}

double number(const json& j, const std::string& field) {
    if (!j.is_number()) fail(field, "expected a number");
    const double v = j.get<double>();
    if (!std::isfinite(v)) fail(field, "must be finite");
    return v;
}

std::size_t count(const json& j, const std::string& field) {
    if (!j.is_number_integer() || j.get<long long>() < 0)
        fail(field, "expected a nonnegative integer");
    return static_cast<std::size_t>(j.get<long long>());
}

const json& required(const json& obj, const std::string& key, const std::string& prefix = "") {
    if (!obj.contains(key)) fail(prefix + key, "missing");
    return obj.at(key);
}

// A number is 1x1, a flat array a column, an array of arrays a row-major matrix.
Mat matrix(const json& j, const std::string& field) {
    if (j.is_number()) return Mat::Constant(1, 1, number(j, field));
    if (!j.is_array() || j.empty()) fail(field, "expected a number, vector or matrix");
    if (!j.front().is_array()) {
        Mat m(static_cast<Eigen::Index>(j.size()), 1);
        for (std::size_t i = 0; i < j.size(); ++i)
            m(static_cast<Eigen::Index>(i), 0) =
                number(j[i], field + "[" + std::to_string(i) + "]");
        return m;
    }
    const std::size_t cols = j.front().size();
    Mat m(static_cast<Eigen::Index>(j.size()), static_cast<Eigen::Index>(cols));
    for (std::size_t r = 0; r < j.size(); ++r) {
        if (!j[r].is_array() || j[r].size() != cols) fail(field, "rows must have equal length");
        for (std::size_t c = 0; c < cols; ++c)
            m(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
                number(j[r][c], field + "[" + std::to_string(r) + "][" + std::to_string(c) + "]");
    }
    return m;
}

Mat matrix_or(const json& obj, const std::string& key, const std::string& field, Mat fallback,
              Eigen::Index rows, Eigen::Index cols) {
    if (!obj.contains(key)) return fallback;
    Mat m = matrix(obj.at(key), field);
    if (m.rows() != rows || m.cols() != cols)
        fail(field, "expected shape " + std::to_string(rows) + "x" + std::to_string(cols));
    return m;
}

CoefficientPath path(const json& j, const std::string& field) {
    if (j.is_object() && j.contains("const")) return CoefficientPath::constant(matrix(j["const"], field + ".const"));
    if (j.is_object() && j.contains("piecewise")) {
        const json& pw = j["piecewise"];
        if (!pw.is_array() || pw.empty()) fail(field + ".piecewise", "expected a nonempty array");
        std::vector<double> t;
        std::vector<Mat> v;
        for (std::size_t k = 0; k < pw.size(); ++k) {
            const std::string f = field + ".piecewise[" + std::to_string(k) + "]";
            t.push_back(number(required(pw[k], "t_from", f + "."), f + ".t_from"));
            v.push_back(matrix(required(pw[k], "matrix", f + "."), f + ".matrix"));
        }
        try {
            return CoefficientPath::piecewise(std::move(t), std::move(v));
        } catch (const std::invalid_argument& e) {
            fail(field, e.what());
        }
    }
    if (j.is_object()) fail(field, "expected {\"const\": ...} or {\"piecewise\": [...]}");
    return CoefficientPath::constant(matrix(j, field));
}

CoefficientPath path_or_zero(const json& obj, const std::string& key, const std::string& field,
                             Eigen::Index rows, Eigen::Index cols) {
    if (!obj.contains(key)) return CoefficientPath::constant(Mat::Zero(rows, cols));
    return path(obj.at(key), field);
}

void parse_solver(const json& j, SolverSettings& s) {
    if (!j.is_object()) fail("solver", "expected an object");
    SchemeParams& p = s.params;
    for (const auto& [key, value] : j.items()) {
        const std::string f = "solver." + key;
        if (key == "particles") p.particles = count(value, f);
        else if (key == "steps") s.steps = count(value, f);
        else if (key == "seed") s.seed = count(value, f);
        else if (key == "delta") p.delta = number(value, f);
        else if (key == "tol") p.tol = number(value, f);
        else if (key == "max_outer") p.max_outer = count(value, f);
        else if (key == "inner_sweeps") p.inner_sweeps = count(value, f);
        else if (key == "relaxation") p.relaxation = number(value, f);
        else if (key == "picard_inner") p.picard_inner = count(value, f);
        else if (key == "basis_degree") p.basis.degree = static_cast<unsigned>(count(value, f));
        else if (key == "eps") p.eps = number(value, f);
        else if (key == "alpha") p.alpha = number(value, f);
        else if (key == "rho") p.rho = number(value, f);
        else fail(f, "unknown key");
    }
}

GameSpec parse_game(const json& j) {
    GameSpec gs;
    gs.n = count(required(j, "n"), "n");
    if (gs.n == 0 || gs.n > static_cast<std::size_t>(kMaxDim)) fail("n", "out of range");
    const auto n = static_cast<Eigen::Index>(gs.n);
    gs.horizon = number(required(j, "T"), "T");
    if (!(gs.horizon > 0.0)) fail("T", "must be positive");
    const Mat x0 = matrix(required(j, "x0"), "x0");
    if (x0.cols() != 1 || x0.rows() != n) fail("x0", "expected a vector of length n");
    gs.x0 = x0.col(0);

    gs.A = path_or_zero(j, "A", "A", n, n);
    gs.D = path_or_zero(j, "D", "D", n, n);
    gs.beta = path_or_zero(j, "beta", "beta", n, 1);
    gs.sigma = path_or_zero(j, "sigma", "sigma", n, n);
    gs.alpha = path_or_zero(j, "alpha", "alpha", n, 1);

    const json& players = required(j, "players");
    if (!players.is_array() || players.empty()) fail("players", "expected a nonempty array");
    if (j.contains("m") && count(j["m"], "m") != players.size())
        fail("players", "expected " + std::to_string(count(j["m"], "m")) + " player blocks, found " +
                            std::to_string(players.size()));
    for (std::size_t i = 0; i < players.size(); ++i) {
        const std::string pre = "players[" + std::to_string(i) + "].";
        const json& pj = players[i];
        if (!pj.is_object()) fail(pre.substr(0, pre.size() - 1), "expected an object");
        PlayerSpec pl;
        pl.C = matrix(required(pj, "C", pre), pre + "C");
        pl.N = matrix(required(pj, "N", pre), pre + "N");
        pl.M = path_or_zero(pj, "M", pre + "M", n, n);
        pl.Gamma = path_or_zero(pj, "Gamma", pre + "Gamma", n, n);
        pl.Q = matrix_or(pj, "Q", pre + "Q", Mat::Zero(n, n), n, n);
        pl.R = matrix_or(pj, "R", pre + "R", Mat::Zero(n, n), n, n);
        gs.players.push_back(std::move(pl));
    }
    try {
        gs.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return gs;
}

LinearSpec parse_linear(const json& j) {
    LinearSpec s;
    s.dim = count(required(j, "d"), "d");
    if (s.dim == 0 || s.dim > static_cast<std::size_t>(kMaxDim)) fail("d", "out of range");
    s.noise_dim = j.contains("q") ? count(j["q"], "q") : 1;
    if (s.noise_dim == 0 || s.noise_dim > static_cast<std::size_t>(kMaxDim)) fail("q", "out of range");
    const auto d = static_cast<Eigen::Index>(s.dim);
    const auto q = static_cast<Eigen::Index>(s.noise_dim);
    s.horizon = number(required(j, "T"), "T");
    if (!(s.horizon > 0.0)) fail("T", "must be positive");
    const Mat x0 = matrix(required(j, "x0"), "x0");
    if (x0.cols() != 1 || x0.rows() != d) fail("x0", "expected a vector of length d");
    s.x0 = x0.col(0);

    const Mat zd = Mat::Zero(d, d);
    const Mat zv = Mat::Zero(d, 1);
    s.Fx = matrix_or(j, "F_x", "F_x", zd, d, d);
    s.Fy = matrix_or(j, "F_y", "F_y", zd, d, d);
    s.Fmx = matrix_or(j, "F_mx", "F_mx", zd, d, d);
    s.Fmy = matrix_or(j, "F_my", "F_my", zd, d, d);
    s.f0 = matrix_or(j, "f0", "f0", zv, d, 1).col(0);
    s.S0 = matrix_or(j, "sigma_0", "sigma_0", Mat::Zero(d, q), d, q);
    s.Hx = matrix_or(j, "H_x", "H_x", zd, d, d);
    s.Hy = matrix_or(j, "H_y", "H_y", zd, d, d);
    s.Hmx = matrix_or(j, "H_mx", "H_mx", zd, d, d);
    s.Hmy = matrix_or(j, "H_my", "H_my", zd, d, d);
    s.h0 = matrix_or(j, "h0", "h0", zv, d, 1).col(0);
    s.Gx = matrix_or(j, "G_x", "G_x", zd, d, d);
    s.Gm = matrix_or(j, "G_m", "G_m", zd, d, d);
    s.g0 = matrix_or(j, "g0", "g0", zv, d, 1).col(0);

    auto per_noise = [&](const char* key, std::vector<Mat>& out) {
        out.assign(s.noise_dim, zd);
        if (!j.contains(key)) return;
        const json& a = j[key];
        if (!a.is_array() || a.size() != s.noise_dim)
            fail(key, "expected one d x d matrix per noise component");
        for (std::size_t c = 0; c < s.noise_dim; ++c) {
            const std::string f = std::string(key) + "[" + std::to_string(c) + "]";
            out[c] = matrix(a[c], f);
            if (out[c].rows() != d || out[c].cols() != d) fail(f, "expected a d x d matrix");
        }
    };
    per_noise("sigma_x", s.Sx);
    per_noise("H_z", s.Hz);

    if (j.contains("lipschitz")) {
        const json& l = j["lipschitz"];
        LipschitzProfile lp;
        lp.c_u = number(required(l, "c_u", "lipschitz."), "lipschitz.c_u");
        lp.c_nu = number(required(l, "c_nu", "lipschitz."), "lipschitz.c_nu");
        lp.c_g_x = number(required(l, "c_g_x", "lipschitz."), "lipschitz.c_g_x");
        lp.c_g_nu = number(required(l, "c_g_nu", "lipschitz."), "lipschitz.c_g_nu");
        s.lipschitz = lp;
    }
    const json& m = required(j, "monotonicity");
    s.monotonicity.k = number(required(m, "k", "monotonicity."), "monotonicity.k");
    s.monotonicity.k_prime = number(required(m, "k_prime", "monotonicity."), "monotonicity.k_prime");
    if (m.contains("variant")) {
        const json& v = m["variant"];
        if (v == "H1") s.monotonicity.variant = MonotonicityVariant::H1;
        else if (v == "H1prime") s.monotonicity.variant = MonotonicityVariant::H1Prime;
        else fail("monotonicity.variant", "expected \"H1\" or \"H1prime\"");
    }
    return s;
}

double spectral_norm(const Mat& m) {
    return m.size() == 0 ? 0.0 : Eigen::JacobiSVD<Mat>(m).singularValues()(0);
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

} // namespace

MfProblem build_linear(const LinearSpec& s) {
    MfProblem p;
    p.dim = s.dim;
    p.noise_dim = s.noise_dim;
    p.x0 = s.x0;
    p.horizon = s.horizon;
    p.law_free_sigma = true;
    const auto d = static_cast<Eigen::Index>(s.dim);
    const auto spec = std::make_shared<const LinearSpec>(s);

    p.drift = [spec, d](double, const StateVec& x, const StateVec& y, const NoiseMat&,
                        const EmpiricalMeasure& nu) {
        StateVec r(d);
        r.noalias() = spec->Fx * x;
        r.noalias() += spec->Fy * y;
        r.noalias() += spec->Fmx * nu.mean().head(d);
        r.noalias() += spec->Fmy * nu.mean().segment(d, d);
        r += spec->f0;
        return r;
    };
    p.diffusion = [spec, d](double, const StateVec& x, const StateVec&, const NoiseMat&,
                            const EmpiricalMeasure*) {
        NoiseMat r(d, static_cast<Eigen::Index>(spec->noise_dim));
        for (std::size_t c = 0; c < spec->noise_dim; ++c) {
            const auto ci = static_cast<Eigen::Index>(c);
            r.col(ci).noalias() = spec->Sx[c] * x;
            r.col(ci) += spec->S0.col(ci);
        }
        return r;
    };
    p.driver = [spec, d](double, const StateVec& x, const StateVec& y, const NoiseMat& z,
                         const EmpiricalMeasure& nu) {
        StateVec r(d);
        r.noalias() = spec->Hx * x;
        r.noalias() += spec->Hy * y;
        for (std::size_t c = 0; c < spec->noise_dim; ++c)
            r.noalias() += spec->Hz[c] * z.col(static_cast<Eigen::Index>(c));
        r.noalias() += spec->Hmx * nu.mean().head(d);
        r.noalias() += spec->Hmy * nu.mean().segment(d, d);
        r += spec->h0;
        return r;
    };
    p.terminal = [spec](const StateVec& x, const EmpiricalMeasure& mu) {
        StateVec r(x.size());
        r.noalias() = spec->Gx * x;
        r.noalias() += spec->Gm * mu.mean();
        r += spec->g0;
        return r;
    };

    if (s.lipschitz) {
        p.lipschitz = *s.lipschitz;
    } else {
        double sx = 0.0;
        double hz = 0.0;
        for (const Mat& m : s.Sx) sx += spectral_norm(m);
        for (const Mat& m : s.Hz) hz += spectral_norm(m);
        p.lipschitz.c_u = std::max({spectral_norm(s.Fx) + spectral_norm(s.Fy),
                                    spectral_norm(s.Hx) + spectral_norm(s.Hy) + hz, sx});
        p.lipschitz.c_nu = std::max(spectral_norm(s.Fmx) + spectral_norm(s.Fmy),
                                    spectral_norm(s.Hmx) + spectral_norm(s.Hmy));
        p.lipschitz.c_g_x = spectral_norm(s.Gx);
        p.lipschitz.c_g_nu = spectral_norm(s.Gm);
    }
    p.monotonicity = s.monotonicity;
    return p;
}

Config parse_config(const json& j) {
    if (!j.is_object()) throw ConfigError("top level: expected a JSON object");
    const json& type = required(j, "type");
    Config c;
    try {
        if (type == "game") {
            c.game = parse_game(j);
        } else if (type == "linear") {
            LinearSpec s = parse_linear(j);
            c.problem = build_linear(s);
        } else {
            fail("type", "expected \"game\" or \"linear\"");
        }
    } catch (const json::exception& e) {
        throw ConfigError(std::string("malformed value: ") + e.what());
    }
    if (j.contains("solver")) parse_solver(j["solver"], c.solver);
    return c;
}

Config load_config(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open '" + path + "'");
    std::stringstream buf;
    buf << in.rdbuf();
    const std::string text = buf.str();
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        const std::size_t pos = std::min<std::size_t>(e.byte, text.size());
        std::size_t line = 1;
        std::size_t col = 1;
        for (std::size_t i = 0; i + 1 < pos; ++i) {
            if (text[i] == '\n') {
                ++line;
                col = 1;
            } else {
                ++col;
            }
        }
        throw ConfigError(path + ":" + std::to_string(line) + ":" + std::to_string(col) +
                          ": invalid JSON");
    }
    return parse_config(j);
}

ordered_json to_json(const ConditionReport& r) {
    ordered_json j;
    j["variant"] = to_string(r.variant);
    j["bound"] = r.bound;
    j["constants"] = {{"c_nu", r.c_nu}, {"c_g_nu", r.c_g_nu}};
    j["margins"] = {{"c_nu", r.margin_c_nu}, {"c_g_nu", r.margin_c_g_nu}};
    j["pass"] = r.pass;
    return j;
}

ordered_json to_json(const MonotonicityReport& r) {
    ordered_json j;
    j["variant"] = to_string(r.variant);
    j["samples"] = r.samples;
    j["k_estimate"] = finite_or_null(r.k_estimate);
    j["k_prime_estimate"] = finite_or_null(r.k_prime_estimate);
    j["worst_margin_operator"] = finite_or_null(r.worst_margin_operator);
    j["worst_margin_terminal"] = finite_or_null(r.worst_margin_terminal);
    j["pass_operator"] = r.pass_operator;
    j["pass_terminal"] = r.pass_terminal;
    j["pass"] = r.pass;
    return j;
}

namespace {

ordered_json matrix_json(const Mat& m) {
    ordered_json rows = ordered_json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        ordered_json row = ordered_json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(row);
    }
    return rows;
}

} // namespace

ordered_json to_json(const H2Report& r) {
    ordered_json j;
    ordered_json ks = ordered_json::array();
    for (const Mat& k : r.K) ks.push_back(matrix_json(k));
    j["K"] = ks;
    j["sum_KQ"] = matrix_json(r.sum_KQ);
    j["sum_KR"] = matrix_json(r.sum_KR);
    // A nonpositive smallest eigenvalue means the constant does not exist.
    j["eta1"] = r.pass_eta1 ? json(r.eta1) : json(nullptr);
    j["eta2"] = r.pass_eta2 ? json(r.eta2) : json(nullptr);
    j["min_eig_sum_KQ"] = r.eta1;
    j["min_eig_sum_KM"] = r.eta2;
    j["commutation"] = {{"A", r.commutation_A}, {"D", r.commutation_D}, {"sigma", r.commutation_sigma}};
    j["norm_KR"] = r.norm_KR;
    j["norm_D"] = r.norm_D;
    j["bound"] = r.bound;
    j["pass_commutation"] = r.pass_commutation;
    j["pass_eta1"] = r.pass_eta1;
    j["pass_eta2"] = r.pass_eta2;
    j["pass_KR"] = r.pass_KR;
    j["pass_D"] = r.pass_D;
    j["pass"] = r.pass;
    return j;
}

ordered_json to_json(const DeviationReport& r) {
    ordered_json j;
    j["player"] = r.player;
    j["magnitude"] = r.magnitude;
    j["baseline_cost"] = r.baseline_cost;
    j["deltas"] = r.deltas;
    j["stderrs"] = r.stderrs;
    j["min_delta"] = r.min_delta;
    j["min_delta_stderr"] = r.min_delta_stderr;
    j["pass"] = r.pass;
    return j;
}

} // namespace mfbsde
