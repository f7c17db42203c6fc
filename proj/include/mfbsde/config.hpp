#pragma once

#include "mfbsde/fixpoint.hpp"
#include "mfbsde/lqgame.hpp"
#include "mfbsde/problem.hpp"

#include "json.hpp"

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace mfbsde {

/// Malformed or inconsistent configuration; the message names the line or field.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SolverSettings {
    SchemeParams params;
    std::size_t steps = 100;
    std::uint64_t seed = 1;
};

/// Either a game or an affine mean-field system, plus solver settings.
struct Config {
    std::optional<GameSpec> game;
    std::optional<MfProblem> problem;
    SolverSettings solver;

    bool is_game() const { return game.has_value(); }
    double horizon() const { return game ? game->horizon : problem->horizon; }
};

/// Parses {"type": "game" | "linear", ...}. Throws ConfigError.
Config parse_config(const nlohmann::json& j);
Config load_config(const std::string& path);

/// Affine system with constant coefficients, q-dimensional noise:
///   f = Fx x + Fy y + Fmx E[x] + Fmy E[y] + f0
///   sigma_j = Sx_j x + S0_j                  (column j, law-free)
///   h = Hx x + Hy y + sum_j Hz_j z_j + Hmx E[x] + Hmy E[y] + h0
///   g = Gx x + Gm E[x] + g0
struct LinearSpec {
    std::size_t dim = 1;
    std::size_t noise_dim = 1;
    double horizon = 1.0;
    Vec x0;
    Mat Fx, Fy, Fmx, Fmy;
    Vec f0;
    std::vector<Mat> Sx;
    Mat S0;
    Mat Hx, Hy, Hmx, Hmy;
    std::vector<Mat> Hz;
    Vec h0;
    Mat Gx, Gm;
    Vec g0;
    std::optional<LipschitzProfile> lipschitz;
    MonotonicityProfile monotonicity;
};

/// Lipschitz constants default to the spectral-norm bounds of the coefficients.
MfProblem build_linear(const LinearSpec& spec);

nlohmann::ordered_json to_json(const ConditionReport& r);
nlohmann::ordered_json to_json(const MonotonicityReport& r);
nlohmann::ordered_json to_json(const H2Report& r);
nlohmann::ordered_json to_json(const DeviationReport& r);

} // namespace mfbsde
