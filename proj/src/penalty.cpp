#include "consolidate/penalty.hpp"

#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

namespace ewc {

std::string penalty_name(PenaltyKind k) {
    switch (k) {
        case PenaltyKind::None: return "none";
        case PenaltyKind::Original: return "original";
        case PenaltyKind::Stabilized: return "stabilized";
    }
    return "?";
}

PenaltyKind penalty_from_name(const std::string& name) {
    if (name == "none") return PenaltyKind::None;
    if (name == "original" || name == "ewc") return PenaltyKind::Original;
    if (name == "stabilized") return PenaltyKind::Stabilized;
    throw EwcError("unknown penalty \"" + name + "\" (none, original, stabilized)");
}

ConsolidatedState consolidate(const Network& net, ImportanceMap omega_accumulated,
                              PenaltyConfig config) {
    if (omega_accumulated.omega.size() != net.param_count())
        throw ShapeError("consolidate: importance map misaligned with network");
    if (config.lambda < 0.0) throw EwcError("consolidate: lambda must be >= 0");
    if (config.kind == PenaltyKind::Stabilized && config.alpha <= 0.0)
        throw EwcError("consolidate: stabilized penalty needs alpha > 0");
    ConsolidatedState state;
    state.w_star.assign(net.params().begin(), net.params().end());
    state.omega = std::move(omega_accumulated);
    state.config = config;
    return state;
}

namespace {

void check_aligned(const ConsolidatedState& state, std::size_t n) {
    if (state.w_star.size() != n || state.omega.omega.size() != n)
        throw ShapeError("penalty: state misaligned with parameter vector");
}

}  // namespace

double penalty_value(const ConsolidatedState& state, std::span<const double> w) {
    check_aligned(state, w.size());
    const auto& cfg = state.config;
    if (cfg.kind == PenaltyKind::None || cfg.lambda == 0.0) return 0.0;
    double sum = 0.0;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double om = state.omega.omega[i];
        const double diff = w[i] - state.w_star[i];
        const double eff =
            cfg.kind == PenaltyKind::Stabilized ? om / (cfg.alpha * cfg.lambda * om + 1.0) : om;
        sum += eff * diff * diff;
    }
    return 0.5 * cfg.lambda * sum;
}

void add_penalty_gradient(const ConsolidatedState& state, std::span<const double> w,
                          std::span<double> grad) {
    check_aligned(state, w.size());
    if (grad.size() != w.size()) throw ShapeError("penalty gradient: misaligned gradient");
    const auto& cfg = state.config;
    if (cfg.kind == PenaltyKind::None || cfg.lambda == 0.0) return;
    for (std::size_t i = 0; i < w.size(); ++i) {
        const double om = state.omega.omega[i];
        const double diff = w[i] - state.w_star[i];
        const double eff =
            cfg.kind == PenaltyKind::Stabilized ? om / (cfg.alpha * cfg.lambda * om + 1.0) : om;
        grad[i] += cfg.lambda * eff * diff;
    }
}

GradientVector penalty_gradient(const ConsolidatedState& state, std::span<const double> w) {
    GradientVector g(w.size(), 0.0);
    add_penalty_gradient(state, w, g);
    return g;
}

double step_factor(PenaltyKind kind, double alpha, double lambda, double omega) {
    const double alo = alpha * lambda * omega;
    switch (kind) {
        case PenaltyKind::None: return 1.0;
        case PenaltyKind::Original: return 1.0 - alo;
        case PenaltyKind::Stabilized: return 1.0 / (alo + 1.0);
    }
    return 1.0;
}

ExplosionTrajectory explosion_demo(double alpha, double lambda, double omega_scalar, int n_steps,
                                   PenaltyKind kind, double initial_distance) {
    if (alpha <= 0.0 || lambda < 0.0 || omega_scalar < 0.0 || n_steps < 0)
        throw EwcError("explosion_demo: need alpha > 0, lambda >= 0, omega >= 0, steps >= 0");
    ExplosionTrajectory out;
    const double factor = step_factor(kind, alpha, lambda, omega_scalar);
    double dist = initial_distance;
    out.distances.push_back(std::abs(dist));
    for (int s = 0; s < n_steps; ++s) {
        dist *= factor;
        if (!std::isfinite(dist)) {
            out.diverged = true;
            break;
        }
        out.distances.push_back(std::abs(dist));
    }
    return out;
}

void save_consolidated(const ConsolidatedState& state, const std::string& dir,
                       std::uint64_t fingerprint) {
    std::ofstream bin(dir + "/w_star.bin", std::ios::binary);
    if (!bin) throw EwcError(dir + "/w_star.bin: cannot open for writing");
    bin.write(reinterpret_cast<const char*>(state.w_star.data()),
              static_cast<std::streamsize>(state.w_star.size() * sizeof(double)));
    save_importance(state.omega, dir + "/omega.bin", fingerprint);
    nlohmann::json meta = {
        {"penalty", penalty_name(state.config.kind)},
        {"lambda", state.config.lambda},
        {"alpha", state.config.alpha},
        {"param_count", state.w_star.size()},
    };
    std::ofstream side(dir + "/consolidated.json");
    side << meta.dump(2) << "\n";
}

ConsolidatedState load_consolidated(const std::string& dir) {
    std::ifstream side(dir + "/consolidated.json");
    if (!side) throw EwcError(dir + "/consolidated.json: cannot open");
    nlohmann::json meta = nlohmann::json::parse(side);
    ConsolidatedState state;
    state.config.kind = penalty_from_name(meta.at("penalty").get<std::string>());
    state.config.lambda = meta.at("lambda").get<double>();
    state.config.alpha = meta.at("alpha").get<double>();
    const std::size_t n = meta.at("param_count").get<std::size_t>();
    state.w_star.resize(n);
    std::ifstream bin(dir + "/w_star.bin", std::ios::binary);
    if (!bin.read(reinterpret_cast<char*>(state.w_star.data()),
                  static_cast<std::streamsize>(n * sizeof(double))))
        throw EwcError(dir + "/w_star.bin: truncated snapshot");
    state.omega = load_importance(dir + "/omega.bin");
    return state;
}

}  // namespace ewc
