#ifndef CONSOLIDATE_PENALTY_HPP
#define CONSOLIDATE_PENALTY_HPP

#include <span>
#include <string>
#include <vector>

#include "consolidate/importance.hpp"
#include "consolidate/network.hpp"

namespace ewc {

enum class PenaltyKind { None, Original, Stabilized };

std::string penalty_name(PenaltyKind k);
PenaltyKind penalty_from_name(const std::string& name);

struct PenaltyConfig {
    PenaltyKind kind = PenaltyKind::Original;
    double lambda = 0.0;
    double alpha = 0.001;  // learning rate entering the stabilization factor
};

/// Anchor weights and accumulated importances for the quadratic penalty.
struct ConsolidatedState {
    std::vector<double> w_star;
    ImportanceMap omega;
    PenaltyConfig config;
};

/// Snapshot the current parameters against the accumulated importances.
ConsolidatedState consolidate(const Network& net, ImportanceMap omega_accumulated,
                              PenaltyConfig config);

/// Original: (lambda/2) sum omega_i (w_i - w*_i)^2.
/// Stabilized: (lambda/2) sum omega_i / (alpha lambda omega_i + 1) (w_i - w*_i)^2.
double penalty_value(const ConsolidatedState& state, std::span<const double> w);

/// Gradient term to ADD to the task gradient before the optimizer step, so
/// that the SGD increment contribution is -alpha lambda omega (w - w*)
/// (original) or -[alpha lambda omega / (alpha lambda omega + 1)](w - w*)
/// (stabilized).
GradientVector penalty_gradient(const ConsolidatedState& state, std::span<const double> w);

/// Adds the penalty gradient in place; cheaper than returning a fresh vector.
void add_penalty_gradient(const ConsolidatedState& state, std::span<const double> w,
                          std::span<double> grad);

/// The per-step shrink/growth multiplier applied to (w - w*) by one plain
/// SGD step with zero task loss: 1 - alpha*lambda*omega (original) or
/// 1/(alpha*lambda*omega + 1) (stabilized).
double step_factor(PenaltyKind kind, double alpha, double lambda, double omega);

struct ExplosionTrajectory {
    std::vector<double> distances;  // |w - w*| after each step, starting at step 0
    bool diverged = false;
};

/// Single weight, zero task loss, plain SGD: the distance sequence under the
/// chosen penalty. Overflow stops the trajectory with the diverged marker.
ExplosionTrajectory explosion_demo(double alpha, double lambda, double omega_scalar,
                                   int n_steps, PenaltyKind kind,
                                   double initial_distance = 1.0);

void save_consolidated(const ConsolidatedState& state, const std::string& dir,
                       std::uint64_t fingerprint);
ConsolidatedState load_consolidated(const std::string& dir);

}  // namespace ewc

#endif
