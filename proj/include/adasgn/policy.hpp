#pragma once

#include <span>
#include <utility>
#include <vector>

#include "adasgn/graphnet.hpp"
#include "adasgn/transform.hpp"

namespace adasgn {

/// K model sizes times L joint counts. Action a = model * L + joints; index 0
/// is the biggest module on the most joints, size()-1 the reuse action.
struct ActionSpace {
    std::size_t models = 2;
    std::size_t joint_levels = 3;

    std::size_t size() const { return models * joint_levels; }
    std::size_t reuse_action() const { return size() - 1; }
    std::size_t compose(std::size_t model, std::size_t joints) const { return model * joint_levels + joints; }
    // Throws IndexError for a >= size().
    std::pair<std::size_t, std::size_t> split(std::size_t a) const;
};

struct TemperatureSchedule {
    enum class Kind { Exponential, Subtractive };
    double tau_init = 5.0;
    double decay_rate = 0.096;
    double tau_min = 0.01;
    Kind kind = Kind::Exponential;
};

// Exponential: max(tau_min, tau_init * exp(-decay_rate * epoch)).
// Subtractive: max(tau_min, tau_init - decay_rate * epoch).
double tau_at(std::size_t epoch, const TemperatureSchedule& sched);

/// Two same-padded temporal convolutions over per-frame policy features with
/// a relu between; the second emits one logit per action. The output layer
/// starts near zero with a bias of kFullComputePrior on action 0, so a fresh
/// policy runs the largest branch on most frames.
inline constexpr double kFullComputePrior = 3.0;

struct PolicyNet {
    Parameter w1, b1, w2, b2;

    PolicyNet() = default;
    PolicyNet(std::size_t in, std::size_t hidden, std::size_t actions, std::size_t kernel, Rng& rng);

    // [T, C] -> [T, KL] or [B, T, C] -> [B, T, KL].
    Var logits(Tape& t, Var features);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

// SM_{K-1}(M_{L-1} x) for frames [N0, C] or [F, N0, C].
Var extract_policy_features(Tape& t, Var frames, JointTransformSet& transforms, SpatialModule& smallest, Mode mode);

inline constexpr double kGumbelClamp = 1e-12;

// Standard Gumbel draws -log(-log u), u clamped to [1e-12, 1 - 1e-12].
std::vector<double> gumbel_noise(std::size_t n, Rng& rng);
// argmax(logp + noise), lowest index on ties.
std::size_t gumbel_argmax(std::span<const double> logp, std::span<const double> noise);
// Draws fresh noise and returns the perturbed argmax.
std::size_t gumbel_sample(std::span<const double> logp, Rng& rng);

// Row-wise softmax((logp + noise) / tau). Throws ConfigError for tau <= 0.
Var gumbel_softmax_relaxed(Var logp, const Tensor& noise, double tau);

struct StraightThroughSample {
    std::vector<std::size_t> actions;
    Var hard;   // one-hot forward, relaxed backward
    Var soft;   // the relaxation itself
    Tensor noise;
};

// Per-row sampling from logits [R, KL] with one noise draw shared by the
// hard and relaxed paths.
StraightThroughSample straight_through_sample(Var logits, double tau, Rng& rng);

// Upper-tail probability of Pearson's statistic for observed counts against
// expected probabilities.
double chi_square_p_value(std::span<const std::size_t> counts, std::span<const double> probs);

}  // namespace adasgn
