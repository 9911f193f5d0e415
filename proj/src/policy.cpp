#include "adasgn/policy.hpp"

#include <algorithm>
#include <boost/math/distributions/chi_squared.hpp>
#include <cmath>

#include "adasgn/errors.hpp"

namespace adasgn {

std::pair<std::size_t, std::size_t> ActionSpace::split(std::size_t a) const {
    if (a >= size())
        throw IndexError("action " + std::to_string(a) + " out of range for " + std::to_string(size()) + " actions");
    return {a / joint_levels, a % joint_levels};
}

double tau_at(std::size_t epoch, const TemperatureSchedule& sched) {
    const double e = static_cast<double>(epoch);
    const double tau = sched.kind == TemperatureSchedule::Kind::Exponential
                           ? sched.tau_init * std::exp(-sched.decay_rate * e)
                           : sched.tau_init - sched.decay_rate * e;
    return std::max(sched.tau_min, tau);
}

PolicyNet::PolicyNet(std::size_t in, std::size_t hidden, std::size_t actions, std::size_t kernel, Rng& rng)
    : w1(init_weight({kernel, in, hidden}, kernel * in, rng)),
      b1(Tensor({hidden}, 0.0)),
      w2(init_weight({kernel, hidden, actions}, kernel * hidden, rng, 1e-4)),
      b2(Tensor({actions}, 0.0)) {
    if (actions > 0) b2.value[0] = kFullComputePrior;
}

Var PolicyNet::logits(Tape& t, Var features) {
    Var h = relu(conv1d_temporal(features, t.parameter(w1), t.parameter(b1)));
    return conv1d_temporal(h, t.parameter(w2), t.parameter(b2));
}

void PolicyNet::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".conv1.weight", w1);
    fn(prefix + ".conv1.bias", b1);
    fn(prefix + ".conv2.weight", w2);
    fn(prefix + ".conv2.bias", b2);
}

Var extract_policy_features(Tape& t, Var frames, JointTransformSet& transforms, SpatialModule& smallest, Mode mode) {
    const std::size_t level = transforms.levels() - 1;
    return smallest.forward(t, transforms.apply(t, level, frames), mode, level);
}

std::vector<double> gumbel_noise(std::size_t n, Rng& rng) {
    std::vector<double> g(n);
    for (double& v : g) {
        const double u = std::clamp(rng.uniform(), kGumbelClamp, 1.0 - kGumbelClamp);
        v = -std::log(-std::log(u));
    }
    return g;
}

std::size_t gumbel_argmax(std::span<const double> logp, std::span<const double> noise) {
    std::size_t best = 0;
    double bv = logp[0] + noise[0];
    for (std::size_t i = 1; i < logp.size(); ++i)
        if (logp[i] + noise[i] > bv) {
            bv = logp[i] + noise[i];
            best = i;
        }
    return best;
}

std::size_t gumbel_sample(std::span<const double> logp, Rng& rng) {
    const auto g = gumbel_noise(logp.size(), rng);
    return gumbel_argmax(logp, g);
}

Var gumbel_softmax_relaxed(Var logp, const Tensor& noise, double tau) {
    if (!(tau > 0.0)) throw ConfigError("Gumbel-Softmax temperature must be positive, got " + std::to_string(tau));
    Var perturbed = add(logp, logp.tape()->constant(noise));
    return softmax_rows(scale(perturbed, 1.0 / tau));
}

StraightThroughSample straight_through_sample(Var logits, double tau, Rng& rng) {
    const Shape& s = logits.shape();
    if (s.size() != 2) throw DimensionError("straight_through_sample expects [R,KL], got " + shape_string(s));
    const std::size_t rows = s[0], n = s[1];
    Var logp = log_softmax_rows(logits);
    StraightThroughSample out;
    out.noise = Tensor({rows, n});
    out.actions.resize(rows);
    for (std::size_t r = 0; r < rows; ++r) {
        const auto g = gumbel_noise(n, rng);
        std::copy(g.begin(), g.end(), out.noise.data() + r * n);
        out.actions[r] = gumbel_argmax(std::span(logp.value().data() + r * n, n), g);
    }
    out.soft = gumbel_softmax_relaxed(logp, out.noise, tau);
    out.hard = straight_through(out.soft, out.actions);
    return out;
}

double chi_square_p_value(std::span<const std::size_t> counts, std::span<const double> probs) {
    if (counts.size() != probs.size() || counts.size() < 2)
        throw ContractError("chi-square test needs matching count and probability vectors");
    double total = 0.0;
    for (auto c : counts) total += static_cast<double>(c);
    double stat = 0.0;
    for (std::size_t i = 0; i < counts.size(); ++i) {
        const double expected = total * probs[i];
        const double d = static_cast<double>(counts[i]) - expected;
        stat += d * d / expected;
    }
    boost::math::chi_squared_distribution<double> dist(static_cast<double>(counts.size() - 1));
    return boost::math::cdf(boost::math::complement(dist, stat));
}

}  // namespace adasgn
