#include "adasgn/graphnet.hpp"

#include <cmath>

#include "adasgn/errors.hpp"

namespace adasgn {

constexpr double kAttentionGain = 4.0;

Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng, double gain) {
    Tensor w(std::move(shape));
    const double sd = std::sqrt(gain / static_cast<double>(fan_in));
    for (double& v : w.values()) v = sd * rng.normal();
    return w;
}

NormLayer::NormLayer(std::size_t channels)
    : gamma(Tensor({channels}, 1.0)), beta(Tensor({channels}, 0.0)), state(channels) {}

Var NormLayer::forward(Tape& t, Var x, Mode mode) {
    const std::size_t rows = x.value().numel() / x.shape().back();
    if (mode == Mode::Train && rows < 2) mode = Mode::Eval;
    return batch_norm(x, t.parameter(gamma), t.parameter(beta), state, mode);
}

void NormLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".gamma", gamma);
    fn(prefix + ".beta", beta);
    fn(prefix + ".running_mean", state.running_mean);
    fn(prefix + ".running_var", state.running_var);
}

Var adaptive_adjacency(Var x, Var theta, Var phi) {
    Var q = matmul(x, theta);
    Var k = matmul(x, phi);
    return softmax_rows(matmul(q, transpose_last(k)));
}

GcnLayer::GcnLayer(std::size_t in, std::size_t out, Rng& rng)
    : weight(init_weight({in, out}, in, rng)), norm(out) {}

Var GcnLayer::forward(Tape& t, Var x, Var a, Mode mode, NormLayer* bn) {
    return relu((bn ? *bn : norm).forward(t, matmul(matmul(a, x), t.parameter(weight)), mode));
}

void GcnLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", weight);
    norm.visit(prefix + ".bn", fn);
}

SpatialModule::SpatialModule(std::size_t coords, const SpatialPlan& plan, Rng& rng, std::size_t levels)
    : theta(init_weight({coords, plan.embed}, coords, rng, kAttentionGain)),
      phi(init_weight({coords, plan.embed}, coords, rng, kAttentionGain)) {
    if (levels == 0) throw ConfigError("spatial module needs at least one joint level");
    std::size_t in = coords;
    for (std::size_t i = 0; i < 3; ++i) {
        layers[i] = GcnLayer(in, plan.widths[i], rng);
        in = plan.widths[i];
    }
    for (std::size_t l = 1; l < levels; ++l)
        level_norms.push_back({NormLayer(plan.widths[0]), NormLayer(plan.widths[1]), NormLayer(plan.widths[2])});
}

Var SpatialModule::forward(Tape& t, Var x, Mode mode, std::size_t level) {
    const std::size_t rank = x.shape().size();
    if (rank != 2 && rank != 3)
        throw DimensionError("spatial module expects [N,C] or [F,N,C], got " + shape_string(x.shape()));
    if (levels() > 1 && level >= levels())
        throw IndexError("joint level " + std::to_string(level) + " outside a module with " +
                         std::to_string(levels()) + " levels");
    Var a = adaptive_adjacency(x, t.parameter(theta), t.parameter(phi));
    Var h = x;
    for (std::size_t i = 0; i < layers.size(); ++i)
        h = layers[i].forward(t, h, a, mode, levels() > 1 && level > 0 ? &level_norms[level - 1][i] : nullptr);
    return max_pool_axis(h, rank - 2);
}

void SpatialModule::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".theta", theta);
    fn(prefix + ".phi", phi);
    for (std::size_t i = 0; i < layers.size(); ++i) layers[i].visit(prefix + ".gcn" + std::to_string(i), fn);
    for (std::size_t l = 0; l < level_norms.size(); ++l)
        for (std::size_t i = 0; i < 3; ++i)
            level_norms[l][i].visit(prefix + ".level" + std::to_string(l + 1) + ".gcn" + std::to_string(i) + ".bn", fn);
}

TemporalModule::TemporalModule(std::size_t frames, std::size_t in, std::size_t hidden, std::size_t out,
                               std::size_t kernel, Rng& rng)
    : frame_embed(init_weight({frames, in}, 1, rng, 0.01)),
      w1(init_weight({kernel, in, hidden}, kernel * in, rng)),
      b1(Tensor({hidden}, 0.0)),
      w2(init_weight({kernel, hidden, out}, kernel * hidden, rng)),
      b2(Tensor({out}, 0.0)),
      norm1(hidden),
      norm2(out) {}

Var TemporalModule::forward(Tape& t, Var f, Mode mode) {
    const Shape& s = f.shape();
    if (s.size() != 2 && s.size() != 3)
        throw DimensionError("temporal module expects [T,C] or [B,T,C], got " + shape_string(s));
    const std::size_t T = s[s.size() - 2];
    if (T > frame_embed.value.dim(0))
        throw DimensionError("sequence of " + std::to_string(T) + " frames exceeds the embedding length " +
                             std::to_string(frame_embed.value.dim(0)));
    Var emb = t.parameter(frame_embed);
    if (T < frame_embed.value.dim(0)) emb = slice_rows(emb, 0, T);
    Var h = add_broadcast(f, emb);
    h = relu(norm1.forward(t, conv1d_temporal(h, t.parameter(w1), t.parameter(b1)), mode));
    return relu(norm2.forward(t, conv1d_temporal(h, t.parameter(w2), t.parameter(b2)), mode));
}

void TemporalModule::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".frame_embed", frame_embed);
    fn(prefix + ".conv1.weight", w1);
    fn(prefix + ".conv1.bias", b1);
    norm1.visit(prefix + ".bn1", fn);
    fn(prefix + ".conv2.weight", w2);
    fn(prefix + ".conv2.bias", b2);
    norm2.visit(prefix + ".bn2", fn);
}

ClassifierHead::ClassifierHead(std::size_t in, std::size_t classes, Rng& rng)
    : weight(init_weight({in, classes}, in, rng, 1.0)), bias(Tensor({classes}, 0.0)) {}

Var ClassifierHead::logits(Tape& t, Var features) {
    const std::size_t rank = features.shape().size();
    if (rank != 2 && rank != 3)
        throw DimensionError("classifier expects [T,C] or [B,T,C], got " + shape_string(features.shape()));
    Var pooled = max_pool_axis(features, rank - 2);
    if (rank == 2) pooled = reshape(pooled, {1, pooled.shape()[0]});
    Var out = add_broadcast(matmul(pooled, t.parameter(weight)), t.parameter(bias));
    if (rank == 2) out = reshape(out, {out.shape()[1]});
    return out;
}

void ClassifierHead::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".weight", weight);
    fn(prefix + ".bias", bias);
}

}  // namespace adasgn
