#pragma once

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "adasgn/arch.hpp"
#include "adasgn/ops.hpp"
#include "adasgn/rng.hpp"

namespace adasgn {

using ParamVisitor = std::function<void(const std::string& path, Parameter&)>;

/// BN with a learned affine, shared by every layer type below.
struct NormLayer {
    Parameter gamma, beta;
    BatchNormState state;

    NormLayer() = default;
    explicit NormLayer(std::size_t channels);

    // Falls back to running statistics when a training call sees fewer than
    // two rows.
    Var forward(Tape& t, Var x, Mode mode);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

// softmax((x theta)(x phi)^T) for x of shape [N, C] or [F, N, C].
Var adaptive_adjacency(Var x, Var theta, Var phi);

struct GcnLayer {
    Parameter weight;  // [C_in, C_out]
    NormLayer norm;

    GcnLayer() = default;
    GcnLayer(std::size_t in, std::size_t out, Rng& rng);

    // relu(bn((a x) w)), normalising with `bn` instead of the layer's own BN
    // when given.
    Var forward(Tape& t, Var x, Var a, Mode mode, NormLayer* bn = nullptr);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Three GCN layers sharing one adjacency computed from the module input,
/// followed by max-pooling over joints. A module serving several joint
/// levels keeps one set of BN layers per level, since the statistics of a
/// 25-joint and a 1-joint input differ; layers[i].norm is the level-0 set.
struct SpatialModule {
    Parameter theta, phi;  // [C, E]
    std::array<GcnLayer, 3> layers;
    std::vector<std::array<NormLayer, 3>> level_norms;  // levels 1..L-1

    SpatialModule() = default;
    SpatialModule(std::size_t coords, const SpatialPlan& plan, Rng& rng, std::size_t levels = 1);

    std::size_t out_width() const { return layers.back().weight.value.dim(1); }
    std::size_t levels() const { return level_norms.size() + 1; }

    // x: [N, C] -> [width], or [F, N, C] -> [F, width]. A single-level
    // module uses its one BN set for every level.
    Var forward(Tape& t, Var x, Mode mode, std::size_t level = 0);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Additive frame-index embedding followed by two same-padded temporal
/// convolutions, each with BN and relu.
struct TemporalModule {
    Parameter frame_embed;  // [frames, C]
    Parameter w1, b1, w2, b2;
    NormLayer norm1, norm2;

    TemporalModule() = default;
    TemporalModule(std::size_t frames, std::size_t in, std::size_t hidden, std::size_t out, std::size_t kernel,
                   Rng& rng);

    std::size_t kernel() const { return w1.value.dim(0); }

    // f: [T, C] or [B, T, C].
    Var forward(Tape& t, Var f, Mode mode);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

/// Max over time, then a linear layer to class logits.
struct ClassifierHead {
    Parameter weight, bias;

    ClassifierHead() = default;
    ClassifierHead(std::size_t in, std::size_t classes, Rng& rng);

    // [T, C] -> [classes] or [B, T, C] -> [B, classes].
    Var logits(Tape& t, Var features);
    void visit(const std::string& prefix, const ParamVisitor& fn);
};

// He-style gaussian init with standard deviation sqrt(gain / fan_in).
Tensor init_weight(Shape shape, std::size_t fan_in, Rng& rng, double gain = 2.0);

}  // namespace adasgn
