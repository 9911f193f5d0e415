#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "adasgn/data.hpp"
#include "adasgn/flops.hpp"
#include "adasgn/graphnet.hpp"
#include "adasgn/policy.hpp"
#include "adasgn/transform.hpp"

namespace adasgn {

// Frames of B equal-length sequences stacked into [B*T, N, C].
Tensor stack_frames(std::span<const SkeletonSample* const> batch);
Tensor stack_frames(const Dataset& data, std::span<const std::size_t> indices);

/// One fixed (model size, joint level) pipeline: M_l, SM_k, TM and head.
struct SingleModel {
    ArchConfig arch;
    std::size_t model_size = 0;
    std::size_t joint_level = 0;
    JointTransformSet transforms;
    SpatialModule spatial;
    TemporalModule temporal;
    ClassifierHead head;

    SingleModel(const ArchConfig& arch, std::vector<JointGrouping> ladder, std::size_t model_size,
                std::size_t joint_level, std::uint64_t seed, std::size_t freeze_epochs = 3);

    ActionSpace space() const { return ActionSpace{arch.model_sizes(), transforms.levels()}; }
    std::size_t action() const { return space().compose(model_size, joint_level); }

    // frames [B*T, N0, C] -> logits [B, classes]
    Var logits(Tape& t, Var frames, std::size_t sequences, Mode mode);
    void visit(const ParamVisitor& fn);
};

// Softmax class scores of one sequence.
Tensor forward_single(SingleModel& model, const SkeletonSample& seq, Mode mode);

/// The adaptive model: all transforms, K spatial modules, policy net, one TM
/// and one head.
struct AdaModel {
    ArchConfig arch;
    ActionSpace space;
    JointTransformSet transforms;
    std::vector<SpatialModule> spatial;
    PolicyNet policy;
    TemporalModule temporal;
    ClassifierHead head;
    FlopsTable table;

    AdaModel(const ArchConfig& arch, std::vector<JointGrouping> ladder, std::uint64_t seed,
             std::size_t freeze_epochs = 3);

    void visit(const ParamVisitor& fn);
};

enum class PolicyMode {
    Sample,   // Gumbel straight-through sampling with a gate on the features
    Argmax,   // deterministic most-probable action
    Forced,   // every frame takes forced_action
    Uniform,  // uniformly random actions
};

struct AdaptiveOptions {
    Mode mode = Mode::Eval;
    PolicyMode policy = PolicyMode::Argmax;
    double tau = 1.0;
    Rng* rng = nullptr;
    std::size_t forced_action = 0;
    bool reuse_shortcut = true;
    // Runs every branch on every frame and mixes them with the relaxed
    // weights instead of executing only the chosen branch.
    bool mix_branches = false;
};

struct AdaptiveResult {
    Var logits;            // [B, classes]
    Var policy_features;   // [B*T, W]
    Var policy_logits;     // [B*T, KL]
    Var features;          // classification features [B*T, W]
    Var gate;              // straight-through one-hot [B*T, KL], Sample mode only
    Var soft;              // relaxed surrogate, Sample mode only
    std::vector<std::size_t> actions;
    std::uint64_t measured_multiply_adds = 0;
};

AdaptiveResult forward_adaptive(Tape& t, AdaModel& model, Var frames, std::size_t sequences,
                                const AdaptiveOptions& options);

// SM_k(M_l x) -> TM -> head with no policy involvement.
Var fixed_branch_logits(Tape& t, AdaModel& model, Var frames, std::size_t sequences, std::size_t action, Mode mode);

// Row-wise softmax of logits [B, classes] (or [classes]).
Tensor class_scores(const Tensor& logits);

// Arithmetic mean of equally sized score vectors.
Tensor fuse_scores(std::span<const Tensor> scores);

std::size_t argmax(std::span<const double> v);

/// Versioned text checkpoint. Values are hexadecimal floats so a round trip
/// is bit exact.
struct CheckpointHeader {
    std::string kind;  // "single" or "adaptive"
    ArchConfig arch;
    std::vector<std::size_t> ladder;
    std::size_t models = 0;
    std::size_t joint_levels = 0;
    std::uint64_t grouping_hash = 0;
    std::size_t model_size = 0;   // single only
    std::size_t joint_level = 0;  // single only
};

struct Checkpoint {
    CheckpointHeader header;
    std::vector<std::pair<std::string, Tensor>> params;

    const Tensor* find(const std::string& path) const;
};

std::string format_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view text);
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

Checkpoint capture(SingleModel& model);
Checkpoint capture(AdaModel& model);
// Throw CompatibilityError naming the first mismatching header field.
void restore(SingleModel& model, const Checkpoint& ckpt);
void restore(AdaModel& model, const Checkpoint& ckpt);

std::string single_checkpoint_name(std::size_t model_size, std::size_t joint_level);

// Copies SM_k from single model (k, 0) and M_l from single model (0, l).
// Policy, TM and head keep their fresh initialisation. Every checkpoint is
// read and checked before anything is written, so a failure leaves the
// model untouched.
void load_pretrained(AdaModel& model, const std::map<std::pair<std::size_t, std::size_t>, Checkpoint>& singles);
void load_pretrained(AdaModel& model, const std::filesystem::path& dir);

}  // namespace adasgn
