#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "adasgn/arch.hpp"
#include "adasgn/policy.hpp"

namespace adasgn {

struct FlopsOverhead {
    std::uint64_t policy_extract_per_frame = 0;
    std::uint64_t policy_net_per_frame = 0;
    std::uint64_t temporal_per_frame = 0;
    std::uint64_t classifier_per_sequence = 0;
};

/// Multiply-adds per frame for every (model size, joint level) action.
struct FlopsTable {
    ActionSpace space;
    std::vector<std::size_t> joint_counts;
    std::vector<std::uint64_t> entries;  // model-major
    FlopsOverhead overhead;

    std::uint64_t entry(std::size_t action) const { return entries.at(action); }
    std::uint64_t entry(std::size_t model, std::size_t level) const { return entries.at(space.compose(model, level)); }
    // Policy extraction plus policy net, paid by every adaptive frame.
    std::uint64_t policy_per_frame() const {
        return overhead.policy_extract_per_frame + overhead.policy_net_per_frame;
    }
};

double to_gflops(double multiply_adds);

// Cost of M (rows x source) applied to one frame; zero for the identity level.
std::uint64_t transform_cost(std::size_t joints, std::size_t source_joints, std::size_t coords);
std::uint64_t spatial_cost(const SpatialPlan& plan, std::size_t coords, std::size_t joints);

// `joint_counts` runs from N_0 down; level 0 is the untransformed skeleton.
FlopsTable build_flops_table(const ArchConfig& arch, const std::vector<std::size_t>& joint_counts);

// Adaptive sequence: per-frame policy cost, the chosen action's entry (zero
// for the reuse action when `reuse_shortcut`), TM and classifier.
std::uint64_t sequence_cost(std::span<const std::size_t> actions, std::size_t frames, const FlopsTable& table,
                            bool reuse_shortcut = true);
// A single model fixed to one action, no policy.
std::uint64_t single_sequence_cost(std::size_t action, std::size_t frames, const FlopsTable& table);

// Header model,joints,muladds_per_frame,gflops_per_frame; model-major rows.
std::string flops_table_csv(const FlopsTable& table);

// Shortest round-trip decimal.
std::string format_real(double v);

}  // namespace adasgn
