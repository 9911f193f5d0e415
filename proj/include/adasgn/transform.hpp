#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "adasgn/tape.hpp"

namespace adasgn {

/// Partition of N_0 source joints into N_i target joints. Group order is
/// target-joint order.
struct JointGrouping {
    std::size_t source_count = 0;
    std::vector<std::vector<std::size_t>> groups;

    std::size_t target_count() const { return groups.size(); }
};

// Throws PartitionError unless the groups are non-empty, disjoint and cover
// 0..source_count-1.
void validate_grouping(const JointGrouping& grouping);

JointGrouping identity_grouping(std::size_t joints);
JointGrouping centroid_grouping(std::size_t joints);
// Nine body-part groups over the 25-joint layout: head+neck, torso, left arm,
// right arm, left hand, right hand, left leg, right leg, hips.
JointGrouping body_parts_grouping25();
// {25, 9, 1}
std::vector<JointGrouping> default_joint_ladder();

// Text form: one line per group, comma-separated zero-based joint indices.
JointGrouping parse_grouping(std::string_view text, std::size_t source_count);
JointGrouping read_grouping_file(const std::filesystem::path& path, std::size_t source_count);
std::string format_grouping(const JointGrouping& grouping);

// FNV-1a over the formatted ladder; recorded in checkpoint headers.
std::uint64_t ladder_hash(const std::vector<JointGrouping>& ladder);

// Row r holds 1/|group r| at the group's columns.
Tensor init_from_groups(const JointGrouping& grouping);

// m: [N_i, N_0]; x: [N_0, C] or [F, N_0, C].
Var apply_transform(Var m, Var x);

/// The learnable matrices M_0..M_{L-1}, ordered by descending joint count.
struct JointTransformSet {
    std::vector<JointGrouping> groupings;
    std::vector<Parameter> matrices;
    std::vector<bool> learnable;
    std::size_t freeze_epochs = 3;

    static JointTransformSet from_groupings(std::vector<JointGrouping> ladder, std::size_t freeze_epochs = 3);

    std::size_t levels() const { return matrices.size(); }
    std::size_t joints(std::size_t level) const { return groupings[level].target_count(); }
    std::size_t source_joints() const { return groupings.front().source_count; }
    std::vector<std::size_t> joint_counts() const;

    // M_level applied to frames; the full-resolution level passes frames
    // through untouched and is never learnable.
    Var apply(Tape& t, std::size_t level, Var frames);
};

// Whether gradients flow to the matrices at `epoch`.
bool freeze_gate(std::size_t epoch, const JointTransformSet& set);
// Sets each matrix's trainable flag from freeze_gate and its learnable flag.
void apply_freeze_gate(std::size_t epoch, JointTransformSet& set);

}  // namespace adasgn
