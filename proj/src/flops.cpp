#include "adasgn/flops.hpp"

#include <charconv>

#include "adasgn/errors.hpp"

namespace adasgn {

double to_gflops(double multiply_adds) { return 2.0 * multiply_adds / 1e9; }

std::uint64_t transform_cost(std::size_t joints, std::size_t source_joints, std::size_t coords) {
    if (joints == source_joints) return 0;
    return std::uint64_t{joints} * source_joints * coords;
}

std::uint64_t spatial_cost(const SpatialPlan& plan, std::size_t coords, std::size_t joints) {
    const std::uint64_t n = joints, e = plan.embed;
    std::uint64_t cost = 2 * n * coords * e + n * n * e;
    std::uint64_t in = coords;
    for (std::size_t w : plan.widths) {
        cost += n * n * in + n * in * w;
        in = w;
    }
    return cost;
}

FlopsTable build_flops_table(const ArchConfig& arch, const std::vector<std::size_t>& joint_counts) {
    arch.validate();
    if (joint_counts.empty()) throw ConfigError("joint ladder is empty");
    FlopsTable t;
    t.space = ActionSpace{arch.model_sizes(), joint_counts.size()};
    t.joint_counts = joint_counts;
    for (std::size_t k = 0; k < arch.model_sizes(); ++k)
        for (std::size_t n : joint_counts)
            t.entries.push_back(transform_cost(n, joint_counts.front(), arch.coords) +
                                spatial_cost(arch.spatial[k], arch.coords, n));
    const std::uint64_t w = arch.feature_width(), kl = t.space.size();
    t.overhead.policy_extract_per_frame = t.entries.back();
    t.overhead.policy_net_per_frame = arch.policy_kernel * (w * arch.policy_hidden + arch.policy_hidden * kl);
    t.overhead.temporal_per_frame =
        arch.temporal_kernel * (w * arch.temporal_hidden + arch.temporal_hidden * arch.temporal_out);
    t.overhead.classifier_per_sequence = std::uint64_t{arch.temporal_out} * arch.classes;
    return t;
}

std::uint64_t sequence_cost(std::span<const std::size_t> actions, std::size_t frames, const FlopsTable& table,
                            bool reuse_shortcut) {
    if (actions.size() != frames)
        throw ContractError("sequence_cost: " + std::to_string(actions.size()) + " decisions for " +
                            std::to_string(frames) + " frames");
    std::uint64_t total = 0;
    for (std::size_t a : actions) {
        total += table.policy_per_frame() + table.overhead.temporal_per_frame;
        if (a >= table.space.size()) throw IndexError("action " + std::to_string(a) + " out of range");
        if (!(reuse_shortcut && a == table.space.reuse_action())) total += table.entry(a);
    }
    return total + table.overhead.classifier_per_sequence;
}

std::uint64_t single_sequence_cost(std::size_t action, std::size_t frames, const FlopsTable& table) {
    return frames * (table.entry(action) + table.overhead.temporal_per_frame) +
           table.overhead.classifier_per_sequence;
}

std::string format_real(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    (void)ec;
    return std::string(buf, p);
}

std::string flops_table_csv(const FlopsTable& table) {
    std::string out = "model,joints,muladds_per_frame,gflops_per_frame\n";
    for (std::size_t k = 0; k < table.space.models; ++k)
        for (std::size_t l = 0; l < table.space.joint_levels; ++l) {
            const auto e = table.entry(k, l);
            out += std::to_string(k) + "," + std::to_string(table.joint_counts[l]) + "," + std::to_string(e) + "," +
                   format_real(to_gflops(static_cast<double>(e))) + "\n";
        }
    return out;
}

}  // namespace adasgn
