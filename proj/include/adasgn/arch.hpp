#pragma once

#include <array>
#include <cstddef>
#include <string>
#include <vector>

namespace adasgn {

// Channel plan of one spatial module: attention embedding width and the
// output widths of its three GCN layers.
struct SpatialPlan {
    std::size_t embed = 0;
    std::array<std::size_t, 3> widths{};
};

struct ArchConfig {
    std::size_t coords = 3;
    std::size_t frames = 20;        // longest sequence the frame embedding covers
    std::vector<SpatialPlan> spatial;  // index 0 is the largest module
    std::size_t temporal_kernel = 3;
    std::size_t temporal_hidden = 512;
    std::size_t temporal_out = 512;
    std::size_t policy_kernel = 3;
    std::size_t policy_hidden = 64;
    std::size_t classes = 8;

    // Full widths: big 64->128->256, small 32->64->256, temporal 256->512.
    static ArchConfig standard();
    // Reduced widths that keep the same structure and cost ordering, sized for
    // single-core training runs.
    static ArchConfig desk();

    std::size_t model_sizes() const { return spatial.size(); }
    std::size_t feature_width() const { return spatial.front().widths.back(); }

    // Throws ConfigError for empty plans, even kernels, or spatial modules
    // that disagree on the terminal width.
    void validate() const;

    // Single-line key=value rendering; parse() inverts it exactly.
    std::string serialize() const;
    static ArchConfig parse(const std::string& text);

    bool operator==(const ArchConfig&) const = default;
};

bool operator==(const SpatialPlan& a, const SpatialPlan& b);

}  // namespace adasgn
