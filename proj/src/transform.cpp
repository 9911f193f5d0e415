#include "adasgn/transform.hpp"

#include <charconv>
#include <fstream>
#include <sstream>

#include "adasgn/errors.hpp"
#include "adasgn/ops.hpp"

namespace adasgn {

void validate_grouping(const JointGrouping& grouping) {
    std::vector<int> seen(grouping.source_count, 0);
    if (grouping.groups.empty()) throw PartitionError("grouping has no groups");
    for (std::size_t g = 0; g < grouping.groups.size(); ++g) {
        if (grouping.groups[g].empty()) throw PartitionError("group " + std::to_string(g) + " is empty");
        for (std::size_t j : grouping.groups[g]) {
            if (j >= grouping.source_count)
                throw PartitionError("joint " + std::to_string(j) + " out of range for " +
                                     std::to_string(grouping.source_count) + " source joints");
            if (seen[j]++) throw PartitionError("joint " + std::to_string(j) + " appears in more than one group");
        }
    }
    for (std::size_t j = 0; j < seen.size(); ++j)
        if (!seen[j]) throw PartitionError("joint " + std::to_string(j) + " is not covered by any group");
}

JointGrouping identity_grouping(std::size_t joints) {
    JointGrouping g{joints, {}};
    for (std::size_t j = 0; j < joints; ++j) g.groups.push_back({j});
    return g;
}

JointGrouping centroid_grouping(std::size_t joints) {
    JointGrouping g{joints, {{}}};
    for (std::size_t j = 0; j < joints; ++j) g.groups[0].push_back(j);
    return g;
}

JointGrouping body_parts_grouping25() {
    return JointGrouping{25,
                         {
                             {2, 3},            // neck, head
                             {1, 20},           // mid spine, upper spine
                             {4, 5},            // left shoulder, elbow
                             {8, 9},            // right shoulder, elbow
                             {6, 7, 21, 22},    // left wrist, hand, hand tip, thumb
                             {10, 11, 23, 24},  // right wrist, hand, hand tip, thumb
                             {13, 14, 15},      // left knee, ankle, foot
                             {17, 18, 19},      // right knee, ankle, foot
                             {0, 12, 16},       // spine base, hips
                         }};
}

std::vector<JointGrouping> default_joint_ladder() {
    return {identity_grouping(25), body_parts_grouping25(), centroid_grouping(25)};
}

JointGrouping parse_grouping(std::string_view text, std::size_t source_count) {
    JointGrouping g{source_count, {}};
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        std::vector<std::size_t> group;
        std::istringstream fields(line);
        std::string field;
        while (std::getline(fields, field, ',')) {
            const auto b = field.find_first_not_of(" \t\r");
            const auto e = field.find_last_not_of(" \t\r");
            if (b == std::string::npos) throw ParseError("empty joint index", line_no);
            std::size_t v = 0;
            auto [ptr, ec] = std::from_chars(field.data() + b, field.data() + e + 1, v);
            if (ec != std::errc() || ptr != field.data() + e + 1)
                throw ParseError("bad joint index '" + field + "'", line_no);
            group.push_back(v);
        }
        g.groups.push_back(std::move(group));
    }
    validate_grouping(g);
    return g;
}

JointGrouping read_grouping_file(const std::filesystem::path& path, std::size_t source_count) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open grouping file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_grouping(buf.str(), source_count);
}

std::string format_grouping(const JointGrouping& grouping) {
    std::string out;
    for (const auto& group : grouping.groups) {
        for (std::size_t i = 0; i < group.size(); ++i) {
            if (i) out += ",";
            out += std::to_string(group[i]);
        }
        out += "\n";
    }
    return out;
}

std::uint64_t ladder_hash(const std::vector<JointGrouping>& ladder) {
    std::uint64_t h = 1469598103934665603ull;
    for (const auto& g : ladder) {
        const std::string text = std::to_string(g.source_count) + ":" + format_grouping(g) + ";";
        for (unsigned char c : text) {
            h ^= c;
            h *= 1099511628211ull;
        }
    }
    return h;
}

Tensor init_from_groups(const JointGrouping& grouping) {
    validate_grouping(grouping);
    Tensor m({grouping.target_count(), grouping.source_count});
    for (std::size_t r = 0; r < grouping.groups.size(); ++r) {
        const double w = 1.0 / static_cast<double>(grouping.groups[r].size());
        for (std::size_t j : grouping.groups[r]) m.at(r, j) = w;
    }
    return m;
}

Var apply_transform(Var m, Var x) {
    const Shape& sm = m.shape();
    const Shape& sx = x.shape();
    if (sm.size() != 2 || sx.size() < 2 || sx.size() > 3 || sm[1] != sx[sx.size() - 2])
        throw DimensionError("apply_transform: matrix " + shape_string(sm) + " does not match skeleton " +
                             shape_string(sx));
    return matmul(m, x);
}

JointTransformSet JointTransformSet::from_groupings(std::vector<JointGrouping> ladder, std::size_t freeze_epochs) {
    if (ladder.empty()) throw ConfigError("joint ladder is empty");
    JointTransformSet set;
    for (std::size_t i = 0; i < ladder.size(); ++i) {
        if (ladder[i].source_count != ladder[0].source_count)
            throw ConfigError("joint ladder mixes source joint counts");
        if (i > 0 && ladder[i].target_count() >= ladder[i - 1].target_count())
            throw ConfigError("joint ladder must be strictly descending");
        set.matrices.emplace_back(init_from_groups(ladder[i]));
    }
    set.groupings = std::move(ladder);
    for (const auto& g : set.groupings) set.learnable.push_back(g.target_count() != g.source_count);
    set.freeze_epochs = freeze_epochs;
    return set;
}

std::vector<std::size_t> JointTransformSet::joint_counts() const {
    std::vector<std::size_t> out;
    for (const auto& g : groupings) out.push_back(g.target_count());
    return out;
}

bool freeze_gate(std::size_t epoch, const JointTransformSet& set) { return epoch >= set.freeze_epochs; }

Var JointTransformSet::apply(Tape& t, std::size_t level, Var frames) {
    if (joints(level) == source_joints()) return frames;
    return apply_transform(t.parameter(matrices[level]), frames);
}

void apply_freeze_gate(std::size_t epoch, JointTransformSet& set) {
    const bool open = freeze_gate(epoch, set);
    for (std::size_t i = 0; i < set.matrices.size(); ++i) set.matrices[i].trainable = open && set.learnable[i];
}

}  // namespace adasgn
