#include <sstream>
#include <vector>

#include "adasgn/errors.hpp"
#include "adasgn/flops.hpp"
#include "adasgn/model.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace adasgn;
using adasgn::testing::random_tensor;

namespace {

const std::vector<std::size_t> kJoints{25, 9, 1};

// Counts written out layer by layer: attention projections, attention
// scores, then neighbour aggregation and channel mixing per GCN layer.
std::uint64_t spatial_oracle(const SpatialPlan& plan, std::uint64_t coords, std::uint64_t n) {
    std::uint64_t total = 0;
    total += n * coords * plan.embed;  // theta projection
    total += n * coords * plan.embed;  // phi projection
    total += n * n * plan.embed;       // pairwise scores
    std::uint64_t in = coords;
    for (std::size_t out : plan.widths) {
        total += n * n * in;    // A X
        total += n * in * out;  // (A X) W
        in = out;
    }
    return total;
}

std::uint64_t measure_branch(AdaModel& m, std::size_t action, std::size_t frames, std::uint64_t seed) {
    Tape t;
    t.set_grad_enabled(false);
    Var x = t.constant(random_tensor({frames, 25, 3}, seed));
    auto [k, l] = m.space.split(action);
    OpCounter counter;
    CountingScope scope(counter);
    m.spatial[k].forward(t, m.transforms.apply(t, l, x), Mode::Eval, l);
    return counter.multiply_adds;
}

std::uint64_t measure_adaptive(AdaModel& m, const Tensor& frames, std::size_t sequences, AdaptiveOptions o,
                               std::vector<std::size_t>* actions = nullptr) {
    Tape t;
    t.set_grad_enabled(false);
    AdaptiveResult r = forward_adaptive(t, m, t.constant(frames), sequences, o);
    if (actions) *actions = r.actions;
    return r.measured_multiply_adds;
}

AdaModel& desk_model() {
    static AdaModel m(ArchConfig::desk(), default_joint_ladder(), 11);
    return m;
}

}  // namespace

TEST_CASE("flops table layout and values") {
    const FlopsTable table = build_flops_table(ArchConfig::desk(), kJoints);
    REQUIRE(table.space.models == 2);
    REQUIRE(table.space.joint_levels == 3);
    REQUIRE(table.entries.size() == 6);

    // hand-derived per-frame costs for the desk widths
    const std::vector<std::uint64_t> expected{96675, 25830, 2334, 46075, 12222, 1078};
    CHECK(table.entries == expected);

    const ArchConfig arch = ArchConfig::desk();
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t l = 0; l < 3; ++l) {
            const std::uint64_t transform = l == 0 ? 0 : kJoints[l] * 25 * 3;
            CHECK(table.entry(k, l) == transform + spatial_oracle(arch.spatial[k], 3, kJoints[l]));
        }
}

TEST_CASE("standard preset costs") {
    const FlopsTable table = build_flops_table(ArchConfig::standard(), kJoints);
    const std::vector<std::uint64_t> expected{1200275, 395478, 41870, 549875, 179766, 18926};
    CHECK(table.entries == expected);
}

TEST_CASE("cost ordering") {
    for (const ArchConfig& arch : {ArchConfig::desk(), ArchConfig::standard()}) {
        const FlopsTable table = build_flops_table(arch, kJoints);
        for (std::size_t k = 0; k < 2; ++k)
            for (std::size_t l = 0; l + 1 < 3; ++l) CHECK(table.entry(k, l) > table.entry(k, l + 1));
        for (std::size_t l = 0; l < 3; ++l) CHECK(table.entry(0, l) > table.entry(1, l));
        CHECK(table.entry(0, 0) > table.entry(1, 0));
        CHECK(table.entry(1, 0) > table.entry(0, 1));
        CHECK(table.overhead.policy_extract_per_frame == table.entry(1, 2));
    }
}

TEST_CASE("overhead formulas") {
    const ArchConfig arch = ArchConfig::desk();
    const FlopsTable table = build_flops_table(arch, kJoints);
    const std::uint64_t w = arch.feature_width();
    CHECK(table.overhead.policy_net_per_frame ==
          arch.policy_kernel * (w * arch.policy_hidden + arch.policy_hidden * 6));
    CHECK(table.overhead.temporal_per_frame ==
          arch.temporal_kernel * (w * arch.temporal_hidden + arch.temporal_hidden * arch.temporal_out));
    CHECK(table.overhead.classifier_per_sequence == arch.temporal_out * arch.classes);
    CHECK(table.policy_per_frame() == table.entry(1, 2) + table.overhead.policy_net_per_frame);
}

TEST_CASE("transform cost") {
    CHECK(transform_cost(25, 25, 3) == 0);
    CHECK(transform_cost(9, 25, 3) == 675);
    CHECK(transform_cost(1, 25, 2) == 50);
}

TEST_CASE("table entries equal instrumented counts") {
    AdaModel& m = desk_model();
    for (std::size_t a = 0; a < m.space.size(); ++a) {
        CAPTURE(a);
        CHECK(measure_branch(m, a, 1, 100 + a) == m.table.entry(a));
        CHECK(measure_branch(m, a, 7, 200 + a) == 7 * m.table.entry(a));
    }
}

TEST_CASE("single pipeline cost equals counted fixed branch") {
    AdaModel& m = desk_model();
    for (std::size_t a = 0; a < m.space.size(); ++a) {
        Tape t;
        t.set_grad_enabled(false);
        Var x = t.constant(random_tensor({2 * 20, 25, 3}, 300 + a));
        OpCounter counter;
        {
            CountingScope scope(counter);
            fixed_branch_logits(t, m, x, 2, a, Mode::Eval);
        }
        CHECK(counter.multiply_adds == 2 * single_sequence_cost(a, 20, m.table));
    }
}

TEST_CASE("sequence cost equals measured cost for random decisions") {
    AdaModel& m = desk_model();
    Rng rng(2024);
    std::size_t reuse_frames = 0;
    for (int trial = 0; trial < 100; ++trial) {
        CAPTURE(trial);
        const Tensor frames = random_tensor({20, 25, 3}, 1000 + trial);
        AdaptiveOptions o;
        o.policy = PolicyMode::Uniform;
        o.rng = &rng;
        std::vector<std::size_t> actions;
        const std::uint64_t measured = measure_adaptive(m, frames, 1, o, &actions);
        CHECK(measured == sequence_cost(actions, 20, m.table));
        for (std::size_t a : actions) reuse_frames += a == m.space.reuse_action();
    }
    CHECK(reuse_frames > 0);
}

TEST_CASE("batched sequences add up") {
    AdaModel& m = desk_model();
    Rng rng(5);
    AdaptiveOptions o;
    o.policy = PolicyMode::Uniform;
    o.rng = &rng;
    std::vector<std::size_t> actions;
    const std::uint64_t measured = measure_adaptive(m, random_tensor({3 * 20, 25, 3}, 9), 3, o, &actions);
    std::uint64_t expected = 0;
    for (std::size_t b = 0; b < 3; ++b)
        expected += sequence_cost(std::span(actions.data() + b * 20, 20), 20, m.table);
    CHECK(measured == expected);
}

TEST_CASE("reuse frames cost nothing beyond the policy") {
    AdaModel& m = desk_model();
    const std::size_t reuse = m.space.reuse_action();
    const Tensor frames = random_tensor({20, 25, 3}, 77);
    const std::uint64_t base = 20 * (m.table.policy_per_frame() + m.table.overhead.temporal_per_frame) +
                               m.table.overhead.classifier_per_sequence;

    AdaptiveOptions o;
    o.policy = PolicyMode::Forced;
    o.forced_action = reuse;
    CHECK(measure_adaptive(m, frames, 1, o) - base == 0);

    o.reuse_shortcut = false;
    CHECK(measure_adaptive(m, frames, 1, o) - base == 20 * m.table.entry(reuse));
    CHECK(sequence_cost(std::vector<std::size_t>(20, reuse), 20, m.table, false) - base == 20 * m.table.entry(reuse));
}

TEST_CASE("switching a frame to reuse never increases cost") {
    const FlopsTable table = build_flops_table(ArchConfig::desk(), kJoints);
    Rng rng(31);
    for (int trial = 0; trial < 200; ++trial) {
        std::vector<std::size_t> actions;
        for (int i = 0; i < 20; ++i) actions.push_back(rng.below(6));
        const std::size_t f = rng.below(20);
        const std::size_t old = actions[f];
        const std::uint64_t before = sequence_cost(actions, 20, table);
        actions[f] = table.space.reuse_action();
        const std::uint64_t after = sequence_cost(actions, 20, table);
        CHECK(after <= before);
        CHECK(before - after == (old == table.space.reuse_action() ? 0 : table.entry(old)));
    }
}

TEST_CASE("forced branches through the adaptive path") {
    AdaModel& m = desk_model();
    const Tensor frames = random_tensor({20, 25, 3}, 78);
    for (std::size_t a = 0; a < m.space.size(); ++a) {
        AdaptiveOptions o;
        o.policy = PolicyMode::Forced;
        o.forced_action = a;
        CHECK(measure_adaptive(m, frames, 1, o) == sequence_cost(std::vector<std::size_t>(20, a), 20, m.table));
    }
}

TEST_CASE("sequence cost contract") {
    const FlopsTable table = build_flops_table(ArchConfig::desk(), kJoints);
    CHECK_THROWS_AS(sequence_cost(std::vector<std::size_t>(19, 0), 20, table), ContractError);
    CHECK_THROWS_AS(sequence_cost(std::vector<std::size_t>(20, 6), 20, table), IndexError);
    CHECK(single_sequence_cost(0, 20, table) ==
          20 * (table.entry(0) + table.overhead.temporal_per_frame) + table.overhead.classifier_per_sequence);
}

TEST_CASE("gflops conversion") {
    CHECK(to_gflops(5e8) == 1.0);
    CHECK(to_gflops(0) == 0.0);
    CHECK(to_gflops(96675) == doctest::Approx(1.9335e-4).epsilon(1e-12));
}

TEST_CASE("flops table csv") {
    const FlopsTable table = build_flops_table(ArchConfig::desk(), kJoints);
    std::istringstream in(flops_table_csv(table));
    std::string line;
    std::vector<std::string> lines;
    while (std::getline(in, line)) lines.push_back(line);
    REQUIRE(lines.size() == 7);
    CHECK(lines[0] == "model,joints,muladds_per_frame,gflops_per_frame");
    CHECK(lines[1] == "0,25,96675,0.00019335");
    CHECK(lines[3].rfind("0,1,2334,", 0) == 0);
    CHECK(lines[4].rfind("1,25,46075,", 0) == 0);
    CHECK(lines[6].rfind("1,1,1078,", 0) == 0);
}
