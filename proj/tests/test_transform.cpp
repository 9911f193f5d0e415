#include <vector>

#include "adasgn/errors.hpp"
#include "adasgn/gradcheck.hpp"
#include "adasgn/ops.hpp"
#include "adasgn/transform.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace adasgn;
using adasgn::testing::max_abs_diff;
using adasgn::testing::random_tensor;

TEST_CASE("init_from_groups") {
    SUBCASE("singleton groups give the identity") {
        CHECK(init_from_groups(identity_grouping(25)).identical(Tensor::identity(25)));
    }
    SUBCASE("one group gives the centroid row") {
        Tensor m = init_from_groups(centroid_grouping(25));
        CHECK(m.shape() == Shape{1, 25});
        for (std::size_t j = 0; j < 25; ++j) CHECK(m.at(0, j) == doctest::Approx(1.0 / 25).epsilon(1e-15));
    }
    SUBCASE("body parts reproduce per-group means") {
        const JointGrouping g = body_parts_grouping25();
        REQUIRE(g.target_count() == 9);
        Tensor m = init_from_groups(g);
        for (std::size_t r = 0; r < 9; ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < 25; ++j) s += m.at(r, j);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
        }
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Tensor x = random_tensor({25, 3}, seed, -2, 2);
            Tape t;
            Tensor y = apply_transform(t.constant(m), t.constant(x)).value();
            for (std::size_t r = 0; r < 9; ++r)
                for (std::size_t c = 0; c < 3; ++c) {
                    double mean = 0.0;
                    for (std::size_t j : g.groups[r]) mean += x.at(j, c);
                    mean /= static_cast<double>(g.groups[r].size());
                    CHECK(y.at(r, c) == doctest::Approx(mean).epsilon(1e-13));
                }
        }
    }
    SUBCASE("partition errors") {
        CHECK_THROWS_AS(init_from_groups(JointGrouping{4, {{0, 1}, {1, 2, 3}}}), PartitionError);
        CHECK_THROWS_AS(init_from_groups(JointGrouping{4, {{0, 1}, {2}}}), PartitionError);
        CHECK_THROWS_AS(init_from_groups(JointGrouping{4, {{0, 1, 2, 3}, {}}}), PartitionError);
        CHECK_THROWS_AS(init_from_groups(JointGrouping{4, {{0, 1, 2, 7}}}), PartitionError);
    }
}

TEST_CASE("apply_transform") {
    Tape t;
    SUBCASE("identity leaves the skeleton unchanged") {
        Tensor x = random_tensor({25, 3}, 3);
        CHECK(apply_transform(t.constant(Tensor::identity(25)), t.constant(x)).value().identical(x));
    }
    SUBCASE("centroid of coincident joints") {
        Tensor x({25, 3});
        for (std::size_t j = 0; j < 25; ++j) {
            x.at(j, 0) = 0.3;
            x.at(j, 1) = -1.2;
            x.at(j, 2) = 2.5;
        }
        Tensor y = apply_transform(t.constant(init_from_groups(centroid_grouping(25))), t.constant(x)).value();
        CHECK(y.shape() == Shape{1, 3});
        CHECK(y[0] == doctest::Approx(0.3).epsilon(1e-14));
        CHECK(y[1] == doctest::Approx(-1.2).epsilon(1e-14));
        CHECK(y[2] == doctest::Approx(2.5).epsilon(1e-14));
    }
    SUBCASE("random matrix matches a triple loop") {
        Tensor m = random_tensor({9, 25}, 4), x = random_tensor({25, 3}, 5);
        Tensor y = apply_transform(t.constant(m), t.constant(x)).value();
        for (std::size_t i = 0; i < 9; ++i)
            for (std::size_t c = 0; c < 3; ++c) {
                double s = 0.0;
                for (std::size_t j = 0; j < 25; ++j) s += m.at(i, j) * x.at(j, c);
                CHECK(y.at(i, c) == doctest::Approx(s).epsilon(1e-12));
            }
    }
    SUBCASE("batched frames") {
        Tensor m = random_tensor({9, 25}, 6), x = random_tensor({4, 25, 3}, 7);
        Tensor y = apply_transform(t.constant(m), t.constant(x)).value();
        CHECK(y.shape() == Shape{4, 9, 3});
        Tensor f2({25, 3}, std::vector<double>(x.data() + 2 * 75, x.data() + 3 * 75));
        Tensor y2 = apply_transform(t.constant(m), t.constant(f2)).value();
        for (std::size_t i = 0; i < 27; ++i) CHECK(y[2 * 27 + i] == doctest::Approx(y2[i]).epsilon(1e-14));
    }
    SUBCASE("shape mismatch") {
        CHECK_THROWS_AS(apply_transform(t.constant(Tensor({9, 25})), t.constant(Tensor({24, 3}))), DimensionError);
    }
}

TEST_CASE("transform gradient") {
    for (std::uint64_t seed = 10; seed < 15; ++seed) {
        Parameter m(random_tensor({9, 25}, seed));
        Tensor x = random_tensor({25, 3}, seed + 100);
        Tensor w = random_tensor({9, 3}, seed + 200);
        std::vector<Parameter*> params{&m};
        auto report = finite_diff_check_params(
            [&](Tape& t) { return sum(mul(relu(apply_transform(t.parameter(m), t.constant(x))), t.constant(w))); },
            params);
        CHECK(report.passed);
        CHECK(report.max_rel_error < 1e-5);
    }
}

TEST_CASE("freeze gate") {
    JointTransformSet set = JointTransformSet::from_groupings(default_joint_ladder(), 3);
    CHECK_FALSE(freeze_gate(0, set));
    CHECK_FALSE(freeze_gate(2, set));
    CHECK(freeze_gate(3, set));
    CHECK(freeze_gate(50, set));
    set.freeze_epochs = 0;
    CHECK(freeze_gate(0, set));

    set.freeze_epochs = 3;
    apply_freeze_gate(1, set);
    for (const auto& p : set.matrices) CHECK_FALSE(p.trainable);
    apply_freeze_gate(3, set);
    CHECK_FALSE(set.matrices[0].trainable);
    CHECK(set.matrices[1].trainable);
    CHECK(set.matrices[2].trainable);
    CHECK(set.learnable == std::vector<bool>{false, true, true});

    // A frozen matrix receives no gradient.
    apply_freeze_gate(0, set);
    Tape t;
    Var y = apply_transform(t.parameter(set.matrices[1]), t.constant(random_tensor({25, 3}, 1)));
    CHECK_FALSE(y.requires_grad());
}

TEST_CASE("transform set") {
    JointTransformSet set = JointTransformSet::from_groupings(default_joint_ladder());
    CHECK(set.levels() == 3);
    CHECK(set.joint_counts() == std::vector<std::size_t>{25, 9, 1});
    CHECK(set.matrices[0].value.identical(Tensor::identity(25)));
    for (const auto& p : set.matrices)
        for (std::size_t r = 0; r < p.value.dim(0); ++r) {
            double s = 0.0;
            for (std::size_t j = 0; j < 25; ++j) s += p.value.at(r, j);
            CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
        }
    CHECK_THROWS_AS(JointTransformSet::from_groupings({centroid_grouping(25), identity_grouping(25)}), ConfigError);
}

TEST_CASE("grouping files") {
    const JointGrouping asset = read_grouping_file(ADASGN_ASSET_DIR "/ntu25_groups9.txt", 25);
    CHECK(asset.groups == body_parts_grouping25().groups);
    CHECK(parse_grouping(format_grouping(asset), 25).groups == asset.groups);

    try {
        parse_grouping("0,1\n2,x\n", 3);
        FAIL("expected a parse error");
    } catch (const ParseError& e) {
        CHECK(e.line() == 2);
    }
    CHECK_THROWS_AS(parse_grouping("0,1\n1,2\n", 3), PartitionError);
    CHECK(ladder_hash(default_joint_ladder()) == ladder_hash(default_joint_ladder()));
    CHECK(ladder_hash(default_joint_ladder()) != ladder_hash({identity_grouping(25), centroid_grouping(25)}));
}
