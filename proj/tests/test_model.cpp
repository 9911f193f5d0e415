#include <cmath>
#include <filesystem>
#include <fstream>

#include "adasgn/data.hpp"
#include "adasgn/errors.hpp"
#include "adasgn/model.hpp"
#include "doctest.h"
#include "test_util.hpp"

using namespace adasgn;
using adasgn::testing::max_abs_diff;
using adasgn::testing::random_tensor;

namespace {

const ArchConfig kArch = ArchConfig::desk();

Tensor eval_logits(AdaModel& m, const Tensor& frames, std::size_t seqs, AdaptiveOptions o) {
    Tape t;
    t.set_grad_enabled(false);
    return forward_adaptive(t, m, t.constant(frames), seqs, o).logits.value();
}

Tensor fixed_logits(AdaModel& m, const Tensor& frames, std::size_t seqs, std::size_t action) {
    Tape t;
    t.set_grad_enabled(false);
    return fixed_branch_logits(t, m, t.constant(frames), seqs, action, Mode::Eval).value();
}

AdaptiveOptions forced(std::size_t action) {
    AdaptiveOptions o;
    o.policy = PolicyMode::Forced;
    o.forced_action = action;
    return o;
}

// Moves the running statistics away from their defaults so eval mode is not
// a trivial identity normalisation.
void perturb(AdaModel& m, std::uint64_t seed) {
    Rng rng(seed);
    m.visit([&](const std::string& path, Parameter& p) {
        for (double& v : p.value.values()) {
            if (path.ends_with("running_var"))
                v = 0.5 + rng.uniform();
            else if (path.ends_with("running_mean") || path.ends_with("beta"))
                v = 0.1 * (rng.uniform() - 0.5);
        }
    });
}

Tensor sm_features(SpatialModule& sm, JointTransformSet& transforms, std::size_t level, const Tensor& frames) {
    Tape t;
    t.set_grad_enabled(false);
    return sm.forward(t, transforms.apply(t, level, t.constant(frames)), Mode::Eval, level).value();
}

std::map<std::pair<std::size_t, std::size_t>, Checkpoint> single_grid(std::uint64_t seed) {
    std::map<std::pair<std::size_t, std::size_t>, Checkpoint> out;
    for (std::size_t k = 0; k < 2; ++k)
        for (std::size_t l = 0; l < 3; ++l) {
            SingleModel s(kArch, default_joint_ladder(), k, l, seed + 10 * k + l);
            // distinct non-initial transforms so copies are observable
            for (double& v : s.transforms.matrices[l].value.values()) v *= 1.0 + 0.01 * static_cast<double>(k + 1);
            out.emplace(std::pair{k, l}, capture(s));
        }
    return out;
}

}  // namespace

TEST_CASE("stack frames") {
    SynthSpec spec;
    spec.frames = 6;
    Dataset d = synth_generate_count(spec, 3, 0);
    std::vector<std::size_t> idx{2, 0};
    Tensor s = stack_frames(d, idx);
    REQUIRE(s.shape() == Shape{12, 25, 3});
    CHECK(s.at(0, 0, 0) == d[2].frames.at(0, 0, 0));
    CHECK(s.at(6, 4, 2) == d[0].frames.at(0, 4, 2));
    CHECK(s.at(11, 24, 1) == d[0].frames.at(5, 24, 1));
}

TEST_CASE("forced policy reproduces fixed pipelines bit for bit") {
    AdaModel m(kArch, default_joint_ladder(), 3);
    perturb(m, 4);
    const Tensor frames = random_tensor({2 * 20, 25, 3}, 5);
    for (std::size_t a = 0; a < m.space.size(); ++a) {
        CAPTURE(a);
        CHECK(eval_logits(m, frames, 2, forced(a)).identical(fixed_logits(m, frames, 2, a)));
    }
    AdaptiveOptions no_shortcut = forced(m.space.reuse_action());
    no_shortcut.reuse_shortcut = false;
    CHECK(eval_logits(m, frames, 2, no_shortcut).identical(fixed_logits(m, frames, 2, m.space.reuse_action())));
}

TEST_CASE("reuse hands over the policy features themselves") {
    AdaModel m(kArch, default_joint_ladder(), 3);
    Tape t;
    t.set_grad_enabled(false);
    Var x = t.constant(random_tensor({20, 25, 3}, 6));
    AdaptiveResult r = forward_adaptive(t, m, x, 1, forced(m.space.reuse_action()));
    CHECK(r.features.id() == r.policy_features.id());

    AdaptiveResult big = forward_adaptive(t, m, x, 1, forced(0));
    CHECK(big.features.id() != big.policy_features.id());
}

TEST_CASE("mixed decisions keep frame order") {
    AdaModel m(kArch, default_joint_ladder(), 8);
    perturb(m, 9);
    const Tensor frames = random_tensor({20, 25, 3}, 10);
    Rng rng(1);
    AdaptiveOptions o;
    o.policy = PolicyMode::Uniform;
    o.rng = &rng;
    Tape t;
    t.set_grad_enabled(false);
    AdaptiveResult r = forward_adaptive(t, m, t.constant(frames), 1, o);
    // each feature row equals its frame's branch run in isolation
    for (std::size_t f = 0; f < 20; ++f) {
        const auto [k, l] = m.space.split(r.actions[f]);
        Tensor alone = sm_features(m.spatial[k], m.transforms, l, frames);
        const std::size_t w = alone.shape()[1];
        for (std::size_t c = 0; c < w; ++c) CHECK(r.features.value().at(f, c) == alone.at(f, c));
    }
}

TEST_CASE("argmax mode follows policy logits") {
    AdaModel m(kArch, default_joint_ladder(), 12);
    Tape t;
    t.set_grad_enabled(false);
    AdaptiveResult r = forward_adaptive(t, m, t.constant(random_tensor({40, 25, 3}, 13)), 2, AdaptiveOptions{});
    const Tensor& pl = r.policy_logits.value();
    REQUIRE(pl.shape() == Shape{40, 6});
    for (std::size_t i = 0; i < 40; ++i) CHECK(r.actions[i] == argmax(std::span(pl.data() + 6 * i, 6)));
}

TEST_CASE("scores and determinism") {
    AdaModel m(kArch, default_joint_ladder(), 14);
    const Tensor frames = random_tensor({20, 25, 3}, 15);
    const Tensor a = eval_logits(m, frames, 1, AdaptiveOptions{});
    const Tensor b = eval_logits(m, frames, 1, AdaptiveOptions{});
    CHECK(a.identical(b));
    Tensor s = class_scores(a);
    double total = 0.0;
    for (double v : s.values()) {
        CHECK(v > 0.0);
        total += v;
    }
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    AdaModel again(kArch, default_joint_ladder(), 14);
    CHECK(eval_logits(again, frames, 1, AdaptiveOptions{}).identical(a));
}

TEST_CASE("sample mode trains the policy") {
    AdaModel m(kArch, default_joint_ladder(), 16);
    Rng rng(17);
    Tape t;
    AdaptiveOptions o;
    o.mode = Mode::Train;
    o.policy = PolicyMode::Sample;
    o.tau = 2.0;
    o.rng = &rng;
    AdaptiveResult r = forward_adaptive(t, m, t.constant(random_tensor({2 * 20, 25, 3}, 18)), 2, o);
    REQUIRE(r.gate.valid());
    std::vector<std::size_t> labels{1, 4};
    m.visit([](const std::string&, Parameter& p) { p.zero_grad(); });
    t.backward(cross_entropy_mean(r.logits, labels));
    double norm = 0.0;
    m.policy.visit("policy", [&](const std::string&, Parameter& p) {
        for (double g : p.grad.values()) norm += g * g;
    });
    CHECK(norm > 0.0);
    // gate values are exactly one in the forward pass
    for (std::size_t i = 0; i < 40; ++i) CHECK(r.gate.value().at(i, r.actions[i]) == 1.0);
}

TEST_CASE("mixed branch execution") {
    AdaModel m(kArch, default_joint_ladder(), 19);
    Rng rng(20);
    Tape t;
    AdaptiveOptions o;
    o.mode = Mode::Train;
    o.policy = PolicyMode::Sample;
    o.rng = &rng;
    o.mix_branches = true;
    AdaptiveResult r = forward_adaptive(t, m, t.constant(random_tensor({20, 25, 3}, 21)), 1, o);
    CHECK(r.logits.shape() == Shape{1, 8});
    CHECK(r.logits.value().all_finite());
    const FlopsTable& tab = m.table;
    std::uint64_t all = 0;
    for (std::size_t a = 0; a + 1 < 6; ++a) all += tab.entry(a);
    CHECK(r.measured_multiply_adds == 20 * (tab.policy_per_frame() + all + tab.overhead.temporal_per_frame) +
                                          tab.overhead.classifier_per_sequence);
}

TEST_CASE("single model") {
    SingleModel s(kArch, default_joint_ladder(), 1, 1, 22);
    CHECK(s.action() == 4);
    SynthSpec spec;
    Dataset d = synth_generate_count(spec, 2, 0);
    Tensor scores = forward_single(s, d[0], Mode::Eval);
    REQUIRE(scores.shape() == Shape{8});
    double total = 0.0;
    for (double v : scores.values()) total += v;
    CHECK(total == doctest::Approx(1.0).epsilon(1e-12));

    Tape t;
    t.set_grad_enabled(false);
    OpCounter counter;
    {
        CountingScope scope(counter);
        std::vector<std::size_t> idx{0, 1};
        s.logits(t, t.constant(stack_frames(d, idx)), 2, Mode::Eval);
    }
    CHECK(counter.multiply_adds == 2 * single_sequence_cost(4, 20, build_flops_table(kArch, {25, 9, 1})));
    CHECK_THROWS_AS(SingleModel(kArch, default_joint_ladder(), 2, 0, 1), ConfigError);
}

TEST_CASE("classifier sees repeated frames like the originals") {
    // max over time is unchanged when the temporal features are duplicated
    Rng rng(23);
    ClassifierHead head(48, 8, rng);
    Tape t;
    t.set_grad_enabled(false);
    const Tensor feats = random_tensor({5, 48}, 24);
    Tensor doubled({10, 48});
    for (std::size_t i = 0; i < 10; ++i)
        for (std::size_t c = 0; c < 48; ++c) doubled.at(i, c) = feats.at(i % 5, c);
    CHECK(head.logits(t, t.constant(feats)).value().identical(head.logits(t, t.constant(doubled)).value()));
}

TEST_CASE("fuse scores") {
    Tensor a({3}, std::vector<double>{0.2, 0.3, 0.5});
    Tensor b({3}, std::vector<double>{0.6, 0.2, 0.2});
    std::vector<Tensor> both{a, b};
    Tensor f = fuse_scores(both);
    CHECK(f[0] == doctest::Approx(0.4));
    CHECK(f[1] == doctest::Approx(0.25));
    CHECK(f[2] == doctest::Approx(0.35));
    std::vector<Tensor> one{a};
    CHECK(fuse_scores(one).identical(a));
    std::vector<Tensor> bad{a, Tensor({4})};
    CHECK_THROWS_AS(fuse_scores(bad), ContractError);
    CHECK_THROWS_AS(fuse_scores(std::span<const Tensor>{}), ContractError);
}

TEST_CASE("checkpoint round trip is exact") {
    AdaModel m(kArch, default_joint_ladder(), 25);
    perturb(m, 26);
    const Checkpoint c = capture(m);
    const std::string text = format_checkpoint(c);
    const Checkpoint back = parse_checkpoint(text);
    CHECK(format_checkpoint(back) == text);

    AdaModel other(kArch, default_joint_ladder(), 99);
    restore(other, back);
    const Tensor frames = random_tensor({20, 25, 3}, 27);
    CHECK(eval_logits(other, frames, 1, AdaptiveOptions{}).identical(eval_logits(m, frames, 1, AdaptiveOptions{})));

    const auto dir = std::filesystem::temp_directory_path() / "adasgn_test_ckpt";
    std::filesystem::create_directories(dir);
    save_checkpoint(c, dir / "a.ckpt");
    CHECK(format_checkpoint(load_checkpoint(dir / "a.ckpt")) == text);
    std::filesystem::remove_all(dir);

    // a value that does not survive decimal printing
    SingleModel s(kArch, default_joint_ladder(), 0, 0, 1);
    s.head.bias.value[0] = 0.1 + 0.2;
    Checkpoint sc = parse_checkpoint(format_checkpoint(capture(s)));
    CHECK(sc.find("head.bias")->values()[0] == 0.1 + 0.2);
}

TEST_CASE("checkpoint compatibility errors name the field") {
    SingleModel s(kArch, default_joint_ladder(), 0, 1, 1);
    Checkpoint c = capture(s);
    SingleModel wrong_level(kArch, default_joint_ladder(), 0, 2, 1);
    try {
        restore(wrong_level, c);
        FAIL("expected a compatibility error");
    } catch (const CompatibilityError& e) {
        CHECK(std::string(e.what()).find("'joint_level'") != std::string::npos);
    }
    ArchConfig wide = kArch;
    wide.temporal_hidden = 64;
    SingleModel wrong_arch(wide, default_joint_ladder(), 0, 1, 1);
    try {
        restore(wrong_arch, c);
        FAIL("expected a compatibility error");
    } catch (const CompatibilityError& e) {
        CHECK(std::string(e.what()).find("'arch'") != std::string::npos);
    }
    AdaModel ada(kArch, default_joint_ladder(), 1);
    CHECK_THROWS_AS(restore(ada, c), CompatibilityError);

    std::string text = format_checkpoint(c);
    CHECK_THROWS_AS(parse_checkpoint(text.substr(0, text.size() / 2)), ParseError);
    CHECK_THROWS_AS(parse_checkpoint("not a checkpoint\n"), ParseError);
}

TEST_CASE("pretrained loading copies spatial modules and transforms") {
    const auto grid = single_grid(40);
    AdaModel m(kArch, default_joint_ladder(), 41);
    load_pretrained(m, grid);
    const Tensor frames = random_tensor({20, 25, 3}, 42);

    SingleModel big(kArch, default_joint_ladder(), 0, 0, 0);
    restore(big, grid.at({0, 0}));
    CHECK(sm_features(m.spatial[0], m.transforms, 0, frames)
              .identical(sm_features(big.spatial, big.transforms, 0, frames)));

    SingleModel small(kArch, default_joint_ladder(), 1, 0, 0);
    restore(small, grid.at({1, 0}));
    CHECK(sm_features(m.spatial[1], m.transforms, 0, frames)
              .identical(sm_features(small.spatial, small.transforms, 0, frames)));

    for (std::size_t l = 1; l < 3; ++l)
        CHECK(m.transforms.matrices[l].value.identical(*grid.at({0, l}).find("transform." + std::to_string(l))));

    // policy, TM and head keep the fresh initialisation
    AdaModel fresh(kArch, default_joint_ladder(), 41);
    CHECK(m.head.weight.value.identical(fresh.head.weight.value));
    CHECK(m.temporal.w1.value.identical(fresh.temporal.w1.value));
    CHECK(m.policy.w1.value.identical(fresh.policy.w1.value));
}

TEST_CASE("pretrained loading seeds every joint level's BN from the full-joint single") {
    auto grid = single_grid(60);
    for (std::size_t k = 0; k < 2; ++k) {
        SingleModel s(kArch, default_joint_ladder(), k, 0, 0);
        restore(s, grid.at({k, 0}));
        Rng rng(61 + k);
        for (auto& layer : s.spatial.layers)
            for (Parameter* p : {&layer.norm.gamma, &layer.norm.beta, &layer.norm.state.running_mean})
                for (double& v : p->value.values()) v += rng.uniform(-0.5, 0.5);
        grid.at({k, 0}) = capture(s);
    }
    AdaModel m(kArch, default_joint_ladder(), 62);
    load_pretrained(m, grid);
    for (std::size_t k = 0; k < 2; ++k) {
        SingleModel s(kArch, default_joint_ladder(), k, 0, 0);
        restore(s, grid.at({k, 0}));
        REQUIRE(m.spatial[k].levels() == 3);
        for (const auto& set : m.spatial[k].level_norms)
            for (std::size_t i = 0; i < 3; ++i) {
                const NormLayer& want = s.spatial.layers[i].norm;
                CHECK(set[i].gamma.value.identical(want.gamma.value));
                CHECK(set[i].beta.value.identical(want.beta.value));
                CHECK(set[i].state.running_mean.value.identical(want.state.running_mean.value));
                CHECK(set[i].state.running_var.value.identical(want.state.running_var.value));
            }
    }
}

TEST_CASE("failed pretrained loading leaves the model untouched") {
    auto grid = single_grid(50);
    grid.erase({0, 2});
    AdaModel m(kArch, default_joint_ladder(), 51);
    const std::string before = format_checkpoint(capture(m));
    CHECK_THROWS_AS(load_pretrained(m, grid), CompatibilityError);
    CHECK(format_checkpoint(capture(m)) == before);

    auto mislabeled = single_grid(50);
    mislabeled.at({1, 0}).header.joint_level = 2;
    CHECK_THROWS_AS(load_pretrained(m, mislabeled), CompatibilityError);
    CHECK(format_checkpoint(capture(m)) == before);

    CHECK_THROWS_AS(load_pretrained(m, std::filesystem::path("/nonexistent/adasgn")), CompatibilityError);
    CHECK(format_checkpoint(capture(m)) == before);
}

TEST_CASE("pretrained loading from a directory") {
    const auto grid = single_grid(60);
    const auto dir = std::filesystem::temp_directory_path() / "adasgn_test_pretrained";
    std::filesystem::create_directories(dir);
    for (const auto& [key, c] : grid) save_checkpoint(c, dir / single_checkpoint_name(key.first, key.second));
    AdaModel a(kArch, default_joint_ladder(), 61), b(kArch, default_joint_ladder(), 61);
    load_pretrained(a, dir);
    load_pretrained(b, grid);
    CHECK(format_checkpoint(capture(a)) == format_checkpoint(capture(b)));
    std::filesystem::remove_all(dir);
}
