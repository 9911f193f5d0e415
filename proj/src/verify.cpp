#include "adasgn/verify.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <sstream>

#include "adasgn/data.hpp"
#include "adasgn/flops.hpp"
#include "adasgn/gradcheck.hpp"
#include "adasgn/model.hpp"
#include "adasgn/train.hpp"

namespace adasgn {
namespace {

using Clock = std::chrono::steady_clock;

Tensor uniform_tensor(Shape shape, std::uint64_t seed, double lo = -1.0, double hi = 1.0) {
    Rng rng = Rng::derive(seed, 0x5eed);
    Tensor t(std::move(shape));
    for (double& v : t.values()) v = rng.uniform(lo, hi);
    return t;
}

Var weighted(Tape& t, Var y, std::uint64_t seed) { return sum(mul(y, t.constant(uniform_tensor(y.shape(), seed)))); }

std::string real(double v) {
    std::ostringstream s;
    s.precision(3);
    s << std::scientific << v;
    return s.str();
}

// Accumulates gradient reports for one named group.
struct GradGroup {
    std::string name;
    double worst = 0.0;
    std::size_t checks = 0, failures = 0;

    void add(const GradCheckReport& r) {
        ++checks;
        failures += !r.passed;
        worst = std::max(worst, r.max_rel_error);
    }
    PropertyResult result(double seconds) const {
        return {name, failures == 0 && checks > 0, worst,
                std::to_string(checks) + " checks, " + std::to_string(failures) + " failed", seconds};
    }
};

template <class Fn>
PropertyResult timed(Fn&& fn) {
    const auto start = Clock::now();
    PropertyResult r = fn();
    r.seconds = std::chrono::duration<double>(Clock::now() - start).count();
    return r;
}

std::vector<Parameter*> trainable(const std::function<void(const ParamVisitor&)>& visit) {
    std::vector<Parameter*> out;
    visit([&](const std::string&, Parameter& p) {
        if (p.trainable) out.push_back(&p);
    });
    return out;
}

void randomize_norm(NormLayer& n, std::uint64_t seed) {
    const std::size_t c = n.gamma.value.numel();
    n.gamma.value = uniform_tensor({c}, seed, 0.5, 1.5);
    n.beta.value = uniform_tensor({c}, seed + 1, -0.5, 0.5);
    n.state.running_mean.value = uniform_tensor({c}, seed + 2, -0.3, 0.3);
    n.state.running_var.value = uniform_tensor({c}, seed + 3, 0.5, 2.0);
}

// Moves running statistics and shifts off their defaults so eval mode is a
// genuine affine map.
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

std::vector<double> log_softmax(const std::vector<double>& x) {
    const double m = *std::max_element(x.begin(), x.end());
    double s = 0.0;
    for (double v : x) s += std::exp(v - m);
    std::vector<double> out;
    for (double v : x) out.push_back(v - m - std::log(s));
    return out;
}

}  // namespace

std::vector<PropertyResult> verify_gradients(const VerifyOptions& opts) {
    std::vector<PropertyResult> out;
    const std::size_t seeds = opts.grad_seeds;
    auto group = [&](const std::string& name, const std::function<void(GradGroup&, std::uint64_t)>& body) {
        out.push_back(timed([&] {
            GradGroup g{name};
            for (std::uint64_t s = 0; s < seeds; ++s) body(g, s);
            return g.result(0.0);
        }));
    };

    group("grad_matmul", [](GradGroup& g, std::uint64_t s) {
        const Tensor b = uniform_tensor({4, 5}, s + 1), bb = uniform_tensor({2, 4, 5}, s + 2);
        g.add(finite_diff_check([&](Tape& t, Var x) { return weighted(t, matmul(x, t.constant(b)), s); },
                                uniform_tensor({3, 4}, s)));
        g.add(finite_diff_check([&](Tape& t, Var x) { return weighted(t, matmul(t.constant(b), x), s); },
                                uniform_tensor({5, 2}, s + 3)));
        g.add(finite_diff_check([&](Tape& t, Var x) { return weighted(t, matmul(x, t.constant(bb)), s); },
                                uniform_tensor({2, 3, 4}, s + 4)));
        g.add(finite_diff_check([&](Tape& t, Var x) { return weighted(t, matmul(t.constant(uniform_tensor({3, 2}, s)), x), s); },
                                uniform_tensor({4, 2, 3}, s + 5)));
        g.add(finite_diff_check([&](Tape& t, Var x) { return weighted(t, transpose_last(x), s); },
                                uniform_tensor({2, 3, 4}, s + 6)));
    });
    group("grad_elementwise", [](GradGroup& g, std::uint64_t s) {
        const Tensor c = uniform_tensor({3, 4}, s + 1);
        g.add(finite_diff_check(
            [&](Tape& t, Var x) {
                Var k = t.constant(c);
                return weighted(t, add(mul(x, x), scale(sub(x, k), -1.7)), s);
            },
            uniform_tensor({3, 4}, s)));
        g.add(finite_diff_check([&](Tape& t, Var x) { return weighted(t, add_broadcast(t.constant(c), x), s); },
                                uniform_tensor({4}, s + 2)));
        g.add(finite_diff_check([&](Tape& t, Var x) { return weighted(t, relu(x), s); }, uniform_tensor({5, 4}, s + 3)));
        g.add(finite_diff_check([&](Tape&, Var x) { return mean(mul(x, x)); }, uniform_tensor({2, 3}, s + 4)));
    });
    group("grad_softmax", [](GradGroup& g, std::uint64_t s) {
        g.add(finite_diff_check([&](Tape& t, Var x) { return weighted(t, softmax_rows(x), s); },
                                uniform_tensor({4, 6}, s, -3, 3)));
        g.add(finite_diff_check([&](Tape& t, Var x) { return weighted(t, log_softmax_rows(x), s); },
                                uniform_tensor({2, 3, 5}, s + 1, -3, 3)));
        const std::vector<std::size_t> labels{1, 0, 4, 2};
        g.add(finite_diff_check([&](Tape&, Var x) { return cross_entropy_mean(x, labels); },
                                uniform_tensor({4, 5}, s + 2, -2, 2)));
        g.add(finite_diff_check([&](Tape&, Var x) { return cross_entropy(x, s % 5); }, uniform_tensor({5}, s + 3)));
    });
    group("grad_conv_bn_pool", [](GradGroup& g, std::uint64_t s) {
        const Tensor w = uniform_tensor({3, 4, 5}, s + 1), b = uniform_tensor({5}, s + 2);
        g.add(finite_diff_check(
            [&](Tape& t, Var x) { return weighted(t, conv1d_temporal(x, t.constant(w), t.constant(b)), s); },
            uniform_tensor({2, 6, 4}, s)));
        g.add(finite_diff_check(
            [&](Tape& t, Var x) { return weighted(t, conv1d_temporal(t.constant(uniform_tensor({6, 4}, s)), x, t.constant(b)), s); },
            w));
        BatchNormState st(4);
        const Tensor gamma = uniform_tensor({4}, s + 3, 0.5, 1.5), beta = uniform_tensor({4}, s + 4);
        g.add(finite_diff_check(
            [&](Tape& t, Var x) {
                return weighted(t, batch_norm(x, t.constant(gamma), t.constant(beta), st, Mode::Train), s);
            },
            uniform_tensor({7, 4}, s + 5)));
        g.add(finite_diff_check([&](Tape& t, Var x) { return weighted(t, max_pool_axis(x, 1), s); },
                                uniform_tensor({3, 5, 4}, s + 6)));
    });
    group("grad_row_ops", [](GradGroup& g, std::uint64_t s) {
        const std::vector<std::size_t> rows{3, 0, 3, 1}, idx{2, 0, 5, 1, 4};
        g.add(finite_diff_check([&](Tape& t, Var x) { return weighted(t, gather_rows(x, rows), s); },
                                uniform_tensor({4, 3}, s)));
        g.add(finite_diff_check(
            [&](Tape& t, Var x) {
                return weighted(t, concat_rows({slice_rows(x, 2, 2), x, reshape(slice_rows(x, 0, 1), {1, 3})}), s);
            },
            uniform_tensor({4, 3}, s + 1)));
        g.add(finite_diff_check(
            [&](Tape& t, Var x) { return weighted(t, scale_rows(t.constant(uniform_tensor({4, 2, 3}, s)), x), s); },
            uniform_tensor({4}, s + 2)));
        g.add(finite_diff_check([&](Tape& t, Var x) { return weighted(t, scale_rows(x, t.constant(uniform_tensor({4}, s))), s); },
                                uniform_tensor({4, 2, 3}, s + 3)));
        g.add(finite_diff_check([&](Tape& t, Var x) { return weighted(t, pick(x, idx), s); },
                                uniform_tensor({5, 6}, s + 4)));
    });
    group("grad_transform", [](GradGroup& g, std::uint64_t s) {
        const Tensor m = uniform_tensor({9, 25}, s + 1), x = uniform_tensor({3, 25, 3}, s + 2);
        g.add(finite_diff_check([&](Tape& t, Var v) { return weighted(t, apply_transform(v, t.constant(x)), s); }, m));
        g.add(finite_diff_check([&](Tape& t, Var v) { return weighted(t, apply_transform(t.constant(m), v), s); }, x));
    });
    group("grad_adjacency", [](GradGroup& g, std::uint64_t s) {
        const Tensor th = uniform_tensor({3, 4}, s + 1), ph = uniform_tensor({3, 4}, s + 2), x = uniform_tensor({2, 6, 3}, s);
        g.add(finite_diff_check(
            [&](Tape& t, Var v) { return weighted(t, adaptive_adjacency(v, t.constant(th), t.constant(ph)), s); }, x));
        g.add(finite_diff_check(
            [&](Tape& t, Var v) { return weighted(t, adaptive_adjacency(t.constant(x), v, t.constant(ph)), s); }, th));
        g.add(finite_diff_check(
            [&](Tape& t, Var v) { return weighted(t, adaptive_adjacency(t.constant(x), t.constant(th), v), s); }, ph));
    });
    group("grad_gcn_layer", [](GradGroup& g, std::uint64_t s) {
        Rng rng(s);
        GcnLayer layer(3, 5, rng);
        randomize_norm(layer.norm, s + 10);
        const Tensor a = uniform_tensor({2, 6, 6}, s + 1, 0.0, 1.0), x = uniform_tensor({2, 6, 3}, s + 2);
        for (Mode mode : {Mode::Train, Mode::Eval}) {
            auto fn = [&](Tape& t, Var v) { return weighted(t, layer.forward(t, v, t.constant(a), mode), s); };
            g.add(finite_diff_check(fn, x));
            std::vector<Parameter*> ps{&layer.weight, &layer.norm.gamma, &layer.norm.beta};
            g.add(finite_diff_check_params([&](Tape& t) { return fn(t, t.constant(x)); }, ps));
        }
    });
    group("grad_spatial_module", [](GradGroup& g, std::uint64_t s) {
        Rng rng(s);
        SpatialModule sm(3, SpatialPlan{4, {5, 6, 7}}, rng, 2);
        const Tensor x = uniform_tensor({3, 9, 3}, s + 1);
        for (std::size_t level : {0u, 1u}) {
            auto fn = [&](Tape& t, Var v) { return weighted(t, sm.forward(t, v, Mode::Train, level), s); };
            g.add(finite_diff_check(fn, x));
            auto ps = trainable([&](const ParamVisitor& f) { sm.visit("sm", f); });
            g.add(finite_diff_check_params([&](Tape& t) { return fn(t, t.constant(x)); }, ps));
        }
    });
    group("grad_temporal_module", [](GradGroup& g, std::uint64_t s) {
        Rng rng(s);
        TemporalModule tm(6, 4, 5, 3, 3, rng);
        const Tensor f = uniform_tensor({2, 6, 4}, s + 1);
        auto fn = [&](Tape& t, Var v) { return weighted(t, tm.forward(t, v, Mode::Train), s); };
        g.add(finite_diff_check(fn, f));
        auto ps = trainable([&](const ParamVisitor& v) { tm.visit("tm", v); });
        g.add(finite_diff_check_params([&](Tape& t) { return fn(t, t.constant(f)); }, ps));
    });
    group("grad_classifier_head", [](GradGroup& g, std::uint64_t s) {
        Rng rng(s);
        ClassifierHead head(4, 3, rng);
        const Tensor f = uniform_tensor({2, 5, 4}, s + 1);
        auto fn = [&](Tape& t, Var v) { return weighted(t, head.logits(t, v), s); };
        g.add(finite_diff_check(fn, f));
        std::vector<Parameter*> ps{&head.weight, &head.bias};
        g.add(finite_diff_check_params([&](Tape& t) { return fn(t, t.constant(f)); }, ps));
    });
    group("grad_policy_net", [](GradGroup& g, std::uint64_t s) {
        Rng rng(s);
        PolicyNet p(4, 5, 6, 3, rng);
        // generic point rather than the near-zero initial output layer
        p.w2.value = uniform_tensor(p.w2.value.shape(), s + 7);
        p.b2.value = uniform_tensor(p.b2.value.shape(), s + 8);
        const Tensor f = uniform_tensor({2, 6, 4}, s + 1);
        auto fn = [&](Tape& t, Var v) { return weighted(t, p.logits(t, v), s); };
        g.add(finite_diff_check(fn, f));
        std::vector<Parameter*> ps{&p.w1, &p.b1, &p.w2, &p.b2};
        g.add(finite_diff_check_params([&](Tape& t) { return fn(t, t.constant(f)); }, ps));
    });
    group("grad_gumbel_relaxation", [](GradGroup& g, std::uint64_t s) {
        Rng rng(s);
        const Tensor noise({3, 6}, gumbel_noise(18, rng));
        for (double tau : {0.5, 1.0, 5.0})
            g.add(finite_diff_check(
                [&](Tape& t, Var x) { return weighted(t, gumbel_softmax_relaxed(log_softmax_rows(x), noise, tau), s); },
                uniform_tensor({3, 6}, s + 1, -2, 2)));
    });
    group("grad_straight_through", [](GradGroup& g, std::uint64_t s) {
        // the hard gate must carry exactly the relaxed path's gradient, and
        // that gradient must match finite differences
        const Tensor logits = uniform_tensor({5, 6}, s, -2, 2), w = uniform_tensor({5, 6}, s + 1);
        Tape a, b;
        Var xa = a.leaf(logits), xb = b.leaf(logits);
        Rng ra(s);
        StraightThroughSample st = straight_through_sample(xa, 1.5, ra);
        a.backward(sum(mul(st.hard, a.constant(w))));
        b.backward(sum(mul(gumbel_softmax_relaxed(log_softmax_rows(xb), st.noise, 1.5), b.constant(w))));
        GradCheckReport same;
        same.passed = a.grad_or_zero(xa).identical(b.grad_or_zero(xb));
        g.add(same);
        g.add(finite_diff_check(
            [&](Tape& t, Var x) {
                return sum(mul(gumbel_softmax_relaxed(log_softmax_rows(x), st.noise, 1.5), t.constant(w)));
            },
            logits));
    });
    group("grad_efficiency_surrogate", [](GradGroup& g, std::uint64_t s) {
        const FlopsTable table = build_flops_table(ArchConfig::desk(), {25, 9, 1});
        const auto costs = action_costs(table, 0.16);
        Rng rng(s);
        const Tensor noise({4, 6}, gumbel_noise(24, rng));
        const double tau = 0.5 + static_cast<double>(s);
        g.add(finite_diff_check(
            [&](Tape&, Var x) { return efficiency_loss(gumbel_softmax_relaxed(log_softmax_rows(x), noise, tau), costs); },
            uniform_tensor({4, 6}, s + 1)));
        const std::vector<std::size_t> labels{0, 3, 1, 2};
        g.add(finite_diff_check(
            [&](Tape&, Var x) {
                Var eff = efficiency_loss(gumbel_softmax_relaxed(log_softmax_rows(x), noise, tau), costs);
                return total_loss(accuracy_loss(x, labels), eff, 4.0);
            },
            uniform_tensor({4, 6}, s + 2)));
    });
    return out;
}

std::vector<PropertyResult> verify_gumbel(const VerifyOptions& opts) {
    double min_p = 1.0, agreement = 1.0;
    std::size_t disagreements = 0, draws = 0;
    const auto start = Clock::now();
    Rng pick_logits(2024), sampler(99);
    for (std::size_t c = 0; c < opts.gumbel_cases; ++c) {
        std::vector<double> raw(6);
        for (double& v : raw) v = pick_logits.uniform(-2.0, 2.0);
        const auto logp = log_softmax(raw);
        std::vector<double> probs;
        for (double v : logp) probs.push_back(std::exp(v));
        // the training path: straight-through sampling over a batch of rows
        Tensor rows({opts.gumbel_draws, 6});
        for (std::size_t r = 0; r < opts.gumbel_draws; ++r)
            for (std::size_t a = 0; a < 6; ++a) rows.at(r, a) = raw[a];
        Tape t;
        StraightThroughSample st = straight_through_sample(t.constant(rows), 0.5, sampler);
        std::vector<std::size_t> counts(6, 0);
        const Tensor& soft = st.soft.value();
        for (std::size_t r = 0; r < opts.gumbel_draws; ++r) {
            ++counts[st.actions[r]];
            std::size_t best = 0;
            for (std::size_t a = 1; a < 6; ++a)
                if (soft.at(r, a) > soft.at(r, best)) best = a;
            disagreements += best != st.actions[r];
        }
        draws += opts.gumbel_draws;
        min_p = std::min(min_p, chi_square_p_value(counts, probs));
    }
    const double seconds = std::chrono::duration<double>(Clock::now() - start).count();
    agreement = draws ? 1.0 - static_cast<double>(disagreements) / static_cast<double>(draws) : 0.0;
    return {
        {"gumbel_chi_square", opts.gumbel_cases > 0 && min_p > 0.01, min_p,
         std::to_string(opts.gumbel_cases) + " six-way cases x " + std::to_string(opts.gumbel_draws) +
             " draws, smallest p-value",
         seconds},
        {"gumbel_hard_soft_agreement", draws > 0 && disagreements == 0, agreement,
         std::to_string(disagreements) + " of " + std::to_string(draws) + " draws disagree", 0.0},
    };
}

std::vector<PropertyResult> verify_flops(const VerifyOptions& opts) {
    std::vector<PropertyResult> out;
    AdaModel m(ArchConfig::desk(), default_joint_ladder(), 11);
    perturb(m, 12);
    FlopsTable table = m.table;
    if (opts.corrupt_flops) table.entries[0] += 1;
    const std::size_t frames = m.arch.frames;

    auto count = [](const std::function<void(Tape&)>& body) {
        Tape t;
        t.set_grad_enabled(false);
        OpCounter counter;
        CountingScope scope(counter);
        body(t);
        return counter.multiply_adds;
    };
    auto gap = [](std::uint64_t a, std::uint64_t b) { return static_cast<double>(a > b ? a - b : b - a); };

    out.push_back(timed([&] {
        double worst = 0.0;
        for (std::size_t a = 0; a < m.space.size(); ++a) {
            const auto [k, l] = m.space.split(a);
            for (std::size_t f : {1u, 7u}) {
                const Tensor x = uniform_tensor({f, 25, 3}, 100 + a * 10 + f);
                const std::uint64_t branch = count([&](Tape& t) {
                    m.spatial[k].forward(t, m.transforms.apply(t, l, t.constant(x)), Mode::Eval, l);
                });
                worst = std::max(worst, gap(branch, f * table.entry(a)));
            }
            const Tensor seq = uniform_tensor({2 * frames, 25, 3}, 300 + a);
            const std::uint64_t fixed =
                count([&](Tape& t) { fixed_branch_logits(t, m, t.constant(seq), 2, a, Mode::Eval); });
            worst = std::max(worst, gap(fixed, 2 * single_sequence_cost(a, frames, table)));
        }
        return PropertyResult{"flops_oracle_equality", worst == 0.0, worst,
                              "largest |table - counted| multiply-adds over all actions", 0.0};
    }));

    out.push_back(timed([&] {
        Rng rng(2024);
        double worst = 0.0;
        std::size_t reuse_frames = 0;
        for (std::size_t trial = 0; trial < opts.cost_sequences; ++trial) {
            const Tensor x = uniform_tensor({frames, 25, 3}, 1000 + trial);
            AdaptiveOptions o;
            o.policy = PolicyMode::Uniform;
            o.rng = &rng;
            Tape t;
            t.set_grad_enabled(false);
            AdaptiveResult r = forward_adaptive(t, m, t.constant(x), 1, o);
            worst = std::max(worst, gap(r.measured_multiply_adds, sequence_cost(r.actions, frames, table)));
            for (std::size_t a : r.actions) reuse_frames += a == m.space.reuse_action();
        }
        return PropertyResult{"sequence_cost_equality", worst == 0.0 && reuse_frames > 0, worst,
                              std::to_string(opts.cost_sequences) + " random sequences, " +
                                  std::to_string(reuse_frames) + " reuse frames",
                              0.0};
    }));

    out.push_back(timed([&] {
        const std::size_t reuse = m.space.reuse_action();
        const Tensor x = uniform_tensor({frames, 25, 3}, 77);
        auto measured = [&](bool shortcut) {
            AdaptiveOptions o;
            o.policy = PolicyMode::Forced;
            o.forced_action = reuse;
            o.reuse_shortcut = shortcut;
            Tape t;
            t.set_grad_enabled(false);
            return forward_adaptive(t, m, t.constant(x), 1, o).measured_multiply_adds;
        };
        const std::uint64_t base = frames * (table.policy_per_frame() + table.overhead.temporal_per_frame) +
                                   table.overhead.classifier_per_sequence;
        const std::uint64_t with = measured(true);
        const std::uint64_t without = measured(false);
        const double delta = gap(with, base);
        const bool ok = delta == 0.0 && without - base == frames * table.entry(reuse);
        return PropertyResult{"reuse_zero_delta", ok, delta,
                              "counter delta of reuse frames beyond policy, TM and head", 0.0};
    }));
    return out;
}

std::vector<PropertyResult> verify_forced_policy() {
    return {timed([] {
        AdaModel m(ArchConfig::desk(), default_joint_ladder(), 3);
        perturb(m, 4);
        const Tensor x = uniform_tensor({2 * m.arch.frames, 25, 3}, 5);
        std::size_t mismatches = 0;
        double worst = 0.0;
        for (std::size_t a : {std::size_t{0}, m.space.reuse_action()}) {
            for (bool shortcut : {true, false}) {
                AdaptiveOptions o;
                o.policy = PolicyMode::Forced;
                o.forced_action = a;
                o.reuse_shortcut = shortcut;
                Tape t, u;
                t.set_grad_enabled(false);
                u.set_grad_enabled(false);
                const Tensor ada = forward_adaptive(t, m, t.constant(x), 2, o).logits.value();
                const Tensor fixed = fixed_branch_logits(u, m, u.constant(x), 2, a, Mode::Eval).value();
                mismatches += !ada.identical(fixed);
                for (std::size_t i = 0; i < ada.numel(); ++i) worst = std::max(worst, std::abs(ada[i] - fixed[i]));
            }
        }
        return PropertyResult{"forced_policy_equivalence", mismatches == 0, worst,
                              "actions (0,0) and (K-1,L-1), largest |adaptive - fixed| logit", 0.0};
    })};
}

std::vector<PropertyResult> verify_round_trips() {
    std::vector<PropertyResult> out;
    out.push_back(timed([] {
        AdaModel m(ArchConfig::desk(), default_joint_ladder(), 21);
        perturb(m, 22);
        const Checkpoint c = capture(m);
        const std::string text = format_checkpoint(c);
        AdaModel back(ArchConfig::desk(), default_joint_ladder(), 23);
        restore(back, parse_checkpoint(text));
        const bool ok = format_checkpoint(capture(back)) == text;
        return PropertyResult{"checkpoint_round_trip", ok, ok ? 0.0 : 1.0, "adaptive model, hexadecimal floats", 0.0};
    }));
    out.push_back(timed([] {
        SynthSpec spec;
        const Dataset d = synth_generate_count(spec, 16, 5);
        std::size_t bad = 0;
        for (const auto& s : d) {
            const SkeletonSample back = parse_skeleton(format_skeleton(s), s.id);
            bad += !(back.frames.identical(s.frames) && back.label == s.label);
        }
        return PropertyResult{"skeleton_round_trip", bad == 0, static_cast<double>(bad),
                              std::to_string(d.size()) + " synthetic samples", 0.0};
    }));
    out.push_back(timed([] {
        AdaModel m(ArchConfig::desk(), default_joint_ladder(), 3);
        AdaptiveOptions o;
        o.policy = PolicyMode::Forced;
        o.forced_action = m.space.reuse_action();
        Tape t;
        t.set_grad_enabled(false);
        AdaptiveResult r = forward_adaptive(t, m, t.constant(uniform_tensor({m.arch.frames, 25, 3}, 6)), 1, o);
        const bool ok = r.features.id() == r.policy_features.id();
        return PropertyResult{"reuse_identity", ok, ok ? 0.0 : 1.0, "reuse frames hand over the policy features", 0.0};
    }));
    return out;
}

std::vector<PropertyResult> verify_all(const VerifyOptions& opts) {
    std::vector<PropertyResult> out;
    for (auto part : {verify_gradients(opts), verify_gumbel(opts), verify_flops(opts), verify_forced_policy(),
                      verify_round_trips()})
        out.insert(out.end(), part.begin(), part.end());
    return out;
}

bool all_passed(const std::vector<PropertyResult>& results) {
    return std::all_of(results.begin(), results.end(), [](const PropertyResult& r) { return r.passed; });
}

std::string format_verify_report(const std::vector<PropertyResult>& results) {
    std::ostringstream s;
    for (const auto& r : results) {
        s << (r.passed ? "PASS " : "FAIL ") << r.name << " measured=" << real(r.measured) << " " << r.detail << " ("
          << std::fixed;
        s.precision(2);
        s << r.seconds << " s)\n";
        s.unsetf(std::ios::fixed);
    }
    return s.str();
}

}  // namespace adasgn
