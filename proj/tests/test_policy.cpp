#include <cmath>
#include <random>
#include <vector>

#include "adasgn/errors.hpp"
#include "adasgn/gradcheck.hpp"
#include "adasgn/policy.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "test_util.hpp"

using namespace adasgn;
using adasgn::testing::max_abs_diff;
using adasgn::testing::random_tensor;

namespace {

std::vector<double> log_softmax(const std::vector<double>& logits) {
    double mx = logits[0];
    for (double v : logits) mx = std::max(mx, v);
    double z = 0.0;
    for (double v : logits) z += std::exp(v - mx);
    std::vector<double> out;
    for (double v : logits) out.push_back(v - mx - std::log(z));
    return out;
}

std::vector<double> probs_of(const std::vector<double>& logp) {
    std::vector<double> p;
    for (double v : logp) p.push_back(std::exp(v));
    return p;
}

}  // namespace

TEST_CASE("action space") {
    ActionSpace space{2, 3};
    CHECK(space.size() == 6);
    CHECK(space.split(0) == std::pair<std::size_t, std::size_t>{0, 0});
    CHECK(space.split(5) == std::pair<std::size_t, std::size_t>{1, 2});
    CHECK(space.reuse_action() == 5);
    std::vector<bool> seen(6, false);
    for (std::size_t a = 0; a < 6; ++a) {
        auto [m, n] = space.split(a);
        CHECK(m < 2);
        CHECK(n < 3);
        CHECK(m * 3 + n == a);
        CHECK(space.compose(m, n) == a);
        seen[m * 3 + n] = true;
    }
    for (bool s : seen) CHECK(s);
    CHECK_THROWS_AS(space.split(6), IndexError);
}

TEST_CASE("temperature schedule") {
    TemperatureSchedule s;
    CHECK(tau_at(0, s) == 5.0);
    CHECK(tau_at(10, s) == doctest::Approx(5.0 * std::exp(-0.96)).epsilon(1e-15));
    CHECK(tau_at(10, s) == doctest::Approx(1.9144644298755602).epsilon(1e-14));
    CHECK(tau_at(100000, s) == 0.01);
    for (std::size_t e = 0; e < 200; ++e) {
        CHECK(tau_at(e + 1, s) <= tau_at(e, s));
        CHECK(tau_at(e, s) >= s.tau_min);
    }
    s.kind = TemperatureSchedule::Kind::Subtractive;
    CHECK(tau_at(10, s) == doctest::Approx(5.0 - 0.96));
    CHECK(tau_at(1000, s) == 0.01);
}

TEST_CASE("policy network") {
    Rng rng(1);
    PolicyNet net(5, 4, 6, 3, rng);
    SUBCASE("fresh network starts on full compute") {
        Tape t;
        Tensor pr = softmax_rows(net.logits(t, t.constant(random_tensor({7, 5}, 3)))).value();
        for (std::size_t f = 0; f < 7; ++f) {
            CHECK(pr.at(f, 0) > 0.7);
            for (std::size_t a = 1; a < 6; ++a) CHECK(pr.at(f, a) < pr.at(f, 0));
        }
    }
    SUBCASE("zero weights give uniform probabilities") {
        PolicyNet zero = net;
        for (Parameter* p : {&zero.w1, &zero.b1, &zero.w2, &zero.b2})
            for (double& v : p->value.values()) v = 0.0;
        Tape t;
        Var l = zero.logits(t, t.constant(random_tensor({7, 5}, 2)));
        CHECK(l.shape() == Shape{7, 6});
        for (double v : l.value().values()) CHECK(v == 0.0);
        for (double v : softmax_rows(l).value().values()) CHECK(v == doctest::Approx(1.0 / 6).epsilon(1e-15));
    }
    SUBCASE("conv composition oracle") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Rng r(seed);
            PolicyNet p(5, 4, 6, 3, r);
            for (double& v : p.b1.value.values()) v = r.uniform(-1, 1);
            for (double& v : p.b2.value.values()) v = r.uniform(-1, 1);
            Tensor f = random_tensor({8, 5}, seed + 9);
            Tape t;
            Tensor y = p.logits(t, t.constant(f)).value();
            Tensor o = oracle::conv_same(oracle::relu(oracle::conv_same(f, p.w1.value, p.b1.value)), p.w2.value,
                                         p.b2.value);
            CHECK(max_abs_diff(y, o) <= 1e-12);
        }
    }
    SUBCASE("receptive field") {
        Tensor f = random_tensor({10, 5}, 3);
        Tensor g = f;
        for (std::size_t c = 0; c < 5; ++c) g.at(7, c) += 1.0;
        Tape t;
        Tensor a = net.logits(t, t.constant(f)).value(), b = net.logits(t, t.constant(g)).value();
        for (std::size_t r = 0; r < 10; ++r) {
            const bool inside = r >= 5 && r <= 9;
            for (std::size_t c = 0; c < 6; ++c)
                if (!inside) CHECK(a.at(r, c) == b.at(r, c));
        }
        CHECK(max_abs_diff(a, b) > 0.0);
    }
    SUBCASE("gradients") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Rng r(seed);
            PolicyNet p(3, 4, 6, 3, r);
            // check at generic weights rather than the near-zero initial output layer
            p.w2.value = random_tensor(p.w2.value.shape(), seed + 3);
            p.b2.value = random_tensor(p.b2.value.shape(), seed + 4);
            Tensor f = random_tensor({6, 3}, seed + 1), w = random_tensor({6, 6}, seed + 2);
            auto fn = [&](Tape& t, Var x) { return sum(mul(p.logits(t, x), t.constant(w))); };
            CHECK(finite_diff_check(fn, f).passed);
            std::vector<Parameter*> ps{&p.w1, &p.b1, &p.w2, &p.b2};
            CHECK(finite_diff_check_params([&](Tape& t) { return fn(t, t.constant(f)); }, ps).passed);
        }
    }
}

TEST_CASE("gumbel sampling") {
    SUBCASE("saturated") {
        const auto logp = log_softmax({40.0, 0.0, 0.0, 0.0, 0.0, 0.0});
        Rng rng(5);
        std::size_t hits = 0;
        for (int i = 0; i < 10000; ++i) hits += gumbel_sample(logp, rng) == 0;
        CHECK(hits > 9990);
    }
    SUBCASE("uniform six-way") {
        const auto logp = log_softmax(std::vector<double>(6, 0.3));
        Rng rng(6);
        std::vector<std::size_t> counts(6, 0);
        const std::size_t n = 100000;
        for (std::size_t i = 0; i < n; ++i) ++counts[gumbel_sample(logp, rng)];
        const double sigma = std::sqrt(n * (1.0 / 6) * (5.0 / 6));
        for (auto c : counts) CHECK(std::abs(static_cast<double>(c) - n / 6.0) < 3 * sigma);
    }
    SUBCASE("matches a direct categorical sampler") {
        const std::vector<double> p{0.5, 0.3, 0.2};
        std::vector<double> logp;
        for (double v : p) logp.push_back(std::log(v));
        Rng rng(7);
        std::mt19937_64 gen(8);
        std::discrete_distribution<std::size_t> direct(p.begin(), p.end());
        const std::size_t n = 100000;
        std::vector<std::size_t> gumbel(3, 0), categorical(3, 0);
        for (std::size_t i = 0; i < n; ++i) {
            ++gumbel[gumbel_sample(logp, rng)];
            ++categorical[direct(gen)];
        }
        for (std::size_t i = 0; i < 3; ++i) {
            const double sigma = std::sqrt(n * p[i] * (1 - p[i]));
            CHECK(std::abs(static_cast<double>(gumbel[i]) - n * p[i]) < 3 * sigma);
            CHECK(std::abs(static_cast<double>(gumbel[i]) - static_cast<double>(categorical[i])) <
                  3 * std::sqrt(2.0) * sigma);
        }
    }
    SUBCASE("noise clamp keeps draws finite") {
        Rng rng(9);
        for (double g : gumbel_noise(100000, rng)) CHECK(std::isfinite(g));
        const double lo = -std::log(-std::log(kGumbelClamp)), hi = -std::log(-std::log(1 - kGumbelClamp));
        CHECK(std::isfinite(lo));
        CHECK(std::isfinite(hi));
    }
}

TEST_CASE("chi-square p-value") {
    const std::vector<std::size_t> exact{100, 100};
    const std::vector<double> half{0.5, 0.5};
    CHECK(chi_square_p_value(exact, half) == doctest::Approx(1.0));
    // 1 dof, statistic 3.841459 sits at the 5% point.
    const std::vector<std::size_t> off{5980, 4020};
    const std::vector<double> p2{0.6, 0.4};
    const double stat = 20.0 * 20.0 / 6000 + 20.0 * 20.0 / 4000;
    CHECK(chi_square_p_value(off, p2) == doctest::Approx(std::erfc(std::sqrt(stat / 2))).epsilon(1e-10));
    const std::vector<std::size_t> far{7000, 3000};
    CHECK(chi_square_p_value(far, p2) < 1e-10);
}

TEST_CASE("gumbel frequencies follow softmax over random logits") {
    Rng rng(2024);
    std::mt19937_64 gen(99);
    std::uniform_real_distribution<double> u(-2.0, 2.0);
    for (int c = 0; c < 20; ++c) {
        std::vector<double> logits(6);
        for (double& v : logits) v = u(gen);
        const auto logp = log_softmax(logits);
        std::vector<std::size_t> counts(6, 0);
        for (int i = 0; i < 100000; ++i) ++counts[gumbel_sample(logp, rng)];
        CHECK(chi_square_p_value(counts, probs_of(logp)) > 0.01);
    }
}

TEST_CASE("gumbel-softmax relaxation") {
    Tape t;
    SUBCASE("high temperature is near uniform") {
        Rng rng(1);
        Tensor noise({1, 6}, gumbel_noise(6, rng));
        Tensor y = gumbel_softmax_relaxed(t.constant(random_tensor({1, 6}, 2, -3, 0)), noise, 1e6).value();
        for (double v : y.values()) CHECK(v == doctest::Approx(1.0 / 6).epsilon(1e-4));
    }
    SUBCASE("low temperature agrees with the hard sample") {
        for (std::uint64_t seed = 0; seed < 50; ++seed) {
            Rng rng(seed);
            const auto logp = log_softmax({0.1, -0.4, 0.9, 0.0, -1.2, 0.5});
            const auto g = gumbel_noise(6, rng);
            Tensor y = gumbel_softmax_relaxed(t.constant(Tensor({1, 6}, logp)), Tensor({1, 6}, g), 0.01).value();
            const std::size_t hard = gumbel_argmax(logp, g);
            std::size_t best = 0;
            for (std::size_t i = 1; i < 6; ++i)
                if (y[i] > y[best]) best = i;
            CHECK(best == hard);
            // Perturbed logits closer than 0.07 cannot saturate at tau = 0.01.
            std::vector<double> s;
            for (std::size_t i = 0; i < 6; ++i) s.push_back(logp[i] + g[i]);
            std::sort(s.rbegin(), s.rend());
            if (s[0] - s[1] > 0.07) CHECK(y[best] > 0.999);
        }
    }
    SUBCASE("rows sum to one across temperatures") {
        Rng rng(3);
        Tensor noise({4, 6}, gumbel_noise(24, rng));
        for (double tau : {0.01, 0.1, 0.5, 1.0, 5.0, 20.0, 100.0}) {
            Tensor y = gumbel_softmax_relaxed(t.constant(random_tensor({4, 6}, 4, -5, 5)), noise, tau).value();
            for (std::size_t r = 0; r < 4; ++r) {
                double s = 0.0;
                for (std::size_t i = 0; i < 6; ++i) {
                    CHECK(y.at(r, i) >= 0.0);
                    s += y.at(r, i);
                }
                CHECK(std::abs(s - 1.0) <= 1e-12);
            }
        }
    }
    SUBCASE("temperature must be positive") {
        CHECK_THROWS_AS(gumbel_softmax_relaxed(t.constant(Tensor({1, 6})), Tensor({1, 6}), 0.0), ConfigError);
        CHECK_THROWS_AS(gumbel_softmax_relaxed(t.constant(Tensor({1, 6})), Tensor({1, 6}), -1.0), ConfigError);
    }
    SUBCASE("gradient") {
        for (std::uint64_t seed = 0; seed < 5; ++seed) {
            Rng rng(seed);
            Tensor noise({3, 6}, gumbel_noise(18, rng));
            Tensor w = random_tensor({3, 6}, seed + 1);
            for (double tau : {0.5, 1.0, 5.0}) {
                auto fn = [&](Tape& tp, Var x) {
                    return sum(mul(gumbel_softmax_relaxed(log_softmax_rows(x), noise, tau), tp.constant(w)));
                };
                CHECK(finite_diff_check(fn, random_tensor({3, 6}, seed + 2)).passed);
            }
        }
    }
}

TEST_CASE("straight-through sampling") {
    for (std::uint64_t seed = 0; seed < 5; ++seed) {
        Tensor logits = random_tensor({8, 6}, seed, -2, 2);
        Tensor w = random_tensor({8, 6}, seed + 1);
        Tape t;
        Var x = t.leaf(logits);
        Rng rng(seed);
        StraightThroughSample st = straight_through_sample(x, 1.5, rng);
        for (std::size_t r = 0; r < 8; ++r) {
            std::size_t ones = 0, best = 0;
            for (std::size_t i = 0; i < 6; ++i) {
                const double v = st.hard.value().at(r, i);
                CHECK((v == 0.0 || v == 1.0));
                ones += v == 1.0;
                if (st.soft.value().at(r, i) > st.soft.value().at(r, best)) best = i;
            }
            CHECK(ones == 1);
            CHECK(st.hard.value().at(r, st.actions[r]) == 1.0);
            CHECK(best == st.actions[r]);
        }
        // Backward through the hard output equals backward through the soft path.
        t.backward(sum(mul(st.hard, t.constant(w))));
        Tensor via_hard = t.grad_or_zero(x);
        Tape u;
        Var x2 = u.leaf(logits);
        Var soft = gumbel_softmax_relaxed(log_softmax_rows(x2), st.noise, 1.5);
        u.backward(sum(mul(soft, u.constant(w))));
        CHECK(via_hard.identical(u.grad_or_zero(x2)));
        // ... and the soft path agrees with finite differences.
        auto fn = [&](Tape& tp, Var v) {
            return sum(mul(gumbel_softmax_relaxed(log_softmax_rows(v), st.noise, 1.5), tp.constant(w)));
        };
        CHECK(finite_diff_check(fn, logits).passed);
    }
    SUBCASE("same seed, same draws") {
        Tensor logits = random_tensor({5, 6}, 3);
        Tape a, b;
        Rng r1(4), r2(4);
        auto s1 = straight_through_sample(a.constant(logits), 1.0, r1);
        auto s2 = straight_through_sample(b.constant(logits), 1.0, r2);
        CHECK(s1.actions == s2.actions);
        CHECK(s1.soft.value().identical(s2.soft.value()));
    }
}

TEST_CASE("policy features") {
    JointTransformSet transforms = JointTransformSet::from_groupings(default_joint_ladder());
    Rng rng(4);
    SpatialModule sm(3, SpatialPlan{4, {4, 5, 6}}, rng);
    SUBCASE("single frame is the centroid skeleton's features") {
        Tensor x = random_tensor({1, 25, 3}, 1);
        Tape t;
        Tensor f = extract_policy_features(t, t.constant(x), transforms, sm, Mode::Eval).value();
        CHECK(f.shape() == Shape{1, 6});
        Tensor centroid({1, 3});
        for (std::size_t j = 0; j < 25; ++j)
            for (std::size_t c = 0; c < 3; ++c) centroid[c] += x.at(0, j, c) / 25.0;
        Tape u;
        Tensor ref = sm.forward(u, u.constant(centroid), Mode::Eval).value();
        CHECK(max_abs_diff(f.reshaped({6}), ref) <= 1e-12);
    }
    SUBCASE("identical frames give identical rows") {
        Tensor one = random_tensor({25, 3}, 2);
        Tensor x({3, 25, 3});
        for (std::size_t i = 0; i < x.numel(); ++i) x[i] = one[i % 75];
        Tape t;
        Tensor f = extract_policy_features(t, t.constant(x), transforms, sm, Mode::Eval).value();
        CHECK(oracle::frame(f, 0).identical(oracle::frame(f, 1)));
        CHECK(oracle::frame(f, 0).identical(oracle::frame(f, 2)));
    }
    SUBCASE("frame-by-frame oracle") {
        Tensor x = random_tensor({6, 25, 3}, 3);
        Tape t;
        Tensor f = extract_policy_features(t, t.constant(x), transforms, sm, Mode::Eval).value();
        for (std::size_t s = 0; s < 6; ++s) {
            Tape u;
            Var coarse = u.constant(oracle::matmul(transforms.matrices[2].value, oracle::frame(x, s)));
            CHECK(max_abs_diff(oracle::frame(f, s), sm.forward(u, coarse, Mode::Eval).value()) <= 1e-12);
        }
    }
}
