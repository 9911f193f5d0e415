#include "adasgn/train.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "adasgn/errors.hpp"

namespace adasgn {

Var accuracy_loss(Var logits, std::span<const std::size_t> labels) { return cross_entropy_mean(logits, labels); }

Var efficiency_loss(Var gate, std::span<const double> costs) {
    const Shape& s = gate.shape();
    if (s.size() != 2 || s[1] != costs.size())
        throw DimensionError("efficiency_loss: gate " + shape_string(s) + " vs " + std::to_string(costs.size()) +
                             " action costs");
    Tensor c({s[1]}, std::vector<double>(costs.begin(), costs.end()));
    Tape& t = *gate.tape();
    return scale(sum(mul(gate, reshape(add_broadcast(t.constant(Tensor(s)), t.constant(c)), s))),
                 1.0 / static_cast<double>(s[0]));
}

Var total_loss(Var acc, Var eff, double alpha) {
    if (alpha < 0.0) throw ConfigError("alpha must be non-negative");
    if (alpha == 0.0) return acc;
    return add(acc, scale(eff, alpha));
}

std::vector<double> action_costs(const FlopsTable& table, double reference) {
    std::vector<double> out;
    const double top = static_cast<double>(table.entry(0));
    for (std::size_t a = 0; a < table.space.size(); ++a) {
        const double e = static_cast<double>(table.entry(a));
        out.push_back(reference > 0.0 ? reference * e / top : to_gflops(e));
    }
    return out;
}

void Adam::step(std::span<Parameter* const> params) {
    ++steps_;
    const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (Parameter* p : params) {
        if (!p->trainable || p->grad.shape() != p->value.shape()) continue;
        Moments& s = state_[p];
        if (s.m.shape() != p->value.shape()) {
            s.m = Tensor(p->value.shape());
            s.v = Tensor(p->value.shape());
        }
        for (std::size_t i = 0; i < p->value.numel(); ++i) {
            const double g = p->grad[i];
            s.m[i] = beta1_ * s.m[i] + (1.0 - beta1_) * g;
            s.v[i] = beta2_ * s.v[i] + (1.0 - beta2_) * g * g;
            p->value[i] -= lr_ * (s.m[i] / c1) / (std::sqrt(s.v[i] / c2) + eps_);
        }
    }
}

double alpha_at(std::size_t epoch, const TrainConfig& cfg) {
    if (cfg.alpha_warmup_epochs == 0) return cfg.alpha_target;
    return cfg.alpha_target *
           std::min(1.0, static_cast<double>(epoch) / static_cast<double>(cfg.alpha_warmup_epochs));
}

namespace {

std::vector<Parameter*> collect(const std::function<void(const ParamVisitor&)>& visit) {
    std::vector<Parameter*> out;
    visit([&](const std::string&, Parameter& p) { out.push_back(&p); });
    return out;
}

void zero_grads(std::span<Parameter* const> params) {
    for (Parameter* p : params)
        if (p->trainable) p->zero_grad();
}

std::vector<std::size_t> shuffled(std::size_t n, Rng& rng) {
    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    return order;
}

std::size_t correct_predictions(const Tensor& logits, std::span<const std::size_t> labels) {
    const std::size_t n = logits.shape().back();
    std::size_t hits = 0;
    for (std::size_t b = 0; b < labels.size(); ++b)
        hits += argmax(std::span(logits.data() + b * n, n)) == labels[b];
    return hits;
}

void check_dataset(const Dataset& data) {
    if (data.empty()) throw ContractError("training needs a nonempty dataset");
}

// Drives epochs and minibatches; `step` runs one batch and returns
// (loss, accuracy loss, efficiency loss, correct predictions).
template <class Step>
TrainReport run_epochs(const Dataset& train, const TrainConfig& cfg, JointTransformSet& transforms,
                       std::span<Parameter* const> params, Step&& step) {
    check_dataset(train);
    if (cfg.batch == 0) throw ConfigError("batch size must be positive");
    transforms.freeze_epochs = cfg.freeze_epochs;
    Rng shuffle_rng = Rng::derive(cfg.seed, 5);
    Adam adam(cfg.lr);
    TrainReport report;
    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        apply_freeze_gate(epoch, transforms);
        EpochLog log;
        log.epoch = epoch;
        log.tau = tau_at(epoch, cfg.tau);
        log.alpha = alpha_at(epoch, cfg);
        log.transforms_open = freeze_gate(epoch, transforms);
        const auto order = shuffled(train.size(), shuffle_rng);
        std::size_t hits = 0, batches = 0;
        for (std::size_t start = 0; start < order.size(); start += cfg.batch) {
            const std::size_t end = std::min(order.size(), start + cfg.batch);
            std::span<const std::size_t> idx(order.data() + start, end - start);
            std::vector<std::size_t> labels;
            for (std::size_t i : idx) labels.push_back(train[i].label);
            zero_grads(params);
            auto [loss, acc, eff, correct] = step(idx, labels, log);
            adam.step(params);
            log.loss += loss;
            log.accuracy_loss += acc;
            log.efficiency_loss += eff;
            hits += correct;
            ++batches;
        }
        log.loss /= static_cast<double>(batches);
        log.accuracy_loss /= static_cast<double>(batches);
        log.efficiency_loss /= static_cast<double>(batches);
        log.train_accuracy = 100.0 * static_cast<double>(hits) / static_cast<double>(train.size());
        report.epochs.push_back(log);
    }
    apply_freeze_gate(cfg.epochs, transforms);
    return report;
}

}  // namespace

TrainReport train_single(SingleModel& model, const Dataset& train, const TrainConfig& cfg) {
    auto params = collect([&](const ParamVisitor& fn) { model.visit(fn); });
    return run_epochs(train, cfg, model.transforms, params,
                      [&](std::span<const std::size_t> idx, std::span<const std::size_t> labels, const EpochLog&) {
                          Tape t;
                          Var frames = t.constant(stack_frames(train, idx));
                          Var logits = model.logits(t, frames, idx.size(), Mode::Train);
                          Var loss = accuracy_loss(logits, labels);
                          t.backward(loss);
                          const double l = loss.value().item();
                          return std::tuple{l, l, 0.0, correct_predictions(logits.value(), labels)};
                      });
}

TrainReport train_adaptive(AdaModel& model, const Dataset& train, const TrainConfig& cfg) {
    auto params = collect([&](const ParamVisitor& fn) { model.visit(fn); });
    if (cfg.freeze_spatial)
        for (auto& sm : model.spatial) sm.visit("", [](const std::string&, Parameter& p) { p.trainable = false; });
    const auto costs = action_costs(model.table, cfg.cost_reference);
    Rng gumbel_rng = Rng::derive(cfg.seed, 7);
    return run_epochs(
        train, cfg, model.transforms, params,
        [&](std::span<const std::size_t> idx, std::span<const std::size_t> labels, const EpochLog& log) {
            Tape t;
            Var frames = t.constant(stack_frames(train, idx));
            AdaptiveOptions o;
            o.mode = Mode::Train;
            o.policy = PolicyMode::Sample;
            o.tau = log.tau;
            o.rng = &gumbel_rng;
            o.mix_branches = cfg.mix_branches;
            AdaptiveResult r = forward_adaptive(t, model, frames, idx.size(), o);
            Var acc = accuracy_loss(r.logits, labels);
            Var eff = efficiency_loss(r.gate, costs);
            Var loss = total_loss(acc, eff, log.alpha);
            t.backward(loss);
            return std::tuple{loss.value().item(), acc.value().item(), eff.value().item(),
                              correct_predictions(r.logits.value(), labels)};
        });
}

Checkpoint pretrain_single(const TrainConfig& cfg, SingleModel& model, const Dataset& train) {
    train_single(model, train, cfg);
    return capture(model);
}

double EvalResult::mean_gflops() const {
    return frames ? to_gflops(static_cast<double>(multiply_adds) / static_cast<double>(frames)) : 0.0;
}

namespace {

template <class Forward>
EvalResult evaluate(const Dataset& data, std::size_t batch, Forward&& forward) {
    check_dataset(data);
    EvalResult out;
    std::size_t hits = 0;
    for (std::size_t start = 0; start < data.size(); start += batch) {
        const std::size_t end = std::min(data.size(), start + batch);
        std::vector<std::size_t> idx;
        std::vector<std::size_t> labels;
        for (std::size_t i = start; i < end; ++i) {
            idx.push_back(i);
            labels.push_back(data[i].label);
        }
        Tape t;
        t.set_grad_enabled(false);
        Var frames = t.constant(stack_frames(data, idx));
        out.frames += frames.shape()[0];
        Tensor logits = forward(t, frames, idx.size(), out);
        hits += correct_predictions(logits, labels);
        Tensor scores = class_scores(logits);
        const std::size_t n = scores.shape().back();
        for (std::size_t b = 0; b < idx.size(); ++b)
            out.scores.emplace_back(Shape{n}, std::vector<double>(scores.data() + b * n, scores.data() + (b + 1) * n));
    }
    out.accuracy = 100.0 * static_cast<double>(hits) / static_cast<double>(data.size());
    return out;
}

void tally_actions(EvalResult& r, std::size_t actions) {
    r.action_percentages.assign(actions, 0.0);
    for (std::size_t a : r.actions) r.action_percentages[a] += 1.0;
    for (double& p : r.action_percentages) p = 100.0 * p / static_cast<double>(r.actions.size());
}

}  // namespace

EvalResult evaluate_single(SingleModel& model, const Dataset& data, std::size_t batch) {
    return evaluate(data, batch, [&](Tape& t, Var frames, std::size_t b, EvalResult& out) {
        OpCounter counter;
        CountingScope scope(counter);
        Tensor logits = model.logits(t, frames, b, Mode::Eval).value();
        out.multiply_adds += counter.multiply_adds;
        return logits;
    });
}

EvalResult collect_action_stats(AdaModel& model, const Dataset& data, AdaptiveOptions options, std::size_t batch) {
    options.mode = Mode::Eval;
    EvalResult r = evaluate(data, batch, [&](Tape& t, Var frames, std::size_t b, EvalResult& out) {
        AdaptiveResult res = forward_adaptive(t, model, frames, b, options);
        out.multiply_adds += res.measured_multiply_adds;
        out.actions.insert(out.actions.end(), res.actions.begin(), res.actions.end());
        return res.logits.value();
    });
    tally_actions(r, model.space.size());
    return r;
}

EvalResult random_policy_eval(AdaModel& model, const Dataset& data, Rng& rng, std::size_t batch) {
    AdaptiveOptions o;
    o.policy = PolicyMode::Uniform;
    o.rng = &rng;
    return collect_action_stats(model, data, o, batch);
}

double fused_accuracy(std::span<const EvalResult> runs, const Dataset& data) {
    if (runs.empty()) throw ContractError("fused_accuracy: no runs");
    std::size_t hits = 0;
    for (std::size_t i = 0; i < data.size(); ++i) {
        std::vector<Tensor> s;
        for (const auto& r : runs) s.push_back(r.scores.at(i));
        Tensor f = fuse_scores(s);
        hits += argmax(f.values()) == data[i].label;
    }
    return 100.0 * static_cast<double>(hits) / static_cast<double>(data.size());
}

std::string format_manifest(const std::vector<std::pair<std::string, std::string>>& header, const TrainConfig& cfg,
                            const TrainReport& report) {
    std::ostringstream out;
    for (const auto& [k, v] : header) out << k << '=' << v << '\n';
    out << "epochs=" << cfg.epochs << '\n'
        << "batch=" << cfg.batch << '\n'
        << "lr=" << format_real(cfg.lr) << '\n'
        << "optimizer=adam beta1=0.9 beta2=0.999 eps=1e-08 weight_decay=0\n"
        << "seed=" << cfg.seed << '\n'
        << "freeze_epochs=" << cfg.freeze_epochs << '\n'
        << "tau_init=" << format_real(cfg.tau.tau_init) << " tau_decay=" << format_real(cfg.tau.decay_rate)
        << " tau_min=" << format_real(cfg.tau.tau_min)
        << " tau_kind=" << (cfg.tau.kind == TemperatureSchedule::Kind::Exponential ? "exponential" : "subtractive")
        << '\n'
        << "alpha_target=" << format_real(cfg.alpha_target) << " alpha_warmup_epochs=" << cfg.alpha_warmup_epochs
        << '\n'
        << "cost_reference=" << format_real(cfg.cost_reference) << '\n'
        << "freeze_spatial=" << cfg.freeze_spatial << " mix_branches=" << cfg.mix_branches << '\n';
    for (const auto& e : report.epochs)
        out << "epoch=" << e.epoch << " tau=" << format_real(e.tau) << " alpha=" << format_real(e.alpha)
            << " transforms_open=" << e.transforms_open << " loss=" << format_real(e.loss)
            << " acc_loss=" << format_real(e.accuracy_loss) << " eff_loss=" << format_real(e.efficiency_loss)
            << " train_acc=" << format_real(e.train_accuracy) << '\n';
    return out.str();
}

}  // namespace adasgn
