#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "adasgn/model.hpp"

namespace adasgn {

// Mean cross-entropy of logits [B, classes].
Var accuracy_loss(Var logits, std::span<const std::size_t> labels);
// Mean over rows of sum_a gate[r, a] * cost[a]. With a straight-through gate
// the value is the chosen actions' mean cost and the gradient is that of the
// expected cost under the relaxation.
Var efficiency_loss(Var gate, std::span<const double> action_costs);
// acc + alpha * eff; alpha == 0 returns acc itself.
Var total_loss(Var acc, Var eff, double alpha);

// Per-action costs for the efficiency loss. reference <= 0 gives GFLOPs per
// frame; otherwise costs are rescaled so the dearest action costs `reference`.
std::vector<double> action_costs(const FlopsTable& table, double reference);

class Adam {
public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // Updates every trainable parameter from its accumulated gradient.
    void step(std::span<Parameter* const> params);
    std::size_t steps() const { return steps_; }

private:
    struct Moments {
        Tensor m, v;
    };
    double lr_, beta1_, beta2_, eps_;
    std::size_t steps_ = 0;
    std::unordered_map<const Parameter*, Moments> state_;
};

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch = 16;
    double lr = 1e-3;
    std::uint64_t seed = 0;
    std::size_t freeze_epochs = 3;
    TemperatureSchedule tau;
    double alpha_target = 0.0;
    std::size_t alpha_warmup_epochs = 5;
    double cost_reference = 0.16;
    bool freeze_spatial = false;
    bool mix_branches = false;
};

// alpha_target * min(1, epoch / warmup).
double alpha_at(std::size_t epoch, const TrainConfig& cfg);

struct EpochLog {
    std::size_t epoch = 0;
    double tau = 0.0;
    double alpha = 0.0;
    bool transforms_open = false;
    double loss = 0.0;
    double accuracy_loss = 0.0;
    double efficiency_loss = 0.0;
    double train_accuracy = 0.0;
};

struct TrainReport {
    std::vector<EpochLog> epochs;
};

TrainReport train_single(SingleModel& model, const Dataset& train, const TrainConfig& cfg);
TrainReport train_adaptive(AdaModel& model, const Dataset& train, const TrainConfig& cfg);

// Trains a fresh copy and returns its checkpoint.
Checkpoint pretrain_single(const TrainConfig& cfg, SingleModel& model, const Dataset& train);

struct EvalResult {
    double accuracy = 0.0;                     // percent
    std::vector<Tensor> scores;                // per sample
    std::uint64_t multiply_adds = 0;           // measured over the dataset
    std::size_t frames = 0;
    std::vector<double> action_percentages;    // adaptive only
    std::vector<std::size_t> actions;          // adaptive only, per frame

    double mean_gflops() const;                // per frame, every stage included
};

EvalResult evaluate_single(SingleModel& model, const Dataset& data, std::size_t batch = 50);

// Deterministic argmax evaluation unless `options` says otherwise.
EvalResult collect_action_stats(AdaModel& model, const Dataset& data, AdaptiveOptions options = {},
                                std::size_t batch = 50);
EvalResult random_policy_eval(AdaModel& model, const Dataset& data, Rng& rng, std::size_t batch = 50);

// Accuracy of the averaged scores of several evaluations of one dataset.
double fused_accuracy(std::span<const EvalResult> runs, const Dataset& data);

std::string format_manifest(const std::vector<std::pair<std::string, std::string>>& header, const TrainConfig& cfg,
                            const TrainReport& report);

}  // namespace adasgn
