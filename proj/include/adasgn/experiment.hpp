#pragma once

#include <filesystem>
#include <map>
#include <ostream>
#include <string>
#include <vector>

#include "adasgn/data.hpp"
#include "adasgn/train.hpp"

namespace adasgn {

/// Everything that pins the desk-scale experiment: data, widths, epochs and
/// seeds.
struct ExperimentConfig {
    SynthSpec spec;
    std::size_t train_count = 2000;
    std::size_t test_count = 500;
    ArchConfig arch = ArchConfig::desk();
    std::size_t single_epochs = 4;
    std::size_t ada_epochs = 6;
    std::uint64_t single_seed = 100;  // single (k, l) uses single_seed + 3k + l
    std::uint64_t ada_seed = 7;
    std::uint64_t rand_seed = 3;
    std::vector<double> alphas{0.0, 0.5, 4.0, 20.0};
    double rand_alpha = 4.0;  // the trained model the random policy runs on
    double ablation_alpha = 4.0;
};

struct DataSplits {
    Dataset train, test;
};

// Train and test come from independent streams of the same spec.
DataSplits make_splits(const ExperimentConfig& cfg);
// <dir>/train and <dir>/test, each a dataset directory.
void write_splits(const DataSplits& data, const std::filesystem::path& dir);
DataSplits read_splits(const std::filesystem::path& dir);

using SingleCheckpoints = std::map<std::pair<std::size_t, std::size_t>, Checkpoint>;

struct SingleRun {
    std::size_t model = 0, level = 0, joints = 0;
    TrainConfig config;
    TrainReport report;
    EvalResult eval;  // test split
    double global_accuracy = 0.0;  // percent, labels whose motion the centroid shows
    double detail_accuracy = 0.0;
    Checkpoint checkpoint;
};

TrainConfig single_config(const ExperimentConfig& cfg, std::size_t model, std::size_t level);
SingleRun run_single(const ExperimentConfig& cfg, const DataSplits& data, std::size_t model, std::size_t level);
std::vector<SingleRun> run_single_grid(const ExperimentConfig& cfg, const DataSplits& data, std::ostream* log = nullptr);
SingleCheckpoints checkpoints_of(const std::vector<SingleRun>& runs);

// model,joints,acc,gflops
std::string grid_csv(const std::vector<SingleRun>& runs);
// model,joints,global_acc,detail_acc
std::string grid_class_csv(const std::vector<SingleRun>& runs);

struct AdaRun {
    double alpha = 0.0;
    bool pretrained = false;
    TrainConfig config;
    TrainReport report;
    EvalResult stats;  // argmax policy on the test split
    Checkpoint checkpoint;
};

TrainConfig ada_config(const ExperimentConfig& cfg, double alpha);
// Scratch training when `singles` is null.
AdaRun run_adaptive(const ExperimentConfig& cfg, const DataSplits& data, double alpha, const SingleCheckpoints* singles);

struct SweepRow {
    std::string label;  // alpha, "rand" or "fuse"
    double accuracy = 0.0;
    double mean_gflops = 0.0;
    std::vector<double> percentages;
};

struct SweepResult {
    std::vector<AdaRun> runs;  // alpha ascending
    std::vector<SweepRow> rows;  // one per run, then rand and fuse
    std::uint64_t fuse_measured = 0;  // counted multiply-adds over the test split
    std::uint64_t fuse_analytic = 0;  // the same from the flops table
};

// Every action's percentage is 100 for `fuse`, which runs all branches.
SweepRow fuse_row(const ExperimentConfig& cfg, const SingleCheckpoints& singles, const Dataset& test,
                  std::uint64_t* measured = nullptr, std::uint64_t* analytic = nullptr);
SweepResult run_sweep(const ExperimentConfig& cfg, const DataSplits& data, const SingleCheckpoints& singles,
                      std::ostream* log = nullptr);

// alpha,acc,mean_gflops,pct_<k>_<l>...
std::string sweep_csv(const SweepResult& sweep, const ActionSpace& space);
// init,alpha,acc,mean_gflops
std::string ablation_csv(const AdaRun& pretrained, const AdaRun& scratch);

}  // namespace adasgn
