#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "adasgn/errors.hpp"
#include "adasgn/experiment.hpp"
#include "adasgn/flops.hpp"
#include "adasgn/verify.hpp"

namespace fs = std::filesystem;
using namespace adasgn;

namespace {

constexpr int kOk = 0, kFailed = 1, kUsage = 2;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string default_data_dir() {
    const char* env = std::getenv("ADASGN_DATA");
    return env && *env ? env : "data";
}

ArchConfig arch_named(const std::string& name) {
    if (name == "desk") return ArchConfig::desk();
    if (name == "standard") return ArchConfig::standard();
    throw UsageError("unknown arch '" + name + "' (desk or standard)");
}

void write_text(const fs::path& path, const std::string& text) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw UsageError("cannot write " + path.string());
    out << text;
}

DataSplits load_data(const fs::path& dir) {
    if (!fs::exists(dir / "train" / "index.csv") || !fs::exists(dir / "test" / "index.csv"))
        throw UsageError("no dataset at " + dir.string() + " (run gen first)");
    return read_splits(dir);
}

SingleCheckpoints load_singles(const fs::path& dir, const ArchConfig& arch) {
    SingleCheckpoints out;
    for (std::size_t k = 0; k < arch.model_sizes(); ++k)
        for (std::size_t l = 0; l < default_joint_ladder().size(); ++l) {
            const fs::path p = dir / single_checkpoint_name(k, l);
            if (!fs::exists(p)) throw UsageError("missing pretrained checkpoint " + p.string());
            out.emplace(std::pair{k, l}, load_checkpoint(p));
        }
    return out;
}

std::vector<double> parse_alphas(const std::string& list) {
    std::vector<double> out;
    std::size_t begin = 0;
    while (begin < list.size()) {
        const std::size_t end = std::min(list.find(',', begin), list.size());
        const std::string item = list.substr(begin, end - begin);
        double v = 0.0;
        const auto [p, ec] = std::from_chars(item.data(), item.data() + item.size(), v);
        if (item.empty() || ec != std::errc() || p != item.data() + item.size() || !(v >= 0.0))
            throw UsageError("bad alpha '" + item + "' in --alphas");
        out.push_back(v);
        begin = end + 1;
    }
    if (out.empty()) throw UsageError("--alphas is empty");
    return out;
}

std::string percentages(const EvalResult& e) {
    std::string s;
    for (double p : e.action_percentages) s += (s.empty() ? "" : " ") + format_real(p);
    return s;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Adaptive skeleton graph network: data, training, sweeps and verification"};
    app.require_subcommand(1);

    std::string data_dir = default_data_dir();
    std::string arch_name = "desk";

    // gen
    auto* gen = app.add_subcommand("gen", "Generate the synthetic train and test splits");
    ExperimentConfig gen_cfg;
    std::size_t per_class = 250;
    gen->add_option("--classes", gen_cfg.spec.classes, "Class count")->check(CLI::PositiveNumber);
    gen->add_option("--per-class", per_class, "Training samples per class")->check(CLI::PositiveNumber);
    gen->add_option("--test-count", gen_cfg.test_count, "Test samples, round-robin labels")->check(CLI::PositiveNumber);
    gen->add_option("--frames", gen_cfg.spec.frames, "Frames per sequence")->check(CLI::PositiveNumber);
    gen->add_option("--noise", gen_cfg.spec.noise, "Coordinate noise sigma")->check(CLI::NonNegativeNumber);
    gen->add_option("--variability", gen_cfg.spec.variability, "Per-sample nuisance scale")->check(CLI::NonNegativeNumber);
    gen->add_option("--seed", gen_cfg.spec.seed, "Generation seed");
    gen->add_option("--out", data_dir, "Output directory (default $ADASGN_DATA or ./data)");

    // pretrain
    auto* pre = app.add_subcommand("pretrain", "Train single models with a fixed SM size and joint count");
    ExperimentConfig pre_cfg;
    bool grid = false;
    std::size_t pre_model = 0, pre_level = 0;
    std::string pre_out = "runs/singles", pre_summary;
    pre->add_flag("--grid", grid, "Train every (model size, joint count) pair");
    auto* pre_model_opt = pre->add_option("--model", pre_model, "SM size index, 0 is the largest");
    auto* pre_level_opt = pre->add_option("--level", pre_level, "Joint level, 0 is the full skeleton");
    pre->add_option("--data", data_dir, "Dataset directory");
    pre->add_option("--out", pre_out, "Checkpoint directory");
    pre->add_option("--summary", pre_summary, "Summary CSV (default <out>/grid.csv)");
    pre->add_option("--epochs", pre_cfg.single_epochs, "Training epochs")->check(CLI::PositiveNumber);
    pre->add_option("--seed", pre_cfg.single_seed, "Base seed; model (k, l) uses seed + 3k + l");
    pre->add_option("--arch", arch_name, "Width preset: desk or standard");

    // train-ada
    auto* ada = app.add_subcommand("train-ada", "Train the adaptive model at one alpha");
    ExperimentConfig ada_cfg;
    double alpha = 0.0;
    std::string pretrained, ada_out = "runs/adaptive";
    ada->add_option("--alpha", alpha, "Efficiency loss weight")->required()->check(CLI::NonNegativeNumber);
    ada->add_option("--pretrained", pretrained, "Directory of pretrained single checkpoints");
    ada->add_option("--seed", ada_cfg.ada_seed, "Training seed");
    ada->add_option("--epochs", ada_cfg.ada_epochs, "Training epochs")->check(CLI::PositiveNumber);
    ada->add_option("--data", data_dir, "Dataset directory");
    ada->add_option("--out", ada_out, "Output directory");
    ada->add_option("--arch", arch_name, "Width preset: desk or standard");

    // sweep
    auto* sweep = app.add_subcommand("sweep", "Train one adaptive model per alpha plus rand and fuse controls");
    ExperimentConfig sweep_cfg;
    std::string alpha_list;
    std::string sweep_pretrained, sweep_out = "runs/sweep.csv";
    sweep->add_option("--alphas", alpha_list, "Comma-separated alpha list, e.g. 0,0.5,4,20")->required();
    sweep->add_option("--pretrained", sweep_pretrained, "Directory of pretrained single checkpoints")->required();
    sweep->add_option("--seed", sweep_cfg.ada_seed, "Training seed");
    sweep->add_option("--epochs", sweep_cfg.ada_epochs, "Training epochs per alpha")->check(CLI::PositiveNumber);
    sweep->add_option("--rand-alpha", sweep_cfg.rand_alpha, "Alpha whose model the random policy runs on");
    sweep->add_option("--rand-seed", sweep_cfg.rand_seed, "Random policy seed");
    sweep->add_option("--data", data_dir, "Dataset directory");
    sweep->add_option("--out", sweep_out, "Sweep CSV path");
    sweep->add_option("--arch", arch_name, "Width preset: desk or standard");

    // flops-table
    auto* flops = app.add_subcommand("flops-table", "Print per-frame multiply-adds for every action");
    std::string flops_out;
    flops->add_option("--arch", arch_name, "Width preset: desk or standard");
    flops->add_option("--out", flops_out, "CSV path (default stdout)");

    // verify
    auto* verify = app.add_subcommand("verify", "Run the invariant suite");
    VerifyOptions vopts;
    verify->add_flag("--corrupt-flops", vopts.corrupt_flops, "Corrupt one flops table entry before checking");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kUsage;
    }

    try {
        if (*gen) {
            gen_cfg.train_count = gen_cfg.spec.classes * per_class;
            const DataSplits d = make_splits(gen_cfg);
            write_splits(d, data_dir);
            std::cout << "wrote " << d.train.size() << " train and " << d.test.size() << " test samples ("
                      << gen_cfg.spec.classes << " classes, " << gen_cfg.spec.frames << " frames) to " << data_dir
                      << "\n";
            return kOk;
        }
        if (*pre) {
            pre_cfg.arch = arch_named(arch_name);
            const bool pair = pre_model_opt->count() > 0 || pre_level_opt->count() > 0;
            if (grid == pair) throw UsageError("pretrain needs either --grid or --model/--level");
            const DataSplits d = load_data(data_dir);
            std::vector<SingleRun> runs;
            if (grid) {
                runs = run_single_grid(pre_cfg, d, &std::cout);
            } else {
                if (pre_model >= pre_cfg.arch.model_sizes() || pre_level >= default_joint_ladder().size())
                    throw UsageError("--model/--level out of range");
                runs.push_back(run_single(pre_cfg, d, pre_model, pre_level));
            }
            for (const auto& r : runs) {
                const fs::path ck = fs::path(pre_out) / single_checkpoint_name(r.model, r.level);
                fs::create_directories(pre_out);
                save_checkpoint(r.checkpoint, ck);
                write_text(fs::path(ck).replace_extension(".manifest"),
                           format_manifest({{"kind", "single"},
                                            {"model", std::to_string(r.model)},
                                            {"joints", std::to_string(r.joints)},
                                            {"data", data_dir},
                                            {"test_acc", format_real(r.eval.accuracy)},
                                            {"gflops_per_frame", format_real(r.eval.mean_gflops())}},
                                           r.config, r.report));
            }
            const fs::path summary = pre_summary.empty() ? fs::path(pre_out) / "grid.csv" : fs::path(pre_summary);
            write_text(summary, grid_csv(runs));
            write_text(fs::path(summary).replace_filename(summary.stem().string() + "_classes.csv"),
                       grid_class_csv(runs));
            std::cout << grid_csv(runs);
            return kOk;
        }
        if (*ada) {
            ada_cfg.arch = arch_named(arch_name);
            const DataSplits d = load_data(data_dir);
            SingleCheckpoints singles;
            if (!pretrained.empty()) singles = load_singles(pretrained, ada_cfg.arch);
            const AdaRun r = run_adaptive(ada_cfg, d, alpha, pretrained.empty() ? nullptr : &singles);
            const std::string stem = "ada_alpha" + format_real(alpha) + "_seed" + std::to_string(ada_cfg.ada_seed);
            fs::create_directories(ada_out);
            save_checkpoint(r.checkpoint, fs::path(ada_out) / (stem + ".ckpt"));
            write_text(fs::path(ada_out) / (stem + ".manifest"),
                       format_manifest({{"kind", "adaptive"},
                                        {"pretrained", pretrained.empty() ? "none" : pretrained},
                                        {"data", data_dir},
                                        {"test_acc", format_real(r.stats.accuracy)},
                                        {"gflops_per_frame", format_real(r.stats.mean_gflops())},
                                        {"action_pct", percentages(r.stats)}},
                                       r.config, r.report));
            std::cout << "alpha=" << format_real(alpha) << " acc=" << format_real(r.stats.accuracy)
                      << " gflops=" << format_real(r.stats.mean_gflops()) << " pct=" << percentages(r.stats) << "\n";
            return kOk;
        }
        if (*sweep) {
            const std::vector<double> alphas = parse_alphas(alpha_list);
            sweep_cfg.arch = arch_named(arch_name);
            sweep_cfg.alphas = alphas;
            const DataSplits d = load_data(data_dir);
            const SingleCheckpoints singles = load_singles(sweep_pretrained, sweep_cfg.arch);
            const SweepResult s = run_sweep(sweep_cfg, d, singles, &std::cout);
            const ActionSpace space{sweep_cfg.arch.model_sizes(), default_joint_ladder().size()};
            write_text(sweep_out, sweep_csv(s, space));
            for (const auto& r : s.runs) {
                const fs::path m = fs::path(sweep_out).replace_filename(
                    fs::path(sweep_out).stem().string() + "_alpha" + format_real(r.alpha) + ".manifest");
                write_text(m, format_manifest({{"kind", "adaptive"},
                                               {"pretrained", sweep_pretrained},
                                               {"data", data_dir},
                                               {"test_acc", format_real(r.stats.accuracy)},
                                               {"gflops_per_frame", format_real(r.stats.mean_gflops())},
                                               {"action_pct", percentages(r.stats)}},
                                              r.config, r.report));
            }
            std::cout << sweep_csv(s, space);
            return kOk;
        }
        if (*flops) {
            const ArchConfig arch = arch_named(arch_name);
            const auto counts = JointTransformSet::from_groupings(default_joint_ladder()).joint_counts();
            const std::string csv = flops_table_csv(build_flops_table(arch, counts));
            if (flops_out.empty())
                std::cout << csv;
            else
                write_text(flops_out, csv);
            return kOk;
        }
        if (*verify) {
            const auto results = verify_all(vopts);
            std::cout << format_verify_report(results);
            const bool ok = all_passed(results);
            std::cout << (ok ? "verify: all properties hold\n" : "verify: FAILED\n");
            return ok ? kOk : kFailed;
        }
    } catch (const UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kUsage;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kFailed;
    }
    return kUsage;
}
