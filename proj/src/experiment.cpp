#include "adasgn/experiment.hpp"

#include <algorithm>

#include "adasgn/errors.hpp"
#include "adasgn/flops.hpp"

namespace adasgn {

DataSplits make_splits(const ExperimentConfig& cfg) {
    return {synth_generate_count(cfg.spec, cfg.train_count, 0), synth_generate_count(cfg.spec, cfg.test_count, 1)};
}

void write_splits(const DataSplits& data, const std::filesystem::path& dir) {
    write_dataset(data.train, dir / "train");
    write_dataset(data.test, dir / "test");
}

DataSplits read_splits(const std::filesystem::path& dir) { return {read_dataset(dir / "train"), read_dataset(dir / "test")}; }

TrainConfig single_config(const ExperimentConfig& cfg, std::size_t model, std::size_t level) {
    TrainConfig c;
    c.epochs = cfg.single_epochs;
    c.seed = cfg.single_seed + 3 * model + level;
    return c;
}

SingleRun run_single(const ExperimentConfig& cfg, const DataSplits& data, std::size_t model, std::size_t level) {
    SingleRun r;
    r.model = model;
    r.level = level;
    r.config = single_config(cfg, model, level);
    SingleModel m(cfg.arch, default_joint_ladder(), model, level, r.config.seed, r.config.freeze_epochs);
    r.joints = m.transforms.joints(level);
    r.report = train_single(m, data.train, r.config);
    r.eval = evaluate_single(m, data.test);
    std::size_t g = 0, gh = 0, d = 0, dh = 0;
    for (std::size_t i = 0; i < data.test.size(); ++i) {
        const bool hit = argmax(r.eval.scores[i].values()) == data.test[i].label;
        if (is_global_motion_class(data.test[i].label)) {
            ++g;
            gh += hit;
        } else {
            ++d;
            dh += hit;
        }
    }
    r.global_accuracy = g ? 100.0 * static_cast<double>(gh) / static_cast<double>(g) : 0.0;
    r.detail_accuracy = d ? 100.0 * static_cast<double>(dh) / static_cast<double>(d) : 0.0;
    r.checkpoint = capture(m);
    return r;
}

std::vector<SingleRun> run_single_grid(const ExperimentConfig& cfg, const DataSplits& data, std::ostream* log) {
    std::vector<SingleRun> out;
    for (std::size_t k = 0; k < cfg.arch.spatial.size(); ++k)
        for (std::size_t l = 0; l < default_joint_ladder().size(); ++l) {
            out.push_back(run_single(cfg, data, k, l));
            if (log)
                *log << "single model=" << k << " joints=" << out.back().joints
                     << " acc=" << format_real(out.back().eval.accuracy) << std::endl;
        }
    return out;
}

SingleCheckpoints checkpoints_of(const std::vector<SingleRun>& runs) {
    SingleCheckpoints out;
    for (const auto& r : runs) out.emplace(std::pair{r.model, r.level}, r.checkpoint);
    return out;
}

std::string grid_csv(const std::vector<SingleRun>& runs) {
    std::string s = "model,joints,acc,gflops\n";
    for (const auto& r : runs)
        s += std::to_string(r.model) + "," + std::to_string(r.joints) + "," + format_real(r.eval.accuracy) + "," +
             format_real(r.eval.mean_gflops()) + "\n";
    return s;
}

std::string grid_class_csv(const std::vector<SingleRun>& runs) {
    std::string s = "model,joints,global_acc,detail_acc\n";
    for (const auto& r : runs)
        s += std::to_string(r.model) + "," + std::to_string(r.joints) + "," + format_real(r.global_accuracy) + "," +
             format_real(r.detail_accuracy) + "\n";
    return s;
}

TrainConfig ada_config(const ExperimentConfig& cfg, double alpha) {
    if (!(alpha >= 0.0)) throw ConfigError("alpha must be non-negative");
    TrainConfig c;
    c.epochs = cfg.ada_epochs;
    c.seed = cfg.ada_seed;
    c.alpha_target = alpha;
    return c;
}

AdaRun run_adaptive(const ExperimentConfig& cfg, const DataSplits& data, double alpha, const SingleCheckpoints* singles) {
    AdaRun r;
    r.alpha = alpha;
    r.pretrained = singles != nullptr;
    r.config = ada_config(cfg, alpha);
    AdaModel m(cfg.arch, default_joint_ladder(), r.config.seed, r.config.freeze_epochs);
    if (singles) load_pretrained(m, *singles);
    r.report = train_adaptive(m, data.train, r.config);
    r.stats = collect_action_stats(m, data.test);
    r.checkpoint = capture(m);
    return r;
}

SweepRow fuse_row(const ExperimentConfig& cfg, const SingleCheckpoints& singles, const Dataset& test,
                  std::uint64_t* measured, std::uint64_t* analytic) {
    const auto ladder = default_joint_ladder();
    const FlopsTable table = build_flops_table(cfg.arch, JointTransformSet::from_groupings(ladder).joint_counts());
    std::vector<EvalResult> evals;
    std::uint64_t counted = 0, expected = 0;
    std::size_t frames = 0;
    for (std::size_t a = 0; a < table.space.size(); ++a) {
        const auto [k, l] = table.space.split(a);
        const auto it = singles.find({k, l});
        if (it == singles.end())
            throw CompatibilityError("fuse needs single model " + single_checkpoint_name(k, l));
        SingleModel m(cfg.arch, ladder, k, l, 0);
        restore(m, it->second);
        evals.push_back(evaluate_single(m, test));
        counted += evals.back().multiply_adds;
        frames = evals.back().frames;
        for (const auto& s : test) expected += single_sequence_cost(a, s.frames.dim(0), table);
    }
    if (measured) *measured = counted;
    if (analytic) *analytic = expected;
    SweepRow row;
    row.label = "fuse";
    row.accuracy = fused_accuracy(evals, test);
    row.mean_gflops = frames ? to_gflops(static_cast<double>(counted)) / static_cast<double>(frames) : 0.0;
    row.percentages.assign(table.space.size(), 100.0);
    return row;
}

namespace {

SweepRow row_of(std::string label, const EvalResult& e) {
    return {std::move(label), e.accuracy, e.mean_gflops(), e.action_percentages};
}

}  // namespace

SweepResult run_sweep(const ExperimentConfig& cfg, const DataSplits& data, const SingleCheckpoints& singles,
                      std::ostream* log) {
    if (cfg.alphas.empty()) throw ConfigError("sweep needs at least one alpha");
    std::vector<double> alphas = cfg.alphas;
    std::sort(alphas.begin(), alphas.end());
    alphas.erase(std::unique(alphas.begin(), alphas.end()), alphas.end());

    SweepResult out;
    const AdaRun* rand_source = nullptr;
    for (double alpha : alphas) {
        out.runs.push_back(run_adaptive(cfg, data, alpha, &singles));
        out.rows.push_back(row_of(format_real(alpha), out.runs.back().stats));
        if (log)
            *log << "adaptive alpha=" << format_real(alpha) << " acc=" << format_real(out.rows.back().accuracy)
                 << " gflops=" << format_real(out.rows.back().mean_gflops) << std::endl;
    }
    for (const auto& r : out.runs)
        if (r.alpha == cfg.rand_alpha) rand_source = &r;
    // without the configured alpha in the list, the random policy runs on the
    // run closest to it
    if (!rand_source)
        rand_source = &*std::min_element(out.runs.begin(), out.runs.end(), [&](const AdaRun& a, const AdaRun& b) {
            return std::abs(a.alpha - cfg.rand_alpha) < std::abs(b.alpha - cfg.rand_alpha);
        });
    AdaModel m(cfg.arch, default_joint_ladder(), cfg.ada_seed);
    restore(m, rand_source->checkpoint);
    Rng rng(cfg.rand_seed);
    out.rows.push_back(row_of("rand", random_policy_eval(m, data.test, rng)));
    out.rows.push_back(fuse_row(cfg, singles, data.test, &out.fuse_measured, &out.fuse_analytic));
    return out;
}

std::string sweep_csv(const SweepResult& sweep, const ActionSpace& space) {
    std::string s = "alpha,acc,mean_gflops";
    for (std::size_t a = 0; a < space.size(); ++a) {
        const auto [k, l] = space.split(a);
        s += ",pct_" + std::to_string(k) + "_" + std::to_string(l);
    }
    s += "\n";
    for (const auto& r : sweep.rows) {
        s += r.label + "," + format_real(r.accuracy) + "," + format_real(r.mean_gflops);
        for (double p : r.percentages) s += "," + format_real(p);
        s += "\n";
    }
    return s;
}

std::string ablation_csv(const AdaRun& pretrained, const AdaRun& scratch) {
    std::string s = "init,alpha,acc,mean_gflops\n";
    for (const AdaRun* r : {&pretrained, &scratch})
        s += std::string(r->pretrained ? "pretrained" : "scratch") + "," + format_real(r->alpha) + "," +
             format_real(r->stats.accuracy) + "," + format_real(r->stats.mean_gflops()) + "\n";
    return s;
}

}  // namespace adasgn
