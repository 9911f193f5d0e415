#include "adasgn/model.hpp"

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "adasgn/errors.hpp"

namespace adasgn {

Tensor stack_frames(std::span<const SkeletonSample* const> batch) {
    if (batch.empty()) throw ContractError("cannot stack an empty batch");
    const Shape& s = batch.front()->frames.shape();
    std::vector<double> values;
    values.reserve(batch.size() * batch.front()->frames.numel());
    for (const SkeletonSample* seq : batch) {
        if (seq->frames.shape() != s)
            throw DimensionError("batch mixes sequence shapes " + shape_string(s) + " and " +
                                 shape_string(seq->frames.shape()));
        values.insert(values.end(), seq->frames.values().begin(), seq->frames.values().end());
    }
    return Tensor({batch.size() * s[0], s[1], s[2]}, std::move(values));
}

Tensor stack_frames(const Dataset& data, std::span<const std::size_t> indices) {
    std::vector<const SkeletonSample*> batch;
    for (std::size_t i : indices) batch.push_back(&data.at(i));
    return stack_frames(batch);
}

namespace {

void check_frames(Var frames, std::size_t joints, std::size_t coords, std::size_t sequences) {
    const Shape& s = frames.shape();
    if (s.size() != 3 || s[1] != joints || s[2] != coords)
        throw DimensionError("expected frames [B*T x " + std::to_string(joints) + " x " + std::to_string(coords) +
                             "], got " + shape_string(s));
    if (sequences == 0 || s[0] % sequences != 0)
        throw DimensionError(std::to_string(s[0]) + " frames do not split into " + std::to_string(sequences) +
                             " sequences");
}

Var temporal_head(Tape& t, TemporalModule& tm, ClassifierHead& head, Var features, std::size_t sequences,
                  Mode mode) {
    const std::size_t rows = features.shape()[0], width = features.shape()[1];
    Var seq = reshape(features, {sequences, rows / sequences, width});
    return head.logits(t, tm.forward(t, seq, mode));
}

}  // namespace

SingleModel::SingleModel(const ArchConfig& a, std::vector<JointGrouping> ladder, std::size_t k, std::size_t l,
                         std::uint64_t seed, std::size_t freeze_epochs)
    : arch(a), model_size(k), joint_level(l) {
    arch.validate();
    transforms = JointTransformSet::from_groupings(std::move(ladder), freeze_epochs);
    if (k >= arch.model_sizes() || l >= transforms.levels())
        throw ConfigError("single model (" + std::to_string(k) + ", " + std::to_string(l) + ") outside the " +
                          std::to_string(arch.model_sizes()) + "x" + std::to_string(transforms.levels()) + " grid");
    Rng sm_rng = Rng::derive(seed, 10 + k);
    spatial = SpatialModule(arch.coords, arch.spatial[k], sm_rng);
    Rng tm_rng = Rng::derive(seed, 20);
    temporal = TemporalModule(arch.frames, arch.feature_width(), arch.temporal_hidden, arch.temporal_out,
                              arch.temporal_kernel, tm_rng);
    Rng head_rng = Rng::derive(seed, 30);
    head = ClassifierHead(arch.temporal_out, arch.classes, head_rng);
}

Var SingleModel::logits(Tape& t, Var frames, std::size_t sequences, Mode mode) {
    check_frames(frames, transforms.source_joints(), arch.coords, sequences);
    Var f = spatial.forward(t, transforms.apply(t, joint_level, frames), mode, joint_level);
    return temporal_head(t, temporal, head, f, sequences, mode);
}

void SingleModel::visit(const ParamVisitor& fn) {
    for (std::size_t l = 0; l < transforms.levels(); ++l) fn("transform." + std::to_string(l), transforms.matrices[l]);
    spatial.visit("sm" + std::to_string(model_size), fn);
    temporal.visit("tm", fn);
    head.visit("head", fn);
}

Tensor forward_single(SingleModel& model, const SkeletonSample& seq, Mode mode) {
    Tape t;
    t.set_grad_enabled(false);
    const SkeletonSample* one[] = {&seq};
    return class_scores(model.logits(t, t.constant(stack_frames(one)), 1, mode).value()).reshaped({model.arch.classes});
}

AdaModel::AdaModel(const ArchConfig& a, std::vector<JointGrouping> ladder, std::uint64_t seed,
                   std::size_t freeze_epochs)
    : arch(a) {
    arch.validate();
    transforms = JointTransformSet::from_groupings(std::move(ladder), freeze_epochs);
    space = ActionSpace{arch.model_sizes(), transforms.levels()};
    for (std::size_t k = 0; k < arch.model_sizes(); ++k) {
        Rng rng = Rng::derive(seed, 10 + k);
        spatial.emplace_back(arch.coords, arch.spatial[k], rng, transforms.levels());
    }
    Rng policy_rng = Rng::derive(seed, 40);
    policy = PolicyNet(arch.feature_width(), arch.policy_hidden, space.size(), arch.policy_kernel, policy_rng);
    Rng tm_rng = Rng::derive(seed, 20);
    temporal = TemporalModule(arch.frames, arch.feature_width(), arch.temporal_hidden, arch.temporal_out,
                              arch.temporal_kernel, tm_rng);
    Rng head_rng = Rng::derive(seed, 30);
    head = ClassifierHead(arch.temporal_out, arch.classes, head_rng);
    table = build_flops_table(arch, transforms.joint_counts());
}

void AdaModel::visit(const ParamVisitor& fn) {
    for (std::size_t l = 0; l < transforms.levels(); ++l) fn("transform." + std::to_string(l), transforms.matrices[l]);
    for (std::size_t k = 0; k < spatial.size(); ++k) spatial[k].visit("sm" + std::to_string(k), fn);
    policy.visit("policy", fn);
    temporal.visit("tm", fn);
    head.visit("head", fn);
}

namespace {

Var branch_features(Tape& t, AdaModel& m, Var frames, std::size_t action, Mode mode) {
    auto [k, l] = m.space.split(action);
    return m.spatial[k].forward(t, m.transforms.apply(t, l, frames), mode, l);
}

}  // namespace

AdaptiveResult forward_adaptive(Tape& t, AdaModel& m, Var frames, std::size_t sequences,
                                const AdaptiveOptions& o) {
    OpCounter counter;
    CountingScope scope(counter);
    check_frames(frames, m.transforms.source_joints(), m.arch.coords, sequences);
    const std::size_t rows = frames.shape()[0], width = m.arch.feature_width(), kl = m.space.size();

    AdaptiveResult r;
    r.policy_features = extract_policy_features(t, frames, m.transforms, m.spatial.back(), o.mode);
    Var pl = m.policy.logits(t, reshape(r.policy_features, {sequences, rows / sequences, width}));
    r.policy_logits = reshape(pl, {rows, kl});

    switch (o.policy) {
        case PolicyMode::Sample: {
            if (!o.rng) throw ContractError("sampling policy needs an rng");
            StraightThroughSample st = straight_through_sample(r.policy_logits, o.tau, *o.rng);
            r.actions = std::move(st.actions);
            r.gate = st.hard;
            r.soft = st.soft;
            break;
        }
        case PolicyMode::Argmax: {
            const double* lv = r.policy_logits.value().data();
            for (std::size_t i = 0; i < rows; ++i) r.actions.push_back(argmax(std::span(lv + i * kl, kl)));
            break;
        }
        case PolicyMode::Forced:
            m.space.split(o.forced_action);
            r.actions.assign(rows, o.forced_action);
            break;
        case PolicyMode::Uniform:
            if (!o.rng) throw ContractError("uniform policy needs an rng");
            for (std::size_t i = 0; i < rows; ++i) r.actions.push_back(o.rng->below(kl));
            break;
    }

    if (o.mix_branches) {
        Var weights = r.soft.valid() ? r.soft : softmax_rows(r.policy_logits);
        for (std::size_t a = 0; a < kl; ++a) {
            Var f = (a == m.space.reuse_action() && o.reuse_shortcut) ? r.policy_features
                                                                       : branch_features(t, m, frames, a, o.mode);
            const std::vector<std::size_t> column(rows, a);
            Var term = scale_rows(f, pick(weights, column));
            r.features = r.features.valid() ? add(r.features, term) : term;
        }
    } else {
        std::vector<std::vector<std::size_t>> groups(kl);
        for (std::size_t i = 0; i < rows; ++i) groups[r.actions[i]].push_back(i);
        std::vector<Var> parts;
        std::vector<std::size_t> position(rows);
        std::size_t filled = 0;
        for (std::size_t a = 0; a < kl; ++a) {
            const auto& idx = groups[a];
            if (idx.empty()) continue;
            const bool whole = idx.size() == rows;
            if (a == m.space.reuse_action() && o.reuse_shortcut) {
                parts.push_back(whole ? r.policy_features : gather_rows(r.policy_features, idx));
            } else {
                Var x = whole ? frames : gather_rows(frames, idx);
                parts.push_back(branch_features(t, m, x, a, o.mode));
            }
            for (std::size_t j = 0; j < idx.size(); ++j) position[idx[j]] = filled + j;
            filled += idx.size();
        }
        r.features = parts.size() == 1 ? parts.front() : gather_rows(concat_rows(parts), position);
        if (r.gate.valid()) r.features = scale_rows(r.features, pick(r.gate, r.actions));
    }

    r.logits = temporal_head(t, m.temporal, m.head, r.features, sequences, o.mode);
    r.measured_multiply_adds = counter.multiply_adds;
    return r;
}

Var fixed_branch_logits(Tape& t, AdaModel& m, Var frames, std::size_t sequences, std::size_t action, Mode mode) {
    check_frames(frames, m.transforms.source_joints(), m.arch.coords, sequences);
    return temporal_head(t, m.temporal, m.head, branch_features(t, m, frames, action, mode), sequences, mode);
}

std::size_t argmax(std::span<const double> v) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < v.size(); ++i)
        if (v[i] > v[best]) best = i;
    return best;
}

Tensor class_scores(const Tensor& logits) {
    Tape t;
    t.set_grad_enabled(false);
    return softmax_rows(t.constant(logits)).value();
}

Tensor fuse_scores(std::span<const Tensor> scores) {
    if (scores.empty()) throw ContractError("fuse_scores: nothing to fuse");
    Tensor out(scores.front().shape());
    for (const Tensor& s : scores) {
        if (s.shape() != out.shape())
            throw ContractError("fuse_scores: score shapes " + shape_string(out.shape()) + " and " +
                                shape_string(s.shape()) + " differ");
        for (std::size_t i = 0; i < s.numel(); ++i) out[i] += s[i];
    }
    for (double& v : out.values()) v /= static_cast<double>(scores.size());
    return out;
}

// ---- checkpoints ----

namespace {

constexpr const char* kMagic = "adasgn-checkpoint 1";

std::string hex_double(double v) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::hex);
    (void)ec;
    return std::string(buf, p);
}

std::vector<std::string> fields(const std::string& line) {
    std::istringstream in(line);
    std::vector<std::string> out;
    std::string tok;
    while (in >> tok) out.push_back(tok);
    return out;
}

std::uint64_t parse_u64(const std::string& s, std::size_t line, int base = 10) {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v, base);
    if (ec != std::errc() || p != s.data() + s.size()) throw ParseError("bad integer '" + s + "'", line);
    return v;
}

CheckpointHeader header_for(const ArchConfig& arch, const JointTransformSet& transforms, const char* kind) {
    CheckpointHeader h;
    h.kind = kind;
    h.arch = arch;
    h.ladder = transforms.joint_counts();
    h.models = arch.model_sizes();
    h.joint_levels = transforms.levels();
    h.grouping_hash = ladder_hash(transforms.groupings);
    return h;
}

void check_header(const CheckpointHeader& expected, const CheckpointHeader& got) {
    auto fail = [](const std::string& field, const std::string& want, const std::string& have) {
        throw CompatibilityError("checkpoint field '" + field + "' mismatch: expected " + want + ", found " + have);
    };
    if (got.kind != expected.kind) fail("kind", expected.kind, got.kind);
    if (!(got.arch == expected.arch)) fail("arch", expected.arch.serialize(), got.arch.serialize());
    auto join = [](const std::vector<std::size_t>& v) {
        std::string s;
        for (auto x : v) s += (s.empty() ? "" : ",") + std::to_string(x);
        return s;
    };
    if (got.ladder != expected.ladder) fail("ladder", join(expected.ladder), join(got.ladder));
    if (got.models != expected.models) fail("models", std::to_string(expected.models), std::to_string(got.models));
    if (got.joint_levels != expected.joint_levels)
        fail("joint_levels", std::to_string(expected.joint_levels), std::to_string(got.joint_levels));
    if (got.grouping_hash != expected.grouping_hash)
        fail("grouping_hash", std::to_string(expected.grouping_hash), std::to_string(got.grouping_hash));
    if (got.model_size != expected.model_size)
        fail("model_size", std::to_string(expected.model_size), std::to_string(got.model_size));
    if (got.joint_level != expected.joint_level)
        fail("joint_level", std::to_string(expected.joint_level), std::to_string(got.joint_level));
}

template <class Model>
Checkpoint capture_params(Model& model, CheckpointHeader header) {
    Checkpoint c;
    c.header = std::move(header);
    model.visit([&](const std::string& path, Parameter& p) { c.params.emplace_back(path, p.value); });
    return c;
}

// Validates every tensor before writing any of them.
template <class Model>
void restore_params(Model& model, const Checkpoint& ckpt) {
    std::vector<std::pair<Parameter*, const Tensor*>> plan;
    model.visit([&](const std::string& path, Parameter& p) {
        const Tensor* v = ckpt.find(path);
        if (!v) throw CompatibilityError("checkpoint lacks parameter '" + path + "'");
        if (v->shape() != p.value.shape())
            throw CompatibilityError("checkpoint parameter '" + path + "' has shape " + shape_string(v->shape()) +
                                     ", model expects " + shape_string(p.value.shape()));
        plan.emplace_back(&p, v);
    });
    for (auto [p, v] : plan) p->value = *v;
}

}  // namespace

const Tensor* Checkpoint::find(const std::string& path) const {
    for (const auto& [name, t] : params)
        if (name == path) return &t;
    return nullptr;
}

std::string format_checkpoint(const Checkpoint& c) {
    std::ostringstream out;
    const auto& h = c.header;
    out << kMagic << '\n';
    out << "kind " << h.kind << '\n';
    out << "arch " << h.arch.serialize() << '\n';
    out << "ladder";
    for (auto n : h.ladder) out << ' ' << n;
    out << '\n';
    out << "actions " << h.models << ' ' << h.joint_levels << '\n';
    char hash[32];
    std::snprintf(hash, sizeof hash, "%016llx", static_cast<unsigned long long>(h.grouping_hash));
    out << "grouping_hash " << hash << '\n';
    out << "branch " << h.model_size << ' ' << h.joint_level << '\n';
    out << "params " << c.params.size() << '\n';
    for (const auto& [path, t] : c.params) {
        out << "param " << path << ' ' << t.rank();
        for (auto d : t.shape()) out << ' ' << d;
        out << '\n';
        for (std::size_t i = 0; i < t.numel(); ++i) out << (i ? " " : "") << hex_double(t[i]);
        out << '\n';
    }
    out << "end\n";
    return out.str();
}

Checkpoint parse_checkpoint(std::string_view text) {
    std::vector<std::string> lines;
    {
        std::istringstream in{std::string(text)};
        std::string l;
        while (std::getline(in, l)) lines.push_back(l);
    }
    std::size_t i = 0;
    auto next = [&](const char* key) {
        if (i >= lines.size()) throw ParseError(std::string("unexpected end of checkpoint, expected ") + key, i + 1);
        auto f = fields(lines[i]);
        ++i;
        if (f.empty() || f[0] != key) throw ParseError(std::string("expected '") + key + "'", i);
        return f;
    };
    if (lines.empty() || lines[0] != kMagic) throw ParseError("not an adasgn checkpoint (version 1)", 1);
    i = 1;
    Checkpoint c;
    auto& h = c.header;
    auto kind = next("kind");
    if (kind.size() != 2) throw ParseError("kind needs one value", i);
    h.kind = kind[1];
    if (i >= lines.size() || lines[i].rfind("arch ", 0) != 0) throw ParseError("expected 'arch'", i + 1);
    try {
        h.arch = ArchConfig::parse(lines[i].substr(5));
    } catch (const ConfigError& e) {
        throw ParseError(e.what(), i + 1);
    }
    ++i;
    auto ladder = next("ladder");
    for (std::size_t j = 1; j < ladder.size(); ++j) h.ladder.push_back(parse_u64(ladder[j], i));
    auto actions = next("actions");
    if (actions.size() != 3) throw ParseError("actions needs two values", i);
    h.models = parse_u64(actions[1], i);
    h.joint_levels = parse_u64(actions[2], i);
    auto hash = next("grouping_hash");
    if (hash.size() != 2) throw ParseError("grouping_hash needs one value", i);
    h.grouping_hash = parse_u64(hash[1], i, 16);
    auto branch = next("branch");
    if (branch.size() != 3) throw ParseError("branch needs two values", i);
    h.model_size = parse_u64(branch[1], i);
    h.joint_level = parse_u64(branch[2], i);
    auto count = next("params");
    if (count.size() != 2) throw ParseError("params needs one value", i);
    const std::size_t n = parse_u64(count[1], i);
    for (std::size_t p = 0; p < n; ++p) {
        auto head = next("param");
        if (head.size() < 3) throw ParseError("param needs a path and a rank", i);
        const std::size_t rank = parse_u64(head[2], i);
        if (head.size() != 3 + rank) throw ParseError("param rank and extents disagree", i);
        Shape shape;
        for (std::size_t d = 0; d < rank; ++d) shape.push_back(parse_u64(head[3 + d], i));
        if (i >= lines.size()) throw ParseError("missing values for " + head[1], i + 1);
        auto vals = fields(lines[i]);
        ++i;
        if (vals.size() != shape_numel(shape))
            throw ParseError("expected " + std::to_string(shape_numel(shape)) + " values for " + head[1] +
                                 ", found " + std::to_string(vals.size()),
                             i);
        std::vector<double> data(vals.size());
        for (std::size_t k = 0; k < vals.size(); ++k) {
            const std::string& s = vals[k];
            auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), data[k], std::chars_format::hex);
            if (ec != std::errc() || ptr != s.data() + s.size()) throw ParseError("bad hex float '" + s + "'", i);
        }
        c.params.emplace_back(head[1], Tensor(std::move(shape), std::move(data)));
    }
    next("end");
    return c;
}

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write checkpoint " + path.string());
    out << format_checkpoint(ckpt);
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open checkpoint " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_checkpoint(buf.str());
}

Checkpoint capture(SingleModel& m) {
    CheckpointHeader h = header_for(m.arch, m.transforms, "single");
    h.model_size = m.model_size;
    h.joint_level = m.joint_level;
    return capture_params(m, std::move(h));
}

Checkpoint capture(AdaModel& m) { return capture_params(m, header_for(m.arch, m.transforms, "adaptive")); }

void restore(SingleModel& m, const Checkpoint& ckpt) {
    CheckpointHeader h = header_for(m.arch, m.transforms, "single");
    h.model_size = m.model_size;
    h.joint_level = m.joint_level;
    check_header(h, ckpt.header);
    restore_params(m, ckpt);
}

void restore(AdaModel& m, const Checkpoint& ckpt) {
    check_header(header_for(m.arch, m.transforms, "adaptive"), ckpt.header);
    restore_params(m, ckpt);
}

std::string single_checkpoint_name(std::size_t model_size, std::size_t joint_level) {
    return "single_m" + std::to_string(model_size) + "_j" + std::to_string(joint_level) + ".ckpt";
}

void load_pretrained(AdaModel& m, const std::map<std::pair<std::size_t, std::size_t>, Checkpoint>& singles) {
    std::vector<std::pair<Parameter*, Tensor>> plan;
    auto source = [&](std::size_t k, std::size_t l) -> const Checkpoint& {
        auto it = singles.find({k, l});
        if (it == singles.end())
            throw CompatibilityError("missing pretrained single model " + single_checkpoint_name(k, l));
        CheckpointHeader h = header_for(m.arch, m.transforms, "single");
        h.model_size = k;
        h.joint_level = l;
        check_header(h, it->second.header);
        return it->second;
    };
    auto take = [&](const Checkpoint& c, const std::string& from, Parameter& to) {
        const Tensor* v = c.find(from);
        if (!v) throw CompatibilityError("checkpoint lacks parameter '" + from + "'");
        if (v->shape() != to.value.shape())
            throw CompatibilityError("checkpoint parameter '" + from + "' has shape " + shape_string(v->shape()));
        plan.emplace_back(&to, *v);
    };
    for (std::size_t k = 0; k < m.spatial.size(); ++k) {
        const Checkpoint& c = source(k, 0);
        const std::string prefix = "sm" + std::to_string(k);
        m.spatial[k].visit(prefix, [&](const std::string& path, Parameter& p) {
            // every joint level starts from the single model's BN statistics
            const auto level = path.find(".level");
            take(c, level == std::string::npos ? path : prefix + path.substr(path.find('.', level + 1)), p);
        });
    }
    for (std::size_t l = 1; l < m.transforms.levels(); ++l)
        take(source(0, l), "transform." + std::to_string(l), m.transforms.matrices[l]);
    for (auto& [p, v] : plan) p->value = std::move(v);
}

void load_pretrained(AdaModel& m, const std::filesystem::path& dir) {
    std::map<std::pair<std::size_t, std::size_t>, Checkpoint> singles;
    auto read = [&](std::size_t k, std::size_t l) {
        const auto path = dir / single_checkpoint_name(k, l);
        if (!std::filesystem::exists(path)) throw CompatibilityError("missing pretrained checkpoint " + path.string());
        singles.emplace(std::pair{k, l}, load_checkpoint(path));
    };
    for (std::size_t k = 0; k < m.spatial.size(); ++k) read(k, 0);
    for (std::size_t l = 1; l < m.transforms.levels(); ++l) read(0, l);
    load_pretrained(m, singles);
}

}  // namespace adasgn
