#include "adasgn/data.hpp"

#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "adasgn/errors.hpp"
#include "adasgn/rng.hpp"

namespace adasgn {

namespace {

constexpr std::array<std::array<double, 3>, kLayoutJoints> kRestPose{{
    {0.00, 0.00, 0.00},    {0.00, 0.25, 0.00},    {0.00, 0.55, 0.00},   {0.00, 0.70, 0.00},
    {-0.18, 0.50, 0.00},   {-0.22, 0.25, 0.00},   {-0.24, 0.02, 0.00},  {-0.25, -0.05, 0.00},
    {0.18, 0.50, 0.00},    {0.22, 0.25, 0.00},    {0.24, 0.02, 0.00},   {0.25, -0.05, 0.00},
    {-0.10, -0.02, 0.00},  {-0.11, -0.45, 0.00},  {-0.12, -0.85, 0.00}, {-0.12, -0.90, 0.10},
    {0.10, -0.02, 0.00},   {0.11, -0.45, 0.00},   {0.12, -0.85, 0.00},  {0.12, -0.90, 0.10},
    {0.00, 0.50, 0.00},    {-0.26, -0.12, 0.00},  {-0.22, -0.08, 0.03}, {0.26, -0.12, 0.00},
    {0.22, -0.08, 0.03},
}};

constexpr std::size_t kArchetypes = 8;
constexpr std::size_t kActiveWindow = 8;

std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

template <class T>
T parse_number(std::string_view token, std::size_t line, const char* what) {
    T v{};
    auto [ptr, ec] = std::from_chars(token.data(), token.data() + token.size(), v);
    if (ec != std::errc() || ptr != token.data() + token.size())
        throw ParseError(std::string("bad ") + what + " '" + std::string(token) + "'", line);
    return v;
}

std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

void validate_parents(std::span<const std::size_t> parents, std::size_t joints) {
    if (parents.size() != joints)
        throw ConfigError("edge list has " + std::to_string(parents.size()) + " entries for " +
                          std::to_string(joints) + " joints");
    std::size_t roots = 0;
    for (std::size_t j = 0; j < joints; ++j) {
        if (parents[j] >= joints) throw ConfigError("joint " + std::to_string(j) + " has out-of-range parent");
        if (parents[j] == j) ++roots;
    }
    if (roots != 1) throw ConfigError("edge list must have exactly one root, found " + std::to_string(roots));
    for (std::size_t j = 0; j < joints; ++j) {
        std::size_t cur = j;
        for (std::size_t steps = 0; parents[cur] != cur; ++steps) {
            if (steps > joints) throw ConfigError("edge list contains a cycle through joint " + std::to_string(j));
            cur = parents[cur];
        }
    }
}

// Displacements added to the rest pose for one frame; `b` is the bump
// profile in [0, 1] (zero outside the active window) and `axis` the unit
// direction of the limb archetypes.
void add_motion(std::size_t archetype, double b, double amp, const std::array<double, 3>& axis,
                std::array<std::array<double, 3>, kLayoutJoints>& pose) {
    auto shift_all = [&](double dx, double dy, double dz) {
        for (auto& p : pose) {
            p[0] += dx;
            p[1] += dy;
            p[2] += dz;
        }
    };
    // A whole arm moves and the centroid shift is removed.
    auto arm = [&](std::initializer_list<std::size_t> joints, double d) {
        std::array<double, 3> mean{0, 0, 0};
        for (std::size_t j : joints)
            for (int c = 0; c < 3; ++c) {
                pose[j][c] += d * axis[c];
                mean[c] += d * axis[c] / static_cast<double>(kLayoutJoints);
            }
        shift_all(-mean[0], -mean[1], -mean[2]);
    };
    // Two joints of one leg move in opposite directions, leaving every part
    // mean and the centroid at rest.
    auto scissor = [&](std::size_t j, std::size_t k, double d) {
        for (int c = 0; c < 3; ++c) {
            pose[j][c] += d * axis[c];
            pose[k][c] -= d * axis[c];
        }
    };
    const double g = 0.4 * amp * b;
    const double d = 0.3 * amp * b;
    switch (archetype) {
        case 0: shift_all(g, 0, 0); break;
        case 2: shift_all(-g, 0, 0); break;
        case 4: shift_all(0, 0, g); break;
        case 6: shift_all(0, g, 0); break;
        case 1: arm({9, 10, 11, 23, 24}, 1.5 * d); break;
        case 3: arm({5, 6, 7, 21, 22}, 1.5 * d); break;
        case 5: scissor(13, 14, d); break;
        case 7: scissor(17, 18, d); break;
        default: break;
    }
}

SkeletonSample generate_one(const SynthSpec& spec, std::size_t label, Rng& rng, std::string id) {
    const std::size_t T = spec.frames;
    const double v = spec.variability;
    const double body = 1.0 + v * rng.uniform(-0.1, 0.1);
    const double amp = 1.0 + v * rng.uniform(-0.5, 0.5);
    const std::size_t window = std::min(kActiveWindow, T - kPreparationFrames);
    const std::size_t slack = T - kPreparationFrames - window;
    std::size_t start = kPreparationFrames + slack / 2;
    if (v > 0.0 && slack > 0) start = kPreparationFrames + rng.below(slack + 1);
    const std::array<double, 3> offset{v * rng.uniform(-1, 1), v * rng.uniform(-1, 1), v * rng.uniform(-1, 1)};
    // limbs move towards or away from the camera with equal probability
    std::array<double, 3> axis{0.0, 0.0, 1.0};
    if (v > 0.0 && rng.uniform(0, 1) < 0.5) axis[2] = -1.0;

    Tensor frames({T, kLayoutJoints, 3});
    for (std::size_t t = 0; t < T; ++t) {
        auto pose = kRestPose;
        for (auto& p : pose)
            for (double& c : p) c *= body;
        double b = 0.0;
        if (t >= start && t < start + window) {
            const double u = window > 1 ? static_cast<double>(t - start) / static_cast<double>(window - 1) : 0.5;
            b = std::sin(std::numbers::pi * u);
        }
        add_motion(label % kArchetypes, b, amp, axis, pose);
        for (std::size_t j = 0; j < kLayoutJoints; ++j)
            for (std::size_t c = 0; c < 3; ++c) {
                const double noise = spec.noise > 0.0 ? spec.noise * rng.normal() : 0.0;
                frames[(t * kLayoutJoints + j) * 3 + c] = pose[j][c] + offset[c] + noise;
            }
    }
    // Centre on the first frame's centroid.
    std::array<double, 3> centroid{0, 0, 0};
    for (std::size_t j = 0; j < kLayoutJoints; ++j)
        for (std::size_t c = 0; c < 3; ++c) centroid[c] += frames[j * 3 + c] / static_cast<double>(kLayoutJoints);
    for (std::size_t i = 0; i < frames.numel(); ++i) frames[i] -= centroid[i % 3];
    return SkeletonSample{std::move(frames), label, std::move(id)};
}

void check_spec(const SynthSpec& spec) {
    if (spec.classes < 2 || spec.classes > kArchetypes)
        throw ConfigError("synthetic generator supports 2.." + std::to_string(kArchetypes) + " classes, got " +
                          std::to_string(spec.classes));
    if (spec.frames < kPreparationFrames + 1)
        throw ConfigError("synthetic sequences need at least " + std::to_string(kPreparationFrames + 1) + " frames");
    if (spec.noise < 0.0 || spec.variability < 0.0) throw ConfigError("noise and variability must be non-negative");
}

}  // namespace

std::vector<std::size_t> layout_parents() {
    return {0, 0, 20, 2, 20, 4, 5, 6, 20, 8, 9, 10, 0, 12, 13, 14, 0, 16, 17, 18, 1, 7, 7, 11, 11};
}

std::vector<std::size_t> parse_edges(std::string_view text, std::size_t joints) {
    std::vector<std::size_t> parents(joints, joints);
    std::size_t line_no = 0;
    std::istringstream in{std::string(text)};
    std::string line;
    while (std::getline(in, line)) {
        ++line_no;
        std::string_view l = trim(line);
        if (l.empty()) continue;
        const auto comma = l.find(',');
        if (comma == std::string_view::npos) throw ParseError("expected 'child,parent'", line_no);
        const auto child = parse_number<std::size_t>(trim(l.substr(0, comma)), line_no, "joint");
        const auto parent = parse_number<std::size_t>(trim(l.substr(comma + 1)), line_no, "joint");
        if (child >= joints) throw ConfigError("edge child " + std::to_string(child) + " out of range");
        parents[child] = parent;
    }
    validate_parents(parents, joints);
    return parents;
}

std::vector<std::size_t> read_edges_file(const std::filesystem::path& path, std::size_t joints) {
    std::ifstream in(path);
    if (!in) throw Error("cannot open edge file " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_edges(buf.str(), joints);
}

Tensor bone_stream(const Tensor& frames, std::span<const std::size_t> parents) {
    if (frames.rank() != 3) throw DimensionError("bone_stream expects [T,N,C], got " + shape_string(frames.shape()));
    const std::size_t T = frames.dim(0), N = frames.dim(1), C = frames.dim(2);
    validate_parents(parents, N);
    Tensor out(frames.shape());
    for (std::size_t t = 0; t < T; ++t)
        for (std::size_t j = 0; j < N; ++j)
            for (std::size_t c = 0; c < C; ++c)
                out.at(t, j, c) = parents[j] == j ? 0.0 : frames.at(t, j, c) - frames.at(t, parents[j], c);
    return out;
}

Tensor velocity_stream(const Tensor& frames) {
    if (frames.rank() != 3)
        throw DimensionError("velocity_stream expects [T,N,C], got " + shape_string(frames.shape()));
    const std::size_t stride = frames.dim(1) * frames.dim(2);
    Tensor out(frames.shape());
    for (std::size_t i = stride; i < frames.numel(); ++i) out[i] = frames[i] - frames[i - stride];
    return out;
}

bool is_global_motion_class(std::size_t label) { return label % 2 == 0; }

Dataset synth_generate(const SynthSpec& spec) {
    check_spec(spec);
    if (spec.per_class == 0) throw ConfigError("per_class must be positive");
    Dataset out;
    out.reserve(spec.classes * spec.per_class);
    for (std::size_t c = 0; c < spec.classes; ++c) {
        Rng rng = Rng::derive(spec.seed, 1000 + c);
        for (std::size_t i = 0; i < spec.per_class; ++i) {
            char id[32];
            std::snprintf(id, sizeof id, "c%02zu_%05zu", c, i);
            out.push_back(generate_one(spec, c, rng, id));
        }
    }
    return out;
}

Dataset synth_generate_count(const SynthSpec& spec, std::size_t count, std::uint64_t stream) {
    check_spec(spec);
    Dataset out;
    out.reserve(count);
    Rng rng = Rng::derive(spec.seed, 1u << 20 | stream);
    for (std::size_t i = 0; i < count; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "s%05zu", i);
        out.push_back(generate_one(spec, i % spec.classes, rng, id));
    }
    return out;
}

std::string format_skeleton(const SkeletonSample& s) {
    const std::size_t T = s.num_frames(), N = s.num_joints(), C = s.num_coords();
    std::string out = "SKL 1 " + std::to_string(T) + " " + std::to_string(N) + " " + std::to_string(C) + " " +
                      std::to_string(s.label) + "\n";
    char buf[64];
    for (std::size_t t = 0; t < T; ++t) {
        for (std::size_t i = 0; i < N * C; ++i) {
            auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, s.frames[t * N * C + i]);
            (void)ec;
            if (i) out += ' ';
            out.append(buf, ptr);
        }
        out += '\n';
    }
    return out;
}

SkeletonSample parse_skeleton(std::string_view text, std::string id) {
    std::vector<std::string_view> lines;
    for (std::size_t pos = 0; pos < text.size();) {
        std::size_t nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        lines.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    while (!lines.empty() && trim(lines.back()).empty()) lines.pop_back();
    if (lines.empty()) throw ParseError("empty skeleton file", 1);
    auto header = split_ws(lines[0]);
    if (header.size() != 6 || header[0] != "SKL") throw ParseError("expected 'SKL 1 <T> <N> <C> <label>'", 1);
    if (header[1] != "1") throw ParseError("unsupported skeleton format version " + std::string(header[1]), 1);
    const auto T = parse_number<std::size_t>(header[2], 1, "frame count");
    const auto N = parse_number<std::size_t>(header[3], 1, "joint count");
    const auto C = parse_number<std::size_t>(header[4], 1, "coordinate count");
    const auto label = parse_number<std::size_t>(header[5], 1, "label");
    if (T == 0 || N == 0 || C == 0) throw ParseError("extents must be positive", 1);
    if (lines.size() - 1 != T)
        throw ParseError("expected " + std::to_string(T) + " frame rows, found " + std::to_string(lines.size() - 1),
                         lines.size());
    Tensor frames({T, N, C});
    for (std::size_t t = 0; t < T; ++t) {
        auto fields = split_ws(lines[t + 1]);
        if (fields.size() != N * C)
            throw ParseError("expected " + std::to_string(N * C) + " values, found " + std::to_string(fields.size()),
                             t + 2);
        for (std::size_t i = 0; i < fields.size(); ++i)
            frames[t * N * C + i] = parse_number<double>(fields[i], t + 2, "coordinate");
    }
    if (!frames.all_finite()) throw ParseError("non-finite coordinate", 1);
    return SkeletonSample{std::move(frames), label, std::move(id)};
}

void write_skeleton_file(const SkeletonSample& sample, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write " + path.string());
    out << format_skeleton(sample);
}

SkeletonSample read_skeleton_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open " + path.string());
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_skeleton(buf.str(), path.stem().string());
}

void write_dataset(const Dataset& data, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    std::ofstream index(dir / "index.csv", std::ios::binary);
    if (!index) throw Error("cannot write " + (dir / "index.csv").string());
    index << "id,path,label\n";
    for (const auto& s : data) {
        const std::string file = s.id + ".skl";
        write_skeleton_file(s, dir / file);
        index << s.id << ',' << file << ',' << s.label << '\n';
    }
}

Dataset read_dataset(const std::filesystem::path& dir) {
    std::ifstream index(dir / "index.csv");
    if (!index) throw Error("no dataset index at " + (dir / "index.csv").string());
    Dataset out;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(index, line)) {
        ++line_no;
        if (line_no == 1) {
            if (trim(line) != "id,path,label") throw ParseError("expected header 'id,path,label'", 1);
            continue;
        }
        if (trim(line).empty()) continue;
        std::string_view l = line;
        const auto c1 = l.find(','), c2 = l.rfind(',');
        if (c1 == std::string_view::npos || c1 == c2) throw ParseError("expected 'id,path,label'", line_no);
        SkeletonSample s = read_skeleton_file(dir / std::string(l.substr(c1 + 1, c2 - c1 - 1)));
        s.id = std::string(l.substr(0, c1));
        const auto label = parse_number<std::size_t>(trim(l.substr(c2 + 1)), line_no, "label");
        if (label != s.label) throw ParseError("index label disagrees with file header for " + s.id, line_no);
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace adasgn
