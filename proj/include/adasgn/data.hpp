#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adasgn/tensor.hpp"

namespace adasgn {

/// One labelled sequence; frames is [T, N, C].
struct SkeletonSample {
    Tensor frames;
    std::size_t label = 0;
    std::string id;

    std::size_t num_frames() const { return frames.dim(0); }
    std::size_t num_joints() const { return frames.dim(1); }
    std::size_t num_coords() const { return frames.dim(2); }
};

using Dataset = std::vector<SkeletonSample>;

inline constexpr std::size_t kLayoutJoints = 25;

// Parent of every joint in the 25-joint layout; the root (spine base) maps to itself.
std::vector<std::size_t> layout_parents();
// Lines of "child,parent".
std::vector<std::size_t> parse_edges(std::string_view text, std::size_t joints);
std::vector<std::size_t> read_edges_file(const std::filesystem::path& path, std::size_t joints);

// bone[t, j] = x[t, j] - x[t, parent(j)]. Throws ConfigError for a parent list
// that is out of range, lacks exactly one root, or is cyclic.
Tensor bone_stream(const Tensor& frames, std::span<const std::size_t> parents);
// v[t] = x[t] - x[t-1], v[0] = 0.
Tensor velocity_stream(const Tensor& frames);

struct SynthSpec {
    std::size_t classes = 8;
    std::size_t per_class = 250;
    std::size_t frames = 20;
    double noise = 0.01;        // per-coordinate gaussian sigma
    double variability = 1.0;   // scales per-sample nuisance: body size, amplitude, timing
    std::uint64_t seed = 0;
};

// Even labels move the whole body along a class-specific trajectory (visible
// from the centroid alone). Odd labels keep the centroid at rest and move
// limbs along the depth axis, towards or away from the camera per sample: the
// right arm (1) or the left arm (3) as a whole, or the knee and ankle of the
// left (5) or right (7) leg in opposite directions. Labels 5 and 7 leave
// every body-part mean at rest.
bool is_global_motion_class(std::size_t label);

// Number of leading class-independent preparation frames.
inline constexpr std::size_t kPreparationFrames = 2;

// per_class samples of every class, ordered by class then index.
Dataset synth_generate(const SynthSpec& spec);
// `count` samples with round-robin labels from an independent stream.
Dataset synth_generate_count(const SynthSpec& spec, std::size_t count, std::uint64_t stream);

std::string format_skeleton(const SkeletonSample& sample);
SkeletonSample parse_skeleton(std::string_view text, std::string id = {});
void write_skeleton_file(const SkeletonSample& sample, const std::filesystem::path& path);
SkeletonSample read_skeleton_file(const std::filesystem::path& path);

// Directory of <id>.skl files plus index.csv ("id,path,label").
void write_dataset(const Dataset& data, const std::filesystem::path& dir);
Dataset read_dataset(const std::filesystem::path& dir);

}  // namespace adasgn
