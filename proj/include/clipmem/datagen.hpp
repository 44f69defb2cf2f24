#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <vector>

#include "clipmem/tensor.hpp"

namespace clipmem::datagen {

using Rng = std::mt19937_64;

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class LengthError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// One synthetic video: `frames` is a row-major T x F matrix.
struct VideoSample {
    std::uint64_t video_id = 0;
    std::size_t label = 0;
    std::size_t num_frames = 0;
    std::size_t feature_dim = 0;
    std::vector<double> frames;

    /// Rows [start, start + length) as an L x F tensor with no grad.
    numcore::Tensor frames_tensor(std::size_t start, std::size_t length) const;
};

struct Clip {
    std::uint64_t video_id = 0;
    std::size_t start = 0;
    std::size_t length = 0;
};

/// Videos carry one motif a_i in the first half and one motif b_j in the
/// second half; the label is i XOR j, so no single half decides it.
struct XorMotifTask {
    std::size_t num_frames = 32;   // T
    std::size_t feature_dim = 16;  // F
    double noise_sigma = 0.3;
    std::size_t n_train = 4000;
    std::size_t n_val = 1000;
    std::uint64_t motif_seed = 7;

    static constexpr std::size_t num_classes = 2;
};

/// a0, a1, b0, b1 as rows of a 4 x F orthonormal set.
std::vector<std::vector<double>> task_motifs(const XorMotifTask& task);

struct Dataset {
    std::vector<VideoSample> train;
    std::vector<VideoSample> val;
};

Dataset gen_dataset(const XorMotifTask& task, std::uint64_t seed);

/// N start frames drawn uniformly from [0, T - L] with replacement.
std::vector<Clip> sample_clips(const VideoSample& video, std::size_t num_clips,
                               std::size_t length, Rng& rng);

/// Deterministic, evenly spaced crops covering the whole video.
std::vector<Clip> uniform_test_crops(const VideoSample& video, std::size_t length,
                                     std::size_t num_crops);

/// Single-clip Bayes accuracy for clips shorter than half the video.
double bayes_single_clip_accuracy(const XorMotifTask& task, std::size_t length);

// CMVD1 container: magic, u32 version, n_videos, T, F, C, then per video a
// u32 label and T*F float64 values, all little-endian.
void write_videos(const std::filesystem::path& path, const std::vector<VideoSample>& videos,
                  std::size_t num_frames, std::size_t feature_dim, std::size_t num_classes);

struct VideoFile {
    std::size_t num_frames = 0;
    std::size_t feature_dim = 0;
    std::size_t num_classes = 0;
    std::vector<VideoSample> videos;
};

VideoFile read_videos(const std::filesystem::path& path);

}  // namespace clipmem::datagen
