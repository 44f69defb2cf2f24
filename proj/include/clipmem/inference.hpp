#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "clipmem/datagen.hpp"
#include "clipmem/learning.hpp"

namespace clipmem::inference {

struct VideoPrediction {
    std::uint64_t video_id = 0;
    std::vector<std::vector<double>> per_crop_probs;  // n_crops x C
    std::vector<double> video_probs;                  // C
    std::size_t predicted = 0;
};

/// Lowest index wins ties.
std::size_t argmax(const std::vector<double>& values);

/// Encodes the n_crops uniform temporal crops, builds one memory from all of
/// them, then classifies every crop against it and averages the softmax
/// scores. No randomness and no graph recording.
VideoPrediction infer_video(const datagen::VideoSample& video, const learning::VideoModel& model,
                            std::size_t clip_length, std::size_t n_crops);

struct EvalSummary {
    double video_accuracy = 0.0;
    double clip_accuracy = 0.0;                // over all crops of all videos
    std::vector<double> per_position_accuracy;  // crop index -> accuracy
    std::vector<VideoPrediction> predictions;
};

/// Evaluates every video; `threads` workers split the list into contiguous
/// chunks and results are reduced in video order, so the summary does not
/// depend on the thread count.
EvalSummary evaluate(const std::vector<datagen::VideoSample>& videos,
                     const learning::VideoModel& model, std::size_t clip_length,
                     std::size_t n_crops, std::size_t threads = 1);

}  // namespace clipmem::inference
