#include "clipmem/inference.hpp"

#include <algorithm>
#include <thread>

namespace clipmem::inference {

std::size_t argmax(const std::vector<double>& values) {
    std::size_t best = 0;
    for (std::size_t i = 1; i < values.size(); ++i)
        if (values[i] > values[best]) best = i;
    return best;
}

VideoPrediction infer_video(const datagen::VideoSample& video, const learning::VideoModel& model,
                            std::size_t clip_length, std::size_t n_crops) {
    numcore::NoGradGuard no_grad;
    const auto crops = datagen::uniform_test_crops(video, clip_length, n_crops);
    std::vector<numcore::Tensor> frames;
    frames.reserve(crops.size());
    for (const auto& c : crops) frames.push_back(video.frames_tensor(c.start, c.length));
    const auto logits = learning::forward_clips(model, frames);

    VideoPrediction pred;
    pred.video_id = video.video_id;
    const std::size_t classes = logits.front().numel();
    pred.video_probs.assign(classes, 0.0);
    for (const auto& l : logits) {
        auto probs = numcore::softmax(l.data());
        for (std::size_t c = 0; c < classes; ++c) pred.video_probs[c] += probs[c];
        pred.per_crop_probs.push_back(std::move(probs));
    }
    for (double& p : pred.video_probs) p /= static_cast<double>(logits.size());
    pred.predicted = argmax(pred.video_probs);
    return pred;
}

EvalSummary evaluate(const std::vector<datagen::VideoSample>& videos,
                     const learning::VideoModel& model, std::size_t clip_length,
                     std::size_t n_crops, std::size_t threads) {
    EvalSummary summary;
    summary.predictions.resize(videos.size());
    const std::size_t workers = std::max<std::size_t>(1, std::min(threads, videos.size()));
    auto run_range = [&](std::size_t begin, std::size_t end) {
        for (std::size_t i = begin; i < end; ++i)
            summary.predictions[i] = infer_video(videos[i], model, clip_length, n_crops);
    };
    if (workers == 1) {
        run_range(0, videos.size());
    } else {
        std::vector<std::thread> pool;
        const std::size_t chunk = (videos.size() + workers - 1) / workers;
        for (std::size_t w = 0; w < workers; ++w) {
            const std::size_t begin = std::min(videos.size(), w * chunk);
            const std::size_t end = std::min(videos.size(), begin + chunk);
            pool.emplace_back(run_range, begin, end);
        }
        for (auto& t : pool) t.join();
    }

    std::vector<std::size_t> position_hits(n_crops, 0);
    std::size_t video_hits = 0;
    for (std::size_t i = 0; i < videos.size(); ++i) {
        const auto& pred = summary.predictions[i];
        if (pred.predicted == videos[i].label) ++video_hits;
        for (std::size_t c = 0; c < n_crops; ++c)
            if (argmax(pred.per_crop_probs[c]) == videos[i].label) ++position_hits[c];
    }
    const double n = static_cast<double>(videos.size());
    summary.video_accuracy = videos.empty() ? 0.0 : video_hits / n;
    std::size_t clip_hits = 0;
    for (std::size_t c = 0; c < n_crops; ++c) {
        clip_hits += position_hits[c];
        summary.per_position_accuracy.push_back(videos.empty() ? 0.0 : position_hits[c] / n);
    }
    summary.clip_accuracy =
        videos.empty() ? 0.0 : clip_hits / (n * static_cast<double>(n_crops));
    return summary;
}

}  // namespace clipmem::inference
