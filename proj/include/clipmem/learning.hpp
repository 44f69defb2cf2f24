#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "clipmem/datagen.hpp"
#include "clipmem/grad_check.hpp"
#include "clipmem/memory.hpp"
#include "clipmem/model.hpp"
#include "clipmem/tensor.hpp"

namespace clipmem::learning {

using Rng = std::mt19937_64;

enum class Strategy { batch_reduction, multi_iteration };

std::string to_string(Strategy strategy);
Strategy parse_strategy(const std::string& text);

struct ModelConfig {
    std::size_t feature_dim = 16;  // F
    std::size_t hidden = 32;
    std::size_t channels = 16;  // d
    std::size_t bins = 2;       // k
    std::size_t num_classes = 2;  // C
    // Scales the init range of the backbone output layer, and with it the
    // feature magnitude the memory sees at the start of training.
    double w2_init_gain = 1.0;
};

struct CMConfig {
    bool enabled = true;
    memory::MemoryVariant variant = memory::MemoryVariant::associative;
    memory::Infusion infusion = memory::Infusion::gating;
    std::size_t reduction_ratio = 4;
};

struct TrainConfig {
    std::size_t clips_per_video = 5;  // N
    std::size_t clip_length = 8;      // L
    double alpha_loss = 1.0;
    std::size_t epochs = 40;
    double base_lr = 0.05;
    double momentum = 0.9;
    double weight_decay = 1e-4;
    double warmup_epochs = 2.0;
    Strategy strategy = Strategy::batch_reduction;
    std::size_t batch_videos = 32;  // B, before reduction by N
    bool stagewise = false;
    std::size_t stage1_epochs = 20;
};

struct EvalConfig {
    std::size_t n_crops = 10;
};

struct RunConfig {
    std::uint64_t seed = 0;
    datagen::XorMotifTask task;
    ModelConfig model;
    CMConfig cm;
    TrainConfig train;
    EvalConfig eval;
    std::string data_path;  // optional CMVD1 file; generated when absent
};

/// Throws std::invalid_argument describing the first violated constraint.
void validate(const RunConfig& config);

/// round(B / N), the per-step video count under batch reduction.
std::size_t reduced_batch(const TrainConfig& train);

/// Backbone, classifier and (when enabled) collaborative memory.
struct VideoModel {
    model::BackboneParams backbone;
    model::ClassifierParams classifier;
    bool cm_enabled = false;
    memory::CMParams cm;

    /// Fixed order: backbone, classifier, then CM weights.
    std::vector<numcore::NamedTensor> parameters() const;
};

VideoModel init_model(const ModelConfig& model, const CMConfig& cm, Rng& rng);

/// Encodes each clip, applies the memory if enabled, and classifies.
std::vector<numcore::Tensor> forward_clips(const VideoModel& model,
                                           std::span<const numcore::Tensor> clip_frames);

struct VideoLoss {
    numcore::Tensor total;     // clip term + alpha * consensus term
    double clip_term = 0.0;     // (1/N) sum_n CE(logits_n)
    double consensus_term = 0.0;  // CE(mean_n logits_n)
};

/// Clip-level cross-entropies averaged over clips plus alpha times the
/// cross-entropy of the logit average.
VideoLoss video_loss(std::span<const numcore::Tensor> clip_logits, std::size_t label,
                     double alpha_loss);

struct StepResult {
    double loss = 0.0;
    double clip_loss = 0.0;
    double consensus_loss = 0.0;
    std::vector<std::vector<double>> grads;  // VideoModel::parameters() order
};

/// Clip frames for one video, in sampling order.
struct SampledVideo {
    const datagen::VideoSample* video = nullptr;
    std::vector<numcore::Tensor> clips;
};

/// Draws N clips per video, videos in the given order.
std::vector<SampledVideo> sample_batch(std::span<const datagen::VideoSample* const> videos,
                                       std::size_t clips_per_video, std::size_t clip_length,
                                       Rng& rng);

/// All clips of all videos in one graph; the mean video loss is
/// backpropagated once.
StepResult train_step_batch_reduction(const std::vector<SampledVideo>& batch,
                                      const VideoModel& model, double alpha_loss);

/// One video at a time. Scan 1 encodes every clip and builds the memory,
/// keeping those graphs; scan 2 rebuilds one clip's head at a time against
/// the shared memory. Gradients reaching the memory and the clip features are
/// carried back into the retained scan-1 graphs in a single final pass.
StepResult train_step_multi_iteration(const std::vector<SampledVideo>& batch,
                                      const VideoModel& model, double alpha_loss);

StepResult train_step(Strategy strategy, const std::vector<SampledVideo>& batch,
                      const VideoModel& model, double alpha_loss);

/// Momentum SGD: v = momentum * v + g + wd * p; p -= lr * v. Rank-1
/// parameters (biases) are not decayed.
class SgdOptimizer {
public:
    SgdOptimizer(double momentum, double weight_decay)
        : momentum_(momentum), weight_decay_(weight_decay) {}

    void step(const std::vector<numcore::NamedTensor>& params,
              const std::vector<std::vector<double>>& grads, double lr);

private:
    double momentum_;
    double weight_decay_;
    std::vector<std::vector<double>> velocity_;
};

void sgd_step(numcore::Tensor& param, std::span<const double> grad, std::span<double> velocity,
              double lr, double momentum, double weight_decay);

/// Linear warm-up to base_lr, then half-cosine decay to zero at total_steps.
double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr,
                 std::size_t warmup_steps);

struct EpochMetrics {
    std::size_t epoch = 0;
    double mean_clip_loss = 0.0;
    double mean_video_loss = 0.0;
    double total_loss = 0.0;
    double val_video_acc = 0.0;
    double val_clip_acc = 0.0;
    double lr = 0.0;
};

std::string metrics_csv_header();
std::string metrics_csv_row(const EpochMetrics& m);

class NonFiniteLoss : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using EpochCallback = std::function<void(const EpochMetrics&)>;

struct TrainOptions {
    std::size_t threads = 1;  // evaluation workers
    bool evaluate_each_epoch = true;
    std::size_t first_epoch_number = 1;
};

/// Trains `model` in place on `train` for config.train.epochs epochs and
/// evaluates on `val` after each epoch.
std::vector<EpochMetrics> train(const RunConfig& config, VideoModel& model,
                                const std::vector<datagen::VideoSample>& train_set,
                                const std::vector<datagen::VideoSample>& val_set, Rng& rng,
                                const EpochCallback& on_epoch = {}, const TrainOptions& options = {});

/// Stage 1 trains backbone + classifier alone (memory off, N = 1) for
/// stage1_epochs and writes `checkpoint`; stage 2 builds a fresh model with
/// newly initialized memory weights, loads the checkpoint, and trains
/// everything jointly for config.train.epochs.
VideoModel train_stagewise(const RunConfig& config, const datagen::Dataset& data,
                           const std::filesystem::path& checkpoint,
                           std::vector<EpochMetrics>* metrics = nullptr,
                           const EpochCallback& on_epoch = {}, const TrainOptions& options = {});

}  // namespace clipmem::learning
