#include "clipmem/learning.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>
#include <numeric>

#include "clipmem/inference.hpp"

namespace clipmem::learning {

using numcore::Tensor;

std::string to_string(Strategy strategy) {
    return strategy == Strategy::batch_reduction ? "batch_reduction" : "multi_iteration";
}

Strategy parse_strategy(const std::string& text) {
    if (text == "batch_reduction") return Strategy::batch_reduction;
    if (text == "multi_iteration") return Strategy::multi_iteration;
    throw std::invalid_argument("unknown strategy '" + text +
                                "' (expected batch_reduction|multi_iteration)");
}

std::size_t reduced_batch(const TrainConfig& train) {
    if (train.clips_per_video == 0) return 0;
    return static_cast<std::size_t>(std::lround(static_cast<double>(train.batch_videos) /
                                                static_cast<double>(train.clips_per_video)));
}

void validate(const RunConfig& c) {
    auto require = [](bool ok, const std::string& what) {
        if (!ok) throw std::invalid_argument("invalid config: " + what);
    };
    require(c.train.clips_per_video >= 1, "train.N must be >= 1");
    require(c.train.alpha_loss >= 0.0, "train.alpha_loss must be >= 0");
    require(reduced_batch(c.train) >= 1, "round(train.batch_videos / train.N) must be >= 1");
    require(c.train.base_lr >= 0.0, "train.base_lr must be >= 0");
    require(c.train.warmup_epochs >= 0.0, "train.warmup_epochs must be >= 0");
    require(c.model.feature_dim == c.task.feature_dim, "model.F must equal task.F");
    require(c.model.num_classes == datagen::XorMotifTask::num_classes,
            "model.C must be 2 for the XOR-motif task");
    require(std::isfinite(c.model.w2_init_gain) && c.model.w2_init_gain > 0.0,
            "model.w2_init_gain must be positive");
    require(c.model.hidden >= 1 && c.model.channels >= 1, "model dims must be positive");
    require(c.model.bins >= 1 && c.model.bins <= c.train.clip_length, "model.k must be in [1, L]");
    require(c.train.clip_length <= c.task.num_frames, "train.L must not exceed task.T");
    require(c.cm.reduction_ratio >= 1 && c.model.channels / c.cm.reduction_ratio >= 1,
            "cm.reduction_ratio must leave d' >= 1");
    require(c.eval.n_crops >= 1, "eval.n_crops must be >= 1");
}

std::vector<numcore::NamedTensor> VideoModel::parameters() const {
    std::vector<numcore::NamedTensor> out;
    model::append_parameters(backbone, out);
    model::append_parameters(classifier, out);
    if (cm_enabled) memory::append_parameters(cm, out);
    return out;
}

VideoModel init_model(const ModelConfig& m, const CMConfig& cm, Rng& rng) {
    VideoModel vm;
    vm.backbone = model::init_backbone(m.feature_dim, m.hidden, m.channels, m.bins, rng,
                                       m.w2_init_gain);
    vm.classifier = model::init_classifier(m.channels, m.num_classes, rng);
    vm.cm_enabled = cm.enabled;
    if (cm.enabled)
        vm.cm = memory::init_cm(m.channels, cm.reduction_ratio, cm.variant, cm.infusion, rng);
    return vm;
}

std::vector<Tensor> forward_clips(const VideoModel& model, std::span<const Tensor> clip_frames) {
    std::vector<Tensor> features;
    features.reserve(clip_frames.size());
    for (const auto& frames : clip_frames) features.push_back(model::encode_clip(frames, model.backbone));
    if (model.cm_enabled) features = memory::collaborate(features, model.cm);
    std::vector<Tensor> logits;
    logits.reserve(features.size());
    for (const auto& x : features) logits.push_back(model::classify(x, model.classifier));
    return logits;
}

VideoLoss video_loss(std::span<const Tensor> clip_logits, std::size_t label, double alpha_loss) {
    if (clip_logits.empty()) throw std::invalid_argument("video_loss: no clip logits");
    Tensor clip_sum;
    for (const auto& l : clip_logits) {
        Tensor ce = numcore::softmax_cross_entropy(l, label);
        clip_sum = clip_sum.defined() ? numcore::add(clip_sum, ce) : ce;
    }
    const double inv_n = 1.0 / static_cast<double>(clip_logits.size());
    Tensor clip_term = numcore::scale(clip_sum, inv_n);
    Tensor consensus = numcore::softmax_cross_entropy(numcore::mean_of(clip_logits), label);
    VideoLoss out;
    out.clip_term = clip_term.item();
    out.consensus_term = consensus.item();
    out.total = numcore::add(clip_term, numcore::scale(consensus, alpha_loss));
    return out;
}

std::vector<SampledVideo> sample_batch(std::span<const datagen::VideoSample* const> videos,
                                       std::size_t clips_per_video, std::size_t clip_length,
                                       Rng& rng) {
    std::vector<SampledVideo> batch;
    batch.reserve(videos.size());
    for (const auto* video : videos) {
        SampledVideo sv;
        sv.video = video;
        for (const auto& c : datagen::sample_clips(*video, clips_per_video, clip_length, rng))
            sv.clips.push_back(video->frames_tensor(c.start, c.length));
        batch.push_back(std::move(sv));
    }
    return batch;
}

namespace {

std::vector<std::vector<double>> collect_grads(const std::vector<numcore::NamedTensor>& params) {
    std::vector<std::vector<double>> grads;
    grads.reserve(params.size());
    for (const auto& p : params) grads.push_back(p.tensor.grad());
    return grads;
}

void zero_grads(const std::vector<numcore::NamedTensor>& params) {
    for (auto p : params) p.tensor.zero_grad();
}

}  // namespace

StepResult train_step_batch_reduction(const std::vector<SampledVideo>& batch,
                                      const VideoModel& model, double alpha_loss) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const auto params = model.parameters();
    zero_grads(params);
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    StepResult result;
    Tensor total;
    for (const auto& sv : batch) {
        const auto logits = forward_clips(model, sv.clips);
        VideoLoss vl = video_loss(logits, sv.video->label, alpha_loss);
        result.clip_loss += vl.clip_term * inv_b;
        result.consensus_loss += vl.consensus_term * inv_b;
        total = total.defined() ? numcore::add(total, vl.total) : vl.total;
    }
    Tensor loss = numcore::scale(total, inv_b);
    numcore::backward(loss);
    result.loss = loss.item();
    result.grads = collect_grads(params);
    zero_grads(params);
    return result;
}

StepResult train_step_multi_iteration(const std::vector<SampledVideo>& batch,
                                      const VideoModel& model, double alpha_loss) {
    if (batch.empty()) throw std::invalid_argument("train_step: empty batch");
    const auto params = model.parameters();
    zero_grads(params);
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    StepResult result;
    for (const auto& sv : batch) {
        const std::size_t n_clips = sv.clips.size();

        // Scan 1: per-clip features and the shared memory, graphs retained.
        std::vector<Tensor> features;
        std::vector<Tensor> feature_leaves;
        features.reserve(n_clips);
        for (const auto& frames : sv.clips) {
            features.push_back(model::encode_clip(frames, model.backbone));
            feature_leaves.push_back(features.back().detach(true));
        }
        memory::GlobalMemory memory_root;
        memory::GlobalMemory memory_leaf;
        if (model.cm_enabled) {
            memory_root = memory::push(features, model.cm);
            memory_leaf = {memory_root.variant, memory_root.value.detach(true)};
        }

        auto clip_head = [&](std::size_t n) {
            const Tensor& x = feature_leaves[n];
            Tensor enhanced = model.cm_enabled
                                  ? memory::infuse(x, memory::pop(memory_leaf, x, model.cm), model.cm)
                                  : x;
            return model::classify(enhanced, model.classifier);
        };

        // Scan 2, value pass: clip logits without graphs, then dL/dlogits.
        std::vector<Tensor> logit_leaves;
        logit_leaves.reserve(n_clips);
        for (std::size_t n = 0; n < n_clips; ++n) {
            numcore::NoGradGuard no_grad;
            logit_leaves.push_back(clip_head(n).detach(true));
        }
        VideoLoss vl = video_loss(logit_leaves, sv.video->label, alpha_loss);
        numcore::backward(vl.total);
        result.loss += vl.total.item() * inv_b;
        result.clip_loss += vl.clip_term * inv_b;
        result.consensus_loss += vl.consensus_term * inv_b;

        // Scan 2, gradient pass: one clip head alive at a time.
        for (std::size_t n = 0; n < n_clips; ++n) {
            Tensor logits = clip_head(n);
            std::vector<double> seed = logit_leaves[n].grad();
            for (double& g : seed) g *= inv_b;
            numcore::backward(std::span<const Tensor>(&logits, 1),
                              std::span<const std::vector<double>>(&seed, 1));
        }

        // Carry dL/dM and dL/dX_n into the scan-1 graphs.
        std::vector<Tensor> roots;
        std::vector<std::vector<double>> seeds;
        if (model.cm_enabled) {
            roots.push_back(memory_root.value);
            seeds.push_back(memory_leaf.value.grad());
        }
        for (std::size_t n = 0; n < n_clips; ++n) {
            roots.push_back(features[n]);
            seeds.push_back(feature_leaves[n].grad());
        }
        numcore::backward(roots, seeds);
    }
    result.grads = collect_grads(params);
    zero_grads(params);
    return result;
}

StepResult train_step(Strategy strategy, const std::vector<SampledVideo>& batch,
                      const VideoModel& model, double alpha_loss) {
    return strategy == Strategy::batch_reduction
               ? train_step_batch_reduction(batch, model, alpha_loss)
               : train_step_multi_iteration(batch, model, alpha_loss);
}

void sgd_step(Tensor& param, std::span<const double> grad, std::span<double> velocity, double lr,
              double momentum, double weight_decay) {
    auto values = param.mutable_data();
    if (grad.size() != values.size() || velocity.size() != values.size()) {
        throw numcore::DimensionError("sgd_step: gradient/velocity size does not match parameter " +
                                      numcore::shape_to_string(param.shape()));
    }
    if (lr < 0.0) throw std::invalid_argument("sgd_step: negative learning rate");
    for (std::size_t i = 0; i < values.size(); ++i) {
        velocity[i] = momentum * velocity[i] + grad[i] + weight_decay * values[i];
        values[i] -= lr * velocity[i];
    }
}

void SgdOptimizer::step(const std::vector<numcore::NamedTensor>& params,
                        const std::vector<std::vector<double>>& grads, double lr) {
    if (grads.size() != params.size())
        throw numcore::DimensionError("SgdOptimizer: gradient count does not match parameters");
    if (velocity_.size() != params.size()) {
        velocity_.clear();
        for (const auto& p : params) velocity_.emplace_back(p.tensor.numel(), 0.0);
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
        Tensor t = params[i].tensor;
        const double wd = t.rank() >= 2 ? weight_decay_ : 0.0;
        sgd_step(t, grads[i], velocity_[i], lr, momentum_, wd);
    }
}

double cosine_lr(std::size_t step, std::size_t total_steps, double base_lr,
                 std::size_t warmup_steps) {
    if (step > total_steps) throw std::invalid_argument("cosine_lr: step beyond total_steps");
    if (step < warmup_steps)
        return base_lr * static_cast<double>(step) / static_cast<double>(warmup_steps);
    if (total_steps <= warmup_steps) return base_lr;
    const double progress = static_cast<double>(step - warmup_steps) /
                            static_cast<double>(total_steps - warmup_steps);
    return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

std::string metrics_csv_header() {
    return "epoch,mean_clip_loss,mean_video_loss,total_loss,val_video_acc,val_clip_acc,lr";
}

std::string metrics_csv_row(const EpochMetrics& m) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%zu,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g", m.epoch, m.mean_clip_loss,
                  m.mean_video_loss, m.total_loss, m.val_video_acc, m.val_clip_acc, m.lr);
    return buf;
}

std::vector<EpochMetrics> train(const RunConfig& config, VideoModel& model,
                                const std::vector<datagen::VideoSample>& train_set,
                                const std::vector<datagen::VideoSample>& val_set, Rng& rng,
                                const EpochCallback& on_epoch, const TrainOptions& options) {
    validate(config);
    const auto& tc = config.train;
    const std::size_t per_step = reduced_batch(tc);
    const std::size_t steps_per_epoch = (train_set.size() + per_step - 1) / per_step;
    const std::size_t total_steps = tc.epochs * steps_per_epoch;
    const auto warmup_steps = static_cast<std::size_t>(
        std::lround(tc.warmup_epochs * static_cast<double>(steps_per_epoch)));
    const auto params = model.parameters();
    SgdOptimizer optimizer(tc.momentum, tc.weight_decay);

    std::vector<std::size_t> order(train_set.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::vector<EpochMetrics> history;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        EpochMetrics m;
        m.epoch = options.first_epoch_number + epoch;
        for (std::size_t begin = 0; begin < order.size(); begin += per_step) {
            const std::size_t end = std::min(order.size(), begin + per_step);
            std::vector<const datagen::VideoSample*> videos;
            for (std::size_t i = begin; i < end; ++i) videos.push_back(&train_set[order[i]]);
            const auto batch = sample_batch(videos, tc.clips_per_video, tc.clip_length, rng);
            const StepResult r = train_step(tc.strategy, batch, model, tc.alpha_loss);
            if (!std::isfinite(r.loss)) {
                throw NonFiniteLoss("non-finite loss " + std::to_string(r.loss) + " at epoch " +
                                    std::to_string(m.epoch) + ", step " + std::to_string(step));
            }
            const double weight = static_cast<double>(end - begin);
            m.mean_clip_loss += r.clip_loss * weight;
            m.mean_video_loss += r.consensus_loss * weight;
            m.total_loss += r.loss * weight;
            m.lr = cosine_lr(step, total_steps, tc.base_lr, warmup_steps);
            optimizer.step(params, r.grads, m.lr);
            ++step;
        }
        const double n = static_cast<double>(train_set.size());
        m.mean_clip_loss /= n;
        m.mean_video_loss /= n;
        m.total_loss /= n;
        if (options.evaluate_each_epoch || epoch + 1 == tc.epochs) {
            const auto summary = inference::evaluate(val_set, model, tc.clip_length,
                                                     config.eval.n_crops, options.threads);
            m.val_video_acc = summary.video_accuracy;
            m.val_clip_acc = summary.clip_accuracy;
        }
        history.push_back(m);
        if (on_epoch) on_epoch(m);
    }
    return history;
}

VideoModel train_stagewise(const RunConfig& config, const datagen::Dataset& data,
                           const std::filesystem::path& checkpoint,
                           std::vector<EpochMetrics>* metrics, const EpochCallback& on_epoch,
                           const TrainOptions& options) {
    if (!config.train.stagewise)
        throw std::invalid_argument("train_stagewise: config.train.stagewise is false");

    RunConfig stage1 = config;
    stage1.cm.enabled = false;
    stage1.train.clips_per_video = 1;
    stage1.train.epochs = config.train.stage1_epochs;
    Rng rng1(config.seed);
    VideoModel backbone_only = init_model(stage1.model, stage1.cm, rng1);
    auto history = train(stage1, backbone_only, data.train, data.val, rng1, on_epoch, options);
    model::save_checkpoint(checkpoint, backbone_only.parameters());

    std::seed_seq stage2_seed{static_cast<std::uint32_t>(config.seed),
                              static_cast<std::uint32_t>(config.seed >> 32), 2u};
    Rng rng2(stage2_seed);
    VideoModel joint = init_model(config.model, config.cm, rng2);
    model::load_checkpoint(checkpoint, joint.parameters(), false);
    TrainOptions stage2_options = options;
    stage2_options.first_epoch_number = options.first_epoch_number + stage1.train.epochs;
    auto history2 = train(config, joint, data.train, data.val, rng2, on_epoch, stage2_options);
    if (metrics) {
        history.insert(history.end(), history2.begin(), history2.end());
        *metrics = std::move(history);
    }
    return joint;
}

}  // namespace clipmem::learning
