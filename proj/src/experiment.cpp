#include "clipmem/experiment.hpp"

#include <chrono>
#include <cstdlib>
#include <fstream>

#include "clipmem/config.hpp"
#include "clipmem/inference.hpp"
#include "clipmem/memory.hpp"
#include "json.hpp"

namespace clipmem::experiment {

namespace fs = std::filesystem;

datagen::Dataset load_or_generate(const learning::RunConfig& config) {
    const auto& task = config.task;
    if (!config.data_path.empty() && fs::exists(config.data_path)) {
        auto file = datagen::read_videos(config.data_path);
        if (file.num_frames != task.num_frames || file.feature_dim != task.feature_dim ||
            file.num_classes != datagen::XorMotifTask::num_classes ||
            file.videos.size() != task.n_train + task.n_val) {
            throw datagen::FormatError(config.data_path +
                                       ": dataset dimensions do not match the config");
        }
        datagen::Dataset ds;
        ds.train.assign(file.videos.begin(),
                        file.videos.begin() + static_cast<std::ptrdiff_t>(task.n_train));
        ds.val.assign(file.videos.begin() + static_cast<std::ptrdiff_t>(task.n_train),
                      file.videos.end());
        return ds;
    }
    auto ds = datagen::gen_dataset(task, config.seed);
    if (!config.data_path.empty()) write_dataset(config, config.data_path);
    return ds;
}

void write_dataset(const learning::RunConfig& config, const fs::path& out) {
    auto ds = datagen::gen_dataset(config.task, config.seed);
    std::vector<datagen::VideoSample> all = std::move(ds.train);
    all.insert(all.end(), ds.val.begin(), ds.val.end());
    datagen::write_videos(out, all, config.task.num_frames, config.task.feature_dim,
                          datagen::XorMotifTask::num_classes);
}

std::uint64_t inference_flops(const learning::RunConfig& config) {
    if (!config.cm.enabled) return 0;
    return memory::flops_cm(config.eval.n_crops, config.model.bins, config.model.channels,
                            config.model.channels / config.cm.reduction_ratio);
}

std::string report_json(const Report& report) {
    nlohmann::ordered_json j;
    j["config_hash"] = report.config_hash;
    j["final_val_video_acc"] = report.final_val_video_acc;
    j["final_val_clip_acc"] = report.final_val_clip_acc;
    j["flops_cm_per_video"] = report.flops_cm_per_video;
    j["wall_seconds"] = report.wall_seconds;
    return j.dump(2) + "\n";
}

Report run_experiment(const learning::RunConfig& config, const fs::path& out_dir,
                      std::size_t threads) {
    const auto started = std::chrono::steady_clock::now();
    learning::validate(config);
    fs::create_directories(out_dir);
    const auto data = load_or_generate(config);

    std::ofstream csv(out_dir / "metrics.csv", std::ios::trunc);
    if (!csv) throw std::runtime_error("cannot write " + (out_dir / "metrics.csv").string());
    csv << learning::metrics_csv_header() << '\n';
    auto on_epoch = [&csv](const learning::EpochMetrics& m) {
        csv << learning::metrics_csv_row(m) << '\n';
        csv.flush();
    };
    learning::TrainOptions options;
    options.threads = threads;

    learning::VideoModel model;
    std::vector<learning::EpochMetrics> history;
    if (config.train.stagewise) {
        model = learning::train_stagewise(config, data, out_dir / "stage1.cmck", &history,
                                          on_epoch, options);
    } else {
        learning::Rng rng(config.seed);
        model = learning::init_model(config.model, config.cm, rng);
        history = learning::train(config, model, data.train, data.val, rng, on_epoch, options);
    }
    model::save_checkpoint(out_dir / "model.cmck", model.parameters());

    Report report;
    report.config_hash = config::config_hash(config);
    if (!history.empty()) {
        report.final_val_video_acc = history.back().val_video_acc;
        report.final_val_clip_acc = history.back().val_clip_acc;
    } else {
        const auto summary = inference::evaluate(data.val, model, config.train.clip_length,
                                                 config.eval.n_crops, threads);
        report.final_val_video_acc = summary.video_accuracy;
        report.final_val_clip_acc = summary.clip_accuracy;
    }
    report.flops_cm_per_video = inference_flops(config);
    report.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();

    std::ofstream(out_dir / "report.json", std::ios::trunc) << report_json(report);
    return report;
}

std::size_t threads_from_env() {
    const char* raw = std::getenv("CLIPMEM_THREADS");
    if (!raw || !*raw) return 1;
    char* end = nullptr;
    const long value = std::strtol(raw, &end, 10);
    if (*end != '\0' || value < 1) return 1;
    return static_cast<std::size_t>(value);
}

}  // namespace clipmem::experiment
