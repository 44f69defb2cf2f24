#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "clipmem/datagen.hpp"
#include "clipmem/learning.hpp"

namespace clipmem::experiment {

struct Report {
    std::string config_hash;
    double final_val_video_acc = 0.0;
    double final_val_clip_acc = 0.0;
    std::uint64_t flops_cm_per_video = 0;
    double wall_seconds = 0.0;
};

/// Reads config.data_path when it exists (first n_train videos are the
/// training split), otherwise generates the dataset and, if a path is set,
/// writes it there.
datagen::Dataset load_or_generate(const learning::RunConfig& config);

/// Generates the dataset described by `config` and writes it as one CMVD1
/// file, training videos first.
void write_dataset(const learning::RunConfig& config, const std::filesystem::path& out);

/// Inference-time memory cost: flops_cm(n_crops, k, d, d'), or 0 with the
/// memory disabled.
std::uint64_t inference_flops(const learning::RunConfig& config);

/// Optional stage 1, training, and final evaluation. Writes metrics.csv,
/// report.json and model.cmck (plus stage1.cmck when stage-wise) to `out_dir`.
Report run_experiment(const learning::RunConfig& config, const std::filesystem::path& out_dir,
                      std::size_t threads = 1);

std::string report_json(const Report& report);

/// Worker count from CLIPMEM_THREADS; 1 when unset or invalid.
std::size_t threads_from_env();

}  // namespace clipmem::experiment
