// clipmem: data generation, training, evaluation and verification driver.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"

#include "clipmem/config.hpp"
#include "clipmem/experiment.hpp"
#include "clipmem/inference.hpp"
#include "clipmem/memory.hpp"
#include "clipmem/verify.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

using namespace clipmem;

int cmd_gen_data(const std::string& config_path, const std::string& out) {
    const auto config = config::load_config(config_path);
    experiment::write_dataset(config, out);
    std::cout << "wrote " << (config.task.n_train + config.task.n_val) << " videos to " << out
              << "\n";
    return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& out_dir) {
    const auto config = config::load_config(config_path);
    const auto report = experiment::run_experiment(config, out_dir, experiment::threads_from_env());
    std::cout << experiment::report_json(report);
    return kExitOk;
}

int cmd_eval(const std::string& config_path, const std::string& checkpoint) {
    const auto config = config::load_config(config_path);
    const auto data = experiment::load_or_generate(config);
    learning::Rng rng(config.seed);
    auto model = learning::init_model(config.model, config.cm, rng);
    model::load_checkpoint(checkpoint, model.parameters(), true);
    const auto summary =
        inference::evaluate(data.val, model, config.train.clip_length, config.eval.n_crops,
                            experiment::threads_from_env());
    nlohmann::ordered_json j;
    j["val_video_acc"] = summary.video_accuracy;
    j["val_clip_acc"] = summary.clip_accuracy;
    j["per_position_acc"] = summary.per_position_accuracy;
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

int cmd_verify(const std::string& suite) {
    const auto results = verify::run_verify(suite);
    bool ok = true;
    for (const auto& r : results) {
        std::printf("[%s] %-9s %7.2fs  %s\n", r.passed ? "PASS" : "FAIL", r.name.c_str(), r.seconds,
                    r.detail.c_str());
        ok = ok && r.passed;
    }
    std::printf("%zu suites, %s\n", results.size(), ok ? "all passed" : "FAILURES");
    return ok ? kExitOk : kExitFailure;
}

int cmd_flops(const std::string& config_path) {
    const auto config = config::load_config(config_path);
    const std::size_t reduced = config.model.channels / config.cm.reduction_ratio;
    nlohmann::ordered_json j;
    j["N"] = config.train.clips_per_video;
    j["k"] = config.model.bins;
    j["d"] = config.model.channels;
    j["d_reduced"] = reduced;
    j["flops_cm_per_training_video"] =
        memory::flops_cm(config.train.clips_per_video, config.model.bins, config.model.channels,
                         reduced);
    j["flops_cm_per_video"] = memory::flops_cm(config.eval.n_crops, config.model.bins,
                                               config.model.channels, reduced);
    std::cout << j.dump(2) << "\n";
    return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Video-level learning with collaborative memory on a synthetic XOR-motif task"};
    app.require_subcommand(1);

    std::string config_path, out, out_dir, checkpoint, suite = "all";

    auto* gen = app.add_subcommand("gen-data", "Generate the dataset described by a config");
    gen->add_option("--config", config_path, "Run config (JSON)")->required();
    gen->add_option("--out", out, "Output CMVD1 file")->required();

    auto* train = app.add_subcommand("train", "Train and evaluate; writes metrics.csv, report.json, checkpoints");
    train->add_option("--config", config_path, "Run config (JSON)")->required();
    train->add_option("--out-dir", out_dir, "Output directory")->required();

    auto* eval = app.add_subcommand("eval", "Multi-crop evaluation of a checkpoint on the validation split");
    eval->add_option("--config", config_path, "Run config (JSON)")->required();
    eval->add_option("--checkpoint", checkpoint, "CMCK1 checkpoint")->required();

    auto* verify = app.add_subcommand("verify", "Run property suites");
    verify->add_option("--suite", suite, "all|numcore|datagen|memory|storage|grad|strategy|flops");

    auto* flops = app.add_subcommand("flops", "Memory multiply-add counts for a config");
    flops->add_option("--config", config_path, "Run config (JSON)")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? kExitOk : kExitUsage;
    }

    try {
        if (*gen) return cmd_gen_data(config_path, out);
        if (*train) return cmd_train(config_path, out_dir);
        if (*eval) return cmd_eval(config_path, checkpoint);
        if (*verify) return cmd_verify(suite);
        if (*flops) return cmd_flops(config_path);
    } catch (const config::ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const verify::UnknownSuite& e) {
        std::cerr << "usage error: " << e.what() << "\n";
        return kExitUsage;
    } catch (const learning::NonFiniteLoss& e) {
        std::cerr << "training aborted: " << e.what() << "\n";
        return kExitFailure;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}
