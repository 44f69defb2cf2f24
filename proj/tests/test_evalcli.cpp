#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"

#include "clipmem/config.hpp"
#include "clipmem/experiment.hpp"
#include "clipmem/inference.hpp"
#include "clipmem/verify.hpp"
#include "support.hpp"

using namespace clipmem;
using numcore::Tensor;
using testsupport::max_abs_diff;
namespace fs = std::filesystem;

namespace {

const char* kTinyConfig = R"({
  "seed": 5,
  "task": {"T": 16, "F": 8, "noise_sigma": 0.2, "n_train": 24, "n_val": 12},
  "model": {"F": 8, "hidden": 6, "d": 8, "k": 2, "C": 2},
  "cm": {"enabled": true, "variant": "associative", "infusion": "gating", "reduction_ratio": 4},
  "train": {"N": 3, "L": 6, "epochs": 2, "base_lr": 0.01, "batch_videos": 12, "warmup_epochs": 1},
  "eval": {"n_crops": 4}
})";

learning::RunConfig tiny() { return config::parse_config(kTinyConfig); }

learning::VideoModel random_model(const learning::RunConfig& c, std::uint64_t seed) {
    learning::Rng rng(seed);
    auto m = learning::init_model(c.model, c.cm, rng);
    std::mt19937_64 g(seed + 1);
    for (auto& p : m.parameters()) {
        auto t = p.tensor;
        for (double& v : t.mutable_data()) v = std::uniform_real_distribution<double>(-0.8, 0.8)(g);
    }
    return m;
}

Tensor crop_tensor(const datagen::VideoSample& v, const datagen::Clip& c) {
    const auto first = v.frames.begin() + static_cast<std::ptrdiff_t>(c.start * v.feature_dim);
    return Tensor::from({c.length, v.feature_dim},
                        std::vector<double>(first, first + static_cast<std::ptrdiff_t>(c.length * v.feature_dim)));
}

fs::path temp_dir(const std::string& name) {
    const auto p = fs::temp_directory_path() / ("clipmem_test_" + name);
    fs::remove_all(p);
    fs::create_directories(p);
    return p;
}

void write_file(const fs::path& p, const std::string& text) { std::ofstream(p) << text; }

std::string read_file(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

int run_cli(const std::string& args) {
    const std::string cmd = std::string(CLIPMEM_CLI) + " " + args + " > /dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("argmax takes the lowest index on ties") {
    CHECK(inference::argmax({0.2, 0.7, 0.7}) == 1);
    CHECK(inference::argmax({0.5, 0.5}) == 0);
    CHECK(inference::argmax({3.0}) == 0);
}

TEST_CASE("a single crop reproduces the clip softmax") {
    const auto c = tiny();
    const auto ds = datagen::gen_dataset(c.task, c.seed);
    for (bool cm : {true, false}) {
        auto cfg = c;
        cfg.cm.enabled = cm;
        const auto model = random_model(cfg, 2);
        const auto& v = ds.val[0];
        const auto pred = inference::infer_video(v, model, 6, 1);
        const auto crops = datagen::uniform_test_crops(v, 6, 1);
        const std::vector<Tensor> clips{crop_tensor(v, crops[0])};
        const auto logits = learning::forward_clips(model, clips)[0];
        const auto expected = numcore::softmax(logits.data());
        CHECK(max_abs_diff(pred.video_probs, expected) <= 1e-14);
        CHECK(pred.predicted == inference::argmax(expected));
    }
}

TEST_CASE("without memory, video scores are the plain average of per-crop softmaxes") {
    auto c = tiny();
    c.cm.enabled = false;
    const auto ds = datagen::gen_dataset(c.task, c.seed);
    const auto model = random_model(c, 3);
    const auto& v = ds.val[1];
    const auto pred = inference::infer_video(v, model, 6, 4);
    const auto crops = datagen::uniform_test_crops(v, 6, 4);
    REQUIRE(pred.per_crop_probs.size() == 4);
    std::vector<double> avg(2, 0.0);
    for (std::size_t i = 0; i < crops.size(); ++i) {
        const std::vector<Tensor> one{crop_tensor(v, crops[i])};
        const auto p = numcore::softmax(learning::forward_clips(model, one)[0].data());
        CHECK(max_abs_diff(pred.per_crop_probs[i], p) <= 1e-14);
        for (std::size_t k = 0; k < 2; ++k) avg[k] += p[k] / 4.0;
    }
    CHECK(max_abs_diff(pred.video_probs, avg) <= 1e-14);
}

TEST_CASE("with memory, each crop is classified against the memory of all crops") {
    const auto c = tiny();
    const auto ds = datagen::gen_dataset(c.task, c.seed);
    const auto model = random_model(c, 4);
    const auto& v = ds.val[2];
    const auto pred = inference::infer_video(v, model, 6, 4);
    std::vector<Tensor> clips;
    for (const auto& crop : datagen::uniform_test_crops(v, 6, 4)) clips.push_back(crop_tensor(v, crop));
    const auto logits = learning::forward_clips(model, clips);
    for (std::size_t i = 0; i < 4; ++i) {
        CHECK(max_abs_diff(pred.per_crop_probs[i], numcore::softmax(logits[i].data())) <= 1e-12);
        double s = 0.0;
        for (double p : pred.per_crop_probs[i]) s += p;
        CHECK(s == doctest::Approx(1.0).epsilon(1e-14));
    }
}

TEST_CASE("evaluate does not depend on the thread count") {
    const auto c = tiny();
    const auto ds = datagen::gen_dataset(c.task, c.seed);
    const auto model = random_model(c, 5);
    const auto one = inference::evaluate(ds.val, model, 6, 4, 1);
    REQUIRE(one.per_position_accuracy.size() == 4);
    double mean_pos = 0.0;
    for (double a : one.per_position_accuracy) mean_pos += a / 4.0;
    CHECK(one.clip_accuracy == doctest::Approx(mean_pos).epsilon(1e-12));
    for (std::size_t threads : {2u, 3u, 7u, 32u}) {
        const auto many = inference::evaluate(ds.val, model, 6, 4, threads);
        CHECK(many.video_accuracy == one.video_accuracy);
        CHECK(many.clip_accuracy == one.clip_accuracy);
        CHECK(many.per_position_accuracy == one.per_position_accuracy);
        for (std::size_t n = 0; n < one.predictions.size(); ++n)
            CHECK(many.predictions[n].video_probs == one.predictions[n].video_probs);
    }
}

TEST_CASE("config parsing") {
    const auto c = tiny();
    CHECK(c.seed == 5);
    CHECK(c.task.num_frames == 16);
    CHECK(c.train.clips_per_video == 3);
    CHECK(c.eval.n_crops == 4);
    CHECK(c.train.momentum == 0.9);  // default kept

    const auto again = config::parse_config(config::to_json(c).dump());
    CHECK(config::to_json(again) == config::to_json(c));
    CHECK(config::config_hash(again) == config::config_hash(c));
    CHECK(config::config_hash(c).size() == 16);
    auto other = c;
    other.seed = 6;
    CHECK(config::config_hash(other) != config::config_hash(c));

    CHECK_THROWS_AS(config::parse_config(R"({"bogus": 1})"), config::ConfigError);
    try {
        config::parse_config(R"({"train": {"epochs": "many"}})");
        FAIL("expected ConfigError");
    } catch (const config::ConfigError& e) {
        CHECK(std::string(e.what()).find("train.epochs") != std::string::npos);
    }
    try {
        config::parse_config(R"({"model": {"hiden": 3}})");
        FAIL("expected ConfigError");
    } catch (const config::ConfigError& e) {
        CHECK(std::string(e.what()).find("model.hiden") != std::string::npos);
    }
    CHECK_THROWS_AS(config::parse_config("{\"seed\": 1,"), config::ConfigError);
    CHECK_THROWS_AS(config::parse_config(R"({"cm": {"variant": "bilinear"}})"), config::ConfigError);
    CHECK_THROWS_AS(config::load_config("/nonexistent/clipmem.json"), config::ConfigError);
}

TEST_CASE("inference flops") {
    auto c = tiny();
    CHECK(experiment::inference_flops(c) == memory::flops_cm(4, 2, 8, 2));
    c.cm.enabled = false;
    CHECK(experiment::inference_flops(c) == 0);
}

TEST_CASE("run_experiment writes its artifacts and is reproducible") {
    const auto c = tiny();
    const auto a_dir = temp_dir("run_a");
    const auto b_dir = temp_dir("run_b");
    const auto a = experiment::run_experiment(c, a_dir);
    const auto b = experiment::run_experiment(c, b_dir, 4);
    for (const char* f : {"metrics.csv", "report.json", "model.cmck"}) CHECK(fs::exists(a_dir / f));
    CHECK(read_file(a_dir / "metrics.csv") == read_file(b_dir / "metrics.csv"));
    CHECK(read_file(a_dir / "model.cmck") == read_file(b_dir / "model.cmck"));
    CHECK(a.final_val_video_acc == b.final_val_video_acc);
    CHECK(a.config_hash == config::config_hash(c));
    CHECK(a.flops_cm_per_video == experiment::inference_flops(c));

    const auto j = nlohmann::json::parse(read_file(a_dir / "report.json"));
    for (const char* key : {"config_hash", "final_val_video_acc", "final_val_clip_acc",
                            "flops_cm_per_video", "wall_seconds"})
        CHECK(j.contains(key));
    CHECK(j["config_hash"] == a.config_hash);

    std::istringstream csv(read_file(a_dir / "metrics.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == learning::metrics_csv_header());
    std::size_t rows = 0;
    while (std::getline(csv, line)) ++rows;
    CHECK(rows == c.train.epochs);
    fs::remove_all(a_dir);
    fs::remove_all(b_dir);
}

TEST_CASE("verify suites") {
    const auto names = verify::suite_names();
    CHECK(names.size() >= 6);
    const auto all = verify::run_verify("all");
    CHECK(all.size() == names.size());
    for (const auto& r : all) {
        CAPTURE(r.name);
        CAPTURE(r.detail);
        CHECK(r.passed);
    }

    verify::VerifyOptions corrupt;
    corrupt.corrupt_w_out_grad = true;
    bool any_failed = false;
    for (const auto& r : verify::pipeline_grad_check(1, corrupt)) any_failed = any_failed || r.max_rel_diff > 1e-5;
    CHECK(any_failed);
    CHECK_THROWS_AS(verify::run_verify("nonsense"), verify::UnknownSuite);
}

TEST_CASE("cli exit codes") {
    const auto dir = temp_dir("cli");
    const auto cfg = dir / "tiny.json";
    write_file(cfg, kTinyConfig);
    const auto bad = dir / "bad.json";
    write_file(bad, R"({"train": {"epochs": -3}})");

    CHECK(run_cli("") == 2);
    CHECK(run_cli("frobnicate") == 2);
    CHECK(run_cli("gen-data --config " + cfg.string() + " --out " + (dir / "d.cmvd").string()) == 0);
    CHECK(fs::exists(dir / "d.cmvd"));
    CHECK(run_cli("flops --config " + cfg.string()) == 0);
    CHECK(run_cli("flops --config " + bad.string()) == 2);
    CHECK(run_cli("train --config " + cfg.string() + " --out-dir " + (dir / "run").string()) == 0);
    CHECK(run_cli("eval --config " + cfg.string() + " --checkpoint " + (dir / "run" / "model.cmck").string()) == 0);
    CHECK(run_cli("eval --config " + cfg.string() + " --checkpoint " + (dir / "missing.cmck").string()) == 1);
    CHECK(run_cli("verify --suite memory") == 0);
    CHECK(run_cli("verify --suite nonsense") == 2);
    fs::remove_all(dir);
}
