#include "clipmem/config.hpp"

#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>

namespace clipmem::config {

using nlohmann::json;

namespace {

// Reads fields of one JSON object, rejecting any key that is never asked for.
class ObjectReader {
public:
    ObjectReader(const json& object, std::string path) : object_(object), path_(std::move(path)) {
        if (!object_.is_object()) throw ConfigError(where() + ": expected an object");
    }

    template <typename T>
    void read(const char* key, T& target) {
        known_.insert(key);
        auto it = object_.find(key);
        if (it == object_.end()) return;
        try {
            if constexpr (std::is_unsigned_v<T> && !std::is_same_v<T, bool>) {
                if (!it->is_number_unsigned())
                    throw ConfigError(field(key) + ": expected a non-negative integer");
            } else if constexpr (std::is_floating_point_v<T>) {
                if (!it->is_number()) throw ConfigError(field(key) + ": expected a number");
            } else if constexpr (std::is_same_v<T, bool>) {
                if (!it->is_boolean()) throw ConfigError(field(key) + ": expected true or false");
            } else if constexpr (std::is_same_v<T, std::string>) {
                if (!it->is_string()) throw ConfigError(field(key) + ": expected a string");
            }
            target = it->get<T>();
        } catch (const json::exception& e) {
            throw ConfigError(field(key) + ": " + e.what());
        }
    }

    template <typename Enum, typename Parse>
    void read_enum(const char* key, Enum& target, Parse parse) {
        known_.insert(key);
        auto it = object_.find(key);
        if (it == object_.end()) return;
        if (!it->is_string()) throw ConfigError(field(key) + ": expected a string");
        try {
            target = parse(it->get<std::string>());
        } catch (const std::invalid_argument& e) {
            throw ConfigError(field(key) + ": " + e.what());
        }
    }

    ObjectReader child(const char* key) {
        known_.insert(key);
        auto it = object_.find(key);
        static const json empty = json::object();
        return ObjectReader(it == object_.end() ? empty : *it, field(key));
    }

    void finish() const {
        for (const auto& item : object_.items()) {
            if (!known_.count(item.key())) throw ConfigError(field(item.key().c_str()) + ": unknown field");
        }
    }

private:
    std::string where() const { return path_.empty() ? "config" : "field " + path_; }
    std::string field(const char* key) const {
        return "field " + (path_.empty() ? std::string(key) : path_ + "." + key);
    }

    const json& object_;
    std::string path_;
    std::set<std::string> known_;
};

}  // namespace

learning::RunConfig parse_config(const std::string& text) {
    json doc;
    try {
        doc = json::parse(text);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("malformed config: ") + e.what());
    }
    learning::RunConfig c;
    ObjectReader root(doc, "");
    root.read("seed", c.seed);
    root.read("data_path", c.data_path);

    auto task = root.child("task");
    task.read("T", c.task.num_frames);
    task.read("F", c.task.feature_dim);
    task.read("noise_sigma", c.task.noise_sigma);
    task.read("n_train", c.task.n_train);
    task.read("n_val", c.task.n_val);
    task.read("motif_seed", c.task.motif_seed);
    task.finish();

    auto model = root.child("model");
    model.read("F", c.model.feature_dim);
    model.read("hidden", c.model.hidden);
    model.read("d", c.model.channels);
    model.read("k", c.model.bins);
    model.read("C", c.model.num_classes);
    model.read("w2_init_gain", c.model.w2_init_gain);
    model.finish();

    auto cm = root.child("cm");
    cm.read("enabled", c.cm.enabled);
    cm.read_enum("variant", c.cm.variant, memory::parse_variant);
    cm.read_enum("infusion", c.cm.infusion, memory::parse_infusion);
    cm.read("reduction_ratio", c.cm.reduction_ratio);
    cm.finish();

    auto train = root.child("train");
    train.read("N", c.train.clips_per_video);
    train.read("L", c.train.clip_length);
    train.read("alpha_loss", c.train.alpha_loss);
    train.read("epochs", c.train.epochs);
    train.read("base_lr", c.train.base_lr);
    train.read("momentum", c.train.momentum);
    train.read("weight_decay", c.train.weight_decay);
    train.read("warmup_epochs", c.train.warmup_epochs);
    train.read_enum("strategy", c.train.strategy, learning::parse_strategy);
    train.read("batch_videos", c.train.batch_videos);
    train.read("stagewise", c.train.stagewise);
    train.read("stage1_epochs", c.train.stage1_epochs);
    train.finish();

    auto eval = root.child("eval");
    eval.read("n_crops", c.eval.n_crops);
    eval.finish();
    root.finish();

    try {
        learning::validate(c);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return c;
}

learning::RunConfig load_config(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    try {
        return parse_config(text.str());
    } catch (const ConfigError& e) {
        throw ConfigError(path.string() + ": " + e.what());
    }
}

json to_json(const learning::RunConfig& c) {
    return json{
        {"seed", c.seed},
        {"data_path", c.data_path},
        {"task",
         {{"T", c.task.num_frames},
          {"F", c.task.feature_dim},
          {"noise_sigma", c.task.noise_sigma},
          {"n_train", c.task.n_train},
          {"n_val", c.task.n_val},
          {"motif_seed", c.task.motif_seed}}},
        {"model",
         {{"F", c.model.feature_dim},
          {"hidden", c.model.hidden},
          {"d", c.model.channels},
          {"k", c.model.bins},
          {"C", c.model.num_classes},
          {"w2_init_gain", c.model.w2_init_gain}}},
        {"cm",
         {{"enabled", c.cm.enabled},
          {"variant", memory::to_string(c.cm.variant)},
          {"infusion", memory::to_string(c.cm.infusion)},
          {"reduction_ratio", c.cm.reduction_ratio}}},
        {"train",
         {{"N", c.train.clips_per_video},
          {"L", c.train.clip_length},
          {"alpha_loss", c.train.alpha_loss},
          {"epochs", c.train.epochs},
          {"base_lr", c.train.base_lr},
          {"momentum", c.train.momentum},
          {"weight_decay", c.train.weight_decay},
          {"warmup_epochs", c.train.warmup_epochs},
          {"strategy", learning::to_string(c.train.strategy)},
          {"batch_videos", c.train.batch_videos},
          {"stagewise", c.train.stagewise},
          {"stage1_epochs", c.train.stage1_epochs}}},
        {"eval", {{"n_crops", c.eval.n_crops}}},
    };
}

std::string config_hash(const learning::RunConfig& config) {
    const std::string canonical = to_json(config).dump();
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char ch : canonical) {
        h ^= ch;
        h *= 0x100000001b3ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace clipmem::config
