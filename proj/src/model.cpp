#include "clipmem/model.hpp"

#include <cmath>
#include <fstream>
#include <map>

#include "binary_io.hpp"

namespace clipmem::model {

using numcore::Tensor;

namespace {
constexpr char kMagic[5] = {'C', 'M', 'C', 'K', '1'};
constexpr std::uint32_t kVersion = 1;
}  // namespace

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng, double gain) {
    const double limit = gain * std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> values(fan_in * fan_out);
    for (double& v : values) v = dist(rng);
    return Tensor::from({fan_in, fan_out}, std::move(values), true);
}

BackboneParams init_backbone(std::size_t feature_dim, std::size_t hidden, std::size_t channels,
                             std::size_t bins, Rng& rng, double w2_gain) {
    if (hidden == 0 || channels == 0 || bins == 0)
        throw ResolutionError("init_backbone: hidden, d and k must be positive");
    BackboneParams p;
    p.w1 = glorot_uniform(feature_dim, hidden, rng);
    p.b1 = Tensor::zeros({hidden}, true);
    p.w2 = glorot_uniform(hidden, channels, rng, w2_gain);
    p.b2 = Tensor::zeros({channels}, true);
    p.bins = bins;
    return p;
}

ClassifierParams init_classifier(std::size_t channels, std::size_t num_classes, Rng& rng) {
    if (num_classes < 2) throw ResolutionError("init_classifier: need at least two classes");
    return {glorot_uniform(channels, num_classes, rng), Tensor::zeros({num_classes}, true)};
}

Tensor encode_clip(const Tensor& frames, const BackboneParams& params) {
    if (frames.rank() != 2 || frames.dim(0) < params.bins) {
        throw ResolutionError("encode_clip: clip of shape " +
                              numcore::shape_to_string(frames.shape()) + " cannot fill " +
                              std::to_string(params.bins) + " temporal bins");
    }
    Tensor hidden = numcore::relu(numcore::add_row(numcore::matmul(frames, params.w1), params.b1));
    Tensor per_frame = numcore::add_row(numcore::matmul(hidden, params.w2), params.b2);
    return numcore::bin_mean_rows(per_frame, params.bins);
}

Tensor classify(const Tensor& features, const ClassifierParams& params) {
    const std::size_t d = features.dim(1);
    Tensor pooled = numcore::reshape(numcore::mean_over_axes(features, {0}), {1, d});
    Tensor logits = numcore::add_row(numcore::matmul(pooled, params.wc), params.bc);
    return numcore::reshape(logits, {params.bc.numel()});
}

void append_parameters(const BackboneParams& params, std::vector<numcore::NamedTensor>& out) {
    out.push_back({"backbone.w1", params.w1});
    out.push_back({"backbone.b1", params.b1});
    out.push_back({"backbone.w2", params.w2});
    out.push_back({"backbone.b2", params.b2});
}

void append_parameters(const ClassifierParams& params, std::vector<numcore::NamedTensor>& out) {
    out.push_back({"classifier.wc", params.wc});
    out.push_back({"classifier.bc", params.bc});
}

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<numcore::NamedTensor>& params) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
    out.write(kMagic, sizeof(kMagic));
    io::put_le(out, kVersion);
    for (const auto& p : params) {
        if (p.name.size() > 0xFFFF) throw CheckpointError("parameter name too long: " + p.name);
        io::put_le(out, static_cast<std::uint16_t>(p.name.size()));
        out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        const auto& shape = p.tensor.shape();
        io::put_le(out, io::checked_u32(shape.size(), "rank"));
        for (auto dim : shape) io::put_le(out, io::checked_u32(dim, "dimension"));
        for (double v : p.tensor.data()) io::put_f64(out, v);
    }
    if (!out) throw CheckpointError("write failed for " + path.string());
}

std::vector<numcore::NamedTensor> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    char magic[sizeof(kMagic)] = {};
    in.read(magic, sizeof(magic));
    if (!std::equal(std::begin(magic), std::end(magic), std::begin(kMagic)))
        throw CheckpointError(path.string() + ": not a CMCK1 checkpoint");
    std::vector<numcore::NamedTensor> records;
    try {
        const auto version = io::get_le<std::uint32_t>(in);
        if (version != kVersion)
            throw CheckpointError(path.string() + ": unsupported version " +
                                  std::to_string(version));
        std::uint16_t name_len = 0;
        while (io::try_get_le(in, name_len)) {
            std::string name(name_len, '\0');
            in.read(name.data(), name_len);
            if (in.gcount() != name_len) throw std::runtime_error("truncated name");
            const auto rank = io::get_le<std::uint32_t>(in);
            numcore::Shape shape(rank);
            for (auto& dim : shape) dim = io::get_le<std::uint32_t>(in);
            std::vector<double> values(numcore::shape_numel(shape));
            for (double& v : values) v = io::get_f64(in);
            records.push_back({std::move(name), Tensor::from(std::move(shape), std::move(values))});
        }
    } catch (const CheckpointError&) {
        throw;
    } catch (const std::runtime_error& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
    return records;
}

std::size_t load_checkpoint(const std::filesystem::path& path,
                            const std::vector<numcore::NamedTensor>& params, bool require_all) {
    std::map<std::string, Tensor> stored;
    for (auto& r : read_checkpoint(path)) stored.emplace(r.name, r.tensor);
    std::size_t loaded = 0;
    for (const auto& p : params) {
        auto it = stored.find(p.name);
        if (it == stored.end()) {
            if (require_all)
                throw CheckpointError(path.string() + ": missing parameter " + p.name);
            continue;
        }
        if (it->second.shape() != p.tensor.shape()) {
            throw CheckpointError(path.string() + ": parameter " + p.name + " has shape " +
                                  numcore::shape_to_string(it->second.shape()) + ", expected " +
                                  numcore::shape_to_string(p.tensor.shape()));
        }
        Tensor target = p.tensor;
        auto dst = target.mutable_data();
        const auto src = it->second.data();
        std::copy(src.begin(), src.end(), dst.begin());
        ++loaded;
    }
    return loaded;
}

}  // namespace clipmem::model
