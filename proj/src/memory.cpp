#include "clipmem/memory.hpp"

#include "clipmem/model.hpp"

namespace clipmem::memory {

using numcore::Tensor;

std::string to_string(MemoryVariant variant) {
    return variant == MemoryVariant::associative ? "associative" : "avgpool";
}

std::string to_string(Infusion infusion) {
    return infusion == Infusion::gating ? "gating" : "residual";
}

MemoryVariant parse_variant(const std::string& text) {
    if (text == "associative") return MemoryVariant::associative;
    if (text == "avgpool") return MemoryVariant::avgpool;
    throw std::invalid_argument("unknown memory variant '" + text +
                                "' (expected associative|avgpool)");
}

Infusion parse_infusion(const std::string& text) {
    if (text == "gating") return Infusion::gating;
    if (text == "residual") return Infusion::residual;
    throw std::invalid_argument("unknown infusion '" + text + "' (expected gating|residual)");
}

CMParams init_cm(std::size_t channels, std::size_t reduction_ratio, MemoryVariant variant,
                 Infusion infusion, Rng& rng) {
    if (reduction_ratio == 0 || channels / reduction_ratio == 0) {
        throw numcore::DimensionError("init_cm: reduction ratio " +
                                      std::to_string(reduction_ratio) + " leaves no channels of " +
                                      std::to_string(channels));
    }
    CMParams p;
    p.variant = variant;
    p.infusion = infusion;
    p.channels = channels;
    p.reduced = channels / reduction_ratio;
    if (variant == MemoryVariant::associative) {
        p.w_key = model::glorot_uniform(channels, p.reduced, rng);
        p.w_value = model::glorot_uniform(channels, p.reduced, rng);
        p.w_query = model::glorot_uniform(channels, p.reduced, rng);
    } else {
        p.w_in = model::glorot_uniform(channels, p.reduced, rng);
    }
    p.w_out = Tensor::zeros({p.reduced, channels}, true);
    return p;
}

void append_parameters(const CMParams& params, std::vector<numcore::NamedTensor>& out) {
    if (params.variant == MemoryVariant::associative) {
        out.push_back({"cm.w_key", params.w_key});
        out.push_back({"cm.w_value", params.w_value});
        out.push_back({"cm.w_query", params.w_query});
    } else {
        out.push_back({"cm.w_in", params.w_in});
    }
    out.push_back({"cm.w_out", params.w_out});
}

namespace {

void check_same_shapes(std::span<const Tensor> features, const char* op) {
    if (features.empty()) throw numcore::DimensionError(std::string(op) + ": no clips");
    for (const auto& x : features) {
        if (x.rank() != 2 || x.shape() != features[0].shape()) {
            throw numcore::DimensionError(std::string(op) + ": clip features of shape " +
                                          numcore::shape_to_string(x.shape()) +
                                          " do not match " +
                                          numcore::shape_to_string(features[0].shape()));
        }
    }
}

}  // namespace

GlobalMemory push_associative(std::span<const Tensor> features, const Tensor& w_key,
                              const Tensor& w_value) {
    check_same_shapes(features, "push_associative");
    Tensor acc;
    for (const auto& x : features) {
        Tensor keys = numcore::matmul(x, w_key);
        Tensor values = numcore::matmul(x, w_value);
        Tensor outer = numcore::matmul(numcore::transpose(keys), values);
        acc = acc.defined() ? numcore::add(acc, outer) : outer;
    }
    return {MemoryVariant::associative,
            numcore::scale(acc, 1.0 / static_cast<double>(features.size()))};
}

ClipMemory pop_associative(const GlobalMemory& memory, const Tensor& features,
                           const Tensor& w_query) {
    if (memory.variant != MemoryVariant::associative)
        throw VariantError("pop_associative: memory was built by the avgpool variant");
    return {numcore::matmul(numcore::matmul(features, w_query), memory.value)};
}

GlobalMemory push_avgpool(std::span<const Tensor> features, const Tensor& w_in) {
    check_same_shapes(features, "push_avgpool");
    Tensor acc;
    for (const auto& x : features) {
        Tensor projected = numcore::matmul(x, w_in);
        acc = acc.defined() ? numcore::add(acc, projected) : projected;
    }
    const std::size_t reduced = w_in.dim(1);
    Tensor pooled = numcore::scale(numcore::mean_over_axes(acc, {0}),
                                   1.0 / static_cast<double>(features.size()));
    return {MemoryVariant::avgpool, numcore::reshape(pooled, {1, reduced})};
}

ClipMemory pop_avgpool(const GlobalMemory& memory) {
    if (memory.variant != MemoryVariant::avgpool)
        throw VariantError("pop_avgpool: memory was built by the associative variant");
    return {memory.value};
}

GlobalMemory push(std::span<const Tensor> features, const CMParams& params) {
    return params.variant == MemoryVariant::associative
               ? push_associative(features, params.w_key, params.w_value)
               : push_avgpool(features, params.w_in);
}

ClipMemory pop(const GlobalMemory& memory, const Tensor& features, const CMParams& params) {
    if (memory.variant != params.variant)
        throw VariantError("pop: memory variant does not match parameters");
    return params.variant == MemoryVariant::associative
               ? pop_associative(memory, features, params.w_query)
               : pop_avgpool(memory);
}

Tensor infuse_gating(const Tensor& features, const ClipMemory& clip_memory, const Tensor& w_out) {
    const std::size_t reduced = clip_memory.value.dim(1);
    Tensor summary = numcore::reshape(numcore::mean_over_axes(clip_memory.value, {0}), {1, reduced});
    Tensor gate = numcore::add_scalar(numcore::sigmoid(numcore::matmul(summary, w_out)), 1.0);
    return numcore::mul(features, gate);
}

Tensor infuse_residual(const Tensor& features, const ClipMemory& clip_memory,
                       const Tensor& w_out) {
    Tensor context = numcore::matmul(clip_memory.value, w_out);
    if (context.shape() == features.shape()) return numcore::add(context, features);
    if (context.dim(0) == 1) return numcore::add_row(features, context);
    throw numcore::DimensionError("infuse_residual: context of shape " +
                                  numcore::shape_to_string(context.shape()) +
                                  " cannot be added to features of shape " +
                                  numcore::shape_to_string(features.shape()));
}

Tensor infuse(const Tensor& features, const ClipMemory& clip_memory, const CMParams& params) {
    return params.infusion == Infusion::gating
               ? infuse_gating(features, clip_memory, params.w_out)
               : infuse_residual(features, clip_memory, params.w_out);
}

std::vector<Tensor> collaborate(std::span<const Tensor> features, const CMParams& params) {
    const GlobalMemory memory = push(features, params);
    std::vector<Tensor> enhanced;
    enhanced.reserve(features.size());
    for (const auto& x : features) enhanced.push_back(infuse(x, pop(memory, x, params), params));
    return enhanced;
}

ClipMemory attention_oracle(std::span<const Tensor> features, std::size_t index,
                            const Tensor& w_query, const Tensor& w_key, const Tensor& w_value) {
    check_same_shapes(features, "attention_oracle");
    if (index >= features.size())
        throw numcore::DimensionError("attention_oracle: clip index out of range");
    const std::size_t k = features[0].dim(0);
    const std::size_t d = features[0].dim(1);
    const std::size_t r = w_query.dim(1);

    auto project = [&](const Tensor& x, const Tensor& w) {
        std::vector<double> out(k * r, 0.0);
        for (std::size_t i = 0; i < k; ++i)
            for (std::size_t c = 0; c < d; ++c)
                for (std::size_t j = 0; j < r; ++j) out[i * r + j] += x.at(i, c) * w.at(c, j);
        return out;
    };

    const auto query = project(features[index], w_query);
    std::vector<double> out(k * r, 0.0);
    for (const auto& other : features) {
        const auto keys = project(other, w_key);
        const auto values = project(other, w_value);
        // Unnormalized attention weights between positions of clip n and clip m.
        for (std::size_t i = 0; i < k; ++i) {
            for (std::size_t p = 0; p < k; ++p) {
                double weight = 0.0;
                for (std::size_t j = 0; j < r; ++j) weight += query[i * r + j] * keys[p * r + j];
                for (std::size_t j = 0; j < r; ++j) out[i * r + j] += weight * values[p * r + j];
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(features.size());
    for (double& v : out) v *= inv;
    return {Tensor::from({k, r}, std::move(out))};
}

std::uint64_t flops_cm(std::uint64_t clips, std::uint64_t positions, std::uint64_t channels,
                       std::uint64_t reduced) {
    const std::uint64_t projections = 3 * positions * channels * reduced;
    const std::uint64_t push_outer = positions * reduced * reduced;
    const std::uint64_t pop_product = positions * reduced * reduced;
    const std::uint64_t gate_linear = reduced * channels;
    const std::uint64_t gate_apply = positions * channels;
    return clips * (projections + push_outer + pop_product + gate_linear + gate_apply);
}

}  // namespace clipmem::memory
