#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "clipmem/grad_check.hpp"
#include "clipmem/tensor.hpp"

namespace clipmem::memory {

using Rng = std::mt19937_64;

enum class MemoryVariant { associative, avgpool };
enum class Infusion { gating, residual };

std::string to_string(MemoryVariant variant);
std::string to_string(Infusion infusion);
MemoryVariant parse_variant(const std::string& text);
Infusion parse_infusion(const std::string& text);

class VariantError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

/// Learnable collaborative-memory weights. Only the projections used by the
/// active variant are defined: associative uses key/value/query, avgpool uses
/// w_in; both use w_out.
struct CMParams {
    MemoryVariant variant = MemoryVariant::associative;
    Infusion infusion = Infusion::gating;
    std::size_t channels = 0;  // d
    std::size_t reduced = 0;   // d' = d / reduction_ratio

    numcore::Tensor w_key;    // d x d'
    numcore::Tensor w_value;  // d x d'
    numcore::Tensor w_query;  // d x d'
    numcore::Tensor w_out;    // d' x d
    numcore::Tensor w_in;     // d x d'
};

/// Projections use the backbone's Glorot scheme; w_out starts at zero so the
/// initial gate is the constant 1.5 (or the residual branch is silent).
CMParams init_cm(std::size_t channels, std::size_t reduction_ratio, MemoryVariant variant,
                 Infusion infusion, Rng& rng);

void append_parameters(const CMParams& params, std::vector<numcore::NamedTensor>& out);

/// Video-wide memory: d' x d' (associative) or 1 x d' (avgpool), whatever N is.
struct GlobalMemory {
    MemoryVariant variant = MemoryVariant::associative;
    numcore::Tensor value;

    std::size_t value_count() const { return value.numel(); }
};

/// Clip-specific context: k x d' (associative) or 1 x d' (avgpool).
struct ClipMemory {
    numcore::Tensor value;
};

/// M = (1/N) sum_n (X_n W_k)^T (X_n W_v), accumulated in clip order.
GlobalMemory push_associative(std::span<const numcore::Tensor> features,
                              const numcore::Tensor& w_key, const numcore::Tensor& w_value);

/// M_n = (X_n W_q) M
ClipMemory pop_associative(const GlobalMemory& memory, const numcore::Tensor& features,
                           const numcore::Tensor& w_query);

/// Mean of X_n W_I over every clip and every one of the k positions.
GlobalMemory push_avgpool(std::span<const numcore::Tensor> features, const numcore::Tensor& w_in);

/// Every clip receives the pooled memory unchanged.
ClipMemory pop_avgpool(const GlobalMemory& memory);

GlobalMemory push(std::span<const numcore::Tensor> features, const CMParams& params);
ClipMemory pop(const GlobalMemory& memory, const numcore::Tensor& features,
               const CMParams& params);

/// X_hat = (1 + sigmoid(GAP(M_n) W_O)) * X, the gate broadcast over the k rows.
numcore::Tensor infuse_gating(const numcore::Tensor& features, const ClipMemory& clip_memory,
                              const numcore::Tensor& w_out);

/// X_hat = M_n W_O + X. A 1 x d' memory is broadcast over the k rows.
numcore::Tensor infuse_residual(const numcore::Tensor& features, const ClipMemory& clip_memory,
                                const numcore::Tensor& w_out);

numcore::Tensor infuse(const numcore::Tensor& features, const ClipMemory& clip_memory,
                       const CMParams& params);

/// Push, then pop and infuse for each clip. Returns the enhanced features in clip order.
std::vector<numcore::Tensor> collaborate(std::span<const numcore::Tensor> features,
                                         const CMParams& params);

/// Pairwise linear-attention form of pop(push(.)) for clip `index`:
/// (1/N) sum_m [(X_n W_q)(X_m W_k)^T](X_m W_v), evaluated with plain loops
/// and no memory matrix. Test oracle only.
ClipMemory attention_oracle(std::span<const numcore::Tensor> features, std::size_t index,
                            const numcore::Tensor& w_query, const numcore::Tensor& w_key,
                            const numcore::Tensor& w_value);

/// Multiply-adds of the associative + gating pipeline over N clips.
std::uint64_t flops_cm(std::uint64_t clips, std::uint64_t positions, std::uint64_t channels,
                       std::uint64_t reduced);

}  // namespace clipmem::memory
