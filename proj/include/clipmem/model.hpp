#pragma once

#include <cstddef>
#include <filesystem>
#include <random>
#include <stdexcept>
#include <vector>

#include "clipmem/grad_check.hpp"
#include "clipmem/tensor.hpp"

namespace clipmem::model {

using Rng = std::mt19937_64;

class ResolutionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Per-frame two-layer MLP followed by k-bin temporal mean pooling.
struct BackboneParams {
    numcore::Tensor w1;  // F x hidden
    numcore::Tensor b1;  // hidden
    numcore::Tensor w2;  // hidden x d
    numcore::Tensor b2;  // d
    std::size_t bins = 2;  // k
};

struct ClassifierParams {
    numcore::Tensor wc;  // d x C
    numcore::Tensor bc;  // C
};

/// Uniform in +-gain * sqrt(6 / (fan_in + fan_out)).
numcore::Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng,
                               double gain = 1.0);

BackboneParams init_backbone(std::size_t feature_dim, std::size_t hidden, std::size_t channels,
                             std::size_t bins, Rng& rng, double w2_gain = 1.0);
ClassifierParams init_classifier(std::size_t channels, std::size_t num_classes, Rng& rng);

/// L x F clip frames -> k x d clip features.
numcore::Tensor encode_clip(const numcore::Tensor& frames, const BackboneParams& params);

/// k x d features -> C logits (mean over the k positions, then affine).
numcore::Tensor classify(const numcore::Tensor& features, const ClassifierParams& params);

void append_parameters(const BackboneParams& params, std::vector<numcore::NamedTensor>& out);
void append_parameters(const ClassifierParams& params, std::vector<numcore::NamedTensor>& out);

// ---------------------------------------------------------------------------
// CMCK1 checkpoints: magic, u32 version, then until EOF records of
// (u16 name length, name, u32 rank, u32 dims..., float64 payload).

void save_checkpoint(const std::filesystem::path& path,
                     const std::vector<numcore::NamedTensor>& params);
std::vector<numcore::NamedTensor> read_checkpoint(const std::filesystem::path& path);

/// Copies stored values into same-named parameters. With `require_all`,
/// every parameter must be present; otherwise absent ones keep their values.
/// Returns the number of parameters loaded.
std::size_t load_checkpoint(const std::filesystem::path& path,
                            const std::vector<numcore::NamedTensor>& params, bool require_all);

}  // namespace clipmem::model
