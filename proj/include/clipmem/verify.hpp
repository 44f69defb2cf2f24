#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace clipmem::verify {

struct SuiteResult {
    std::string name;
    bool passed = false;
    std::string detail;
    double seconds = 0.0;
};

/// Fault injection for negative controls.
struct VerifyOptions {
    // Perturbs the analytic gradient of the memory output projection before it
    // is compared with finite differences.
    bool corrupt_w_out_grad = false;
};

std::vector<std::string> suite_names();

class UnknownSuite : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Runs one named suite, or every suite for "all".
std::vector<SuiteResult> run_verify(const std::string& suite, const VerifyOptions& options = {});

// Individual measurements, shared with the acceptance suite.

/// Max |pop(push(.)) - attention_oracle| over `configs` random configurations.
double oracle_equivalence_error(std::size_t configs, unsigned seed);

struct PipelineGradResult {
    std::string combination;
    std::size_t parameter_count = 0;
    double max_rel_diff = 0.0;
};

/// Finite-difference check of encode -> push -> pop -> infuse -> video_loss
/// for all four variant x infusion combinations.
std::vector<PipelineGradResult> pipeline_grad_check(unsigned seed, const VerifyOptions& options = {});

struct StrategyResult {
    std::size_t clips = 0;
    double loss_diff = 0.0;
    double max_grad_diff = 0.0;
};

/// Paired batch-reduction / multi-iteration steps on identical clips.
std::vector<StrategyResult> strategy_equivalence(const std::vector<std::size_t>& clip_counts,
                                                 unsigned seed);

struct FlopsResult {
    std::size_t shapes_checked = 0;
    std::size_t mismatches = 0;
    bool doubling_linear = false;
};

/// Instrumented multiply-add count versus flops_cm on random shapes.
FlopsResult flops_counter_check(std::size_t shapes, unsigned seed);

/// True when the memory holds d'^2 (associative) or d' (avgpool) values for
/// every N in [1, max_clips].
bool storage_invariance(std::size_t max_clips, unsigned seed);

}  // namespace clipmem::verify
