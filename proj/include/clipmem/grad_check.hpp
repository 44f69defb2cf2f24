#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "clipmem/tensor.hpp"

namespace clipmem::numcore {

struct NamedTensor {
    std::string name;
    Tensor tensor;
};

struct ParamGradCheck {
    std::string name;
    std::vector<double> analytic;
    std::vector<double> numeric;
};

struct GradReport {
    double max_abs_diff = 0.0;
    // |analytic - numeric| / max(1, |analytic|, |numeric|) so that near-zero
    // coordinates compare absolutely.
    double max_rel_diff = 0.0;
    std::vector<ParamGradCheck> per_param;
};

struct GradCheckOptions {
    // Per-coordinate step is relative_step * max(1, |theta|) unless step is set.
    double relative_step = 1e-6;
    std::optional<double> step;
};

/// Builds the loss with `loss_fn`, backpropagates, and compares every
/// coordinate of every parameter against a central difference.
/// Parameter grads are zeroed first and left holding the analytic gradient.
GradReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor> params,
                      const GradCheckOptions& options = {});

/// Compares a caller-provided analytic gradient (one vector per parameter)
/// against central differences of `value_fn`.
GradReport grad_check_values(const std::function<double()>& value_fn,
                             std::vector<NamedTensor> params,
                             const std::vector<std::vector<double>>& analytic,
                             const GradCheckOptions& options = {});

}  // namespace clipmem::numcore
