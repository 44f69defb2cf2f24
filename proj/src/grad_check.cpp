#include "clipmem/grad_check.hpp"

#include <algorithm>
#include <cmath>

namespace clipmem::numcore {

GradReport grad_check(const std::function<Tensor()>& loss_fn, std::vector<NamedTensor> params,
                      const GradCheckOptions& options) {
    for (auto& p : params) p.tensor.zero_grad();
    Tensor loss = loss_fn();
    backward(loss);
    std::vector<std::vector<double>> analytic;
    analytic.reserve(params.size());
    for (const auto& p : params) analytic.push_back(p.tensor.grad());
    auto value_fn = [&loss_fn] {
        NoGradGuard no_grad;
        return loss_fn().item();
    };
    return grad_check_values(value_fn, std::move(params), analytic, options);
}

GradReport grad_check_values(const std::function<double()>& value_fn,
                             std::vector<NamedTensor> params,
                             const std::vector<std::vector<double>>& analytic,
                             const GradCheckOptions& options) {
    if (analytic.size() != params.size()) {
        throw DimensionError("grad_check: analytic gradient count does not match parameters");
    }
    GradReport report;
    for (std::size_t p = 0; p < params.size(); ++p) {
        auto& tensor = params[p].tensor;
        if (analytic[p].size() != tensor.numel()) {
            throw DimensionError("grad_check: analytic gradient for " + params[p].name +
                                 " has wrong size");
        }
        auto values = tensor.mutable_data();
        ParamGradCheck entry{params[p].name, analytic[p], std::vector<double>(values.size())};
        for (std::size_t i = 0; i < values.size(); ++i) {
            const double original = values[i];
            const double h = options.step ? *options.step
                                          : options.relative_step * std::max(1.0, std::abs(original));
            values[i] = original + h;
            const double up = value_fn();
            values[i] = original - h;
            const double down = value_fn();
            values[i] = original;
            if (!std::isfinite(up) || !std::isfinite(down)) {
                throw NumericError("grad_check: non-finite objective while perturbing " +
                                   params[p].name + "[" + std::to_string(i) + "]");
            }
            entry.numeric[i] = (up - down) / (2.0 * h);
            const double a = entry.analytic[i];
            const double n = entry.numeric[i];
            const double abs_diff = std::abs(a - n);
            const double rel = abs_diff / std::max({1.0, std::abs(a), std::abs(n)});
            report.max_abs_diff = std::max(report.max_abs_diff, abs_diff);
            report.max_rel_diff = std::max(report.max_rel_diff, rel);
        }
        report.per_param.push_back(std::move(entry));
    }
    return report;
}

}  // namespace clipmem::numcore
