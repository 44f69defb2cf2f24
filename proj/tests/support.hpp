#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "clipmem/tensor.hpp"

namespace testsupport {

using clipmem::numcore::Tensor;

// Central differences written independently of grad_check so the library's
// checker is not its own oracle.
inline std::vector<double> numeric_grad(const std::function<double()>& f, Tensor& param,
                                        double h = 1e-6) {
    std::vector<double> out(param.numel());
    auto data = param.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
        const double saved = data[i];
        const double step = h * std::max(1.0, std::abs(saved));
        data[i] = saved + step;
        const double up = f();
        data[i] = saved - step;
        const double down = f();
        data[i] = saved;
        out[i] = (up - down) / (2.0 * step);
    }
    return out;
}

inline double max_rel_err(const std::vector<double>& a, const std::vector<double>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double denom = std::max({1.0, std::abs(a[i]), std::abs(b[i])});
        worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
    }
    return worst;
}

inline double max_abs_diff(std::span<const double> a, std::span<const double> b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
    return worst;
}

inline Tensor random_tensor(clipmem::numcore::Shape shape, std::mt19937_64& rng, double lo = -2.0,
                            double hi = 2.0, bool requires_grad = true) {
    std::uniform_real_distribution<double> dist(lo, hi);
    std::vector<double> values(clipmem::numcore::shape_numel(shape));
    for (double& v : values) v = dist(rng);
    return Tensor::from(std::move(shape), std::move(values), requires_grad);
}

inline double value_of(const std::function<Tensor()>& f) {
    clipmem::numcore::NoGradGuard guard;
    return f().item();
}

}  // namespace testsupport
