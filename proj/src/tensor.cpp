#include "clipmem/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace clipmem::numcore {

namespace {

thread_local bool t_grad_enabled = true;
thread_local MacCounter* t_mac_counter = nullptr;

[[noreturn]] void fail_shape(const std::string& op, const Shape& a, const Shape& b) {
    throw DimensionError(op + ": incompatible shapes " + shape_to_string(a) + " and " +
                         shape_to_string(b));
}

void require_rank2(const std::string& op, const Tensor& a) {
    if (a.rank() != 2) {
        throw DimensionError(op + ": expected a rank-2 tensor, got shape " +
                             shape_to_string(a.shape()));
    }
}

// Accepts [n] or [1 x n] as a row of width n.
bool is_row_of(const Tensor& row, std::size_t width) {
    const auto& s = row.shape();
    return (s.size() == 1 && s[0] == width) || (s.size() == 2 && s[0] == 1 && s[1] == width);
}

void accumulate(detail::Node& target, std::size_t i, double v) {
    target.grad[i] += v;
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << 'x';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

std::size_t shape_numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

// ---------------------------------------------------------------------------
// Tensor

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const auto n = shape_numel(shape);
    return from(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    if (shape_numel(shape) != values.size()) {
        throw DimensionError("Tensor::from: shape " + shape_to_string(shape) + " needs " +
                             std::to_string(shape_numel(shape)) + " values, got " +
                             std::to_string(values.size()));
    }
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    return Tensor(std::move(node));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows,
                      bool requires_grad) {
    const std::size_t m = rows.size();
    const std::size_t n = m ? rows.begin()->size() : 0;
    std::vector<double> values;
    values.reserve(m * n);
    for (const auto& r : rows) {
        if (r.size() != n) throw DimensionError("Tensor::matrix: ragged rows");
        values.insert(values.end(), r.begin(), r.end());
    }
    return from({m, n}, std::move(values), requires_grad);
}

Tensor Tensor::vector(std::initializer_list<double> values, bool requires_grad) {
    return from({values.size()}, std::vector<double>(values), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return from({}, {value}, requires_grad);
}

const Shape& Tensor::shape() const {
    if (!node_) throw std::logic_error("Tensor: use of undefined tensor");
    return node_->shape;
}

std::size_t Tensor::dim(std::size_t axis) const {
    const auto& s = shape();
    if (axis >= s.size()) {
        throw DimensionError("Tensor::dim: axis " + std::to_string(axis) +
                             " out of range for shape " + shape_to_string(s));
    }
    return s[axis];
}

std::span<const double> Tensor::data() const {
    if (!node_) throw std::logic_error("Tensor: use of undefined tensor");
    return node_->data;
}

std::span<double> Tensor::mutable_data() {
    if (!node_) throw std::logic_error("Tensor: use of undefined tensor");
    return node_->data;
}

double Tensor::item() const {
    if (numel() != 1) {
        throw DimensionError("Tensor::item: tensor of shape " + shape_to_string(shape()) +
                             " is not a scalar");
    }
    return node_->data[0];
}

double Tensor::at(std::size_t r, std::size_t c) const {
    return data()[r * shape()[1] + c];
}

bool Tensor::requires_grad() const { return node_ && node_->requires_grad; }

bool Tensor::has_grad() const { return node_ && !node_->grad.empty(); }

std::vector<double> Tensor::grad() const {
    if (!node_) throw std::logic_error("Tensor: use of undefined tensor");
    if (node_->grad.empty()) return std::vector<double>(node_->data.size(), 0.0);
    return node_->grad;
}

std::span<double> Tensor::mutable_grad() {
    if (!node_) throw std::logic_error("Tensor: use of undefined tensor");
    node_->ensure_grad();
    return node_->grad;
}

void Tensor::zero_grad() {
    if (node_) std::fill(node_->grad.begin(), node_->grad.end(), 0.0);
}

Tensor Tensor::detach(bool requires_grad) const {
    return from(shape(), node_->data, requires_grad);
}

Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> rule) {
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    if (t_grad_enabled) {
        const bool any = std::any_of(inputs.begin(), inputs.end(),
                                     [](const Tensor& t) { return t.requires_grad(); });
        if (any) {
            node->requires_grad = true;
            node->parents.reserve(inputs.size());
            for (auto& in : inputs) node->parents.push_back(in.node_);
            node->backward = std::move(rule);
        }
    }
    return Tensor(std::move(node));
}

bool grad_enabled() { return t_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

MacCounter::MacCounter() : previous_(t_mac_counter) { t_mac_counter = this; }
MacCounter::~MacCounter() { t_mac_counter = previous_; }

void count_macs(std::uint64_t n) {
    for (MacCounter* c = t_mac_counter; c; c = c->previous_) c->count_ += n;
}

// ---------------------------------------------------------------------------
// Linear algebra

Tensor matmul(const Tensor& a, const Tensor& b) {
    require_rank2("matmul", a);
    require_rank2("matmul", b);
    const std::size_t m = a.dim(0), n = a.dim(1), p = b.dim(1);
    if (b.dim(0) != n) fail_shape("matmul", a.shape(), b.shape());
    const auto A = a.data();
    const auto B = b.data();
    std::vector<double> out(m * p, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        double* row = out.data() + i * p;
        for (std::size_t t = 0; t < n; ++t) {
            const double av = A[i * n + t];
            const double* brow = B.data() + t * p;
            for (std::size_t j = 0; j < p; ++j) row[j] += av * brow[j];
        }
    }
    count_macs(static_cast<std::uint64_t>(m) * n * p);
    return make_result({m, p}, std::move(out), {a, b}, [m, n, p](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pb = *self.parents[1];
        const auto& G = self.grad;
        if (pa.requires_grad) {
            pa.ensure_grad();
            // dA = G * B^T
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t t = 0; t < n; ++t) {
                    double s = 0.0;
                    for (std::size_t j = 0; j < p; ++j) s += G[i * p + j] * pb.data[t * p + j];
                    pa.grad[i * n + t] += s;
                }
        }
        if (pb.requires_grad) {
            pb.ensure_grad();
            // dB = A^T * G
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t t = 0; t < n; ++t) {
                    const double av = pa.data[i * n + t];
                    double* grow = pb.grad.data() + t * p;
                    for (std::size_t j = 0; j < p; ++j) grow[j] += av * G[i * p + j];
                }
        }
    });
}

Tensor transpose(const Tensor& a) {
    require_rank2("transpose", a);
    const std::size_t m = a.dim(0), n = a.dim(1);
    const auto A = a.data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[j * m + i] = A[i * n + j];
    return make_result({n, m}, std::move(out), {a}, [m, n](detail::Node& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < m; ++i)
            for (std::size_t j = 0; j < n; ++j) pa.grad[i * n + j] += self.grad[j * m + i];
    });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) fail_shape("reshape", a.shape(), shape);
    std::vector<double> out(a.data().begin(), a.data().end());
    return make_result(std::move(shape), std::move(out), {a}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Elementwise

namespace {

Tensor binary_same_shape(const char* op, const Tensor& a, const Tensor& b, double sign_b) {
    if (a.shape() != b.shape()) fail_shape(op, a.shape(), b.shape());
    const auto A = a.data();
    const auto B = b.data();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + sign_b * B[i];
    return make_result(a.shape(), std::move(out), {a, b}, [sign_b](detail::Node& self) {
        for (std::size_t k = 0; k < 2; ++k) {
            auto& p = *self.parents[k];
            if (!p.requires_grad) continue;
            p.ensure_grad();
            const double s = k == 0 ? 1.0 : sign_b;
            for (std::size_t i = 0; i < self.grad.size(); ++i) accumulate(p, i, s * self.grad[i]);
        }
    });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) { return binary_same_shape("add", a, b, 1.0); }

Tensor sub(const Tensor& a, const Tensor& b) { return binary_same_shape("sub", a, b, -1.0); }

Tensor mul(const Tensor& a, const Tensor& b) {
    if (a.shape() == b.shape()) {
        const auto A = a.data();
        const auto B = b.data();
        std::vector<double> out(A.size());
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * B[i];
        count_macs(out.size());
        return make_result(a.shape(), std::move(out), {a, b}, [](detail::Node& self) {
            auto& pa = *self.parents[0];
            auto& pb = *self.parents[1];
            if (pa.requires_grad) {
                pa.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pa.grad[i] += self.grad[i] * pb.data[i];
            }
            if (pb.requires_grad) {
                pb.ensure_grad();
                for (std::size_t i = 0; i < self.grad.size(); ++i)
                    pb.grad[i] += self.grad[i] * pa.data[i];
            }
        });
    }
    if (a.rank() != 2 || !is_row_of(b, a.dim(1))) fail_shape("mul", a.shape(), b.shape());
    const std::size_t m = a.dim(0), n = a.dim(1);
    const auto A = a.data();
    const auto R = b.data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] * R[j];
    count_macs(out.size());
    return make_result(a.shape(), std::move(out), {a, b}, [m, n](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pr = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    pa.grad[i * n + j] += self.grad[i * n + j] * pr.data[j];
        }
        if (pr.requires_grad) {
            pr.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j)
                    pr.grad[j] += self.grad[i * n + j] * pa.data[i * n + j];
        }
    });
}

Tensor add_row(const Tensor& a, const Tensor& row) {
    if (a.rank() != 2 || !is_row_of(row, a.dim(1))) fail_shape("add_row", a.shape(), row.shape());
    const std::size_t m = a.dim(0), n = a.dim(1);
    const auto A = a.data();
    const auto R = row.data();
    std::vector<double> out(m * n);
    for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) out[i * n + j] = A[i * n + j] + R[j];
    return make_result(a.shape(), std::move(out), {a, row}, [m, n](detail::Node& self) {
        auto& pa = *self.parents[0];
        auto& pr = *self.parents[1];
        if (pa.requires_grad) {
            pa.ensure_grad();
            for (std::size_t i = 0; i < m * n; ++i) pa.grad[i] += self.grad[i];
        }
        if (pr.requires_grad) {
            pr.ensure_grad();
            for (std::size_t i = 0; i < m; ++i)
                for (std::size_t j = 0; j < n; ++j) pr.grad[j] += self.grad[i * n + j];
        }
    });
}

Tensor scale(const Tensor& a, double factor) {
    const auto A = a.data();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] * factor;
    return make_result(a.shape(), std::move(out), {a}, [factor](detail::Node& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += factor * self.grad[i];
    });
}

Tensor add_scalar(const Tensor& a, double value) {
    const auto A = a.data();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] + value;
    return make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) pa.grad[i] += self.grad[i];
    });
}

Tensor sigmoid(const Tensor& a) {
    const auto A = a.data();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) {
        const double x = A[i];
        if (x >= 0) {
            out[i] = 1.0 / (1.0 + std::exp(-x));
        } else {
            const double e = std::exp(x);
            out[i] = e / (1.0 + e);
        }
    }
    return make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
            const double s = self.data[i];
            pa.grad[i] += self.grad[i] * s * (1.0 - s);
        }
    });
}

Tensor relu(const Tensor& a) {
    const auto A = a.data();
    std::vector<double> out(A.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = A[i] > 0.0 ? A[i] : 0.0;
    return make_result(a.shape(), std::move(out), {a}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        for (std::size_t i = 0; i < self.grad.size(); ++i)
            if (pa.data[i] > 0.0) pa.grad[i] += self.grad[i];
    });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum_all(const Tensor& a) {
    double s = 0.0;
    for (double v : a.data()) s += v;
    return make_result({}, {s}, {a}, [](detail::Node& self) {
        auto& pa = *self.parents[0];
        pa.ensure_grad();
        for (double& g : pa.grad) g += self.grad[0];
    });
}

Tensor mean_over_axes(const Tensor& a, std::vector<std::size_t> axes) {
    const auto& in_shape = a.shape();
    const std::size_t r = in_shape.size();
    std::vector<bool> reduced(r, false);
    for (auto ax : axes) {
        if (ax >= r) {
            throw DimensionError("mean_over_axes: axis " + std::to_string(ax) +
                                 " invalid for shape " + shape_to_string(in_shape));
        }
        reduced[ax] = true;
    }
    Shape out_shape;
    std::size_t reduced_count = 1;
    for (std::size_t d = 0; d < r; ++d) {
        if (reduced[d]) reduced_count *= in_shape[d];
        else out_shape.push_back(in_shape[d]);
    }
    // Map each input flat index to its output flat index.
    const std::size_t total = a.numel();
    std::vector<std::size_t> target(total);
    std::vector<std::size_t> idx(r, 0);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t o = 0;
        for (std::size_t d = 0; d < r; ++d)
            if (!reduced[d]) o = o * in_shape[d] + idx[d];
        target[flat] = o;
        for (std::size_t d = r; d-- > 0;) {
            if (++idx[d] < in_shape[d]) break;
            idx[d] = 0;
        }
    }
    const auto A = a.data();
    std::vector<double> out(shape_numel(out_shape), 0.0);
    const double inv = 1.0 / static_cast<double>(reduced_count);
    for (std::size_t flat = 0; flat < total; ++flat) out[target[flat]] += A[flat];
    for (double& v : out) v *= inv;
    return make_result(std::move(out_shape), std::move(out), {a},
                       [target = std::move(target), inv](detail::Node& self) {
                           auto& pa = *self.parents[0];
                           pa.ensure_grad();
                           for (std::size_t flat = 0; flat < target.size(); ++flat)
                               pa.grad[flat] += inv * self.grad[target[flat]];
                       });
}

Tensor bin_mean_rows(const Tensor& a, std::size_t bins) {
    require_rank2("bin_mean_rows", a);
    const std::size_t m = a.dim(0), n = a.dim(1);
    if (bins == 0 || bins > m) {
        throw DimensionError("bin_mean_rows: cannot split " + std::to_string(m) + " rows into " +
                             std::to_string(bins) + " bins");
    }
    const std::size_t width = m / bins;
    auto bin_of = [width, bins](std::size_t row) { return std::min(row / width, bins - 1); };
    std::vector<double> counts(bins, 0.0);
    for (std::size_t i = 0; i < m; ++i) counts[bin_of(i)] += 1.0;
    const auto A = a.data();
    std::vector<double> out(bins * n, 0.0);
    for (std::size_t i = 0; i < m; ++i) {
        const std::size_t b = bin_of(i);
        for (std::size_t j = 0; j < n; ++j) out[b * n + j] += A[i * n + j];
    }
    for (std::size_t b = 0; b < bins; ++b)
        for (std::size_t j = 0; j < n; ++j) out[b * n + j] /= counts[b];
    return make_result({bins, n}, std::move(out), {a},
                       [m, n, bin_of, counts](detail::Node& self) {
                           auto& pa = *self.parents[0];
                           pa.ensure_grad();
                           for (std::size_t i = 0; i < m; ++i) {
                               const std::size_t b = bin_of(i);
                               for (std::size_t j = 0; j < n; ++j)
                                   pa.grad[i * n + j] += self.grad[b * n + j] / counts[b];
                           }
                       });
}

Tensor mean_of(std::span<const Tensor> items) {
    if (items.empty()) throw DimensionError("mean_of: empty list");
    Tensor acc = items[0];
    for (std::size_t i = 1; i < items.size(); ++i) acc = add(acc, items[i]);
    return scale(acc, 1.0 / static_cast<double>(items.size()));
}

std::vector<double> softmax(std::span<const double> logits) {
    const double mx = *std::max_element(logits.begin(), logits.end());
    std::vector<double> p(logits.size());
    double z = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        p[i] = std::exp(logits[i] - mx);
        z += p[i];
    }
    for (double& v : p) v /= z;
    return p;
}

Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label) {
    const auto L = logits.data();
    const std::size_t c = L.size();
    if (label >= c) {
        throw DimensionError("softmax_cross_entropy: label " + std::to_string(label) +
                             " out of range for " + std::to_string(c) + " classes");
    }
    const double mx = *std::max_element(L.begin(), L.end());
    double z = 0.0;
    for (double v : L) z += std::exp(v - mx);
    const double loss = std::log(z) - (L[label] - mx);
    return make_result({}, {loss}, {logits}, [label](detail::Node& self) {
        auto& pl = *self.parents[0];
        pl.ensure_grad();
        const auto p = softmax(pl.data);
        for (std::size_t i = 0; i < p.size(); ++i)
            pl.grad[i] += self.grad[0] * (p[i] - (i == label ? 1.0 : 0.0));
    });
}

// ---------------------------------------------------------------------------
// Reverse mode

void backward(const Tensor& loss) {
    if (loss.numel() != 1) {
        throw DimensionError("backward: loss must be scalar, got shape " +
                             shape_to_string(loss.shape()));
    }
    const std::vector<double> seed{1.0};
    backward(std::span<const Tensor>(&loss, 1), std::span<const std::vector<double>>(&seed, 1));
}

void backward(std::span<const Tensor> roots, std::span<const std::vector<double>> seeds) {
    if (roots.size() != seeds.size()) {
        throw DimensionError("backward: " + std::to_string(roots.size()) + " roots but " +
                             std::to_string(seeds.size()) + " seeds");
    }
    for (std::size_t r = 0; r < roots.size(); ++r) {
        if (seeds[r].size() != roots[r].numel()) {
            throw DimensionError("backward: seed size " + std::to_string(seeds[r].size()) +
                                 " does not match root shape " +
                                 shape_to_string(roots[r].shape()));
        }
    }

    // Post-order DFS over the grad-requiring subgraph.
    std::vector<detail::Node*> order;
    std::unordered_set<detail::Node*> visited;
    std::vector<std::pair<detail::Node*, std::size_t>> stack;
    for (const auto& root : roots) {
        detail::Node* start = root.node_.get();
        if (!start->requires_grad || visited.count(start)) continue;
        visited.insert(start);
        stack.emplace_back(start, 0);
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->parents.size()) {
                detail::Node* parent = node->parents[next++].get();
                if (parent->requires_grad && !visited.count(parent)) {
                    visited.insert(parent);
                    stack.emplace_back(parent, 0);
                }
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    for (auto* node : order)
        if (!node->is_leaf()) node->grad.clear();
    for (std::size_t r = 0; r < roots.size(); ++r) {
        detail::Node* node = roots[r].node_.get();
        if (!node->requires_grad) continue;
        node->ensure_grad();
        for (std::size_t i = 0; i < seeds[r].size(); ++i) node->grad[i] += seeds[r][i];
    }
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        detail::Node* node = *it;
        if (node->is_leaf()) continue;
        if (!node->grad.empty()) node->backward(*node);
        node->grad.clear();
        node->grad.shrink_to_fit();
    }
}

}  // namespace clipmem::numcore
