#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace clipmem::numcore {

using Shape = std::vector<std::size_t>;

std::string shape_to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised for any shape, rank, axis, or label contract violation.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Raised when a numeric routine sees a non-finite value it cannot recover from.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;  // empty until first accumulation
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Reads this->grad and adds contributions into parents' grads.
    std::function<void(Node&)> backward;

    bool is_leaf() const { return parents.empty(); }
    void ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), 0.0);
    }
};

}  // namespace detail

/// Dense row-major double tensor with an optional reverse-mode graph record.
///
/// A Tensor is a cheap handle; copies share the same node. Values are
/// immutable once an op has produced them. Leaves created with
/// `requires_grad` are the parameters: their data may be updated in place by
/// an optimizer between steps and their grads accumulate across backward
/// calls until `zero_grad`.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows,
                         bool requires_grad = false);
    static Tensor vector(std::initializer_list<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const { return data().size(); }
    std::size_t dim(std::size_t axis) const;

    std::span<const double> data() const;
    /// In-place access; intended for parameter leaves (optimizer, tests).
    std::span<double> mutable_data();
    double item() const;
    double at(std::size_t i) const { return data()[i]; }
    double at(std::size_t r, std::size_t c) const;

    bool requires_grad() const;
    bool has_grad() const;
    /// Zeros if no gradient has been accumulated yet.
    std::vector<double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();

    /// A new leaf with copied values and no history.
    Tensor detach(bool requires_grad = false) const;

    const detail::Node* node() const { return node_.get(); }

private:
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

    std::shared_ptr<detail::Node> node_;

    friend Tensor make_result(Shape, std::vector<double>, std::vector<Tensor>,
                              std::function<void(detail::Node&)>);
    friend void backward(std::span<const Tensor>, std::span<const std::vector<double>>);
};

/// Builds an op result. The backward rule is recorded only when grad mode is
/// on and at least one input requires grad.
Tensor make_result(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                   std::function<void(detail::Node&)> rule);

// Grad mode is thread-local; inference paths switch it off.
bool grad_enabled();

class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

/// Counts multiply-adds performed by matmul (m*n*p) and elementwise / row
/// broadcast multiplication (one per output element) on the current thread
/// while alive. Scopes nest and every enclosing counter sees the counts.
class MacCounter {
public:
    MacCounter();
    ~MacCounter();
    MacCounter(const MacCounter&) = delete;
    MacCounter& operator=(const MacCounter&) = delete;

    std::uint64_t count() const { return count_; }

private:
    std::uint64_t count_ = 0;
    MacCounter* previous_;
    friend void count_macs(std::uint64_t);
};

void count_macs(std::uint64_t n);

// ---------------------------------------------------------------------------
// Operations

Tensor matmul(const Tensor& a, const Tensor& b);
Tensor transpose(const Tensor& a);
Tensor reshape(const Tensor& a, Shape shape);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
/// Elementwise product. `b` may also be a [1 x n] / [n] row broadcast over an [m x n] `a`.
Tensor mul(const Tensor& a, const Tensor& b);
/// Adds a [1 x n] / [n] row to every row of an [m x n] matrix.
Tensor add_row(const Tensor& a, const Tensor& row);
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double value);

Tensor sigmoid(const Tensor& a);
Tensor relu(const Tensor& a);

Tensor sum_all(const Tensor& a);
/// Arithmetic mean over the given axes; remaining axes keep their order.
Tensor mean_over_axes(const Tensor& a, std::vector<std::size_t> axes);
/// Partitions the rows of an [m x n] matrix into `bins` contiguous groups of
/// m / bins rows (the last group absorbs the remainder) and averages each.
Tensor bin_mean_rows(const Tensor& a, std::size_t bins);
/// Elementwise mean of same-shape tensors, summed in list order.
Tensor mean_of(std::span<const Tensor> items);

/// -log softmax(logits)[label], computed with max subtraction. Logits are
/// read as a flat vector of length numel().
Tensor softmax_cross_entropy(const Tensor& logits, std::size_t label);

std::vector<double> softmax(std::span<const double> logits);

// ---------------------------------------------------------------------------
// Reverse mode

/// Backpropagates from a scalar loss.
void backward(const Tensor& loss);
/// Backpropagates from several roots at once, each seeded with its own
/// upstream gradient, in one traversal. Gradients accumulate (+=) into every
/// reachable leaf that requires grad; intermediate buffers are released.
void backward(std::span<const Tensor> roots, std::span<const std::vector<double>> seeds);

}  // namespace clipmem::numcore
