#pragma once

#include <cstddef>
#include <functional>
#include <initializer_list>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace seqnet {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_string(const Shape& shape);

namespace detail {
struct TensorImpl;
struct GradNode;
} // namespace detail

// Dense double-precision array with an optional define-by-run gradient graph.
//
// Tensor is a shared handle: copies alias the same storage. Use clone() for a
// deep copy and detach() to drop the graph.
//
// Gradient policy:
//  - leaf gradients accumulate (+=) across backward passes until zero_grad();
//  - intermediate gradients are released after use unless retain_grad() was set;
//  - backward() consumes the graph; a second call on the same loss throws.
class Tensor {
public:
    Tensor();

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, double value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<double> values, bool requires_grad = false);
    static Tensor scalar(double value, bool requires_grad = false);

    bool defined() const noexcept { return impl_ != nullptr; }

    const Shape& shape() const;
    std::size_t dim(std::size_t axis) const;
    std::size_t rank() const { return shape().size(); }
    std::size_t numel() const;

    std::span<const double> data() const;
    // Writable view. Only leaves may be written; writing an interior node would
    // silently invalidate its recorded backward rule.
    std::span<double> mutable_data();
    double item() const;
    double at(std::initializer_list<std::size_t> index) const;

    bool requires_grad() const;
    Tensor& set_requires_grad(bool flag);
    bool is_leaf() const;

    bool has_grad() const;
    std::span<const double> grad() const;
    std::span<double> mutable_grad();
    void zero_grad();
    void retain_grad();

    void backward() const;

    Tensor detach() const;
    Tensor clone() const;

    // Identity of the underlying storage, for graph bookkeeping and tests.
    const void* id() const noexcept { return impl_.get(); }

    std::shared_ptr<detail::TensorImpl> impl() const { return impl_; }
    explicit Tensor(std::shared_ptr<detail::TensorImpl> impl);

private:
    std::shared_ptr<detail::TensorImpl> impl_;
};

Tensor zeros_like(const Tensor& t);

/// Runs reverse-mode differentiation from a scalar loss.
void backward(const Tensor& loss);

/// True while graph recording is enabled on this thread (see NoGradGuard).
bool grad_enabled();

/// Disables graph recording on this thread for the lifetime of the guard.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

// Backward rule attached to an op result. `upstream` is d(loss)/d(output); the
// rule adds its contribution into each input's gradient through `grads[i]`,
// which is empty for inputs that do not require a gradient.
using BackwardFn =
    std::function<void(std::span<const double> upstream, std::span<const std::span<double>> grads)>;

// Creates an op result and, if any input requires a gradient and recording is
// enabled, attaches a GradientRecord with the given rule tag.
Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::string rule, BackwardFn fn);
Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::string rule, BackwardFn fn);

/// Tag of the backward rule that produced this tensor, or "" for leaves.
std::string grad_rule(const Tensor& t);

struct FiniteDifferenceOptions {
    double step = 1e-5;
    // Coordinates of x to probe; empty means all of them.
    std::vector<std::size_t> coordinates;
    // Lower bound on the denominator of the relative error, so gradients near
    // zero are judged on absolute error instead.
    double abs_floor = 1e-12;
};

// Compares d f/d x from backward() against central differences and returns
//   max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, abs_floor).
// `f` must build a fresh graph from `x` on every call. x's data is restored
// before returning and x's gradient is left zeroed.
double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                               const FiniteDifferenceOptions& options = {});

} // namespace seqnet
