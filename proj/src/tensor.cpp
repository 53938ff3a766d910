#include "seqnet/tensor.hpp"

#include "seqnet/errors.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace seqnet {

namespace detail {

struct GradNode {
    std::string rule;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    BackwardFn fn;
    bool consumed = false;
};

struct TensorImpl {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
    bool retain = false;
    std::shared_ptr<GradNode> node;
};

} // namespace detail

using detail::GradNode;
using detail::TensorImpl;

namespace {

thread_local bool g_grad_enabled = true;

std::shared_ptr<TensorImpl> new_impl(Shape shape, std::vector<double> values, bool requires_grad) {
    for (std::size_t extent : shape) {
        if (extent == 0) {
            throw ShapeError("tensor extents must be positive, got " + shape_string(shape));
        }
    }
    if (shape_numel(shape) != values.size()) {
        throw ShapeError("shape " + shape_string(shape) + " does not match " +
                         std::to_string(values.size()) + " values");
    }
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(values);
    impl->requires_grad = requires_grad;
    return impl;
}

TensorImpl& checked(const std::shared_ptr<TensorImpl>& impl) {
    if (!impl) {
        throw Error("use of an undefined tensor");
    }
    return *impl;
}

} // namespace

std::size_t shape_numel(const Shape& shape) {
    std::size_t n = 1;
    for (std::size_t extent : shape) {
        n *= extent;
    }
    return n;
}

std::string shape_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) os << ',';
        os << shape[i];
    }
    os << ']';
    return os.str();
}

Tensor::Tensor() = default;

Tensor::Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(new_impl(std::move(shape), std::vector<double>(n, 0.0), requires_grad));
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
    const std::size_t n = shape_numel(shape);
    return Tensor(new_impl(std::move(shape), std::vector<double>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<double> values, bool requires_grad) {
    return Tensor(new_impl(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(double value, bool requires_grad) {
    return Tensor(new_impl({1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return checked(impl_).shape; }

std::size_t Tensor::dim(std::size_t axis) const {
    const Shape& s = shape();
    if (axis >= s.size()) {
        throw ShapeError("axis " + std::to_string(axis) + " out of range for " + shape_string(s));
    }
    return s[axis];
}

std::size_t Tensor::numel() const { return checked(impl_).data.size(); }

std::span<const double> Tensor::data() const { return checked(impl_).data; }

std::span<double> Tensor::mutable_data() {
    TensorImpl& impl = checked(impl_);
    if (impl.node) {
        throw GraphError("cannot write into a tensor produced by a recorded op (rule '" +
                         impl.node->rule + "')");
    }
    return impl.data;
}

double Tensor::item() const {
    const TensorImpl& impl = checked(impl_);
    if (impl.data.size() != 1) {
        throw ShapeError("item() requires a single-element tensor, got " + shape_string(impl.shape));
    }
    return impl.data[0];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
    const TensorImpl& impl = checked(impl_);
    if (index.size() != impl.shape.size()) {
        throw ShapeError("index rank does not match " + shape_string(impl.shape));
    }
    std::size_t flat = 0;
    std::size_t axis = 0;
    for (std::size_t i : index) {
        if (i >= impl.shape[axis]) {
            throw ShapeError("index out of range for " + shape_string(impl.shape));
        }
        flat = flat * impl.shape[axis] + i;
        ++axis;
    }
    return impl.data[flat];
}

bool Tensor::requires_grad() const { return checked(impl_).requires_grad; }

Tensor& Tensor::set_requires_grad(bool flag) {
    TensorImpl& impl = checked(impl_);
    if (impl.node && !flag) {
        throw GraphError("cannot clear requires_grad on a recorded tensor; use detach()");
    }
    impl.requires_grad = flag;
    return *this;
}

bool Tensor::is_leaf() const { return checked(impl_).node == nullptr; }

bool Tensor::has_grad() const { return !checked(impl_).grad.empty(); }

std::span<const double> Tensor::grad() const {
    const TensorImpl& impl = checked(impl_);
    if (impl.grad.empty()) {
        throw GraphError("tensor has no gradient (backward not run, or not retained)");
    }
    return impl.grad;
}

std::span<double> Tensor::mutable_grad() {
    TensorImpl& impl = checked(impl_);
    if (impl.grad.empty()) {
        impl.grad.assign(impl.data.size(), 0.0);
    }
    return impl.grad;
}

void Tensor::zero_grad() {
    TensorImpl& impl = checked(impl_);
    if (!impl.grad.empty()) {
        std::fill(impl.grad.begin(), impl.grad.end(), 0.0);
    }
}

void Tensor::retain_grad() { checked(impl_).retain = true; }

void Tensor::backward() const { seqnet::backward(*this); }

Tensor Tensor::detach() const {
    const TensorImpl& impl = checked(impl_);
    return Tensor(new_impl(impl.shape, impl.data, false));
}

Tensor Tensor::clone() const {
    const TensorImpl& impl = checked(impl_);
    auto copy = new_impl(impl.shape, impl.data, impl.requires_grad);
    copy->grad = impl.grad;
    return Tensor(std::move(copy));
}

Tensor zeros_like(const Tensor& t) { return Tensor::zeros(t.shape()); }

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }

NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor make_result(Shape shape, std::vector<double> values, const std::vector<Tensor>& inputs,
                   std::string rule, BackwardFn fn) {
    auto impl = new_impl(std::move(shape), std::move(values), false);
    if (!g_grad_enabled) {
        return Tensor(std::move(impl));
    }
    bool any = false;
    for (const Tensor& in : inputs) {
        any = any || in.requires_grad();
    }
    if (!any) {
        return Tensor(std::move(impl));
    }
    auto node = std::make_shared<GradNode>();
    node->rule = std::move(rule);
    node->fn = std::move(fn);
    node->inputs.reserve(inputs.size());
    for (const Tensor& in : inputs) {
        node->inputs.push_back(in.impl());
    }
    impl->requires_grad = true;
    impl->node = std::move(node);
    return Tensor(std::move(impl));
}

Tensor make_result(Shape shape, std::vector<double> values, std::initializer_list<Tensor> inputs,
                   std::string rule, BackwardFn fn) {
    return make_result(std::move(shape), std::move(values), std::vector<Tensor>(inputs),
                       std::move(rule), std::move(fn));
}

std::string grad_rule(const Tensor& t) {
    const auto& node = checked(t.impl()).node;
    return node ? node->rule : std::string{};
}

void backward(const Tensor& loss) {
    const auto root = loss.impl();
    TensorImpl& root_impl = checked(root);
    if (root_impl.data.size() != 1) {
        throw GraphError("backward() needs a scalar loss, got shape " + shape_string(root_impl.shape));
    }
    if (!root_impl.requires_grad) {
        throw GraphError("backward() on a tensor that does not require a gradient");
    }
    if (!root_impl.node) {
        root_impl.grad.resize(1, 0.0);
        root_impl.grad[0] += 1.0;
        return;
    }
    if (root_impl.node->consumed) {
        throw GraphError("backward() called twice on the same graph; rebuild it with a new forward pass");
    }

    // Post-order DFS; reversed, it visits every consumer before its producers.
    // Owning handles: clearing a node's inputs below would otherwise free
    // intermediates that are still waiting for their turn.
    std::vector<std::shared_ptr<TensorImpl>> order;
    std::unordered_set<const TensorImpl*> visited;
    std::vector<std::pair<std::shared_ptr<TensorImpl>, std::size_t>> stack;
    stack.emplace_back(root, 0);
    visited.insert(root.get());
    while (!stack.empty()) {
        auto& [impl, next] = stack.back();
        if (impl->node && next < impl->node->inputs.size()) {
            const auto child = impl->node->inputs[next++];
            if (child->node && child->requires_grad && visited.insert(child.get()).second) {
                if (child->node->consumed) {
                    throw GraphError("graph reached through rule '" + child->node->rule +
                                     "' was already consumed by an earlier backward()");
                }
                stack.emplace_back(child, 0);
            }
            continue;
        }
        order.push_back(std::move(impl));
        stack.pop_back();
    }

    root_impl.grad.assign(1, 1.0);
    std::vector<std::span<double>> grads;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        TensorImpl* impl = it->get();
        GradNode& node = *impl->node;
        if (impl->grad.empty()) {
            impl->grad.assign(impl->data.size(), 0.0);
        }
        grads.clear();
        for (const auto& input : node.inputs) {
            if (input->requires_grad) {
                if (input->grad.empty()) {
                    input->grad.assign(input->data.size(), 0.0);
                }
                grads.emplace_back(input->grad);
            } else {
                grads.emplace_back();
            }
        }
        node.fn(impl->grad, grads);
        node.consumed = true;
        node.fn = nullptr;
        node.inputs.clear();
        if (!impl->retain && impl != root.get()) {
            std::vector<double>().swap(impl->grad);
        }
    }
}

double finite_difference_check(const std::function<Tensor(const Tensor&)>& f, Tensor x,
                               const FiniteDifferenceOptions& options) {
    if (!(options.step > 0.0)) {
        throw Error("finite_difference_check: step must be positive");
    }
    const bool had_flag = x.requires_grad();
    x.set_requires_grad(true);
    x.zero_grad();

    Tensor y = f(x);
    if (y.numel() != 1 || !std::isfinite(y.item())) {
        throw Error("finite_difference_check: f(x) must be a finite scalar");
    }
    y.backward();
    const std::vector<double> analytic(x.grad().begin(), x.grad().end());
    x.zero_grad();

    std::vector<std::size_t> coords = options.coordinates;
    if (coords.empty()) {
        coords.resize(x.numel());
        for (std::size_t i = 0; i < coords.size(); ++i) coords[i] = i;
    }

    auto eval = [&]() {
        NoGradGuard guard;
        const double v = f(x).item();
        if (!std::isfinite(v)) {
            throw Error("finite_difference_check: f became non-finite under perturbation");
        }
        return v;
    };

    double worst = 0.0;
    std::span<double> values = x.mutable_data();
    for (std::size_t i : coords) {
        if (i >= values.size()) {
            throw Error("finite_difference_check: coordinate out of range");
        }
        const double original = values[i];
        values[i] = original + options.step;
        const double plus = eval();
        values[i] = original - options.step;
        const double minus = eval();
        values[i] = original;
        const double numeric = (plus - minus) / (2.0 * options.step);
        const double denom = std::max({std::abs(analytic[i]), std::abs(numeric), options.abs_floor});
        worst = std::max(worst, std::abs(analytic[i] - numeric) / denom);
    }
    x.set_requires_grad(had_flag);
    return worst;
}

} // namespace seqnet
