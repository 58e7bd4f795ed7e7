#include "cyclesynth/tensor.hpp"

#include "cyclesynth/errors.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <unordered_set>

namespace cyclesynth {

std::int64_t shape_numel(const Shape& shape)
{
    std::int64_t n = 1;
    for (auto d : shape) {
        if (d < 0)
            throw ShapeError("negative dimension in shape " + shape_str(shape));
        n *= d;
    }
    return n;
}

std::string shape_str(const Shape& shape)
{
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i)
        os << (i ? "," : "") << shape[i];
    os << ']';
    return os.str();
}

namespace detail {

std::uint64_t next_seq()
{
    static std::atomic<std::uint64_t> counter{0};
    return ++counter;
}

std::span<Scalar> Node::grad_buffer()
{
    if (grad.empty())
        grad.assign(data.size(), Scalar(0));
    return grad;
}

void Node::accumulate_grad(std::span<const Scalar> g)
{
    if (!requires_grad)
        return;
    auto dst = grad_buffer();
    for (std::size_t i = 0; i < dst.size(); ++i)
        dst[i] += g[i];
}

} // namespace detail

namespace {

std::shared_ptr<detail::Node> make_leaf(Shape shape, std::vector<Scalar> values, bool requires_grad)
{
    const auto n = shape_numel(shape);
    if (static_cast<std::int64_t>(values.size()) != n)
        throw ShapeError("value count " + std::to_string(values.size()) + " does not match shape " +
                         shape_str(shape));
    auto node = std::make_shared<detail::Node>();
    node->shape = std::move(shape);
    node->data = std::move(values);
    node->requires_grad = requires_grad;
    node->seq = detail::next_seq();
    return node;
}

detail::Node& checked(const std::shared_ptr<detail::Node>& node)
{
    if (!node)
        throw Error("use of undefined tensor");
    return *node;
}

} // namespace

Tensor Tensor::zeros(Shape shape, bool requires_grad)
{
    const auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<Scalar>(n, Scalar(0)), requires_grad));
}

Tensor Tensor::full(Shape shape, Scalar value, bool requires_grad)
{
    const auto n = shape_numel(shape);
    return Tensor(make_leaf(std::move(shape), std::vector<Scalar>(n, value), requires_grad));
}

Tensor Tensor::from(Shape shape, std::vector<Scalar> values, bool requires_grad)
{
    return Tensor(make_leaf(std::move(shape), std::move(values), requires_grad));
}

Tensor Tensor::scalar(Scalar value, bool requires_grad)
{
    return Tensor(make_leaf(Shape{1}, {value}, requires_grad));
}

const Shape& Tensor::shape() const { return checked(node_).shape; }

std::int64_t Tensor::dim(std::size_t i) const
{
    const auto& s = shape();
    if (i >= s.size())
        throw ShapeError("dimension index " + std::to_string(i) + " out of range for " + shape_str(s));
    return s[i];
}

std::int64_t Tensor::numel() const { return static_cast<std::int64_t>(checked(node_).data.size()); }

std::span<const Scalar> Tensor::data() const { return checked(node_).data; }

std::span<Scalar> Tensor::mutable_data()
{
    auto& n = checked(node_);
    if (!n.inputs.empty())
        throw Error("mutable_data() on non-leaf tensor produced by '" + std::string(n.op) + "'");
    return n.data;
}

Scalar Tensor::item() const
{
    auto& n = checked(node_);
    if (n.data.size() != 1)
        throw ShapeError("item() on tensor of shape " + shape_str(n.shape));
    return n.data[0];
}

bool Tensor::requires_grad() const { return checked(node_).requires_grad; }

void Tensor::set_requires_grad(bool flag)
{
    auto& n = checked(node_);
    if (!n.inputs.empty())
        throw Error("requires_grad can only be toggled on leaves");
    n.requires_grad = flag;
}

bool Tensor::is_leaf() const { return checked(node_).inputs.empty(); }

bool Tensor::has_grad() const { return !checked(node_).grad.empty(); }

std::span<const Scalar> Tensor::grad() const { return checked(node_).grad; }

std::span<Scalar> Tensor::mutable_grad() { return checked(node_).grad_buffer(); }

void Tensor::zero_grad()
{
    auto& g = checked(node_).grad;
    std::fill(g.begin(), g.end(), Scalar(0));
}

void Tensor::clear_grad()
{
    auto& g = checked(node_).grad;
    g.clear();
    g.shrink_to_fit();
}

Tensor Tensor::detach() const
{
    const auto& n = checked(node_);
    return Tensor(make_leaf(n.shape, n.data, false));
}

const char* Tensor::op_name() const { return checked(node_).op; }

Tape Tape::record(const Tensor& root)
{
    Tape tape;
    if (!root.defined() || !root.requires_grad())
        return tape;
    std::unordered_set<const detail::Node*> seen;
    std::vector<detail::Node*> stack{root.node()};
    seen.insert(root.node());
    while (!stack.empty()) {
        auto* n = stack.back();
        stack.pop_back();
        tape.nodes_.push_back(n);
        for (const auto& in : n->inputs) {
            if (in->requires_grad && seen.insert(in.get()).second)
                stack.push_back(in.get());
        }
    }
    // Creation order is execution order.
    std::sort(tape.nodes_.begin(), tape.nodes_.end(),
              [](const detail::Node* a, const detail::Node* b) { return a->seq < b->seq; });
    return tape;
}

void Tape::run_backward() const
{
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        auto* n = *it;
        if (n->backward_fn && !n->grad.empty())
            n->backward_fn(*n);
    }
}

void backward(const Tensor& loss)
{
    if (!loss.defined())
        throw Error("backward() on undefined tensor");
    if (loss.numel() != 1)
        throw ShapeError("backward() requires a scalar loss, got shape " + shape_str(loss.shape()));
    if (!loss.requires_grad())
        throw Error("backward() on a tensor that is not on the gradient tape");
    auto tape = Tape::record(loss);
    for (auto* n : tape.nodes())
        if (!n->inputs.empty())
            n->grad.clear();
    loss.node()->grad_buffer()[0] += Scalar(1);
    tape.run_backward();
    // Interior gradients are scratch; only leaves keep theirs.
    for (auto* n : tape.nodes())
        if (!n->inputs.empty())
            std::vector<Scalar>().swap(n->grad);
}

} // namespace cyclesynth
