#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace cyclesynth {

#ifdef CYCLESYNTH_F64
using Scalar = double;
#else
using Scalar = float;
#endif

using Shape = std::vector<std::int64_t>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

namespace detail {

// One value in the autodiff graph. Nodes created by an op keep their inputs
// alive until the graph is released; leaves have no inputs.
struct Node {
    Shape shape;
    std::vector<Scalar> data;
    std::vector<Scalar> grad;
    bool requires_grad = false;
    std::uint64_t seq = 0;
    const char* op = "leaf";
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node& self)> backward_fn;

    void accumulate_grad(std::span<const Scalar> g);
    std::span<Scalar> grad_buffer();
};

std::uint64_t next_seq();

} // namespace detail

/// Dense row-major tensor with an optional reverse-mode gradient.
///
/// A Tensor is a cheap handle; copies alias the same node. Values produced by
/// ops are immutable. Leaves (parameters, inputs) may be updated in place
/// through `mutable_data()` between forward/backward passes.
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape shape, bool requires_grad = false);
    static Tensor full(Shape shape, Scalar value, bool requires_grad = false);
    static Tensor from(Shape shape, std::vector<Scalar> values, bool requires_grad = false);
    static Tensor scalar(Scalar value, bool requires_grad = false);

    bool defined() const noexcept { return node_ != nullptr; }
    const Shape& shape() const;
    std::int64_t dim(std::size_t i) const;
    std::size_t ndim() const { return shape().size(); }
    std::int64_t numel() const;

    std::span<const Scalar> data() const;
    std::span<Scalar> mutable_data();
    Scalar item() const;

    bool requires_grad() const;
    void set_requires_grad(bool flag);
    bool is_leaf() const;
    bool has_grad() const;
    std::span<const Scalar> grad() const;
    std::span<Scalar> mutable_grad();
    void zero_grad();
    // Drops the buffer, so has_grad() is false until the next backward().
    void clear_grad();

    // New leaf holding a copy of the values, cut from the graph.
    Tensor detach() const;
    Tensor clone() const { return detach(); }

    const char* op_name() const;

    detail::Node* node() const noexcept { return node_.get(); }
    const std::shared_ptr<detail::Node>& node_ptr() const noexcept { return node_; }
    explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}

private:
    std::shared_ptr<detail::Node> node_;
};

/// Execution-ordered list of the graph nodes that contribute to a root.
class Tape {
public:
    static Tape record(const Tensor& root);

    std::size_t size() const noexcept { return nodes_.size(); }
    const std::vector<detail::Node*>& nodes() const noexcept { return nodes_; }

    // Runs every node's backward exactly once, last-recorded first.
    void run_backward() const;

private:
    std::vector<detail::Node*> nodes_;
};

/// Seeds d(loss)/d(loss) = 1 and propagates to every leaf requiring grad.
/// Gradients accumulate; call zero_grad() on leaves between steps.
void backward(const Tensor& loss);

} // namespace cyclesynth
