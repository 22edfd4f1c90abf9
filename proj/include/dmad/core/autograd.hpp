#pragma once

// Define-by-run reverse-mode differentiation.
//
// Each differentiable op allocates a Node holding its forward value, the
// nodes it consumed, and a closure that pushes the node's gradient into those
// inputs. `backward(loss)` linearizes the graph reachable from `loss` into a
// Tape (topological order, each node once) and replays it in reverse.
// Gradients accumulate across uses and across calls until `zero_grad()`.

#include <atomic>
#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "dmad/core/tensor.hpp"

namespace dmad {

template <typename T>
struct Node;

template <typename T>
using NodePtr = std::shared_ptr<Node<T>>;

template <typename T>
struct Node {
    Tensor<T> value;
    Tensor<T> grad;
    bool has_grad = false;
    bool requires_grad = false;
    uint64_t tape_id = 0;
    const char* op = "leaf";
    std::vector<NodePtr<T>> inputs;
    std::function<void(Node&)> backward;

    // Zero-initialized on first use.
    Tensor<T>& grad_buffer() {
        if (!has_grad) {
            grad = Tensor<T>(value.shape());
            has_grad = true;
        }
        return grad;
    }

    void accumulate(const Tensor<T>& g) {
        if (g.shape() != value.shape()) {
            throw ShapeError(std::string("gradient shape ") + shape_str(g.shape()) + " does not match value " +
                             shape_str(value.shape()) + " in op " + op);
        }
        auto& buf = grad_buffer();
        T* dst = buf.ptr();
        const T* src = g.ptr();
        for (size_t i = 0; i < buf.size(); ++i) dst[i] += src[i];
    }

    bool input_wants_grad(size_t i) const { return inputs[i] && inputs[i]->requires_grad; }
};

uint64_t next_tape_id();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard();
    ~NoGradGuard();
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

bool grad_enabled();

template <typename T>
class Var {
public:
    Var() = default;
    explicit Var(Tensor<T> value, bool requires_grad = false) : node_(std::make_shared<Node<T>>()) {
        node_->value = std::move(value);
        node_->requires_grad = requires_grad;
        node_->tape_id = next_tape_id();
    }
    explicit Var(NodePtr<T> node) : node_(std::move(node)) {}

    static Var parameter(Tensor<T> value) { return Var(std::move(value), true); }
    static Var constant(Tensor<T> value) { return Var(std::move(value), false); }

    bool defined() const { return static_cast<bool>(node_); }
    const Tensor<T>& value() const { return node_->value; }
    Tensor<T>& mutable_value() { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    int64_t dim(int i) const { return node_->value.dim(i); }
    size_t size() const { return node_->value.size(); }
    T item() const { return node_->value.item(); }

    bool requires_grad() const { return node_->requires_grad; }
    bool has_grad() const { return node_->has_grad; }
    // Zero tensor of the value's shape when no gradient has reached this node.
    Tensor<T> grad() const { return node_->has_grad ? node_->grad : Tensor<T>(node_->value.shape()); }
    void zero_grad() {
        node_->has_grad = false;
        node_->grad = Tensor<T>();
    }

    uint64_t tape_id() const { return node_->tape_id; }
    const char* op() const { return node_->op; }
    const NodePtr<T>& node() const { return node_; }

private:
    NodePtr<T> node_;
};

// Creates the result node of an op. When recording is disabled or no input
// requires a gradient, the result is a detached constant and `backward` is
// dropped.
template <typename T>
Var<T> make_result(Tensor<T> value, std::initializer_list<Var<T>> inputs, const char* op,
                   std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = op;
    node->tape_id = next_tape_id();
    bool any = false;
    for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
    if (any && grad_enabled()) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Var<T>(std::move(node));
}

template <typename T>
Var<T> make_result(Tensor<T> value, const std::vector<Var<T>>& inputs, const char* op,
                   std::function<void(Node<T>&)> backward) {
    auto node = std::make_shared<Node<T>>();
    node->value = std::move(value);
    node->op = op;
    node->tape_id = next_tape_id();
    bool any = false;
    for (const auto& in : inputs) any = any || (in.defined() && in.requires_grad());
    if (any && grad_enabled()) {
        node->requires_grad = true;
        for (const auto& in : inputs) node->inputs.push_back(in.node());
        node->backward = std::move(backward);
    }
    return Var<T>(std::move(node));
}

// Topologically ordered record of the nodes that lead to a root.
template <typename T>
class Tape {
public:
    static Tape record(const Var<T>& root);

    std::span<const NodePtr<T>> nodes() const { return nodes_; }
    size_t size() const { return nodes_.size(); }

    // Seeds the root gradient and runs every backward closure once, producers
    // after consumers.
    void replay(const Tensor<T>& seed) const;

private:
    std::vector<NodePtr<T>> nodes_;
};

// Rejects non-scalar losses.
template <typename T>
void backward(const Var<T>& loss);

}  // namespace dmad
