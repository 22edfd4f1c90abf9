#include "dmad/core/autograd.hpp"

#include <unordered_set>
#include <utility>

namespace dmad {

namespace {
thread_local bool t_grad_enabled = true;
std::atomic<uint64_t> g_tape_counter{1};
}  // namespace

uint64_t next_tape_id() { return g_tape_counter.fetch_add(1, std::memory_order_relaxed); }

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }

bool grad_enabled() { return t_grad_enabled; }

template <typename T>
Tape<T> Tape<T>::record(const Var<T>& root) {
    Tape tape;
    if (!root.defined() || !root.requires_grad()) return tape;
    std::unordered_set<const Node<T>*> visited;
    // Iterative post-order DFS: (node, next input index).
    std::vector<std::pair<NodePtr<T>, size_t>> stack;
    stack.emplace_back(root.node(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->inputs.size()) {
            const NodePtr<T>& child = node->inputs[next++];
            if (child && child->requires_grad && visited.insert(child.get()).second) {
                stack.emplace_back(child, 0);
            }
            continue;
        }
        tape.nodes_.push_back(node);
        stack.pop_back();
    }
    return tape;
}

template <typename T>
void Tape<T>::replay(const Tensor<T>& seed) const {
    if (nodes_.empty()) return;
    nodes_.back()->accumulate(seed);
    for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it) {
        Node<T>& node = **it;
        if (node.backward && node.has_grad) node.backward(node);
    }
}

template <typename T>
void backward(const Var<T>& loss) {
    if (loss.size() != 1) {
        throw ShapeError("backward: loss must be a scalar, got shape " + shape_str(loss.shape()));
    }
    const auto tape = Tape<T>::record(loss);
    tape.replay(Tensor<T>(loss.shape(), T{1}));
}

template class Tape<float>;
template class Tape<double>;
template void backward<float>(const Var<float>&);
template void backward<double>(const Var<double>&);

}  // namespace dmad
