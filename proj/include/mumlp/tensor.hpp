#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "error.hpp"

namespace mumlp {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& shape) {
    std::ostringstream os;
    os << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "x" : "") << shape[i];
    os << ']';
    return os.str();
}

/// Thread-local switch for graph recording. Evaluation threads disable it so
/// forward passes over shared parameters build no graph.
class GradMode {
public:
    static bool enabled() { return flag(); }
    static void set_enabled(bool on) { flag() = on; }

private:
    static bool& flag() {
        thread_local bool on = true;
        return on;
    }
};

class NoGradGuard {
public:
    NoGradGuard() : previous_(GradMode::enabled()) { GradMode::set_enabled(false); }
    ~NoGradGuard() { GradMode::set_enabled(previous_); }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

template <class T>
struct Node {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad;  // empty until a gradient reaches this node
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    std::function<void(Node&)> backward_fn;
    const char* op = "leaf";

    std::vector<T>& ensure_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T{0});
        return grad;
    }
};

/// Dense row-major tensor with shared ownership of its graph node.
/// Copies are shallow: both handles refer to the same values and gradient.
template <class T>
class Tensor {
public:
    using value_type = T;
    using NodePtr = std::shared_ptr<Node<T>>;

    Tensor() = default;
    explicit Tensor(NodePtr node) : node_(std::move(node)) {}

    static Tensor zeros(Shape shape, bool requires_grad = false) {
        validate_shape(shape);
        const auto n = numel(shape);
        return from(std::move(shape), std::vector<T>(n, T{0}), requires_grad);
    }

    static Tensor full(Shape shape, T value, bool requires_grad = false) {
        validate_shape(shape);
        const auto n = numel(shape);
        return from(std::move(shape), std::vector<T>(n, value), requires_grad);
    }

    static Tensor from(Shape shape, std::vector<T> data, bool requires_grad = false) {
        validate_shape(shape);
        if (numel(shape) != data.size()) {
            throw Error(ErrorKind::ShapeMismatch, "shape " + to_string(shape) + " holds " +
                                                      std::to_string(numel(shape)) + " values, got " +
                                                      std::to_string(data.size()));
        }
        auto node = std::make_shared<Node<T>>();
        node->shape = std::move(shape);
        node->data = std::move(data);
        node->requires_grad = requires_grad;
        return Tensor(std::move(node));
    }

    static Tensor scalar(T value, bool requires_grad = false) { return from({1}, {value}, requires_grad); }

    bool defined() const { return node_ != nullptr; }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->data.size(); }

    std::span<T> data() { return node_->data; }
    std::span<const T> data() const { return node_->data; }
    std::span<T> grad() { return node_->grad; }
    std::span<const T> grad() const { return node_->grad; }
    bool has_grad() const { return !node_->grad.empty(); }

    T item() const {
        if (size() != 1) throw Error(ErrorKind::ShapeMismatch, "item() on tensor of shape " + to_string(shape()));
        return node_->data[0];
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad() { node_->grad.clear(); }

    const NodePtr& node() const { return node_; }

    /// Copy of values with no graph history.
    Tensor detach_copy() const { return from(shape(), node_->data, false); }

private:
    static void validate_shape(const Shape& shape) {
        if (shape.empty()) throw Error(ErrorKind::ShapeMismatch, "tensor shape must have at least one axis");
        for (auto extent : shape) {
            if (extent == 0) throw Error(ErrorKind::ShapeMismatch, "zero extent in shape " + to_string(shape));
        }
    }

    NodePtr node_;
};

namespace detail {

/// Builds the output node of an op. Parents and the backward closure are
/// only retained when recording is on and some parent needs a gradient.
template <class T>
Tensor<T> make_result(Shape shape, std::vector<T> data, std::initializer_list<const Tensor<T>*> inputs,
                      const char* op, std::function<void(Node<T>&)> backward_fn) {
    auto out = Tensor<T>::from(std::move(shape), std::move(data));
    bool needs_grad = false;
    if (GradMode::enabled()) {
        for (const auto* in : inputs) needs_grad = needs_grad || in->requires_grad();
    }
    auto& node = *out.node();
    node.op = op;
    if (needs_grad) {
        node.requires_grad = true;
        for (const auto* in : inputs) node.parents.push_back(in->node());
        node.backward_fn = std::move(backward_fn);
    }
    return out;
}

}  // namespace detail

/// Nodes reachable from a root, ordered so every node's inputs precede it.
template <class T>
struct Graph {
    std::vector<Node<T>*> nodes;
};

template <class T>
Graph<T> build_graph(const Tensor<T>& root) {
    Graph<T> graph;
    std::unordered_set<const Node<T>*> visited;
    // Iterative post-order DFS; deep models would overflow a recursive walk.
    std::vector<std::pair<Node<T>*, std::size_t>> stack;
    stack.emplace_back(root.node().get(), 0);
    visited.insert(root.node().get());
    while (!stack.empty()) {
        auto& [node, next_parent] = stack.back();
        if (next_parent < node->parents.size()) {
            Node<T>* parent = node->parents[next_parent++].get();
            if (visited.insert(parent).second) stack.emplace_back(parent, 0);
        } else {
            graph.nodes.push_back(node);
            stack.pop_back();
        }
    }
    return graph;
}

/// Reverse-mode sweep from a scalar loss. Gradients accumulate into every
/// reachable tensor that requires them; leaves keep accumulating across calls
/// until zero_grad().
template <class T>
void backward(const Tensor<T>& loss) {
    if (loss.size() != 1) {
        throw Error(ErrorKind::NonScalarLoss, "backward() needs a scalar loss, got shape " + to_string(loss.shape()));
    }
    if (!loss.requires_grad()) return;
    auto graph = build_graph(loss);
    loss.node()->ensure_grad()[0] += T{1};
    for (auto it = graph.nodes.rbegin(); it != graph.nodes.rend(); ++it) {
        Node<T>& node = **it;
        if (node.backward_fn && !node.grad.empty()) node.backward_fn(node);
    }
}

}  // namespace mumlp
