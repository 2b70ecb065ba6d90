#pragma once

// Dense row-major tensors of doubles with a define-by-run gradient tape.

#include <algorithm>
#include <cstddef>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "vchgcl/errors.hpp"

namespace vchgcl {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& shape) {
    return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& shape) {
    std::ostringstream out;
    out << '[';
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out << " x ";
        out << shape[i];
    }
    out << ']';
    return out.str();
}

namespace detail {

struct Node {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad; // sized like data iff requires_grad
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> parents;
    // Pushes this->grad into the parents' grad buffers.
    std::function<void(Node&)> backward;
    std::size_t visit_mark = 0;

    bool is_leaf() const { return parents.empty(); }
};

inline thread_local bool grad_mode_enabled = true;
inline thread_local std::size_t recorded_ops = 0;
inline thread_local std::size_t sweep_generation = 0;

} // namespace detail

/// Disables tape recording on the current thread for its lifetime.
class NoGradGuard {
public:
    NoGradGuard() : previous_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
    ~NoGradGuard() { detail::grad_mode_enabled = previous_; }
    NoGradGuard(const NoGradGuard&) = delete;
    NoGradGuard& operator=(const NoGradGuard&) = delete;

private:
    bool previous_;
};

inline bool grad_enabled() { return detail::grad_mode_enabled; }

/// Number of operations recorded on this thread's tape since start-up.
inline std::size_t tape_op_count() { return detail::recorded_ops; }

class Tensor {
public:
    Tensor() = default;

    Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
        : node_(std::make_shared<detail::Node>()) {
        for (auto extent : shape) {
            if (extent == 0) throw ShapeError("tensor extents must be positive, got " + shape_str(shape));
        }
        if (shape.empty()) shape = {1};
        if (shape_size(shape) != data.size()) {
            throw ShapeError("shape " + shape_str(shape) + " does not match " + std::to_string(data.size()) +
                             " values");
        }
        node_->shape = std::move(shape);
        node_->data = std::move(data);
        set_requires_grad(requires_grad);
    }

    static Tensor full(Shape shape, double value, bool requires_grad = false) {
        auto n = shape_size(shape);
        return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
    }
    static Tensor zeros(Shape shape, bool requires_grad = false) { return full(std::move(shape), 0.0, requires_grad); }
    static Tensor ones(Shape shape, bool requires_grad = false) { return full(std::move(shape), 1.0, requires_grad); }
    static Tensor scalar(double value, bool requires_grad = false) { return Tensor({1}, {value}, requires_grad); }
    static Tensor vector(std::vector<double> values, bool requires_grad = false) {
        auto n = values.size();
        return Tensor({n}, std::move(values), requires_grad);
    }
    static Tensor matrix(const std::vector<std::vector<double>>& rows, bool requires_grad = false) {
        if (rows.empty() || rows.front().empty()) throw ShapeError("matrix needs at least one row and column");
        std::vector<double> flat;
        for (const auto& row : rows) {
            if (row.size() != rows.front().size()) throw ShapeError("ragged matrix rows");
            flat.insert(flat.end(), row.begin(), row.end());
        }
        return Tensor({rows.size(), rows.front().size()}, std::move(flat), requires_grad);
    }
    static Tensor identity(std::size_t n) {
        auto t = zeros({n, n});
        for (std::size_t i = 0; i < n; ++i) t.node_->data[i * n + i] = 1.0;
        return t;
    }

    bool defined() const { return static_cast<bool>(node_); }
    const Shape& shape() const { return node_->shape; }
    std::size_t rank() const { return node_->shape.size(); }
    std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
    std::size_t size() const { return node_->data.size(); }

    std::span<const double> data() const { return node_->data; }
    /// Mutable view of the values. Only meaningful on leaves (parameters, inputs).
    std::span<double> mutable_data() { return node_->data; }
    std::vector<double> to_vector() const { return node_->data; }

    double item() const {
        if (size() != 1) throw ContractError("item() on tensor of shape " + shape_str(shape()));
        return node_->data[0];
    }
    double operator[](std::size_t i) const { return node_->data.at(i); }
    double at(std::size_t row, std::size_t col) const {
        if (rank() != 2) throw ShapeError("at(row, col) needs a matrix, got " + shape_str(shape()));
        return node_->data.at(row * dim(1) + col);
    }

    bool requires_grad() const { return node_->requires_grad; }
    void set_requires_grad(bool flag) {
        node_->requires_grad = flag;
        if (flag) node_->grad.assign(node_->data.size(), 0.0);
        else node_->grad.clear();
    }
    bool has_grad() const { return node_->requires_grad; }
    std::span<const double> grad() const { return node_->grad; }
    std::span<double> mutable_grad() { return node_->grad; }
    void zero_grad() { std::fill(node_->grad.begin(), node_->grad.end(), 0.0); }

    /// Copy of the values with no tape history.
    Tensor detach() const { return Tensor(shape(), node_->data); }

    const std::shared_ptr<detail::Node>& node() const { return node_; }

    /// Wraps a computed result, attaching it to the tape when any input is tracked.
    static Tensor make_result(Shape shape, std::vector<double> data, std::vector<Tensor> inputs,
                              std::function<void(detail::Node&)> backward) {
        Tensor out(std::move(shape), std::move(data));
        if (!detail::grad_mode_enabled) return out;
        bool tracked = false;
        for (const auto& in : inputs) tracked = tracked || in.requires_grad();
        if (!tracked) return out;
        out.node_->requires_grad = true;
        out.node_->grad.assign(out.node_->data.size(), 0.0);
        out.node_->parents.reserve(inputs.size());
        for (auto& in : inputs) out.node_->parents.push_back(std::move(in.node_));
        out.node_->backward = std::move(backward);
        ++detail::recorded_ops;
        return out;
    }

private:
    std::shared_ptr<detail::Node> node_;
};

/// Reverse-mode sweep from a scalar root. Leaf gradients accumulate across
/// calls; interior buffers are reset at the start of every sweep.
inline void backward(const Tensor& loss) {
    if (!loss.defined() || loss.size() != 1) {
        throw ContractError("backward() needs a scalar root, got " +
                            (loss.defined() ? shape_str(loss.shape()) : std::string("undefined tensor")));
    }
    if (!loss.requires_grad()) return;

    using detail::Node;
    std::vector<Node*> order;
    std::vector<std::pair<Node*, std::size_t>> stack;
    const std::size_t generation = ++detail::sweep_generation;
    auto seen = [generation](Node* n) {
        if (n->visit_mark == generation) return true;
        n->visit_mark = generation;
        return false;
    };

    Node* root = loss.node().get();
    seen(root);
    stack.emplace_back(root, 0);
    while (!stack.empty()) {
        auto& [node, next] = stack.back();
        if (next < node->parents.size()) {
            Node* parent = node->parents[next++].get();
            if (parent->requires_grad && !seen(parent)) stack.emplace_back(parent, 0);
        } else {
            order.push_back(node);
            stack.pop_back();
        }
    }

    for (Node* n : order) {
        if (!n->is_leaf()) std::fill(n->grad.begin(), n->grad.end(), 0.0);
    }
    root->grad[0] += 1.0;
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* n = *it;
        if (!n->is_leaf() && n->backward) n->backward(*n);
    }
}

} // namespace vchgcl
