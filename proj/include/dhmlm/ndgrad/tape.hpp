#pragma once

#include <cstddef>
#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <vector>

#include "dhmlm/ndgrad/parameter.hpp"
#include "dhmlm/ndgrad/tensor.hpp"

namespace dhmlm::ndgrad {

template <class T>
class Tape;

/// Handle to a node on a tape.
template <class T>
struct Var {
    Tape<T>* tape = nullptr;
    std::uint32_t id = 0;

    const Tensor<T>& value() const { return tape->value(*this); }
    const Shape& shape() const { return tape->value(*this).shape(); }
};

/// Reverse-mode tape. Nodes are appended in evaluation order, which is a
/// topological order, so backward walks them once from the loss downwards.
/// A tape is single-use: backward may run once.
template <class T>
class Tape {
public:
    using BackwardFn = std::function<void(Tape&)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const noexcept { return grad_enabled_; }

    /// Constant input; no gradient is tracked.
    Var<T> constant(Tensor<T> value) { return push_node(std::move(value), nullptr, false); }

    /// Input whose gradient is tracked and readable through grad().
    Var<T> variable(Tensor<T> value) { return push_node(std::move(value), nullptr, grad_enabled_); }

    /// Leaf bound to a parameter. The value is read in place and gradients
    /// accumulate straight into the parameter's grad slot.
    Var<T> param(Parameter<T>& p) {
        Node n;
        n.external = &p.value;
        n.param = &p;
        n.requires_grad = grad_enabled_;
        nodes_.push_back(std::move(n));
        return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    const Tensor<T>& value(Var<T> v) const {
        const Node& n = node(v);
        return n.external != nullptr ? *n.external : n.value;
    }

    bool requires_grad(Var<T> v) const { return node(v).requires_grad; }

    /// Gradient accumulated for v; empty if none reached it.
    const Tensor<T>& grad(Var<T> v) const {
        const Node& n = node(v);
        return n.param != nullptr ? n.param->grad : n.grad;
    }

    /// Gradient slot, zero-allocated on first use.
    Tensor<T>& grad_slot(Var<T> v) {
        Node& n = node(v);
        Tensor<T>& g = n.param != nullptr ? n.param->grad : n.grad;
        const Tensor<T>& val = n.external != nullptr ? *n.external : n.value;
        if (g.shape() != val.shape()) {
            g = Tensor<T>(val.shape());
        }
        return g;
    }

    bool has_grad(Var<T> v) const {
        const Node& n = node(v);
        return n.param != nullptr || !n.grad.empty();
    }

    /// Registers an op result. The backward closure is kept only when some
    /// input requires a gradient.
    Var<T> push(Tensor<T> value, std::initializer_list<Var<T>> inputs, BackwardFn backward) {
        bool needs = false;
        for (const auto& in : inputs) {
            needs = needs || node(in).requires_grad;
        }
        return push_node(std::move(value), needs ? std::move(backward) : nullptr, needs);
    }

    void backward(Var<T> loss) {
        require(!backward_done_, ErrorKind::InvalidState, "backward already ran on this tape");
        require(loss.tape == this, ErrorKind::InvalidArgument, "loss belongs to another tape");
        require(value(loss).size() == 1, ErrorKind::InvalidArgument,
                "backward needs a scalar loss, got shape " + shape_string(value(loss).shape()));
        backward_done_ = true;
        if (!node(loss).requires_grad) {
            return;
        }
        grad_slot(loss)[0] += T(1);
        for (std::uint32_t i = loss.id + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (n.backward && !n.grad.empty()) {
                current_ = i;
                n.backward(*this);
                ++backward_visits_;
            }
        }
    }

    /// Index of the node whose backward closure is running.
    Var<T> current() { return Var<T>{this, current_}; }

    std::size_t size() const noexcept { return nodes_.size(); }
    std::size_t backward_visits() const noexcept { return backward_visits_; }

private:
    struct Node {
        Tensor<T> value;
        const Tensor<T>* external = nullptr;
        Parameter<T>* param = nullptr;
        Tensor<T> grad;
        BackwardFn backward;
        bool requires_grad = false;
    };

    Node& node(Var<T> v) { return nodes_.at(v.id); }
    const Node& node(Var<T> v) const { return nodes_.at(v.id); }

    Var<T> push_node(Tensor<T> value, BackwardFn backward, bool requires_grad) {
        Node n;
        n.value = std::move(value);
        n.backward = std::move(backward);
        n.requires_grad = requires_grad;
        nodes_.push_back(std::move(n));
        return Var<T>{this, static_cast<std::uint32_t>(nodes_.size() - 1)};
    }

    std::deque<Node> nodes_;  // stable references across push
    bool grad_enabled_ = true;
    bool backward_done_ = false;
    std::uint32_t current_ = 0;
    std::size_t backward_visits_ = 0;
};

}  // namespace dhmlm::ndgrad
