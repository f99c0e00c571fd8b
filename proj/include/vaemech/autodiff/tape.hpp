#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "vaemech/core/error.hpp"
#include "vaemech/core/tensor.hpp"

namespace vaemech {

/// A named trainable tensor together with its accumulated gradient.
struct Parameter {
    std::string name;
    Tensor value;
    Tensor grad;

    Parameter() = default;
    Parameter(std::string n, Tensor v) : name(std::move(n)), value(std::move(v)), grad(value.shape()) {}

    void zero_grad() { grad = Tensor(value.shape()); }
};

class Tape;

/// Handle to a value recorded on a Tape. Cheap to copy; only valid while
/// the owning tape is alive.
class Var {
public:
    Var() = default;

    bool valid() const noexcept { return tape_ != nullptr; }
    Tape* tape() const noexcept { return tape_; }
    std::size_t id() const noexcept { return id_; }

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    /// Gradient d(loss)/d(this) after Tape::backward. Zero if the value did
    /// not influence the loss.
    Tensor grad() const;

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) noexcept : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Linear record of forward operations. Nodes are appended in execution
/// order, so every node's inputs precede it; backward walks the record once
/// in reverse.
class Tape {
public:
    /// Accumulates into input gradients given the node's own gradient.
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    explicit Tape(bool grad_enabled = true) : grad_enabled_(grad_enabled) {}
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    bool grad_enabled() const noexcept { return grad_enabled_; }
    std::size_t size() const noexcept { return nodes_.size(); }

    Var constant(Tensor value) { return push("constant", std::move(value), {}, false, nullptr, nullptr); }

    /// Constant that refers to external storage instead of copying it. The
    /// referenced tensor must outlive the tape and stay unchanged.
    Var constant_ref(const Tensor& value) {
        Var v = push("constant", Tensor{}, {}, false, nullptr, nullptr);
        nodes_.back().ref = &value;
        return v;
    }

    /// Leaf whose gradient is readable through Var::grad after backward.
    Var leaf(Tensor value) { return push("leaf", std::move(value), {}, grad_enabled_, nullptr, nullptr); }

    /// Leaf bound to a Parameter; backward adds into parameter.grad.
    /// The parameter value is referenced, not copied; update it only after
    /// the tape is done.
    Var parameter(Parameter& p) {
        Var v = push("parameter", Tensor{}, {}, grad_enabled_, nullptr, &p);
        nodes_.back().ref = &p.value;
        return v;
    }

    /// Record the output of an op. Checks finiteness of the value and drops
    /// the backward closure when no input needs a gradient.
    Var record(std::string_view op, Tensor value, const std::vector<Var>& inputs, BackwardFn backward) {
        bool needs = false;
        std::vector<std::size_t> ids;
        ids.reserve(inputs.size());
        for (const Var& v : inputs) {
            check_owned(v, op);
            ids.push_back(v.id());
            needs = needs || nodes_[v.id()].requires_grad;
        }
        if (!value.all_finite()) {
            std::string msg = "non-finite output from op '" + std::string(op) + "' with input shapes";
            for (const Var& v : inputs) msg += " " + shape_str(v.shape());
            throw NumericError(msg);
        }
        return push(op, std::move(value), std::move(ids), needs, needs ? std::move(backward) : BackwardFn{}, nullptr);
    }

    const Tensor& value(std::size_t id) const { return nodes_.at(id).get(); }
    const std::vector<std::size_t>& inputs(std::size_t id) const { return nodes_.at(id).inputs; }
    const std::string& op_name(std::size_t id) const { return nodes_.at(id).op; }
    bool requires_grad(std::size_t id) const { return nodes_.at(id).requires_grad; }

    /// Gradient buffer of a node, zero-initialised on first access.
    Tensor& grad_buffer(std::size_t id) {
        Node& n = nodes_.at(id);
        const Tensor& v = n.get();
        if (n.grad.numel() != v.numel() || n.grad.shape() != v.shape()) n.grad = Tensor(v.shape());
        return n.grad;
    }
    bool has_grad(std::size_t id) const {
        const Node& n = nodes_.at(id);
        const Tensor& v = n.get();
        return n.grad.shape() == v.shape() && n.grad.numel() == v.numel() && !v.empty();
    }

    /// Reverse-mode sweep from a scalar loss. Parameter leaves add their
    /// gradient into the bound Parameter::grad.
    void backward(const Var& loss) {
        if (loss.tape() != this || loss.id() >= nodes_.size()) {
            throw Error("backward: loss was not produced by this tape");
        }
        if (nodes_[loss.id()].get().numel() != 1) {
            throw ShapeError("backward: loss must be scalar, got shape " + shape_str(loss.shape()));
        }
        if (backward_done_) throw Error("backward: tape has already been replayed");
        backward_done_ = true;
        if (!nodes_[loss.id()].requires_grad) return;

        grad_buffer(loss.id())[0] += 1.0;
        for (std::size_t i = loss.id() + 1; i-- > 0;) {
            Node& n = nodes_[i];
            if (!n.requires_grad || !has_grad(i)) continue;
            if (n.backward) n.backward(*this, i);
            if (n.param) {
                if (!n.grad.all_finite()) {
                    throw NumericError("backward: non-finite gradient for parameter '" + n.param->name + "'");
                }
                if (n.param->grad.shape() != n.get().shape()) n.param->grad = Tensor(n.get().shape());
                auto dst = n.param->grad.data();
                auto src = n.grad.data();
                for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
            }
        }
    }

private:
    struct Node {
        std::string op;
        Tensor value;
        Tensor grad;
        std::vector<std::size_t> inputs;
        bool requires_grad = false;
        BackwardFn backward;
        Parameter* param = nullptr;
        const Tensor* ref = nullptr;

        const Tensor& get() const { return ref ? *ref : value; }
    };

    friend class Var;

    Var push(std::string_view op, Tensor value, std::vector<std::size_t> inputs, bool requires_grad,
             BackwardFn backward, Parameter* param) {
        nodes_.push_back(Node{std::string(op), std::move(value), Tensor{}, std::move(inputs), requires_grad,
                              std::move(backward), param, nullptr});
        return Var(this, nodes_.size() - 1);
    }

    void check_owned(const Var& v, std::string_view op) const {
        if (v.tape() != this || v.id() >= nodes_.size()) {
            throw Error("op '" + std::string(op) + "': input belongs to a different tape");
        }
    }

    std::deque<Node> nodes_;
    bool grad_enabled_;
    bool backward_done_ = false;
};

inline const Tensor& Var::value() const {
    if (!tape_) throw Error("Var: empty handle");
    return tape_->value(id_);
}

inline bool Var::requires_grad() const {
    if (!tape_) throw Error("Var: empty handle");
    return tape_->requires_grad(id_);
}

inline Tensor Var::grad() const {
    if (!tape_) throw Error("Var: empty handle");
    if (!tape_->has_grad(id_)) return Tensor(value().shape());
    return tape_->grad_buffer(id_);
}

}  // namespace vaemech
