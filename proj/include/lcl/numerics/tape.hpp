#pragma once

#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "lcl/numerics/tensor.hpp"

namespace lcl {

/// A named weight tensor with its gradient accumulator.
///
/// `frozen` is permanent: once set, no optimizer may touch the tensor.
/// `active` toggles whether the parameter takes part in the current training
/// context; inactive parameters enter a tape as constants.
class Parameter {
public:
    Parameter() = default;
    Parameter(std::string name, Tensor value);

    const std::string& name() const noexcept { return name_; }
    Tensor& value() noexcept { return value_; }
    const Tensor& value() const noexcept { return value_; }
    Tensor& grad();
    const Tensor& grad() const { return grad_; }
    void zero_grad();

    bool frozen() const noexcept { return frozen_; }
    void freeze() noexcept { frozen_ = true; }
    bool active() const noexcept { return active_; }
    void set_active(bool on) noexcept { active_ = on; }
    bool requires_grad() const noexcept { return active_ && !frozen_; }

private:
    std::string name_;
    Tensor value_;
    Tensor grad_;
    bool frozen_ = false;
    bool active_ = true;
};

class Tape;

/// Handle to a value recorded on a Tape.
struct Var {
    Tape* tape = nullptr;
    std::size_t id = 0;

    const Tensor& value() const;
    bool requires_grad() const;
};

/// Straight-line reverse-mode tape. Operations append nodes; `backward`
/// replays them in reverse and deposits gradients into the Parameters that
/// entered as leaves. Nodes that depend on no trainable leaf record no
/// backward closure, so frozen sub-graphs cost nothing on the way back.
class Tape {
public:
    using Backward = std::function<void(Tape&, const Tensor& grad_out)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var param(Parameter& p);
    Var record(Tensor value, bool requires_grad, Backward backward);

    const Tensor& value(Var v) const { return nodes_[v.id].value; }
    bool requires_grad(Var v) const { return nodes_[v.id].requires_grad; }

    /// Adds `g` into the gradient buffer of `v` (no-op if v needs no grad).
    void accumulate(Var v, const Tensor& g);
    /// Gradient buffer of `v`, allocated as zeros on first use.
    Tensor& grad_buffer(Var v);

    /// Seeds d(loss)/d(loss) = 1 for a 1x1 loss and propagates to leaves.
    void backward(Var loss);

    std::size_t size() const noexcept { return nodes_.size(); }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        Backward backward;
        Parameter* param = nullptr;
    };
    std::vector<Node> nodes_;
};

}  // namespace lcl
