#include "lcl/numerics/tape.hpp"

#include "lcl/errors.hpp"

namespace lcl {

Parameter::Parameter(std::string name, Tensor value)
    : name_(std::move(name)), value_(std::move(value)), grad_(value_.shape()) {}

Tensor& Parameter::grad() {
    if (grad_.shape() != value_.shape()) grad_ = Tensor(value_.shape());
    return grad_;
}

void Parameter::zero_grad() {
    if (grad_.shape() != value_.shape())
        grad_ = Tensor(value_.shape());
    else
        grad_.fill(0.0);
}

const Tensor& Var::value() const { return tape->value(*this); }
bool Var::requires_grad() const { return tape->requires_grad(*this); }

Var Tape::constant(Tensor value) {
    nodes_.push_back(Node{std::move(value), {}, false, false, {}, nullptr});
    return Var{this, nodes_.size() - 1};
}

Var Tape::param(Parameter& p) {
    Node n{p.value(), {}, p.requires_grad(), false, {}, nullptr};
    if (n.requires_grad) n.param = &p;
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Var Tape::record(Tensor value, bool requires_grad, Backward backward) {
    if (!value.all_finite()) throw EvaluationError("non-finite value produced on tape");
    Node n{std::move(value), {}, requires_grad, false, {}, nullptr};
    if (requires_grad) n.backward = std::move(backward);
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
}

Tensor& Tape::grad_buffer(Var v) {
    Node& n = nodes_[v.id];
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape());
        n.has_grad = true;
    }
    return n.grad;
}

void Tape::accumulate(Var v, const Tensor& g) {
    if (!nodes_[v.id].requires_grad) return;
    Tensor& buf = grad_buffer(v);
    if (buf.size() != g.size()) {
        throw ShapeError("gradient " + shape_str(g.shape()) + " does not match value " +
                         shape_str(buf.shape()));
    }
    buf += g;
}

void Tape::backward(Var loss) {
    if (loss.tape != this) throw ContractViolation("backward on a Var from another tape");
    if (value(loss).size() != 1) throw ShapeError("backward needs a scalar loss, got " + shape_str(value(loss).shape()));
    if (!requires_grad(loss)) return;
    grad_buffer(loss).fill(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
        Node& n = nodes_[i];
        if (!n.has_grad) continue;
        if (n.backward) {
            // The closure may append to other nodes' buffers but never to this
            // vector, so holding a copy of the gradient is enough.
            Tensor g = std::move(n.grad);
            n.has_grad = false;
            n.backward(*this, g);
        } else if (n.param != nullptr) {
            n.param->grad() += n.grad;
        }
    }
}

}  // namespace lcl
