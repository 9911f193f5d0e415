#include "adasgn/tape.hpp"

#include "adasgn/errors.hpp"

namespace adasgn {

namespace {
thread_local std::vector<OpCounter*> active_counters;
}

void Parameter::zero_grad() {
    if (grad.shape() != value.shape())
        grad = Tensor(value.shape());
    else
        std::fill(grad.values().begin(), grad.values().end(), 0.0);
}

CountingScope::CountingScope(OpCounter& counter) { active_counters.push_back(&counter); }

CountingScope::~CountingScope() { active_counters.pop_back(); }

void count_multiply_adds(std::uint64_t n) {
    for (OpCounter* c : active_counters) c->add(n);
}

const Tensor& Var::value() const { return tape_->value(id_); }

bool Var::requires_grad() const { return tape_->requires_grad(id_); }

Var Tape::push(Tensor value, bool requires_grad, BackwardFn fn) {
    Node node;
    node.value = std::move(value);
    node.requires_grad = requires_grad;
    if (requires_grad) node.backward = std::move(fn);
    nodes_.push_back(std::move(node));
    return Var(this, nodes_.size() - 1);
}

Var Tape::constant(Tensor value) { return push(std::move(value), false, {}); }

Var Tape::leaf(Tensor value, bool requires_grad) { return push(std::move(value), requires_grad && grad_enabled_, {}); }

Var Tape::parameter(Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var(this, it->second);
    Var v = push(p.value, p.trainable && grad_enabled_, {});
    nodes_[v.id()].param = &p;
    param_nodes_.emplace(&p, v.id());
    return v;
}

Var Tape::record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_)
        for (const Var& in : inputs) needs = needs || in.requires_grad();
    return push(std::move(value), needs, std::move(fn));
}

Var Tape::record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn) {
    bool needs = false;
    if (grad_enabled_)
        for (const Var& in : inputs) needs = needs || in.requires_grad();
    return push(std::move(value), needs, std::move(fn));
}

Tensor& Tape::grad_of(std::size_t id) {
    Node& n = nodes_[id];
    if (!n.has_grad) {
        n.grad = Tensor(n.value.shape());
        n.has_grad = true;
    }
    return n.grad;
}

const Tensor* Tape::grad(Var v) const {
    const Node& n = nodes_[v.id()];
    return n.has_grad ? &n.grad : nullptr;
}

Tensor Tape::grad_or_zero(Var v) const {
    if (const Tensor* g = grad(v)) return *g;
    return Tensor(v.value().shape());
}

void Tape::backward(Var loss) {
    if (loss.tape() != this) throw ContractError("backward: loss was recorded on a different tape");
    if (loss.value().numel() != 1)
        throw ContractError("backward: loss must be scalar, got shape " + shape_string(loss.shape()));
    for (Node& n : nodes_) {
        n.has_grad = false;
        n.grad = Tensor();
    }
    if (!nodes_[loss.id()].requires_grad) return;
    grad_of(loss.id())[0] = 1.0;
    for (std::size_t id = loss.id() + 1; id-- > 0;) {
        Node& n = nodes_[id];
        if (n.has_grad && n.backward) n.backward(*this, id);
    }
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
        Node& n = nodes_[id];
        if (!n.param || !n.has_grad) continue;
        Parameter& p = *n.param;
        if (p.grad.shape() != p.value.shape()) p.grad = Tensor(p.value.shape());
        double* dst = p.grad.data();
        const double* src = n.grad.data();
        for (std::size_t i = 0; i < n.grad.numel(); ++i) dst[i] += src[i];
    }
}

}  // namespace adasgn
