#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <string>
#include <unordered_map>
#include <vector>

#include "adasgn/tensor.hpp"

namespace adasgn {

/// A persistent trainable (or buffer) array. Gradients from every tape that
/// binds it accumulate into `grad`.
struct Parameter {
    Tensor value;
    Tensor grad;
    bool trainable = true;

    Parameter() = default;
    explicit Parameter(Tensor v, bool is_trainable = true)
        : value(std::move(v)), grad(value.shape()), trainable(is_trainable) {}

    void zero_grad();
};

/// Counts multiply-adds performed by matmul-family and convolution ops while
/// a CountingScope naming it is active on the current thread. Nested scopes
/// all receive the counts.
struct OpCounter {
    std::uint64_t multiply_adds = 0;
    bool enabled = true;

    void add(std::uint64_t n) {
        if (enabled) multiply_adds += n;
    }
};

class CountingScope {
public:
    explicit CountingScope(OpCounter& counter);
    ~CountingScope();
    CountingScope(const CountingScope&) = delete;
    CountingScope& operator=(const CountingScope&) = delete;
};

void count_multiply_adds(std::uint64_t n);

class Tape;

/// Handle to a node recorded on a Tape.
class Var {
public:
    Var() = default;

    const Tensor& value() const;
    const Shape& shape() const { return value().shape(); }
    bool requires_grad() const;
    std::size_t id() const noexcept { return id_; }
    Tape* tape() const noexcept { return tape_; }
    bool valid() const noexcept { return tape_ != nullptr; }

private:
    friend class Tape;
    Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

    Tape* tape_ = nullptr;
    std::size_t id_ = 0;
};

/// Reverse-mode differentiation record. Nodes are appended in evaluation
/// order, so ids are a topological order by construction.
class Tape {
public:
    using BackwardFn = std::function<void(Tape&, std::size_t self)>;

    Tape() = default;
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    Var constant(Tensor value);
    Var leaf(Tensor value, bool requires_grad = true);

    // Binds a Parameter. Repeated binds on one tape return the same node, so
    // shared weights share a single gradient accumulator.
    Var parameter(Parameter& p);

    // Used by op implementations. `fn` is kept only if some input needs a gradient.
    Var record(Tensor value, std::initializer_list<Var> inputs, BackwardFn fn);
    Var record(Tensor value, const std::vector<Var>& inputs, BackwardFn fn);

    // Populates gradients for every node reachable from `loss` and adds
    // parameter-leaf gradients into Parameter::grad in ascending node order.
    void backward(Var loss);

    const Tensor& value(std::size_t id) const { return nodes_[id].value; }
    bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }

    // Gradient accumulator for a node, zero-initialised on first use.
    Tensor& grad_of(std::size_t id);
    const Tensor& upstream(std::size_t id) const { return nodes_[id].grad; }

    // Null when the node received no gradient.
    const Tensor* grad(Var v) const;
    Tensor grad_or_zero(Var v) const;

    std::size_t size() const noexcept { return nodes_.size(); }

    // With gradients disabled no backward closures are stored and parameters
    // bind as constants.
    void set_grad_enabled(bool enabled) { grad_enabled_ = enabled; }
    bool grad_enabled() const noexcept { return grad_enabled_; }

private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool requires_grad = false;
        bool has_grad = false;
        BackwardFn backward;
        Parameter* param = nullptr;
    };

    Var push(Tensor value, bool requires_grad, BackwardFn fn);

    std::deque<Node> nodes_;
    std::unordered_map<const Parameter*, std::size_t> param_nodes_;
    bool grad_enabled_ = true;
};

}  // namespace adasgn
