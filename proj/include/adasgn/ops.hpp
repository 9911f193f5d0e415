#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "adasgn/tape.hpp"

namespace adasgn {

enum class Mode { Train, Eval };

// Matrix product over the last two axes with broadcasting of a rank-2 operand:
//   [m,k]x[k,n], [...,m,k]x[k,n] (leading axes folded into rows),
//   [m,k]x[B,k,n] and [B,m,k]x[B,k,n].
// Counts batch*m*k*n multiply-adds.
Var matmul(Var a, Var b);

// Swaps the last two axes.
Var transpose_last(Var x);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var x, double s);

// Adds `y` whose shape is a trailing suffix of x's shape (bias, embeddings).
Var add_broadcast(Var x, Var y);

Var relu(Var x);

// Row-wise softmax over the last axis, max-subtracted.
Var softmax_rows(Var x);
Var log_softmax_rows(Var x);

// Same-padded temporal convolution. x is [T,Cin] or [B,T,Cin]; w is
// [k,Cin,Cout] with k odd; bias is [Cout]. Counts B*T*k*Cin*Cout.
Var conv1d_temporal(Var x, Var w, Var bias);

struct BatchNormState {
    Parameter running_mean;
    Parameter running_var;
    double momentum = 0.9;
    double eps = 1e-5;

    BatchNormState() = default;
    explicit BatchNormState(std::size_t channels);
};

// Normalises x viewed as [rows, C] (C = last extent). Train mode uses batch
// statistics, needs rows >= 2, and updates the running statistics.
Var batch_norm(Var x, Var gamma, Var beta, BatchNormState& state, Mode mode);

// Removes `axis` by taking the maximum; ties route the gradient to the
// lowest index.
Var max_pool_axis(Var x, std::size_t axis);

// -log softmax(logits)[label] for a rank-1 logits vector.
Var cross_entropy(Var logits, std::size_t label);
// Mean cross-entropy over the rows of [B, n] logits.
Var cross_entropy_mean(Var logits, std::span<const std::size_t> labels);

Var sum(Var x);
Var mean(Var x);

Var reshape(Var x, Shape shape);

// Rows along axis 0.
Var gather_rows(Var x, std::span<const std::size_t> rows);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var x, std::size_t begin, std::size_t count);

// out[r, ...] = x[r, ...] * g[r].
Var scale_rows(Var x, Var g);

// out[r] = x[r, idx[r]] for x of shape [R, n].
Var pick(Var x, std::span<const std::size_t> idx);

// Forward: one-hot rows at `hard`. Backward: identity onto `soft`, i.e.
// hard + soft - stop_gradient(soft).
Var straight_through(Var soft, std::span<const std::size_t> hard);

}  // namespace adasgn
