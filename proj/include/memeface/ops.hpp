#pragma once

#include <vector>

#include "memeface/autograd.hpp"

// Differentiable primitives. Every op checks its shape contract and throws
// std::invalid_argument on mismatch.
namespace memeface::ops {

// Elementwise arithmetic on equal shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var neg(const Var& a);

// Multiply every element of `a` by the scalar Var `s`.
Var mul_scalar(const Var& a, const Var& s);

// Unary.
Var exp(const Var& a);
Var log(const Var& a);
Var square(const Var& a);
Var sqrt(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope = 0.2);
Var clamp(const Var& a, double lo, double hi);

// Reductions.
Var sum(const Var& a);
Var mean(const Var& a);
// [R, C] -> [C]
Var sum_rows(const Var& a);
// [C, H, W] -> [C]
Var mean_spatial(const Var& a);

// Shape manipulation.
Var reshape(const Var& a, Shape shape);
Var transpose(const Var& a);
// Concatenate along axis 0; trailing dims must agree.
Var concat(const std::vector<Var>& parts);
// Rows [begin, end) along axis 0.
Var slice(const Var& a, int begin, int end);
// Column j of a rank-2 tensor, as a rank-1 tensor.
Var column(const Var& a, int j);
// Rank-1 vectors of equal length -> [length, count].
Var stack_columns(const std::vector<Var>& columns);
// Scalars -> rank-1 vector.
Var stack_scalars(const std::vector<Var>& scalars);
// Element i of a tensor as a scalar.
Var element(const Var& a, std::size_t i);
// [D] -> [D, H, W], every spatial location a copy.
Var repeat_spatial(const Var& v, int height, int width);
// Columns of a [D, V] table selected by ids -> [D, ids.size()].
Var gather_columns(const Var& table, const std::vector<int>& ids);

// Linear algebra.
Var matmul(const Var& a, const Var& b);
// W [out, in] * x [in] + b [out]
Var linear(const Var& x, const Var& weight, const Var& bias);

// Softmax / log-softmax of a rank-2 tensor along `axis` (0 normalizes each column).
Var softmax(const Var& a, int axis);
Var log_softmax(const Var& a, int axis);
// log(sum(exp(a))) over all elements.
Var logsumexp(const Var& a);

// Image ops on [C, H, W].
Var conv2d(const Var& x, const Var& weight, const Var& bias, int stride, int padding);
Var upsample_nearest2x(const Var& x);

}  // namespace memeface::ops
