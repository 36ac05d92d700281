#pragma once

#include <initializer_list>
#include <span>

#include "soma/numcore/tape.hpp"

// Differentiable primitives over Tape values. Vectors are rank-1 tensors; matrices are
// row-major rank-2 tensors.
namespace soma {

/// Probability floor applied inside logarithms.
inline constexpr double kProbFloor = 1e-8;

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double k);
Var dot(Var a, Var b);

/// a[m,k] x b[k,n] -> [m,n]; a[m,k] x b[k] -> [m].
Var matmul(Var a, Var b);
/// W[out,in] x + b.
Var affine(Var w, Var x, Var b);
Var transpose(Var a);
/// Outer product a[n] b[m]^T -> [n,m].
Var outer(Var a, Var b);
Var flatten(Var a);

Var tanh(Var a);
Var logistic(Var a);
Var exp(Var a);
/// log(max(a, floor)); the floor has zero derivative below it.
Var log_floor(Var a, double floor = kProbFloor);
Var square(Var a);

Var sum(Var a);
Var mean(Var a);

/// softmax(v / temperature). Throws ParameterError for temperature <= 0.
Var softmax(Var v, double temperature = 1.0);
Var log_softmax(Var v);

Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
Var slice(Var v, std::size_t begin, std::size_t length);
/// Single element of a vector as a scalar.
Var pick(Var v, std::size_t index);

/// Scatters n(n+1)/2 entries row-major into the lower triangle of an n x n matrix.
Var lower_triangular(Var entries, std::size_t n);
Var add_diagonal(Var m, double eps);

/// Sum_i q_i (ln q_i - ln max(p_i, floor)). Zero-probability q_i contribute nothing.
Var kl_divergence(Var q, Var p);
/// Mean of squared differences.
Var mse(Var a, Var b);

/// Copy of the value with no gradient path back to its inputs.
Var detach(Var a);

}  // namespace soma
