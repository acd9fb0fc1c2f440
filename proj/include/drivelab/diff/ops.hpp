#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "drivelab/diff/tape.hpp"

namespace drivelab::diff {

/// Magnitude floor applied to log inputs and divisors.
inline constexpr double kNumericGuard = 1e-12;

enum class Unary { Tanh, Sigmoid, Exp, Log, Softplus, Square, Negate, Clamp };

// Matrix product [m x k] * [k x n].
Var matmul(Var a, Var b);
// x * W + b with b a 1 x out row added to every row.
Var affine(Var x, Var weight, Var bias);

Var apply_unary(Var x, Unary op, double lo = 0.0, double hi = 0.0);
inline Var tanh(Var x) { return apply_unary(x, Unary::Tanh); }
inline Var sigmoid(Var x) { return apply_unary(x, Unary::Sigmoid); }
inline Var exp(Var x) { return apply_unary(x, Unary::Exp); }
inline Var log(Var x) { return apply_unary(x, Unary::Log); }
inline Var softplus(Var x) { return apply_unary(x, Unary::Softplus); }
inline Var square(Var x) { return apply_unary(x, Unary::Square); }
inline Var negate(Var x) { return apply_unary(x, Unary::Negate); }
inline Var clamp(Var x, double lo, double hi) { return apply_unary(x, Unary::Clamp, lo, hi); }

enum class Binary { Add, Sub, Mul, Div };

// Elementwise; shapes must match unless one side is 1x1.
Var apply_binary(Var a, Var b, Binary op);
inline Var add(Var a, Var b) { return apply_binary(a, b, Binary::Add); }
inline Var sub(Var a, Var b) { return apply_binary(a, b, Binary::Sub); }
inline Var mul(Var a, Var b) { return apply_binary(a, b, Binary::Mul); }
inline Var div(Var a, Var b) { return apply_binary(a, b, Binary::Div); }

Var scale(Var x, double c);
Var add_scalar(Var x, double c);

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator/(Var a, Var b) { return div(a, b); }
inline Var operator-(Var a) { return negate(a); }
inline Var operator*(double c, Var x) { return scale(x, c); }
inline Var operator*(Var x, double c) { return scale(x, c); }
inline Var operator+(Var x, double c) { return add_scalar(x, c); }
inline Var operator+(double c, Var x) { return add_scalar(x, c); }
inline Var operator-(Var x, double c) { return add_scalar(x, -c); }
inline Var operator-(double c, Var x) { return add_scalar(negate(x), c); }

/// mean + std * noise (reparameterized). std must be >= 0; a zero std is
/// accepted as the deterministic limit.
Var gaussian_sample(Var mean, Var std, Var noise);

/// Per-row KL( N(mean_q, std_q) || N(mean_p, std_p) ) summed over columns.
/// Returns rows x 1 (a scalar for single-row inputs).
Var kl_diag_gaussians(Var mean_q, Var std_q, Var mean_p, Var std_p);

Var sum(Var x);
Var mean(Var x);
// Per-row reductions to rows x 1.
Var row_sum(Var x);
Var row_mean(Var x);

Var concat_cols(const std::vector<Var>& parts);
Var slice_cols(Var x, std::size_t begin, std::size_t count);
Var concat_rows(const std::vector<Var>& parts);
Var slice_rows(Var x, std::size_t begin, std::size_t count);
Var detach(Var x);

/// Row r of the result is bias + sum_j weight[indices[r * active + j], :].
/// Equivalent to multiplying a multi-hot row vector by `weight`.
Var onehot_affine(std::shared_ptr<const std::vector<std::uint32_t>> indices, std::size_t active, Var weight,
                  Var bias);

/// Mean categorical cross-entropy over rows x cells. `logits` is rows x
/// (cells * classes) with classes contiguous per cell; `targets` holds
/// rows * cells class ids.
Var cell_cross_entropy(Var logits, std::shared_ptr<const std::vector<std::uint8_t>> targets,
                       std::size_t classes);

}  // namespace drivelab::diff
