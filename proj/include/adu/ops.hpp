#pragma once

#include <vector>

#include "adu/graph.hpp"

// Differentiable ops over batched tensors. Shapes are [batch, rows, cols];
// ops apply per slice unless stated otherwise. Dimension mismatches throw
// DimensionError, numerically unusable inputs throw SingularError/DomainError.
namespace adu::ad {

// Linear algebra (real or complex unless noted).
Var matmul(Var a, Var b);
Var hermitian(Var a);  // conjugate transpose; plain transpose for real
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var scale(Var a, double s);
Var scale(Var a, cplx s);  // complex tensors only
// Per-slice scalar broadcast: out[b] = s[b] * a[b], s has shape [batch,1,1].
// Dtype combinations: (real,real), (cplx,cplx), (cplx tensor, real scalar).
Var mul_bscalar(Var a, Var s);
Var trace(Var a);                      // [B,n,n] -> [B,1,1]
Var real_part(Var a);                  // complex -> real
Var imag_part(Var a);                  // complex -> real
Var inverse(Var a, bool hermitian_pd); // [B,n,n]
Var logdet_hpd(Var a);                 // [B,n,n] Hermitian PD -> real [B,1,1]

// Batch plumbing.
// out[b] = a[idx[b]]; idx entries of -1 produce a zero slice.
Var gather(Var a, std::vector<Index> idx);
// [G*k, r, c] -> [G, r, c], summing k consecutive slices.
Var group_sum(Var a, Index k);
// Sum of every entry -> [1,1,1], dtype preserved.
Var sum_entries(Var a);
// Reshape in row-major logical order (b slowest, then row, then col).
Var reshape_rm(Var a, Index batch, Index rows, Index cols);
Var slice_cols(Var a, Index first, Index count);
Var complex_join(Var re, Var im);  // real pair -> complex

// Row-broadcast helpers for [1, R, C] activations; v is [1, 1, C].
Var add_rowvec(Var x, Var v);
Var mul_rowvec(Var x, Var v);
Var col_mean(Var x);  // [1,R,C] -> [1,1,C]

Var hadamard(Var a, Var b);

// Real elementwise ops.
Var relu(Var x);
Var sigmoid(Var x);
Var log_e(Var x);
Var sqrt_e(Var x);
Var square_e(Var x);
Var reciprocal_e(Var x);
Var rsqrt_shift(Var x, double eps);      // (x + eps)^(-1/2)
Var affine(Var x, double mul, double add);
// Elementwise KL( Bernoulli(p) || Bernoulli(1/2) ) in nats.
Var kl_bern_half(Var p);
// Binarization with sigmoid-adjusted straight-through surrogate gradient:
// forward sgn(u) with sgn(0)=+1, backward 2*alpha*sig(alpha u)(1-sig(alpha u)).
Var sign_st(Var u, double alpha);
// Per-cell power backstop factor: 1 while p <= P*(1+headroom), else sqrt(P/p).
Var power_backstop(Var p, double power, double headroom);

// Constants.
Tensor make_identity(Index batch, Index n, Dtype dtype);

}  // namespace adu::ad
