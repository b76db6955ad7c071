#pragma once

#include <cstddef>
#include <optional>
#include <vector>

#include "vesselseg/tensor.hpp"

// Differentiable primitives. Every op validates shapes, checks the result for
// non-finite values, and registers its adjoint on the tape when any input
// requires gradients. Binary ops broadcast along leading singleton axes only:
// the smaller operand must equal a trailing slice of the larger shape once
// leading 1-extents are stripped.
namespace vseg::ops {

// --- elementwise ---
Tensor add(Tape& tape, const Tensor& a, const Tensor& b);
Tensor sub(Tape& tape, const Tensor& a, const Tensor& b);
Tensor mul(Tape& tape, const Tensor& a, const Tensor& b);
Tensor div(Tape& tape, const Tensor& a, const Tensor& b);
Tensor scale(Tape& tape, const Tensor& x, double factor);
Tensor add_const(Tape& tape, const Tensor& x, double shift);
Tensor neg(Tape& tape, const Tensor& x);
Tensor tanh(Tape& tape, const Tensor& x);
Tensor sigmoid(Tape& tape, const Tensor& x);
Tensor softplus(Tape& tape, const Tensor& x);
Tensor silu(Tape& tape, const Tensor& x);
Tensor exp(Tape& tape, const Tensor& x);
Tensor relu(Tape& tape, const Tensor& x);

// --- linear algebra ---
// [m,k]x[k,n] -> [m,n]; accumulation over k in ascending order per element.
Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b);
// Cross-correlation. x:[Cin,H,W], kernel:[Cout,Cin,k,k], bias:[Cout] optional.
Tensor conv2d(Tape& tape, const Tensor& x, const Tensor& kernel,
              const std::optional<Tensor>& bias, std::size_t stride,
              std::size_t padding);
// Depthwise causal 1-d conv over the middle axis. x:[G,T,D], w:[D,k], b:[D].
Tensor dwconv1d_causal(Tape& tape, const Tensor& x, const Tensor& w,
                       const Tensor& b);

// --- shape ---
// out[i] = x[indices[i]]; indices address the flattened input. The adjoint
// scatter-adds, so repeated indices are fine.
Tensor gather(Tape& tape, const Tensor& x, std::vector<std::size_t> indices,
              Shape out_shape);
Tensor concat0(Tape& tape, const std::vector<Tensor>& parts);
Tensor reshape(Tape& tape, const Tensor& x, Shape out_shape);
Tensor transpose2(Tape& tape, const Tensor& x);  // [a,b] -> [b,a]
// Swaps axes (axis, axis+1); the rest of the shape is untouched.
Tensor swapaxes(Tape& tape, const Tensor& x, std::size_t axis);
// [G,T,C] -> [G,t1-t0,C]: a token range out of every string.
Tensor slice_mid(Tape& tape, const Tensor& x, std::size_t t0, std::size_t t1);
// [G,T,C] with the middle (token) axis reversed.
Tensor reverse_mid(Tape& tape, const Tensor& x);
// [...,D] -> [...,d1-d0]: a channel range.
Tensor slice_last(Tape& tape, const Tensor& x, std::size_t d0, std::size_t d1);
// [C,H,W] -> [(H/s)(W/s), s*s, C]; cell g=(h/s)*(W/s)+(w/s), token m*s+n is
// pixel (h*s+m, w*s+n). merge_cells is the exact inverse.
Tensor split_cells(Tape& tape, const Tensor& f, std::size_t s);
// Nearest-neighbor doubling: [C,H,W] -> [C,2H,2W].
Tensor upsample2(Tape& tape, const Tensor& x);
Tensor merge_cells(Tape& tape, const Tensor& x, std::size_t h, std::size_t w,
                   std::size_t s);

// --- reductions / prefix ---
Tensor cumsum(Tape& tape, const Tensor& x, std::size_t axis);
Tensor sum_all(Tape& tape, const Tensor& x);           // -> [1]
Tensor sum_axis(Tape& tape, const Tensor& x, std::size_t axis);
Tensor max_axis(Tape& tape, const Tensor& x, std::size_t axis);
Tensor mean_axis(Tape& tape, const Tensor& x, std::size_t axis);
// Normalizes the last axis to zero mean, unit variance.
Tensor layer_norm(Tape& tape, const Tensor& x, double eps = 1e-5);

// --- sampling ---
// field:[C,H,W], coords:[P,2] fractional (row, col) pairs, clamped to the
// field extents. Differentiable in both field and coords; the coordinate
// gradient is zero where clamping is active.
Tensor bilinear_sample(Tape& tape, const Tensor& field, const Tensor& coords);

// --- spectral ---
// x:[...,2,s,s] with separate real/imaginary planes on axis -3; s a power of
// two. Forward is the unnormalized 2-d DFT; inverse applies 1/s^2.
Tensor fft2(Tape& tape, const Tensor& x, bool inverse);

// --- selective scan ---
// u,dt:[G,T,D]; b_in,c_out:[G,T,N]; a_log,d_skip:[D].
// Per channel d the state matrix spectrum is -(n+1)*exp(a_log[d]), n<N, so
// every discrete decay exp(dt*A) lies in (0,1) whenever dt > 0.
// Recurrence: h_n <- exp(-dt*lambda)^(n+1) * h_n + dt*b_in[n]*u,
//             y = sum_n c_out[n]*h_n + d_skip*u.
Tensor ssm_scan(Tape& tape, const Tensor& u, const Tensor& dt,
                const Tensor& b_in, const Tensor& c_out, const Tensor& a_log,
                const Tensor& d_skip);

}  // namespace vseg::ops
