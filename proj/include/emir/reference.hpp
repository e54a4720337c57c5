#pragma once

#include <cstdint>
#include <vector>

namespace emir::reference {

// Single-threaded naive implementations. These are the test oracles and the
// baseline side of the kernel benchmark; keep them loop-literal.

std::vector<double> matmul_naive(const std::vector<double>& a,
                                 const std::vector<double>& b, std::int64_t m,
                                 std::int64_t k, std::int64_t n);

// input [B,Ci,H,W], kernel [Co,Ci/g,kh,kw] -> [B,Co,Ho,Wo]
std::vector<double> conv2d_naive(const std::vector<double>& in,
                                 const std::vector<double>& weight,
                                 std::int64_t batch, std::int64_t c_in,
                                 std::int64_t h, std::int64_t w,
                                 std::int64_t c_out, std::int64_t kh,
                                 std::int64_t kw, std::int64_t stride,
                                 std::int64_t padding, std::int64_t groups);

// Discretized SSM recurrence, one channel, state size N:
//   h_t = abar_t ⊙ h_{t-1} + bbar_t ⊙ (B_t x_t)   (elementwise over n)
//   y_t = <C_t, h_t> + D x_t
// abar/bbar are [L,N] per-step coefficients, B/C are [L,N], x is [L].
std::vector<double> scan_naive(const std::vector<double>& x,
                               const std::vector<double>& abar,
                               const std::vector<double>& bbar_x_b,
                               const std::vector<double>& c_proj, double d_skip,
                               std::int64_t len, std::int64_t n_state);

// Dense attention with optional per-row top-k masking:
// scores s = temp * Q K^T per head row; keep top-k per row (lowest index wins
// ties; k >= L means keep all), softmax over kept, multiply V.
// q,k_mat,v are [L,d]; returns [L,d].
std::vector<double> attention_dense_masked(const std::vector<double>& q,
                                           const std::vector<double>& k_mat,
                                           const std::vector<double>& v,
                                           std::int64_t len, std::int64_t d,
                                           std::int64_t top_k, double temp);

}  // namespace emir::reference
