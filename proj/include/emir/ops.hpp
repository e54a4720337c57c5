#pragma once

#include <vector>

#include "emir/tensor.hpp"

namespace emir {

// elementwise, broadcasting on trailing axes
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double s);
Tensor add_scalar(const Tensor& a, double s);

Tensor relu(const Tensor& x);
Tensor gelu(const Tensor& x);
Tensor softplus(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor exp_op(const Tensor& x);
Tensor absval(const Tensor& x);
Tensor neg(const Tensor& x);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor mean_spatial(const Tensor& x);  // [...,H,W] -> [...,1,1]

Tensor matmul(const Tensor& a, const Tensor& b);  // [m,k]x[k,n]

Tensor reshape(const Tensor& x, const Shape& s);
Tensor transpose(const Tensor& x, const std::vector<int>& perm);
Tensor concat(const std::vector<Tensor>& xs, int axis);
std::vector<Tensor> split(const Tensor& x, int axis,
                          const std::vector<std::int64_t>& sizes);
Tensor permute_rows(const Tensor& x, const std::vector<std::int64_t>& idx);

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-6);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

// Per-slice top-k hard mask. axis 0 keeps the top min(k,n) entries of every
// column, axis 1 of every row; ties resolve to the lowest index. Gradient is
// straight-through on the kept set.
Tensor top_k_mask(const Tensor& x, std::int64_t k, int axis);

enum class SoftmaxMask {
  none,          // all entries participate
  zero_excluded  // entries that are exactly 0 are treated as -inf logits
};
Tensor softmax_axis(const Tensor& x, int axis,
                    SoftmaxMask mask = SoftmaxMask::none);

// input [B,Ci,H,W], weight [Co,Ci/groups,kh,kw]; zero padding
Tensor conv2d(const Tensor& input, const Tensor& weight, std::int64_t stride,
              std::int64_t padding, std::int64_t groups);

Tensor upsample_nearest2x(const Tensor& x);  // [B,C,H,W] -> [B,C,2H,2W]

// Zero-order-hold discretization of a diagonal SSM entry. Returns
// abar = exp(delta*a) and fcoef = (abar-1)/a, with a series branch below
// |a*delta| < 1e-6 so bbar = fcoef*b stays finite as a -> 0-.
void zoh_discretize(double a, double delta, double& abar, double& fcoef);

// Selective scan: x [L,C], delta [L,C] (>0), a_diag [C,N] (<0), b_in [L,N],
// c_out [L,N], d_skip [C]. h_t = abar h_{t-1} + fcoef*B_t*x_t per (c,n);
// y_t,c = <C_t, h_t,c> + D_c x_t,c. Sequential in t; parallel over channels.
Tensor selective_scan(const Tensor& x, const Tensor& delta,
                      const Tensor& a_diag, const Tensor& b_in,
                      const Tensor& c_out, const Tensor& d_skip);

// Gather-based top-k sparse attention. q,k,v are [h,L,d] with q and k rows
// expected pre-normalized; temp is [h]. Per query row the top min(k,L)
// scores (temp * q.k, lowest index wins ties) are kept, softmaxed and used
// to combine the matching value rows. Selection is constant w.r.t. inputs.
Tensor sparse_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                        std::int64_t top_k, const Tensor& temp);

}  // namespace emir
