#include "emir/reference.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace emir::reference {

std::vector<double> matmul_naive(const std::vector<double>& a,
                                 const std::vector<double>& b, std::int64_t m,
                                 std::int64_t k, std::int64_t n) {
  std::vector<double> out(m * n, 0.0);
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j)
      for (std::int64_t t = 0; t < k; ++t)
        out[i * n + j] += a[i * k + t] * b[t * n + j];
  return out;
}

std::vector<double> conv2d_naive(const std::vector<double>& in,
                                 const std::vector<double>& weight,
                                 std::int64_t batch, std::int64_t c_in,
                                 std::int64_t h, std::int64_t w,
                                 std::int64_t c_out, std::int64_t kh,
                                 std::int64_t kw, std::int64_t stride,
                                 std::int64_t padding, std::int64_t groups) {
  const std::int64_t ho_n = (h + 2 * padding - kh) / stride + 1;
  const std::int64_t wo_n = (w + 2 * padding - kw) / stride + 1;
  const std::int64_t cpg_in = c_in / groups;
  const std::int64_t cpg_out = c_out / groups;
  std::vector<double> out(batch * c_out * ho_n * wo_n, 0.0);
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t co = 0; co < c_out; ++co)
      for (std::int64_t ho = 0; ho < ho_n; ++ho)
        for (std::int64_t wo = 0; wo < wo_n; ++wo) {
          double acc = 0.0;
          const std::int64_t g = co / cpg_out;
          for (std::int64_t ci = 0; ci < cpg_in; ++ci)
            for (std::int64_t r = 0; r < kh; ++r)
              for (std::int64_t s = 0; s < kw; ++s) {
                const std::int64_t hi = ho * stride - padding + r;
                const std::int64_t wi = wo * stride - padding + s;
                if (hi < 0 || hi >= h || wi < 0 || wi >= w) continue;
                const std::int64_t c = g * cpg_in + ci;
                acc += in[((b * c_in + c) * h + hi) * w + wi] *
                       weight[((co * cpg_in + ci) * kh + r) * kw + s];
              }
          out[((b * c_out + co) * ho_n + ho) * wo_n + wo] = acc;
        }
  return out;
}

std::vector<double> scan_naive(const std::vector<double>& x,
                               const std::vector<double>& abar,
                               const std::vector<double>& bbar,
                               const std::vector<double>& c_proj, double d_skip,
                               std::int64_t len, std::int64_t n_state) {
  std::vector<double> h(n_state, 0.0), y(len, 0.0);
  for (std::int64_t t = 0; t < len; ++t) {
    double acc = 0.0;
    for (std::int64_t n = 0; n < n_state; ++n) {
      h[n] = abar[t * n_state + n] * h[n] + bbar[t * n_state + n] * x[t];
      acc += c_proj[t * n_state + n] * h[n];
    }
    y[t] = acc + d_skip * x[t];
  }
  return y;
}

std::vector<double> attention_dense_masked(const std::vector<double>& q,
                                           const std::vector<double>& k_mat,
                                           const std::vector<double>& v,
                                           std::int64_t len, std::int64_t d,
                                           std::int64_t top_k, double temp) {
  std::vector<double> out(len * d, 0.0), scores(len);
  const std::int64_t keep = std::min(top_k, len);
  std::vector<std::int64_t> idx(len);
  for (std::int64_t i = 0; i < len; ++i) {
    for (std::int64_t j = 0; j < len; ++j) {
      double s = 0.0;
      for (std::int64_t t = 0; t < d; ++t) s += q[i * d + t] * k_mat[j * d + t];
      scores[j] = temp * s;
    }
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::int64_t a, std::int64_t b) {
      if (scores[a] != scores[b]) return scores[a] > scores[b];
      return a < b;
    });
    double mx = scores[idx[0]];
    double denom = 0.0;
    for (std::int64_t r = 0; r < keep; ++r)
      denom += std::exp(scores[idx[r]] - mx);
    for (std::int64_t r = 0; r < keep; ++r) {
      const double p = std::exp(scores[idx[r]] - mx) / denom;
      const std::int64_t j = idx[r];
      for (std::int64_t t = 0; t < d; ++t) out[i * d + t] += p * v[j * d + t];
    }
  }
  return out;
}

}  // namespace emir::reference
