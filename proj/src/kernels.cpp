#include "emir/kernels.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

namespace emir::kernels {

void matmul(const double* a, const double* b, double* out, std::int64_t m,
            std::int64_t k, std::int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
#endif
  for (std::int64_t i = 0; i < m; ++i) {
    double* orow = out + i * n;
    for (std::int64_t j = 0; j < n; ++j) orow[j] = 0.0;
    const double* arow = a + i * k;
    for (std::int64_t t = 0; t < k; ++t) {
      double av = arow[t];
      const double* brow = b + t * n;
      for (std::int64_t j = 0; j < n; ++j) orow[j] += av * brow[j];
    }
  }
}

void matmul_grad_a(const double* dout, const double* b, double* da,
                   std::int64_t m, std::int64_t k, std::int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
#endif
  for (std::int64_t i = 0; i < m; ++i) {
    for (std::int64_t t = 0; t < k; ++t) {
      double s = 0.0;
      const double* drow = dout + i * n;
      const double* brow = b + t * n;
      for (std::int64_t j = 0; j < n; ++j) s += drow[j] * brow[j];
      da[i * k + t] += s;
    }
  }
}

void matmul_grad_b(const double* a, const double* dout, double* db,
                   std::int64_t m, std::int64_t k, std::int64_t n) {
#ifdef _OPENMP
#pragma omp parallel for schedule(static) if (m * n * k > 16384)
#endif
  for (std::int64_t t = 0; t < k; ++t) {
    for (std::int64_t j = 0; j < n; ++j) {
      double s = 0.0;
      for (std::int64_t i = 0; i < m; ++i) s += a[i * k + t] * dout[i * n + j];
      db[t * n + j] += s;
    }
  }
}

void conv2d_forward(const double* in, const double* weight, double* out,
                    const Conv2dDims& d) {
  const std::int64_t cpg_in = d.c_in / d.groups;   // channels per group, in
  const std::int64_t cpg_out = d.c_out / d.groups;  // channels per group, out
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) \
    if (d.batch * d.c_out * d.h_out * d.w_out > 4096)
#endif
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t co = 0; co < d.c_out; ++co) {
      const std::int64_t g = co / cpg_out;
      for (std::int64_t ho = 0; ho < d.h_out; ++ho) {
        for (std::int64_t wo = 0; wo < d.w_out; ++wo) {
          double acc = 0.0;
          for (std::int64_t ci = 0; ci < cpg_in; ++ci) {
            const std::int64_t c = g * cpg_in + ci;
            const double* iplane = in + ((b * d.c_in + c) * d.h) * d.w;
            const double* wplane =
                weight + ((co * cpg_in + ci) * d.kh) * d.kw;
            for (std::int64_t kh = 0; kh < d.kh; ++kh) {
              const std::int64_t hi = ho * d.stride - d.padding + kh;
              if (hi < 0 || hi >= d.h) continue;
              for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                const std::int64_t wi = wo * d.stride - d.padding + kw;
                if (wi < 0 || wi >= d.w) continue;
                acc += iplane[hi * d.w + wi] * wplane[kh * d.kw + kw];
              }
            }
          }
          out[((b * d.c_out + co) * d.h_out + ho) * d.w_out + wo] = acc;
        }
      }
    }
  }
}

void conv2d_grad_input(const double* dout, const double* weight, double* din,
                       const Conv2dDims& d) {
  const std::int64_t cpg_in = d.c_in / d.groups;
  const std::int64_t cpg_out = d.c_out / d.groups;
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) \
    if (d.batch * d.c_in * d.h * d.w > 4096)
#endif
  for (std::int64_t b = 0; b < d.batch; ++b) {
    for (std::int64_t c = 0; c < d.c_in; ++c) {
      const std::int64_t g = c / cpg_in;
      const std::int64_t ci = c % cpg_in;
      for (std::int64_t hi = 0; hi < d.h; ++hi) {
        for (std::int64_t wi = 0; wi < d.w; ++wi) {
          double acc = 0.0;
          for (std::int64_t oc = 0; oc < cpg_out; ++oc) {
            const std::int64_t co = g * cpg_out + oc;
            const double* dplane =
                dout + ((b * d.c_out + co) * d.h_out) * d.w_out;
            const double* wplane =
                weight + ((co * cpg_in + ci) * d.kh) * d.kw;
            for (std::int64_t kh = 0; kh < d.kh; ++kh) {
              const std::int64_t num_h = hi + d.padding - kh;
              if (num_h < 0 || num_h % d.stride) continue;
              const std::int64_t ho = num_h / d.stride;
              if (ho >= d.h_out) continue;
              for (std::int64_t kw = 0; kw < d.kw; ++kw) {
                const std::int64_t num_w = wi + d.padding - kw;
                if (num_w < 0 || num_w % d.stride) continue;
                const std::int64_t wo = num_w / d.stride;
                if (wo >= d.w_out) continue;
                acc += dplane[ho * d.w_out + wo] * wplane[kh * d.kw + kw];
              }
            }
          }
          din[((b * d.c_in + c) * d.h + hi) * d.w + wi] += acc;
        }
      }
    }
  }
}

void conv2d_grad_weight(const double* dout, const double* in, double* dweight,
                        const Conv2dDims& d) {
  const std::int64_t cpg_in = d.c_in / d.groups;
  const std::int64_t cpg_out = d.c_out / d.groups;
#ifdef _OPENMP
#pragma omp parallel for collapse(2) schedule(static) \
    if (d.c_out * cpg_in * d.kh * d.kw > 64)
#endif
  for (std::int64_t co = 0; co < d.c_out; ++co) {
    for (std::int64_t ci = 0; ci < cpg_in; ++ci) {
      const std::int64_t g = co / cpg_out;
      const std::int64_t c = g * cpg_in + ci;
      for (std::int64_t kh = 0; kh < d.kh; ++kh) {
        for (std::int64_t kw = 0; kw < d.kw; ++kw) {
          double acc = 0.0;
          for (std::int64_t b = 0; b < d.batch; ++b) {
            const double* iplane = in + ((b * d.c_in + c) * d.h) * d.w;
            const double* dplane =
                dout + ((b * d.c_out + co) * d.h_out) * d.w_out;
            for (std::int64_t ho = 0; ho < d.h_out; ++ho) {
              const std::int64_t hi = ho * d.stride - d.padding + kh;
              if (hi < 0 || hi >= d.h) continue;
              for (std::int64_t wo = 0; wo < d.w_out; ++wo) {
                const std::int64_t wi = wo * d.stride - d.padding + kw;
                if (wi < 0 || wi >= d.w) continue;
                acc += iplane[hi * d.w + wi] * dplane[ho * d.w_out + wo];
              }
            }
          }
          dweight[((co * cpg_in + ci) * d.kh + kh) * d.kw + kw] += acc;
        }
      }
    }
  }
}

}  // namespace emir::kernels
