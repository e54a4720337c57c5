#pragma once

#include <cstdint>

namespace emir::kernels {

// OpenMP-parallel compute kernels. Every output element is produced by a
// single thread with a fixed-order inner reduction, so results are bitwise
// identical regardless of thread count.

void matmul(const double* a, const double* b, double* out, std::int64_t m,
            std::int64_t k, std::int64_t n);

// dA = dOut * B^T, dB = A^T * dOut; each written gather-style.
void matmul_grad_a(const double* dout, const double* b, double* da,
                   std::int64_t m, std::int64_t k, std::int64_t n);
void matmul_grad_b(const double* a, const double* dout, double* db,
                   std::int64_t m, std::int64_t k, std::int64_t n);

struct Conv2dDims {
  std::int64_t batch, c_in, h, w;
  std::int64_t c_out, kh, kw;
  std::int64_t stride, padding, groups;
  std::int64_t h_out, w_out;
};

void conv2d_forward(const double* in, const double* weight, double* out,
                    const Conv2dDims& d);
// accumulates into din / dweight
void conv2d_grad_input(const double* dout, const double* weight, double* din,
                       const Conv2dDims& d);
void conv2d_grad_weight(const double* dout, const double* in, double* dweight,
                        const Conv2dDims& d);

}  // namespace emir::kernels
