#pragma once

#include "emir/tensor.hpp"

namespace emir {

// 10*log10(peak^2/MSE), capped at 100 dB when MSE < 1e-10
double psnr(const Tensor& a, const Tensor& b, double peak = 1.0);

// mean windowed SSIM, 11x11 Gaussian window sigma 1.5, valid positions only;
// for multi-channel inputs the per-channel means are averaged
double ssim(const Tensor& a, const Tensor& b, double peak = 1.0);

}  // namespace emir
