#include "emir/metrics.hpp"

#include <cmath>

#include "emir/common.hpp"

namespace emir {

double psnr(const Tensor& a, const Tensor& b, double peak) {
  check(a.shape() == b.shape(), "psnr: shape mismatch");
  check(peak > 0.0, "psnr: peak must be positive");
  double mse = 0.0;
  const auto& av = a.data();
  const auto& bv = b.data();
  for (std::int64_t i = 0; i < a.numel(); ++i) {
    const double d = av[i] - bv[i];
    mse += d * d;
  }
  mse /= static_cast<double>(a.numel());
  if (mse < 1e-10) return 100.0;
  return 10.0 * std::log10(peak * peak / mse);
}

namespace {
constexpr int kWin = 11;

std::vector<double> gaussian_window() {
  std::vector<double> w(kWin * kWin);
  const double sigma = 1.5;
  double total = 0.0;
  for (int i = 0; i < kWin; ++i)
    for (int j = 0; j < kWin; ++j) {
      const double dy = i - kWin / 2, dx = j - kWin / 2;
      w[i * kWin + j] = std::exp(-(dy * dy + dx * dx) / (2.0 * sigma * sigma));
      total += w[i * kWin + j];
    }
  for (auto& v : w) v /= total;
  return w;
}

double ssim_plane(const double* a, const double* b, std::int64_t h,
                  std::int64_t w, double peak) {
  static const std::vector<double> win = gaussian_window();
  const double c1 = (0.01 * peak) * (0.01 * peak);
  const double c2 = (0.03 * peak) * (0.03 * peak);
  double acc = 0.0;
  std::int64_t count = 0;
  for (std::int64_t y = 0; y + kWin <= h; ++y) {
    for (std::int64_t x = 0; x + kWin <= w; ++x) {
      double ma = 0.0, mb = 0.0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          const double wt = win[i * kWin + j];
          ma += wt * a[(y + i) * w + x + j];
          mb += wt * b[(y + i) * w + x + j];
        }
      double va = 0.0, vb = 0.0, cov = 0.0;
      for (int i = 0; i < kWin; ++i)
        for (int j = 0; j < kWin; ++j) {
          const double wt = win[i * kWin + j];
          const double da = a[(y + i) * w + x + j] - ma;
          const double db = b[(y + i) * w + x + j] - mb;
          va += wt * da * da;
          vb += wt * db * db;
          cov += wt * da * db;
        }
      const double num = (2.0 * ma * mb + c1) * (2.0 * cov + c2);
      const double den = (ma * ma + mb * mb + c1) * (va + vb + c2);
      acc += num / den;
      ++count;
    }
  }
  check(count > 0, "ssim: image smaller than the 11x11 window");
  return acc / static_cast<double>(count);
}
}  // namespace

double ssim(const Tensor& a, const Tensor& b, double peak) {
  check(a.shape() == b.shape(), "ssim: shape mismatch");
  check(a.rank() >= 2, "ssim: expects at least [H,W]");
  const std::int64_t h = a.dim(a.rank() - 2), w = a.dim(a.rank() - 1);
  const std::int64_t planes = a.numel() / (h * w);
  double acc = 0.0;
  for (std::int64_t p = 0; p < planes; ++p)
    acc += ssim_plane(a.data().data() + p * h * w,
                      b.data().data() + p * h * w, h, w, peak);
  return acc / static_cast<double>(planes);
}

}  // namespace emir
