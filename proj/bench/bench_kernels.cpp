// Timing comparison between the OpenMP kernels and the serial reference
// implementations, plus a correctness cross-check on every case it times.
#include <chrono>
#include <cmath>
#include <cstdio>
#include <vector>

#include "emir/common.hpp"
#include "emir/kernels.hpp"
#include "emir/ops.hpp"
#include "emir/reference.hpp"

using namespace emir;

namespace {
using clk = std::chrono::steady_clock;

double time_best_of(int reps, const std::function<void()>& fn) {
  double best = 1e300;
  for (int r = 0; r < reps; ++r) {
    const auto t0 = clk::now();
    fn();
    const auto t1 = clk::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

void fill(std::vector<double>& v, Rng& rng) {
  for (auto& x : v) x = rng.uniform();
}

double max_abs_diff(const std::vector<double>& a,
                    const std::vector<double>& b) {
  double m = 0.0;
  for (size_t i = 0; i < a.size(); ++i)
    m = std::max(m, std::fabs(a[i] - b[i]));
  return m;
}

void bench_matmul(Rng& rng) {
  std::printf("%-28s %12s %12s %8s %10s\n", "matmul", "parallel_s", "serial_s",
              "speedup", "max_diff");
  for (std::int64_t n : {64, 128, 256}) {
    std::vector<double> a(n * n), b(n * n), out(n * n);
    fill(a, rng);
    fill(b, rng);
    const double tp = time_best_of(
        3, [&] { kernels::matmul(a.data(), b.data(), out.data(), n, n, n); });
    std::vector<double> ref;
    const double ts =
        time_best_of(3, [&] { ref = reference::matmul_naive(a, b, n, n, n); });
    std::printf("  %4lld x %4lld               %12.6f %12.6f %7.2fx %10.2e\n",
                (long long)n, (long long)n, tp, ts, ts / tp,
                max_abs_diff(out, ref));
  }
}

void bench_conv(Rng& rng) {
  std::printf("%-28s %12s %12s %8s %10s\n", "conv2d 3x3", "parallel_s",
              "serial_s", "speedup", "max_diff");
  for (std::int64_t hw : {32, 64, 128}) {
    const std::int64_t ci = 16, co = 16;
    kernels::Conv2dDims d{1, ci, hw, hw, co, 3, 3, 1, 1, 1, hw, hw};
    std::vector<double> in(ci * hw * hw), w(co * ci * 9),
        out(co * hw * hw, 0.0);
    fill(in, rng);
    fill(w, rng);
    const double tp = time_best_of(
        3, [&] { kernels::conv2d_forward(in.data(), w.data(), out.data(), d); });
    std::vector<double> ref;
    const double ts = time_best_of(3, [&] {
      ref = reference::conv2d_naive(in, w, 1, ci, hw, hw, co, 3, 3, 1, 1, 1);
    });
    std::printf("  16ch %4lld x %4lld          %12.6f %12.6f %7.2fx %10.2e\n",
                (long long)hw, (long long)hw, tp, ts, ts / tp,
                max_abs_diff(out, ref));
  }
}

void bench_scan(Rng& rng) {
  std::printf("%-28s %12s %12s %8s %10s\n", "selective_scan", "parallel_s",
              "serial_s", "speedup", "max_diff");
  for (std::int64_t len : {256, 1024, 4096}) {
    const std::int64_t c = 32, n = 8;
    Tensor x = Tensor::zeros({len, c}), delta = Tensor::zeros({len, c});
    Tensor a_diag = Tensor::zeros({c, n}), b_in = Tensor::zeros({len, n});
    Tensor c_out = Tensor::zeros({len, n}), d_skip = Tensor::zeros({c});
    for (auto& v : x.data()) v = rng.uniform();
    for (auto& v : delta.data()) v = rng.uniform(0.05, 0.5);
    for (auto& v : a_diag.data()) v = rng.uniform(-2.0, -0.1);
    for (auto& v : b_in.data()) v = rng.uniform();
    for (auto& v : c_out.data()) v = rng.uniform();
    for (auto& v : d_skip.data()) v = rng.uniform();
    Tensor y;
    const double tp = time_best_of(3, [&] {
      y = selective_scan(x, delta, a_diag, b_in, c_out, d_skip);
    });
    // serial oracle, channel by channel
    std::vector<double> ref(len * c);
    const double ts = time_best_of(3, [&] {
      for (std::int64_t ch = 0; ch < c; ++ch) {
        std::vector<double> xc(len), abar(len * n), bbar(len * n);
        for (std::int64_t t = 0; t < len; ++t) {
          xc[t] = x.data()[t * c + ch];
          for (std::int64_t s = 0; s < n; ++s) {
            double ab, fc;
            zoh_discretize(a_diag.data()[ch * n + s], delta.data()[t * c + ch],
                           ab, fc);
            abar[t * n + s] = ab;
            bbar[t * n + s] = fc * b_in.data()[t * n + s];
          }
        }
        auto yc = reference::scan_naive(xc, abar, bbar, c_out.data(),
                                        d_skip.data()[ch], len, n);
        for (std::int64_t t = 0; t < len; ++t) ref[t * c + ch] = yc[t];
      }
    });
    std::printf("  L=%5lld C=32 N=8          %12.6f %12.6f %7.2fx %10.2e\n",
                (long long)len, tp, ts, ts / tp,
                max_abs_diff(y.data(), ref));
  }
}
}  // namespace

int main() {
  Rng rng(1234);
  bench_matmul(rng);
  std::printf("\n");
  bench_conv(rng);
  std::printf("\n");
  bench_scan(rng);
  return 0;
}
