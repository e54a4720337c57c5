#pragma once

#include "emir/ops.hpp"
#include "emir/params.hpp"

namespace emir {

struct GssmConfig {
  int channels = 16;
  int state_size = 8;
  std::vector<int> kernel_sizes = {3, 5, 7};
  bool ngu_nonlinear = true;  // sigma = GeLU when true, identity when false
  bool ngu_norm = true;       // spatial global-average gate when true
  bool residual = true;
};

void gssm_init(ParamStore& store, const std::string& prefix,
               const GssmConfig& cfg, Rng& rng);

// parallel depthwise convs at the configured odd kernel sizes, summed,
// pointwise-fused, plus residual
Tensor multiscale_enhance(const Tensor& x, ParamStore& store,
                          const std::string& prefix, const GssmConfig& cfg);

// four-direction scan (row fwd/bwd, column fwd/bwd) averaged; x is [1,C,H,W]
Tensor cross_scan_2d(const Tensor& x, ParamStore& store,
                     const std::string& prefix, const GssmConfig& cfg);

// f(X) ⊙ Norm(σ(g(X))) with channel expand/split and output projection
Tensor nonlinear_gated_unit(const Tensor& x, ParamStore& store,
                            const std::string& prefix, const GssmConfig& cfg);

Tensor gssm_forward(const Tensor& x, ParamStore& store,
                    const std::string& prefix, const GssmConfig& cfg);

// scan-order index helpers (exposed for the per-direction oracle tests)
std::vector<std::int64_t> scan_order(std::int64_t h, std::int64_t w,
                                     bool column_major, bool reversed);

}  // namespace emir
