#pragma once

#include "emir/ops.hpp"
#include "emir/params.hpp"

namespace emir {

struct TsamConfig {
  int channels = 16;
  int heads = 2;
  std::int64_t k = 4;
  bool residual = true;
};

// conv weight + zero bias helpers shared by the whole network
Tensor conv_param(ParamStore& store, const std::string& name, std::int64_t co,
                  std::int64_t ci_per_group, std::int64_t kh, std::int64_t kw,
                  Rng& rng, bool zero_init = false);
Tensor conv_bias(const Tensor& x, ParamStore& store, const std::string& name,
                 std::int64_t stride, std::int64_t padding,
                 std::int64_t groups);

void tsam_init(ParamStore& store, const std::string& prefix,
               const TsamConfig& cfg, Rng& rng);

struct QkvProjection {
  Tensor q, k, v;  // [heads, HW, C/heads]; q and k rows L2-normalized
};

// image/event features are [1,C,H,W]; pointwise conv then 3x3 depthwise,
// reshaped per head with cosine-similarity normalization on Q and K.
QkvProjection project_qkv(const Tensor& image_feat, const Tensor& event_feat,
                          ParamStore& store, const std::string& prefix,
                          const TsamConfig& cfg);

// sparse multi-head cross attention + output projection + residual
Tensor tsam_forward(const Tensor& image_feat, const Tensor& event_feat,
                    ParamStore& store, const std::string& prefix,
                    const TsamConfig& cfg);

}  // namespace emir
