#include "emir/tsam.hpp"

#include <cmath>

namespace emir {

Tensor conv_param(ParamStore& store, const std::string& name, std::int64_t co,
                  std::int64_t ci_per_group, std::int64_t kh, std::int64_t kw,
                  Rng& rng, bool zero_init) {
  Tensor w = zero_init ? Tensor::zeros({co, ci_per_group, kh, kw})
                       : fanin_uniform({co, ci_per_group, kh, kw},
                                       ci_per_group * kh * kw, rng);
  store.create(name + ".w", w);
  store.create(name + ".b", Tensor::zeros({co}));
  return w;
}

Tensor conv_bias(const Tensor& x, ParamStore& store, const std::string& name,
                 std::int64_t stride, std::int64_t padding,
                 std::int64_t groups) {
  Tensor y = conv2d(x, store.at(name + ".w"), stride, padding, groups);
  Tensor b = reshape(store.at(name + ".b"), {y.dim(1), 1, 1});
  return add(y, b);
}

void tsam_init(ParamStore& store, const std::string& prefix,
               const TsamConfig& cfg, Rng& rng) {
  const std::int64_t c = cfg.channels;
  check(c % cfg.heads == 0, "tsam: channels not divisible by heads");
  check(cfg.k >= 1, "tsam: k must be >= 1");
  for (const char* br : {"q", "k", "v"}) {
    conv_param(store, prefix + "." + br + "_pw", c, c, 1, 1, rng);
    conv_param(store, prefix + "." + br + "_dw", c, 1, 3, 3, rng);
  }
  conv_param(store, prefix + ".out_pw", c, c, 1, 1, rng);
  const double d_head = static_cast<double>(c / cfg.heads);
  store.create(prefix + ".temp",
               Tensor::full({cfg.heads}, 1.0 / std::sqrt(d_head)));
}

namespace {
// [1,C,H,W] -> [heads, HW, C/heads]
Tensor to_heads(const Tensor& x, int heads) {
  const std::int64_t c = x.dim(1), hw = x.dim(2) * x.dim(3);
  Tensor r = reshape(x, {heads, c / heads, hw});
  return transpose(r, {0, 2, 1});
}

Tensor from_heads(const Tensor& x, std::int64_t h, std::int64_t w) {
  const std::int64_t heads = x.dim(0), d = x.dim(2);
  Tensor r = transpose(x, {0, 2, 1});
  return reshape(r, {1, heads * d, h, w});
}
}  // namespace

QkvProjection project_qkv(const Tensor& image_feat, const Tensor& event_feat,
                          ParamStore& store, const std::string& prefix,
                          const TsamConfig& cfg) {
  check(image_feat.shape() == event_feat.shape(),
        "tsam: image/event feature shape mismatch");
  check(image_feat.rank() == 4 && image_feat.dim(1) == cfg.channels,
        "tsam: features must be [1,C,H,W] with configured C");
  auto project = [&](const Tensor& x, const std::string& br) {
    Tensor y = conv_bias(x, store, prefix + "." + br + "_pw", 1, 0, 1);
    return conv_bias(y, store, prefix + "." + br + "_dw", 1, 1, cfg.channels);
  };
  QkvProjection out;
  out.q = l2_normalize_rows(to_heads(project(image_feat, "q"), cfg.heads));
  out.k = l2_normalize_rows(to_heads(project(event_feat, "k"), cfg.heads));
  out.v = to_heads(project(event_feat, "v"), cfg.heads);
  return out;
}

Tensor tsam_forward(const Tensor& image_feat, const Tensor& event_feat,
                    ParamStore& store, const std::string& prefix,
                    const TsamConfig& cfg) {
  QkvProjection qkv = project_qkv(image_feat, event_feat, store, prefix, cfg);
  Tensor attn = sparse_attention(qkv.q, qkv.k, qkv.v, cfg.k,
                                 store.at(prefix + ".temp"));
  Tensor merged = from_heads(attn, image_feat.dim(2), image_feat.dim(3));
  Tensor projected = conv_bias(merged, store, prefix + ".out_pw", 1, 0, 1);
  return cfg.residual ? add(projected, image_feat) : projected;
}

}  // namespace emir
