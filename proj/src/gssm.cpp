#include "emir/gssm.hpp"

#include <cmath>

#include "emir/tsam.hpp"

namespace emir {

void gssm_init(ParamStore& store, const std::string& prefix,
               const GssmConfig& cfg, Rng& rng) {
  const std::int64_t c = cfg.channels, n = cfg.state_size;
  for (int ks : cfg.kernel_sizes) {
    check(ks % 2 == 1, "gssm: kernel sizes must be odd");
    conv_param(store, prefix + ".ms.dw" + std::to_string(ks), c, 1, ks, ks,
               rng);
  }
  conv_param(store, prefix + ".ms.fuse", c, c, 1, 1, rng);
  conv_param(store, prefix + ".pre_pw", c, c, 1, 1, rng);
  store.create(prefix + ".ln.gamma", Tensor::full({c}, 1.0));
  store.create(prefix + ".ln.beta", Tensor::zeros({c}));

  // diagonal A via A = -exp(a_log), init A_n = -(n+1)
  Tensor a_log = Tensor::zeros({c, n});
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t i = 0; i < n; ++i)
      a_log.data()[ch * n + i] = std::log(static_cast<double>(i + 1));
  store.create(prefix + ".ssm.a_log", a_log);
  store.create(prefix + ".ssm.d", Tensor::full({c}, 1.0));
  // token projections: delta (softplus, bias set for dt ~= 0.05), B, C
  store.create(prefix + ".ssm.delta.w", fanin_uniform({c, c}, c, rng));
  store.create(prefix + ".ssm.delta.b",
               Tensor::full({c}, std::log(std::expm1(0.05))));
  store.create(prefix + ".ssm.b.w", fanin_uniform({c, n}, c, rng));
  store.create(prefix + ".ssm.b.b", Tensor::zeros({n}));
  store.create(prefix + ".ssm.c.w", fanin_uniform({c, n}, c, rng));
  store.create(prefix + ".ssm.c.b", Tensor::zeros({n}));

  conv_param(store, prefix + ".ngu.expand", 2 * c, c, 1, 1, rng);
  conv_param(store, prefix + ".ngu.proj", c, c, 1, 1, rng);
}

Tensor multiscale_enhance(const Tensor& x, ParamStore& store,
                          const std::string& prefix, const GssmConfig& cfg) {
  check(x.rank() == 4 && x.dim(1) == cfg.channels,
        "multiscale_enhance: expects [1,C,H,W]");
  Tensor acc;
  for (int ks : cfg.kernel_sizes) {
    check(ks % 2 == 1, "multiscale_enhance: even kernel size in config");
    Tensor y = conv_bias(x, store, prefix + ".ms.dw" + std::to_string(ks), 1,
                         ks / 2, cfg.channels);
    acc = acc.defined() ? add(acc, y) : y;
  }
  Tensor fused = conv_bias(acc, store, prefix + ".ms.fuse", 1, 0, 1);
  return add(fused, x);
}

std::vector<std::int64_t> scan_order(std::int64_t h, std::int64_t w,
                                     bool column_major, bool reversed) {
  std::vector<std::int64_t> order;
  order.reserve(h * w);
  if (!column_major) {
    for (std::int64_t i = 0; i < h * w; ++i) order.push_back(i);
  } else {
    for (std::int64_t x = 0; x < w; ++x)
      for (std::int64_t y = 0; y < h; ++y) order.push_back(y * w + x);
  }
  if (reversed) std::reverse(order.begin(), order.end());
  return order;
}

namespace {
std::vector<std::int64_t> invert(const std::vector<std::int64_t>& p) {
  std::vector<std::int64_t> inv(p.size());
  for (std::int64_t i = 0; i < static_cast<std::int64_t>(p.size()); ++i)
    inv[p[i]] = i;
  return inv;
}
}  // namespace

Tensor cross_scan_2d(const Tensor& x, ParamStore& store,
                     const std::string& prefix, const GssmConfig& cfg) {
  check(x.rank() == 4 && x.dim(0) == 1, "cross_scan_2d: expects [1,C,H,W]");
  const std::int64_t c = x.dim(1), h = x.dim(2), w = x.dim(3);
  Tensor tokens = transpose(reshape(x, {c, h * w}), {1, 0});  // [L,C]

  Tensor delta = softplus(add(matmul(tokens, store.at(prefix + ".ssm.delta.w")),
                              store.at(prefix + ".ssm.delta.b")));
  Tensor b_in = add(matmul(tokens, store.at(prefix + ".ssm.b.w")),
                    store.at(prefix + ".ssm.b.b"));
  Tensor c_out = add(matmul(tokens, store.at(prefix + ".ssm.c.w")),
                     store.at(prefix + ".ssm.c.b"));
  Tensor a_diag = neg(exp_op(store.at(prefix + ".ssm.a_log")));
  Tensor d_skip = store.at(prefix + ".ssm.d");

  Tensor acc;
  for (bool col : {false, true}) {
    for (bool rev : {false, true}) {
      auto order = scan_order(h, w, col, rev);
      Tensor y = selective_scan(
          permute_rows(tokens, order), permute_rows(delta, order), a_diag,
          permute_rows(b_in, order), permute_rows(c_out, order), d_skip);
      Tensor back = permute_rows(y, invert(order));
      acc = acc.defined() ? add(acc, back) : back;
    }
  }
  Tensor mixed = scale(acc, 0.25);  // [L,C]
  return reshape(transpose(mixed, {1, 0}), {1, c, h, w});
}

Tensor nonlinear_gated_unit(const Tensor& x, ParamStore& store,
                            const std::string& prefix, const GssmConfig& cfg) {
  check(x.rank() == 4 && x.dim(1) == cfg.channels,
        "nonlinear_gated_unit: expects [1,C,H,W]");
  Tensor expanded = conv_bias(x, store, prefix + ".ngu.expand", 1, 0, 1);
  auto parts = split(expanded, 1, {cfg.channels, cfg.channels});
  Tensor f_branch = parts[0];
  Tensor g_branch = parts[1];
  Tensor gate = cfg.ngu_nonlinear ? gelu(g_branch) : g_branch;
  if (cfg.ngu_norm) gate = mean_spatial(gate);  // [1,C,1,1], broadcast below
  Tensor gated = mul(f_branch, gate);
  return conv_bias(gated, store, prefix + ".ngu.proj", 1, 0, 1);
}

Tensor gssm_forward(const Tensor& x, ParamStore& store,
                    const std::string& prefix, const GssmConfig& cfg) {
  Tensor ms = multiscale_enhance(x, store, prefix, cfg);
  Tensor pre = conv_bias(ms, store, prefix + ".pre_pw", 1, 0, 1);
  // channel-axis layer norm per spatial site
  const std::int64_t c = pre.dim(1), h = pre.dim(2), w = pre.dim(3);
  Tensor tokens = transpose(reshape(pre, {c, h * w}), {1, 0});
  Tensor normed = layer_norm(tokens, store.at(prefix + ".ln.gamma"),
                             store.at(prefix + ".ln.beta"));
  Tensor back = reshape(transpose(normed, {1, 0}), {1, c, h, w});
  Tensor scanned = cross_scan_2d(back, store, prefix, cfg);
  Tensor gated = nonlinear_gated_unit(scanned, store, prefix, cfg);
  return cfg.residual ? add(gated, x) : gated;
}

}  // namespace emir
