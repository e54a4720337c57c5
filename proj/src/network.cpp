#include "emir/network.hpp"

#include <cinttypes>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace emir {

void ModelConfig::validate() const {
  check(levels >= 1, "config: levels must be >= 1");
  check(static_cast<int>(widths.size()) == levels,
        "config: widths must list one entry per level");
  check(static_cast<int>(heads.size()) == levels,
        "config: heads must list one entry per level");
  check(static_cast<int>(ks.size()) == levels,
        "config: ks must list one entry per level");
  for (int l = 0; l + 1 < levels; ++l)
    check(widths[l + 1] == 2 * widths[l],
          "config: widths must double at each level");
  for (int l = 0; l < levels; ++l) {
    check(widths[l] % heads[l] == 0,
          "config: width not divisible by heads at level " + std::to_string(l));
    check(ks[l] >= 1, "config: k must be >= 1");
  }
  check(state_size >= 1 && bins >= 1 && img_channels >= 1 && repeats >= 1,
        "config: non-positive field");
}

namespace {
template <class T>
std::string join(const std::vector<T>& v) {
  std::ostringstream os;
  for (size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
  return os.str();
}

template <class T>
std::vector<T> split_ints(const std::string& s) {
  std::vector<T> out;
  std::istringstream is(s);
  std::string tok;
  while (std::getline(is, tok, ','))
    out.push_back(static_cast<T>(std::stoll(tok)));
  return out;
}
}  // namespace

std::string ModelConfig::serialize() const {
  std::ostringstream os;
  os << "levels=" << levels << ";widths=" << join(widths)
     << ";heads=" << join(heads) << ";ks=" << join(ks)
     << ";state_size=" << state_size << ";bins=" << bins
     << ";img_channels=" << img_channels << ";repeats=" << repeats
     << ";tsam_residual=" << tsam_residual
     << ";gssm_residual=" << gssm_residual
     << ";ngu_nonlinear=" << ngu_nonlinear << ";ngu_norm=" << ngu_norm;
  return os.str();
}

ModelConfig ModelConfig::deserialize(const std::string& line) {
  ModelConfig cfg;
  std::istringstream is(line);
  std::string kv;
  while (std::getline(is, kv, ';')) {
    const auto eq = kv.find('=');
    check(eq != std::string::npos, "config: malformed entry " + kv);
    const std::string key = kv.substr(0, eq), val = kv.substr(eq + 1);
    if (key == "levels") cfg.levels = std::stoi(val);
    else if (key == "widths") cfg.widths = split_ints<int>(val);
    else if (key == "heads") cfg.heads = split_ints<int>(val);
    else if (key == "ks") cfg.ks = split_ints<std::int64_t>(val);
    else if (key == "state_size") cfg.state_size = std::stoi(val);
    else if (key == "bins") cfg.bins = std::stoi(val);
    else if (key == "img_channels") cfg.img_channels = std::stoi(val);
    else if (key == "repeats") cfg.repeats = std::stoi(val);
    else if (key == "tsam_residual") cfg.tsam_residual = val == "1";
    else if (key == "gssm_residual") cfg.gssm_residual = val == "1";
    else if (key == "ngu_nonlinear") cfg.ngu_nonlinear = val == "1";
    else if (key == "ngu_norm") cfg.ngu_norm = val == "1";
    else check(false, "config: unknown key " + key);
  }
  cfg.validate();
  return cfg;
}

void rlfb_init(ParamStore& store, const std::string& prefix, int channels,
               Rng& rng) {
  for (int b = 0; b < 3; ++b)
    conv_param(store, prefix + ".conv" + std::to_string(b), channels, channels,
               3, 3, rng);
}

Tensor rlfb_forward(const Tensor& x, ParamStore& store,
                    const std::string& prefix) {
  Tensor y = x;
  for (int b = 0; b < 3; ++b)
    y = relu(conv_bias(y, store, prefix + ".conv" + std::to_string(b), 1, 1, 1));
  return add(y, x);
}

namespace {
TsamConfig tsam_cfg_at(const ModelConfig& cfg, int level) {
  TsamConfig t;
  t.channels = cfg.widths[level];
  t.heads = cfg.heads[level];
  t.k = cfg.ks[level];
  t.residual = cfg.tsam_residual;
  return t;
}

GssmConfig gssm_cfg_at(const ModelConfig& cfg, int level) {
  GssmConfig g;
  g.channels = cfg.widths[level];
  g.state_size = cfg.state_size;
  g.ngu_nonlinear = cfg.ngu_nonlinear;
  g.ngu_norm = cfg.ngu_norm;
  g.residual = cfg.gssm_residual;
  return g;
}
}  // namespace

void unet_init(ParamStore& store, const ModelConfig& cfg, Rng& rng) {
  cfg.validate();
  conv_param(store, "stem_img", cfg.widths[0], cfg.img_channels, 3, 3, rng);
  conv_param(store, "stem_evt", cfg.widths[0], cfg.bins, 3, 3, rng);
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string lv = "enc" + std::to_string(l);
    conv_param(store, lv + ".evt_conv", cfg.widths[l], cfg.widths[l], 3, 3,
               rng);
    for (int r = 0; r < cfg.repeats; ++r) {
      const std::string rp = lv + ".r" + std::to_string(r);
      tsam_init(store, rp + ".tsam", tsam_cfg_at(cfg, l), rng);
      gssm_init(store, rp + ".gssm", gssm_cfg_at(cfg, l), rng);
      rlfb_init(store, rp + ".rlfb", cfg.widths[l], rng);
    }
    if (l + 1 < cfg.levels) {
      conv_param(store, "down" + std::to_string(l) + ".img", cfg.widths[l + 1],
                 cfg.widths[l], 3, 3, rng);
      conv_param(store, "down" + std::to_string(l) + ".evt", cfg.widths[l + 1],
                 cfg.widths[l], 3, 3, rng);
    }
  }
  for (int l = cfg.levels - 2; l >= 0; --l) {
    conv_param(store, "up" + std::to_string(l), cfg.widths[l],
               cfg.widths[l + 1], 3, 3, rng);
    conv_param(store, "dec" + std::to_string(l) + ".fuse", cfg.widths[l],
               2 * cfg.widths[l], 1, 1, rng);
    rlfb_init(store, "dec" + std::to_string(l) + ".rlfb", cfg.widths[l], rng);
  }
  // zero-initialized head: the network starts as the identity mapping
  conv_param(store, "head", cfg.img_channels, cfg.widths[0], 3, 3, rng,
             /*zero_init=*/true);
}

Tensor unet_forward(const Tensor& image, const Tensor& voxel,
                    ParamStore& store, const ModelConfig& cfg) {
  cfg.validate();
  check(image.rank() == 4 && image.dim(0) == 1 &&
            image.dim(1) == cfg.img_channels,
        "unet_forward: image must be [1,C,H,W] with configured channels");
  check(voxel.rank() == 4 && voxel.dim(0) == 1 && voxel.dim(1) == cfg.bins,
        "unet_forward: voxel must be [1,bins,H,W]");
  check(voxel.dim(2) == image.dim(2) && voxel.dim(3) == image.dim(3),
        "unet_forward: image/voxel resolution mismatch");
  const std::int64_t div = std::int64_t{1} << (cfg.levels - 1);
  check(image.dim(2) % div == 0 && image.dim(3) % div == 0,
        "unet_forward: H and W must be divisible by 2^(levels-1)");

  Tensor img_f = conv_bias(image, store, "stem_img", 1, 1, 1);
  Tensor evt_f = conv_bias(voxel, store, "stem_evt", 1, 1, 1);
  std::vector<Tensor> skips(cfg.levels);
  for (int l = 0; l < cfg.levels; ++l) {
    const std::string lv = "enc" + std::to_string(l);
    Tensor evt_c = relu(conv_bias(evt_f, store, lv + ".evt_conv", 1, 1, 1));
    Tensor t = img_f;
    for (int r = 0; r < cfg.repeats; ++r) {
      const std::string rp = lv + ".r" + std::to_string(r);
      t = tsam_forward(t, evt_c, store, rp + ".tsam", tsam_cfg_at(cfg, l));
      t = gssm_forward(t, store, rp + ".gssm", gssm_cfg_at(cfg, l));
      t = rlfb_forward(t, store, rp + ".rlfb");
    }
    skips[l] = t;
    if (l + 1 < cfg.levels) {
      img_f = conv_bias(t, store, "down" + std::to_string(l) + ".img", 2, 1, 1);
      evt_f =
          conv_bias(evt_c, store, "down" + std::to_string(l) + ".evt", 2, 1, 1);
    }
  }
  Tensor d = skips[cfg.levels - 1];
  for (int l = cfg.levels - 2; l >= 0; --l) {
    Tensor up = conv_bias(upsample_nearest2x(d), store,
                          "up" + std::to_string(l), 1, 1, 1);
    Tensor cat = concat({up, skips[l]}, 1);
    Tensor fused =
        conv_bias(cat, store, "dec" + std::to_string(l) + ".fuse", 1, 0, 1);
    d = rlfb_forward(fused, store, "dec" + std::to_string(l) + ".rlfb");
  }
  Tensor head = conv_bias(d, store, "head", 1, 1, 1);
  return add(head, image);
}

Tensor compute_loss(const Tensor& restored, const Tensor& gt) {
  check(restored.shape() == gt.shape(), "compute_loss: shape mismatch");
  return mean(absval(sub(restored, gt)));
}

void save_checkpoint(const std::string& path, const ParamStore& store,
                     const Checkpoint& ck) {
  std::ofstream os(path, std::ios::binary);
  check(os.good(), "save_checkpoint: cannot open " + path);
  char buf[64];
  os << "EMIR-CKPT v1\n";
  os << "config=" << ck.config.serialize() << "\n";
  os << "seed=" << ck.seed << "\n";
  os << "step=" << ck.opt.step << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", ck.opt.cfg.lr_init);
  os << "lr_init=" << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", ck.opt.cfg.lr_min);
  os << "lr_min=" << buf << "\n";
  os << "total_steps=" << ck.opt.cfg.total_steps << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", ck.opt.cfg.beta1);
  os << "beta1=" << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", ck.opt.cfg.beta2);
  os << "beta2=" << buf << "\n";
  std::snprintf(buf, sizeof buf, "%.17g", ck.opt.cfg.eps);
  os << "eps=" << buf << "\n";
  const bool moments = !ck.opt.m.empty();
  const auto n_params = store.params.size();
  os << "tensors=" << (moments ? 3 * n_params : n_params) << "\n";
  for (const auto& [name, t] : store.params) {
    os << name << " p\n";
    write_etsr_stream(t, os, 2);
  }
  if (moments) {
    for (const char* kind : {"m", "v"}) {
      for (const auto& [name, t] : store.params) {
        const auto& mv = kind[0] == 'm' ? ck.opt.m : ck.opt.v;
        auto it = mv.find(name);
        check(it != mv.end() && static_cast<std::int64_t>(it->second.size()) ==
                                    t.numel(),
              "save_checkpoint: optimizer state missing for " + name);
        os << name << " " << kind << "\n";
        write_etsr_stream(Tensor::from(t.shape(), it->second), os, 2);
      }
    }
  }
  check(os.good(), "save_checkpoint: write failed for " + path);
}

Checkpoint load_checkpoint(const std::string& path, ParamStore& store) {
  std::ifstream is(path, std::ios::binary);
  check(is.good(), "load_checkpoint: cannot open " + path);
  std::string line;
  std::getline(is, line);
  check(line == "EMIR-CKPT v1", "load_checkpoint: bad magic in " + path);
  Checkpoint ck;
  auto read_kv = [&](const std::string& key) {
    std::getline(is, line);
    check(line.rfind(key + "=", 0) == 0,
          "load_checkpoint: expected key " + key);
    return line.substr(key.size() + 1);
  };
  ck.config = ModelConfig::deserialize(read_kv("config"));
  ck.seed = std::stoull(read_kv("seed"));
  ck.opt.step = std::stoll(read_kv("step"));
  ck.opt.cfg.lr_init = std::stod(read_kv("lr_init"));
  ck.opt.cfg.lr_min = std::stod(read_kv("lr_min"));
  ck.opt.cfg.total_steps = std::stoll(read_kv("total_steps"));
  ck.opt.cfg.beta1 = std::stod(read_kv("beta1"));
  ck.opt.cfg.beta2 = std::stod(read_kv("beta2"));
  ck.opt.cfg.eps = std::stod(read_kv("eps"));
  const auto count = std::stoull(read_kv("tensors"));
  store.params.clear();
  for (std::uint64_t i = 0; i < count; ++i) {
    std::getline(is, line);
    const auto sp = line.rfind(' ');
    check(sp != std::string::npos, "load_checkpoint: malformed tensor header");
    const std::string name = line.substr(0, sp), kind = line.substr(sp + 1);
    Tensor t = read_etsr_stream(is);
    if (kind == "p") {
      store.create(name, t);
    } else if (kind == "m") {
      ck.opt.m[name] = t.data();
    } else if (kind == "v") {
      ck.opt.v[name] = t.data();
    } else {
      check(false, "load_checkpoint: unknown tensor kind " + kind);
    }
  }
  return ck;
}

}  // namespace emir
