#include "emir/harness.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <ostream>
#include <sstream>

namespace emir {

namespace fs = std::filesystem;

void RunConfig::validate() const {
  model.validate();
  const int div = 1 << (model.levels - 1);
  check(crop % div == 0, "run config: crop size must be divisible by 2^(levels-1)");
  check(steps >= 0 && pairs >= 1 && frames >= 2, "run config: bad sizes");
  check(threshold > 0.0, "run config: threshold must be positive");
  check(flip_prob >= 0.0 && flip_prob <= 1.0, "run config: bad flip_prob");
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "load_run_config: cannot open " + path);
  RunConfig cfg;
  std::string line;
  int lineno = 0;
  auto ints = [](const std::string& s) {
    std::vector<int> out;
    std::istringstream ss(s);
    std::string tok;
    while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
    return out;
  };
  while (std::getline(is, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    const auto eq = line.find('=');
    if (line.find_first_not_of(" \t") == std::string::npos) continue;
    check(eq != std::string::npos,
          "config line " + std::to_string(lineno) + ": expected key = value");
    auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t");
      const auto e = s.find_last_not_of(" \t");
      return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
    };
    const std::string key = trim(line.substr(0, eq));
    const std::string val = trim(line.substr(eq + 1));
    if (key == "levels") cfg.model.levels = std::stoi(val);
    else if (key == "widths") cfg.model.widths = ints(val);
    else if (key == "heads") cfg.model.heads = ints(val);
    else if (key == "k") {
      cfg.model.ks.assign(cfg.model.levels, std::stoll(val));
    } else if (key == "state_size") cfg.model.state_size = std::stoi(val);
    else if (key == "bins") cfg.model.bins = std::stoi(val);
    else if (key == "img_channels") cfg.model.img_channels = std::stoi(val);
    else if (key == "repeats") cfg.model.repeats = std::stoi(val);
    else if (key == "tsam_residual") cfg.model.tsam_residual = val == "1";
    else if (key == "gssm_residual") cfg.model.gssm_residual = val == "1";
    else if (key == "ngu_nonlinear") cfg.model.ngu_nonlinear = val == "1";
    else if (key == "ngu_norm") cfg.model.ngu_norm = val == "1";
    else if (key == "lr_init") cfg.opt.lr_init = std::stod(val);
    else if (key == "lr_min") cfg.opt.lr_min = std::stod(val);
    else if (key == "schedule_steps") cfg.opt.total_steps = std::stoll(val);
    else if (key == "steps") cfg.steps = std::stoi(val);
    else if (key == "pairs") cfg.pairs = std::stoi(val);
    else if (key == "crop") cfg.crop = std::stoi(val);
    else if (key == "seed") cfg.seed = std::stoull(val);
    else if (key == "motion") cfg.motion = std::stod(val);
    else if (key == "frames") cfg.frames = std::stoi(val);
    else if (key == "threshold") cfg.threshold = std::stod(val);
    else if (key == "noise_rate") cfg.noise_rate = std::stod(val);
    else if (key == "hot_rate") cfg.hot_rate = std::stod(val);
    else if (key == "flip_prob") cfg.flip_prob = std::stod(val);
    else if (key == "log_every") cfg.log_every = std::stoi(val);
    else if (key == "data_dir") cfg.data_dir = val;
    else check(false, "config line " + std::to_string(lineno) +
                          ": unknown key " + key);
  }
  // heads/ks defaults when levels changed but lists were not given
  if (static_cast<int>(cfg.model.widths.size()) != cfg.model.levels) {
    cfg.model.widths.resize(cfg.model.levels);
    for (int l = 0; l < cfg.model.levels; ++l)
      cfg.model.widths[l] = 16 << l;
  }
  if (static_cast<int>(cfg.model.heads.size()) != cfg.model.levels)
    cfg.model.heads.assign(cfg.model.levels, 2);
  if (static_cast<int>(cfg.model.ks.size()) != cfg.model.levels)
    cfg.model.ks.assign(cfg.model.levels, 4);
  cfg.validate();
  return cfg;
}

void apply_env_seed(RunConfig& cfg) {
  if (const char* s = std::getenv("EMIR_SEED")) cfg.seed = std::stoull(s);
}

namespace {
struct Pattern {
  double base;
  std::vector<double> amp, fx, fy, phase;
  double vx, vy;

  double eval(double x, double y, double t) const {
    double v = base;
    for (size_t i = 0; i < amp.size(); ++i)
      v += amp[i] * std::sin(6.283185307179586 *
                                 (fx[i] * (x - vx * t) + fy[i] * (y - vy * t)) +
                             phase[i]);
    return v;
  }
};

Pattern random_pattern(Rng& rng, double motion) {
  Pattern p;
  p.base = 0.55;
  const int waves = 4;
  double total = 0.0;
  std::vector<double> raw(waves);
  for (int i = 0; i < waves; ++i) {
    raw[i] = rng.uniform(0.3, 1.0);
    total += raw[i];
  }
  for (int i = 0; i < waves; ++i) {
    p.amp.push_back(0.42 * raw[i] / total);
    p.fx.push_back(rng.uniform(-0.12, 0.12));
    p.fy.push_back(rng.uniform(-0.12, 0.12));
    p.phase.push_back(rng.uniform(0.0, 6.283185307179586));
  }
  const double angle = rng.uniform(0.0, 6.283185307179586);
  p.vx = motion * std::cos(angle);
  p.vy = motion * std::sin(angle);
  return p;
}

Tensor render(const Pattern& p, int h, int w, double t, int channels) {
  Tensor img = Tensor::zeros({channels, h, w});
  auto& d = img.data();
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = p.eval(x, y, t);
      for (int c = 0; c < channels; ++c) d[(c * h + y) * w + x] = v;
    }
  return img;
}
}  // namespace

SamplePair make_synthetic_pair(const RunConfig& cfg,
                               std::uint64_t pattern_seed) {
  Rng rng(pattern_seed);
  const Pattern pat = random_pattern(rng, cfg.motion);
  const int h = cfg.crop, w = cfg.crop, c = cfg.model.img_channels;
  std::vector<Tensor> frames;
  std::vector<std::int64_t> times;
  std::vector<Tensor> gray_frames;
  for (int f = 0; f < cfg.frames; ++f) {
    frames.push_back(render(pat, h, w, f, c));
    Tensor g = Tensor::zeros({h, w});
    for (int i = 0; i < h * w; ++i) g.data()[i] = frames.back().data()[i];
    gray_frames.push_back(g);
    times.push_back(static_cast<std::int64_t>(f) * 1000);
  }
  SamplePair sp;
  sp.sharp = frames[cfg.frames / 2];
  sp.blurry = Tensor::zeros({c, h, w});
  for (const auto& f : frames)
    for (std::int64_t i = 0; i < sp.blurry.numel(); ++i)
      sp.blurry.data()[i] += f.data()[i] / cfg.frames;
  sp.stream = simulate_events(gray_frames, times, cfg.threshold);
  sp.voxel = voxelize(sp.stream, cfg.model.bins);
  return sp;
}

std::vector<SamplePair> make_dataset(const RunConfig& cfg) {
  std::vector<SamplePair> ds;
  for (int i = 0; i < cfg.pairs; ++i)
    ds.push_back(make_synthetic_pair(cfg, cfg.seed * 1000 + i));
  return ds;
}

void write_dataset(const std::vector<SamplePair>& ds, const std::string& dir) {
  fs::create_directories(dir);
  char name[64];
  for (size_t i = 0; i < ds.size(); ++i) {
    std::snprintf(name, sizeof name, "pair%03zu", i);
    const std::string stem = dir + "/" + name;
    write_etsr(ds[i].blurry, stem + "_blurry.etsr");
    write_etsr(ds[i].sharp, stem + "_sharp.etsr");
    write_etsr(ds[i].voxel.data, stem + "_voxel.etsr");
    write_events(ds[i].stream, stem + "_events.csv");
  }
}

std::vector<SamplePair> load_dataset(const std::string& dir, int bins) {
  std::vector<SamplePair> ds;
  char name[64];
  for (size_t i = 0;; ++i) {
    std::snprintf(name, sizeof name, "pair%03zu", i);
    const std::string stem = dir + "/" + name;
    if (!fs::exists(stem + "_blurry.etsr")) break;
    SamplePair sp;
    sp.blurry = read_etsr(stem + "_blurry.etsr");
    sp.sharp = read_etsr(stem + "_sharp.etsr");
    sp.stream = read_events(stem + "_events.csv");
    sp.voxel = voxelize(sp.stream, bins);
    ds.push_back(std::move(sp));
  }
  check(!ds.empty(), "load_dataset: no pairs found in " + dir);
  return ds;
}

namespace {
std::uint64_t step_seed(std::uint64_t seed, int step) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (step + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  return x;
}

Tensor as_batch(const Tensor& chw) {
  Shape s = chw.shape();
  s.insert(s.begin(), 1);
  return Tensor::from(s, chw.data());
}
}  // namespace

TrainResult train(const RunConfig& cfg, ParamStore& store,
                  OptimizerState& opt, const std::string& out_dir,
                  const std::string& resume_path, std::ostream* log) {
  cfg.validate();
  fs::create_directories(out_dir);
  Checkpoint ck;
  if (!resume_path.empty()) {
    ck = load_checkpoint(resume_path, store);
    opt = std::move(ck.opt);
  } else {
    store.params.clear();
    Rng init_rng(cfg.seed);
    unet_init(store, cfg.model, init_rng);
    opt = OptimizerState{};
    opt.cfg = cfg.opt;
  }
  ck.config = cfg.model;
  ck.seed = cfg.seed;

  std::vector<SamplePair> data = cfg.data_dir.empty()
                                     ? make_dataset(cfg)
                                     : load_dataset(cfg.data_dir, cfg.model.bins);
  TrainResult res;
  const auto t0 = std::chrono::steady_clock::now();
  for (int step = static_cast<int>(opt.step); step < cfg.steps; ++step) {
    const int idx = step % static_cast<int>(data.size());
    Rng aug(step_seed(cfg.seed, step));
    AugmentFlags flags;
    flags.hflip = aug.uniform() < cfg.flip_prob;
    flags.vflip = aug.uniform() < cfg.flip_prob;

    Tensor img = data[idx].blurry;
    Tensor gt = data[idx].sharp;
    VoxelGrid vox = data[idx].voxel;
    if (cfg.noise_rate > 0.0 || cfg.hot_rate > 0.0) {
      EventStream noisy = inject_noise(data[idx].stream, cfg.noise_rate,
                                       cfg.hot_rate, aug.next_u64());
      vox = voxelize(noisy, cfg.model.bins);
    }
    augment(img, vox, flags);
    gt = flip_image(gt, flags);

    store.zero_grad();
    Tensor restored =
        unet_forward(as_batch(img), as_batch(vox.data), store, cfg.model);
    Tensor loss = compute_loss(restored, as_batch(gt));
    const double lv = loss.item();
    check(std::isfinite(lv), "train: NaN/Inf loss at step " +
                                 std::to_string(step) + " (aborting)");
    if (step == 0) res.initial_loss = lv;
    res.final_loss = lv;
    if (cfg.log_every > 0 && step % cfg.log_every == 0) {
      res.loss_curve.emplace_back(step, lv);
      if (log)
        *log << "step " << step << " loss " << lv << " lr "
             << cosine_lr(opt.cfg, opt.step) << "\n";
    }
    backward(loss);
    adam_step(store, opt);
  }
  const auto t1 = std::chrono::steady_clock::now();
  res.wallclock_sec = std::chrono::duration<double>(t1 - t0).count();
  ck.opt = opt;
  save_checkpoint(out_dir + "/checkpoint.ckpt", store, ck);
  // leave opt moments accessible to the caller
  return res;
}

MetricsReport evaluate(const ModelConfig& cfg, ParamStore& store,
                       const std::vector<SamplePair>& data,
                       const std::string& out_dir) {
  if (!out_dir.empty()) fs::create_directories(out_dir);
  MetricsReport rep;
  const auto t0 = std::chrono::steady_clock::now();
  char name[64];
  for (size_t i = 0; i < data.size(); ++i) {
    Tensor restored = unet_forward(as_batch(data[i].blurry),
                                   as_batch(data[i].voxel.data), store, cfg);
    Tensor flat = Tensor::from(data[i].sharp.shape(), restored.data());
    rep.psnr_restored.push_back(psnr(flat, data[i].sharp));
    rep.ssim_restored.push_back(ssim(flat, data[i].sharp));
    rep.psnr_baseline.push_back(psnr(data[i].blurry, data[i].sharp));
    if (!out_dir.empty()) {
      std::snprintf(name, sizeof name, "restored%03zu.etsr", i);
      write_etsr(flat, out_dir + "/" + name);
    }
  }
  const auto t1 = std::chrono::steady_clock::now();
  rep.wallclock_sec = std::chrono::duration<double>(t1 - t0).count();
  for (double v : rep.psnr_restored) rep.mean_psnr += v;
  for (double v : rep.ssim_restored) rep.mean_ssim += v;
  for (double v : rep.psnr_baseline) rep.mean_baseline_psnr += v;
  rep.mean_psnr /= data.size();
  rep.mean_ssim /= data.size();
  rep.mean_baseline_psnr /= data.size();
  if (!out_dir.empty()) {
    std::ofstream os(out_dir + "/report.txt");
    os << "sample  psnr_restored  ssim_restored  psnr_blurry_baseline\n";
    for (size_t i = 0; i < data.size(); ++i) {
      std::snprintf(name, sizeof name, "%6zu  %13.4f  %13.6f  %20.4f\n", i,
                    rep.psnr_restored[i], rep.ssim_restored[i],
                    rep.psnr_baseline[i]);
      os << name;
    }
    os << "mean_psnr " << rep.mean_psnr << "\nmean_ssim " << rep.mean_ssim
       << "\nmean_baseline_psnr " << rep.mean_baseline_psnr << "\n";
  }
  return rep;
}

std::vector<AblateRow> ablate_k(const RunConfig& cfg,
                                const std::vector<std::int64_t>& k_list,
                                const std::string& out_dir,
                                std::ostream* log) {
  check(!k_list.empty(), "ablate_k: empty k list");
  fs::create_directories(out_dir);
  std::vector<AblateRow> rows;
  const std::vector<SamplePair> data = cfg.data_dir.empty()
                                           ? make_dataset(cfg)
                                           : load_dataset(cfg.data_dir,
                                                          cfg.model.bins);
  for (std::int64_t k : k_list) {
    RunConfig run = cfg;
    run.model.ks.assign(run.model.levels, k);
    ParamStore store;
    OptimizerState opt;
    TrainResult tr =
        train(run, store, opt, out_dir + "/k" + std::to_string(k), "", log);
    MetricsReport rep = evaluate(run.model, store, data, "");
    AblateRow row;
    row.k = k;
    row.mean_psnr = rep.mean_psnr;
    row.sec_per_step = cfg.steps > 0 ? tr.wallclock_sec / cfg.steps : 0.0;
    row.param_count = store.param_count();
    rows.push_back(row);
    if (log)
      *log << "k=" << k << " psnr=" << row.mean_psnr
           << " sec/step=" << row.sec_per_step
           << " params=" << row.param_count << "\n";
  }
  for (const auto& r : rows)
    check(r.param_count == rows[0].param_count,
          "ablate_k: parameter count changed with k");
  std::ofstream os(out_dir + "/ablation.txt");
  os << "k  mean_psnr_db  sec_per_step  param_count\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%lld  %12.4f  %12.6f  %11lld\n",
                  static_cast<long long>(r.k), r.mean_psnr, r.sec_per_step,
                  static_cast<long long>(r.param_count));
    os << buf;
  }
  return rows;
}

}  // namespace emir
