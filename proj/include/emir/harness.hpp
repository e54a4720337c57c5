#pragma once

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "emir/metrics.hpp"
#include "emir/network.hpp"

namespace emir {

struct RunConfig {
  ModelConfig model;
  AdamConfig opt;
  int steps = 600;
  int pairs = 4;
  int crop = 32;
  std::uint64_t seed = 7;
  double motion = 2.0;  // pixels/frame
  int frames = 9;
  double threshold = 0.2;
  double noise_rate = 0.0;  // augmentation: spurious events per pixel
  double hot_rate = 0.0;    // augmentation: hot-pixel fraction
  double flip_prob = 0.5;
  int log_every = 50;
  std::string data_dir;  // when set, train/eval load pairs from disk

  void validate() const;
};

// key = value text file; '#' starts a comment. Unknown keys are an error.
RunConfig load_run_config(const std::string& path);
// EMIR_SEED environment variable overrides the configured seed
void apply_env_seed(RunConfig& cfg);

struct SamplePair {
  Tensor blurry, sharp;  // [C,H,W]
  EventStream stream;
  VoxelGrid voxel;
};

// Translating smooth pattern: sharp = middle frame, blurry = temporal mean,
// events from the frame stack through the contrast-threshold simulator.
SamplePair make_synthetic_pair(const RunConfig& cfg,
                               std::uint64_t pattern_seed);

std::vector<SamplePair> make_dataset(const RunConfig& cfg);
void write_dataset(const std::vector<SamplePair>& ds, const std::string& dir);
std::vector<SamplePair> load_dataset(const std::string& dir, int bins);

struct TrainResult {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::vector<std::pair<int, double>> loss_curve;
  double wallclock_sec = 0.0;
};

// Runs the forward/loss/backward/adam loop. When resume_path is set the
// checkpoint is loaded and training continues from its step counter;
// otherwise params are initialized from cfg.seed. The final checkpoint is
// written to out_dir/checkpoint.ckpt.
TrainResult train(const RunConfig& cfg, ParamStore& store,
                  OptimizerState& opt, const std::string& out_dir,
                  const std::string& resume_path = "",
                  std::ostream* log = nullptr);

struct MetricsReport {
  std::vector<double> psnr_restored, ssim_restored, psnr_baseline;
  double mean_psnr = 0.0, mean_ssim = 0.0, mean_baseline_psnr = 0.0;
  double wallclock_sec = 0.0;
};

MetricsReport evaluate(const ModelConfig& cfg, ParamStore& store,
                       const std::vector<SamplePair>& data,
                       const std::string& out_dir);

struct AblateRow {
  std::int64_t k = 0;
  double mean_psnr = 0.0;
  double sec_per_step = 0.0;
  std::int64_t param_count = 0;
};

// Trains + evaluates once per k with identical seed/data; asserts the
// parameter count is identical across rows.
std::vector<AblateRow> ablate_k(const RunConfig& cfg,
                                const std::vector<std::int64_t>& k_list,
                                const std::string& out_dir,
                                std::ostream* log = nullptr);

}  // namespace emir
