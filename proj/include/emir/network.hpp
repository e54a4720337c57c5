#pragma once

#include "emir/events.hpp"
#include "emir/gssm.hpp"
#include "emir/optim.hpp"
#include "emir/tsam.hpp"

namespace emir {

struct ModelConfig {
  int levels = 3;
  std::vector<int> widths = {16, 32, 64};   // ratio-2 per level
  std::vector<int> heads = {1, 2, 4};
  std::vector<std::int64_t> ks = {4, 4, 4};  // top-k per level
  int state_size = 8;
  int bins = 6;
  int img_channels = 1;
  int repeats = 1;  // [TSAM->GSSM->RLFB] repetitions per level
  bool tsam_residual = true;
  bool gssm_residual = true;
  bool ngu_nonlinear = true;
  bool ngu_norm = true;

  void validate() const;
  std::string serialize() const;               // single line, key=value;...
  static ModelConfig deserialize(const std::string& line);
};

void rlfb_init(ParamStore& store, const std::string& prefix, int channels,
               Rng& rng);
// three (3x3 conv -> ReLU) blocks with a residual from input to output
Tensor rlfb_forward(const Tensor& x, ParamStore& store,
                    const std::string& prefix);

// builds every parameter of the model, in a fixed order
void unet_init(ParamStore& store, const ModelConfig& cfg, Rng& rng);

// image [1,Cimg,H,W], voxel data [1,bins,H,W]; H,W divisible by 2^(levels-1)
Tensor unet_forward(const Tensor& image, const Tensor& voxel,
                    ParamStore& store, const ModelConfig& cfg);

// Eq-style L1 objective: mean absolute difference
Tensor compute_loss(const Tensor& restored, const Tensor& gt);

struct Checkpoint {
  ModelConfig config;
  std::uint64_t seed = 0;
  OptimizerState opt;
  // parameters live in the store
};

// container of named f64 ETSR tensors plus a text metadata block;
// load-then-save is byte identical
void save_checkpoint(const std::string& path, const ParamStore& store,
                     const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path, ParamStore& store);

}  // namespace emir
