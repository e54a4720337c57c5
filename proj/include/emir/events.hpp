#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "emir/common.hpp"
#include "emir/tensor.hpp"

namespace emir {

struct Event {
  std::int64_t t = 0;  // microseconds
  int x = 0, y = 0;
  int p = 1;  // polarity, +1 or -1
  bool operator==(const Event&) const = default;
};

struct EventStream {
  int width = 0, height = 0;
  std::int64_t t_start = 0, t_end = 0;
  std::vector<Event> events;  // sorted by t
  bool operator==(const EventStream&) const = default;
};

// ESIM-style contrast-threshold simulator (deterministic core). Frames are
// [H,W] intensity tensors; per pixel the reference log-intensity carries
// across frame pairs, emitting one event per threshold crossing with the
// timestamp linearly interpolated inside the frame interval.
EventStream simulate_events(const std::vector<Tensor>& frames,
                            const std::vector<std::int64_t>& timestamps,
                            double threshold);

// Spurious uniform events at rate_noise events/pixel plus round(rate_hot*H*W)
// periodically-firing hot pixels; output re-sorted, deterministic given seed.
EventStream inject_noise(const EventStream& in, double rate_noise,
                         double rate_hot, std::uint64_t seed,
                         int hot_fires = 64);

struct VoxelGrid {
  int bins = 0;
  Tensor data;  // [B,H,W], signed
};

// Bilinear temporal binning: t* = (t-t_start)/(t_end-t_start)*(B-1), each
// event's polarity split between the two adjacent bins.
VoxelGrid voxelize(const EventStream& stream, int bins);

struct AugmentFlags {
  bool hflip = false;
  bool vflip = false;
};

// Applies the same spatial flips to both modalities. image is [C,H,W].
void augment(Tensor& image, VoxelGrid& voxel, const AugmentFlags& flags);
Tensor flip_image(const Tensor& image, const AugmentFlags& flags);

// CSV event file: optional "# W H t_start t_end" comment, header line
// "t_us,x,y,p", one event per line, sorted by t.
void write_events(const EventStream& stream, const std::string& path);
EventStream read_events(const std::string& path);

}  // namespace emir
