#include "emir/events.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

namespace emir {

namespace {
constexpr double kIntensityFloor = 1e-3;

double safe_log(double v) { return std::log(std::max(v, kIntensityFloor)); }

void sort_events(std::vector<Event>& ev) {
  std::stable_sort(ev.begin(), ev.end(),
                   [](const Event& a, const Event& b) { return a.t < b.t; });
}
}  // namespace

EventStream simulate_events(const std::vector<Tensor>& frames,
                            const std::vector<std::int64_t>& timestamps,
                            double threshold) {
  check(frames.size() >= 2, "simulate_events: need at least two frames");
  check(frames.size() == timestamps.size(),
        "simulate_events: one timestamp per frame");
  check(threshold > 0.0, "simulate_events: threshold must be positive");
  for (size_t i = 1; i < timestamps.size(); ++i)
    check(timestamps[i] > timestamps[i - 1],
          "simulate_events: timestamps must be strictly increasing");
  const auto& s0 = frames[0].shape();
  check(s0.size() == 2, "simulate_events: frames must be [H,W]");
  const int h = static_cast<int>(s0[0]), w = static_cast<int>(s0[1]);
  for (const auto& f : frames)
    check(f.shape() == s0, "simulate_events: frame shape mismatch");

  EventStream out;
  out.width = w;
  out.height = h;
  out.t_start = timestamps.front();
  out.t_end = timestamps.back();

  // per-pixel reference level = log intensity at the last emitted event
  std::vector<double> ref(static_cast<size_t>(h) * w);
  for (int i = 0; i < h * w; ++i) ref[i] = safe_log(frames[0].data()[i]);

  for (size_t f = 0; f + 1 < frames.size(); ++f) {
    const auto& i0 = frames[f].data();
    const auto& i1 = frames[f + 1].data();
    const double t0 = static_cast<double>(timestamps[f]);
    const double t1 = static_cast<double>(timestamps[f + 1]);
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const int i = y * w + x;
        const double l0 = safe_log(i0[i]);
        const double l1 = safe_log(i1[i]);
        if (l1 == l0 && l1 == ref[i]) continue;
        const int pol = l1 >= ref[i] ? 1 : -1;
        // crossings of ref +- threshold while moving linearly from l0 to l1
        while (true) {
          const double next = ref[i] + pol * threshold;
          if (pol > 0 ? next > l1 : next < l1) break;
          double frac = l1 != l0 ? (next - l0) / (l1 - l0) : 1.0;
          frac = std::clamp(frac, 0.0, 1.0);
          const auto te =
              static_cast<std::int64_t>(std::llround(t0 + frac * (t1 - t0)));
          out.events.push_back({te, x, y, pol});
          ref[i] = next;
        }
      }
    }
  }
  sort_events(out.events);
  return out;
}

EventStream inject_noise(const EventStream& in, double rate_noise,
                         double rate_hot, std::uint64_t seed, int hot_fires) {
  check(rate_noise >= 0.0 && rate_hot >= 0.0,
        "inject_noise: rates must be non-negative");
  if (rate_noise == 0.0 && rate_hot == 0.0) return in;
  EventStream out = in;
  Rng rng(seed);
  const std::int64_t span = in.t_end - in.t_start;
  const std::int64_t n_pixels =
      static_cast<std::int64_t>(in.width) * in.height;

  const auto n_noise =
      static_cast<std::int64_t>(std::llround(rate_noise * n_pixels));
  for (std::int64_t i = 0; i < n_noise; ++i) {
    Event e;
    e.t = in.t_start +
          static_cast<std::int64_t>(std::llround(rng.uniform() * span));
    e.x = static_cast<int>(rng.uniform_int(0, in.width - 1));
    e.y = static_cast<int>(rng.uniform_int(0, in.height - 1));
    e.p = rng.uniform() < 0.5 ? -1 : 1;
    out.events.push_back(e);
  }

  const auto n_hot =
      static_cast<std::int64_t>(std::llround(rate_hot * n_pixels));
  for (std::int64_t i = 0; i < n_hot; ++i) {
    const int x = static_cast<int>(rng.uniform_int(0, in.width - 1));
    const int y = static_cast<int>(rng.uniform_int(0, in.height - 1));
    for (int f = 0; f < hot_fires; ++f) {
      const std::int64_t t =
          in.t_start + span * f / std::max(hot_fires - 1, 1);
      out.events.push_back({t, x, y, 1});
    }
  }
  sort_events(out.events);
  return out;
}

VoxelGrid voxelize(const EventStream& stream, int bins) {
  check(bins >= 1, "voxelize: bins must be >= 1");
  check(stream.t_end > stream.t_start, "voxelize: degenerate time range");
  VoxelGrid g;
  g.bins = bins;
  g.data = Tensor::zeros({bins, stream.height, stream.width});
  auto& d = g.data.data();
  const std::int64_t hw =
      static_cast<std::int64_t>(stream.height) * stream.width;
  const double span = static_cast<double>(stream.t_end - stream.t_start);
  for (const auto& e : stream.events) {
    check(e.x >= 0 && e.x < stream.width && e.y >= 0 && e.y < stream.height,
          "voxelize: event outside stream resolution");
    const double ts =
        static_cast<double>(e.t - stream.t_start) / span * (bins - 1);
    const auto b0 = static_cast<std::int64_t>(std::floor(ts));
    const double w1 = ts - static_cast<double>(b0);
    const std::int64_t pix =
        static_cast<std::int64_t>(e.y) * stream.width + e.x;
    if (b0 >= 0 && b0 < bins) d[b0 * hw + pix] += e.p * (1.0 - w1);
    if (w1 != 0.0 && b0 + 1 < bins) d[(b0 + 1) * hw + pix] += e.p * w1;
  }
  return g;
}

Tensor flip_image(const Tensor& image, const AugmentFlags& flags) {
  check(image.rank() == 3, "flip_image: expects [C,H,W]");
  const std::int64_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  Tensor out = Tensor::zeros(image.shape());
  const auto& src = image.data();
  auto& dst = out.data();
  for (std::int64_t ch = 0; ch < c; ++ch)
    for (std::int64_t y = 0; y < h; ++y)
      for (std::int64_t x = 0; x < w; ++x) {
        const std::int64_t sy = flags.vflip ? h - 1 - y : y;
        const std::int64_t sx = flags.hflip ? w - 1 - x : x;
        dst[(ch * h + y) * w + x] = src[(ch * h + sy) * w + sx];
      }
  return out;
}

void augment(Tensor& image, VoxelGrid& voxel, const AugmentFlags& flags) {
  check(image.rank() == 3 && voxel.data.rank() == 3,
        "augment: expects [C,H,W] image and [B,H,W] voxel");
  check(image.dim(1) == voxel.data.dim(1) && image.dim(2) == voxel.data.dim(2),
        "augment: image/voxel resolution mismatch");
  image = flip_image(image, flags);
  voxel.data = flip_image(voxel.data, flags);
}

void write_events(const EventStream& stream, const std::string& path) {
  std::ofstream os(path);
  check(os.good(), "write_events: cannot open " + path);
  os << "# " << stream.width << " " << stream.height << " " << stream.t_start
     << " " << stream.t_end << "\n";
  os << "t_us,x,y,p\n";
  for (const auto& e : stream.events)
    os << e.t << "," << e.x << "," << e.y << "," << e.p << "\n";
  check(os.good(), "write_events: write failed for " + path);
}

EventStream read_events(const std::string& path) {
  std::ifstream is(path);
  check(is.good(), "read_events: cannot open " + path);
  EventStream s;
  bool have_meta = false, have_header = false;
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream ls(line.substr(1));
      check(static_cast<bool>(ls >> s.width >> s.height >> s.t_start >>
                              s.t_end),
            "read_events: malformed metadata at line " +
                std::to_string(lineno));
      have_meta = true;
      continue;
    }
    if (!have_header) {
      check(line == "t_us,x,y,p", "read_events: missing header at line " +
                                      std::to_string(lineno));
      have_header = true;
      continue;
    }
    Event e;
    char c1, c2, c3;
    std::istringstream ls(line);
    if (!(ls >> e.t >> c1 >> e.x >> c2 >> e.y >> c3 >> e.p) || c1 != ',' ||
        c2 != ',' || c3 != ',' || (e.p != 1 && e.p != -1)) {
      throw std::runtime_error("read_events: malformed event at line " +
                               std::to_string(lineno) + ": " + line);
    }
    s.events.push_back(e);
  }
  check(have_header, "read_events: no header line in " + path);
  if (!have_meta) {
    for (const auto& e : s.events) {
      s.width = std::max(s.width, e.x + 1);
      s.height = std::max(s.height, e.y + 1);
      s.t_end = std::max(s.t_end, e.t);
    }
    s.t_start = s.events.empty() ? 0 : s.events.front().t;
  }
  for (size_t i = 0; i < s.events.size(); ++i) {
    const auto& e = s.events[i];
    check(e.x >= 0 && e.x < s.width && e.y >= 0 && e.y < s.height,
          "read_events: out-of-bounds coordinates at event " +
              std::to_string(i));
    check(e.t >= s.t_start && e.t <= s.t_end,
          "read_events: timestamp outside stream range at event " +
              std::to_string(i));
    if (i) check(s.events[i - 1].t <= e.t, "read_events: events not sorted");
  }
  return s;
}

}  // namespace emir
