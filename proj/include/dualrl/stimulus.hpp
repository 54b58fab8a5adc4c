#pragma once

// Time-pressure progress bar, sampled at the simulation frame rate.
//
// The bar gains one unit per second and resets every `period_s` seconds. Frames
// are small grayscale images; an absent bar is an all-zero image so the
// observation shape never changes.

#include <cmath>
#include <cstdint>
#include <ostream>
#include <stdexcept>
#include <vector>

namespace dualrl {

struct StimulusConfig {
  int frame_rate_hz = 5;
  int period_s = 5;
  int units = 5;
  int image_w = 64;
  int image_h = 8;

  void validate() const {
    if (frame_rate_hz < 1) throw std::invalid_argument("frame_rate_hz must be >= 1");
    if (period_s < 1) throw std::invalid_argument("period_s must be >= 1");
    if (units != period_s) throw std::invalid_argument("units must equal period_s");
    if (image_w < 4 * units || image_h < 4)
      throw std::invalid_argument("image too small for the bar geometry");
  }

  int frames_per_period() const { return frame_rate_hz * period_s; }
  std::size_t pixel_count() const { return static_cast<std::size_t>(image_w) * image_h; }
};

struct StimulusFrame {
  int step_index = 0;
  int fill_units = 0;
  bool pressure_on = false;
  int width = 0;
  int height = 0;
  std::vector<double> image;  // row-major, values in [0, 1]

  double pixel(int x, int y) const { return image[static_cast<std::size_t>(y) * width + x]; }

  friend bool operator==(const StimulusFrame&, const StimulusFrame&) = default;
};

/// Units lit at a frame index: floor(step / f) mod period.
inline int fill_units_at_step(int step_index, const StimulusConfig& cfg) {
  return (step_index / cfg.frame_rate_hz) % cfg.period_s;
}

/// Same contract on a continuous clock; the browser client implements this formula.
inline int fill_units_at_time(double seconds, const StimulusConfig& cfg) {
  // Nudge by a few ulps so 3.0000000001 and 2.9999999999 from a 0.1 s grid both round sanely.
  const auto whole = static_cast<long long>(std::floor(seconds + 1e-9));
  return static_cast<int>(whole % cfg.period_s);
}

namespace detail {

inline constexpr double kOutlineLevel = 0.25;
inline constexpr double kFillLevel = 1.0;

// Bar occupies rows [1, h-2] and columns [2, w-3]; segments are equal slices of the interior.
inline void draw_bar(std::vector<double>& img, int fill, const StimulusConfig& cfg) {
  const int w = cfg.image_w, h = cfg.image_h;
  const int x0 = 2, x1 = w - 3, y0 = 1, y1 = h - 2;
  auto set = [&](int x, int y, double v) { img[static_cast<std::size_t>(y) * w + x] = v; };
  for (int x = x0; x <= x1; ++x) {
    set(x, y0, kOutlineLevel);
    set(x, y1, kOutlineLevel);
  }
  for (int y = y0; y <= y1; ++y) {
    set(x0, y, kOutlineLevel);
    set(x1, y, kOutlineLevel);
  }
  const int inner_w = x1 - x0 - 1;
  const int seg_w = inner_w / cfg.units;
  for (int u = 0; u < fill; ++u) {
    const int sx = x0 + 1 + u * seg_w;
    // One-pixel gap between segments.
    for (int x = sx; x < sx + seg_w - 1; ++x)
      for (int y = y0 + 1; y < y1; ++y) set(x, y, kFillLevel);
  }
}

}  // namespace detail

inline StimulusFrame render_frame(int step_index, bool pressure_on, const StimulusConfig& cfg = {}) {
  if (step_index < 0) throw std::invalid_argument("step_index must be >= 0");
  StimulusFrame f;
  f.step_index = step_index;
  f.pressure_on = pressure_on;
  f.width = cfg.image_w;
  f.height = cfg.image_h;
  f.image.assign(cfg.pixel_count(), 0.0);
  f.fill_units = fill_units_at_step(step_index, cfg);
  if (pressure_on) detail::draw_bar(f.image, f.fill_units, cfg);
  return f;
}

inline std::vector<StimulusFrame> frame_sequence(int duration_steps, bool pressure_on,
                                                 const StimulusConfig& cfg = {}) {
  if (duration_steps < 1) throw std::invalid_argument("duration_steps must be >= 1");
  std::vector<StimulusFrame> frames;
  frames.reserve(static_cast<std::size_t>(duration_steps));
  for (int k = 0; k < duration_steps; ++k) frames.push_back(render_frame(k, pressure_on, cfg));
  return frames;
}

inline double lit_fraction(const StimulusFrame& f) {
  std::size_t lit = 0;
  for (double v : f.image) lit += v > 0.0 ? 1 : 0;
  return f.image.empty() ? 0.0 : double(lit) / double(f.image.size());
}

/// Binary PGM (P5) dump, for documentation.
inline void write_pgm(std::ostream& out, const StimulusFrame& f) {
  out << "P5\n" << f.width << ' ' << f.height << "\n255\n";
  for (double v : f.image) out.put(static_cast<char>(static_cast<std::uint8_t>(std::lround(v * 255.0))));
}

/// Fill-unit fixture on a regular clock grid (t,fill_units), shared with the browser client.
inline void write_fill_fixture(std::ostream& out, double duration_s, double dt_s,
                               const StimulusConfig& cfg = {}) {
  out << "t,fill_units\n";
  const auto n = static_cast<long long>(std::llround(duration_s / dt_s));
  for (long long i = 0; i <= n; ++i) {
    const double t = double(i) * dt_s;
    out << std::fixed;
    out.precision(1);
    out << t << ',' << fill_units_at_time(t, cfg) << '\n';
  }
}

}  // namespace dualrl
