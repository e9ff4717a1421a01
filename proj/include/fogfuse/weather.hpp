#pragma once

// Weather degradations applied to rendered frames, and the frame generator
// that combines a random scene with a condition.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <limits>
#include <random>
#include <utility>
#include <vector>

#include "fogfuse/error.hpp"
#include "fogfuse/frame.hpp"
#include "fogfuse/random.hpp"
#include "fogfuse/scene.hpp"

namespace fogfuse {

struct FogModel {
  double airlight = 0.8;
  double clutter_per_beta = 2000.0;  // expected lidar backscatter points per unit extinction
  double clutter_near = 3.0;
  double clutter_far = 12.0;
  double gated_max_gain = 4.0;  // per-slice exposure compensation limit
  bool lidar_two_way = true;    // surviving returns lose intensity as exp(-2 beta r)
};

struct NightModel {
  double noise_sigma = 0.02;
};

struct SnowRainModel {
  double lidar_clutter_per_rate = 0.5;
  double lidar_drop_per_rate = 0.002;
  double max_drop = 0.6;
  float camera_streak_value = 0.92f;
  float gated_streak_value = 0.75f;
};

struct SnowRainDiagnostics {
  std::vector<std::pair<int, int>> camera_streak_pixels;  // (row, col), last writer wins
  std::size_t lidar_clutter = 0;
  std::size_t lidar_dropped = 0;
};

/// Extinction coefficient for a visibility, 5% contrast threshold.
inline double extinction(double visibility) { return std::log(20.0) / visibility; }

namespace detail {

inline void require_depth(const MultimodalFrame& f) {
  if (f.camera_depth.values.size() != f.camera.values.size() / std::max(1, f.camera.channels) ||
      f.camera_depth.values.empty()) {
    throw DataError("fog: frame has no camera depth buffer");
  }
  if (!f.gated.slices.values.empty() &&
      f.gated.depth.values.size() != f.gated.slices.values.size() / std::max(1, f.gated.slices.channels)) {
    throw DataError("fog: frame has no gated depth buffer");
  }
}

inline LidarPoint random_lidar_point(Rng& rng, double near, double far, double lo_i, double hi_i) {
  std::uniform_real_distribution<double> r(near, far), az(-32.0, 32.0), el(-12.0, 3.0), inten(lo_i, hi_i);
  const double range = r(rng);
  const double a = az(rng) * M_PI / 180.0, e = el(rng) * M_PI / 180.0;
  return {range * std::cos(e) * std::cos(a), range * std::cos(e) * std::sin(a), range * std::sin(e),
          inten(rng)};
}

inline std::uint64_t condition_salt(double value, std::uint64_t kind) {
  std::uint64_t bits = 0;
  static_assert(sizeof(bits) == sizeof(value));
  std::memcpy(&bits, &value, sizeof(bits));
  return mix64(bits ^ (kind << 56));
}

}  // namespace detail

inline std::uint64_t default_fog_seed(const MultimodalFrame& f, double visibility) {
  return derive_seed(f.seed, detail::condition_salt(visibility, 1));
}

/// Koschmieder attenuation with airlight for the camera, attenuation only for
/// the gated imager, a hard lidar range of V/2 with near backscatter clutter.
/// Radar is unchanged.
inline MultimodalFrame apply_fog(MultimodalFrame f, double visibility, std::uint64_t seed,
                                 const FogModel& model = {}) {
  if (!(visibility > 0)) throw DataError("fog: visibility must be positive");
  detail::require_depth(f);
  if (std::isinf(visibility)) return f;
  const double beta = extinction(visibility);

  for (std::size_t i = 0; i < f.camera_depth.values.size(); ++i) {
    const double t = std::exp(-beta * static_cast<double>(f.camera_depth.values[i]));
    for (int c = 0; c < f.camera.channels; ++c) {
      float& v = f.camera.values[static_cast<std::size_t>(c) * f.camera_depth.values.size() + i];
      v = static_cast<float>(v * t + model.airlight * (1.0 - t));
    }
  }
  // Gated: attenuation without airlight, then each slice re-exposed so its
  // peak returns to the clear-weather peak, within a bounded gain.
  const std::size_t gpix = f.gated.depth.values.size();
  for (int c = 0; c < f.gated.slices.channels; ++c) {
    float* slice = f.gated.slices.values.data() + static_cast<std::size_t>(c) * gpix;
    float* amb = f.gated.ambient.values.data() + static_cast<std::size_t>(c) * gpix;
    float peak_before = 0.0f, peak_after = 0.0f;
    for (std::size_t i = 0; i < gpix; ++i) {
      const double t = std::exp(-beta * static_cast<double>(f.gated.depth.values[i]));
      peak_before = std::max(peak_before, slice[i]);
      slice[i] = static_cast<float>(slice[i] * t);
      amb[i] = static_cast<float>(amb[i] * t);
      peak_after = std::max(peak_after, slice[i]);
    }
    const double gain = peak_after > 0 ? std::clamp(static_cast<double>(peak_before) / peak_after, 1.0,
                                                    model.gated_max_gain)
                                       : 1.0;
    for (std::size_t i = 0; i < gpix; ++i) {
      slice[i] = static_cast<float>(std::min(1.0, slice[i] * gain));
      amb[i] = static_cast<float>(std::min(1.0, amb[i] * gain));
    }
  }

  const double r_max = 0.5 * visibility;
  std::erase_if(f.lidar.points, [&](const LidarPoint& p) { return p.range() > r_max; });
  if (model.lidar_two_way) {
    for (auto& p : f.lidar.points) p.intensity *= std::exp(-2.0 * beta * p.range());
  }
  Rng rng(seed);
  std::poisson_distribution<int> count(model.clutter_per_beta * beta);
  const int n = count(rng);
  for (int k = 0; k < n; ++k) {
    f.lidar.points.push_back(detail::random_lidar_point(rng, model.clutter_near, model.clutter_far, 0.02, 0.25));
  }

  const double ambient = f.weather.ambient_light;
  f.weather = WeatherCondition::fog(visibility);
  f.weather.ambient_light = ambient;
  return f;
}

inline MultimodalFrame apply_fog(MultimodalFrame f, double visibility) {
  const std::uint64_t seed = default_fog_seed(f, visibility);
  return apply_fog(std::move(f), visibility, seed);
}

/// Illumination change: camera signal and its shot noise scale with ambient
/// light; the gated imager loses only its passive share.
inline MultimodalFrame apply_night(MultimodalFrame f, double ambient, std::uint64_t seed,
                                   WeatherKind tag = WeatherKind::night, const NightModel& model = {}) {
  if (ambient < 0 || ambient > 1) throw DataError("night: ambient light outside [0,1]");
  Rng rng(seed);
  std::normal_distribution<double> noise(0.0, model.noise_sigma * std::sqrt(ambient));
  for (float& v : f.camera.values) {
    v = static_cast<float>(std::clamp(ambient * v + noise(rng), 0.0, 1.0));
  }
  for (std::size_t k = 0; k < f.gated.slices.values.size(); ++k) {
    const double amb = f.gated.ambient.values[k];
    f.gated.slices.values[k] = static_cast<float>(std::max(0.0, f.gated.slices.values[k] - (1.0 - ambient) * amb));
    f.gated.ambient.values[k] = static_cast<float>(ambient * amb);
  }
  const double visibility = f.weather.visibility;
  f.weather = tag == WeatherKind::night ? WeatherCondition::night(ambient) : WeatherCondition::clear(ambient);
  if (tag != WeatherKind::night) f.weather.kind = tag;
  f.weather.visibility = visibility;
  return f;
}

inline MultimodalFrame apply_night(MultimodalFrame f, double ambient) {
  const std::uint64_t seed = derive_seed(f.seed, detail::condition_salt(ambient, 2));
  return apply_night(std::move(f), ambient, seed);
}

namespace detail {

inline void draw_streaks(Image& img, int count, float value, Rng& rng,
                         std::vector<std::pair<int, int>>* pixels) {
  if (img.width <= 0 || img.height <= 0) return;
  std::uniform_int_distribution<int> col(0, img.width - 1), row(0, img.height - 1), len(2, 6);
  std::uniform_int_distribution<int> slant(-1, 1);
  for (int s = 0; s < count; ++s) {
    int x = col(rng), y = row(rng);
    const int n = len(rng), dx = slant(rng);
    for (int k = 0; k < n; ++k, ++y) {
      if (k > 0 && k % 2 == 0) x += dx;
      if (x < 0 || x >= img.width || y >= img.height) break;
      for (int c = 0; c < img.channels; ++c) img.at(c, y, x) = value;
      if (pixels) pixels->emplace_back(y, x);
    }
  }
}

}  // namespace detail

/// Particles: streak occlusions in the camera and gated images, near lidar
/// clutter and random loss of true returns. Radar is unchanged.
inline MultimodalFrame apply_snow_rain(MultimodalFrame f, double rate, std::uint64_t seed,
                                       SnowRainDiagnostics* diag = nullptr,
                                       const SnowRainModel& model = {}) {
  if (rate < 0) throw DataError("snow_rain: negative clutter rate");
  if (rate == 0) return f;
  Rng rng(seed);
  std::poisson_distribution<int> camera_streaks(rate);
  std::vector<std::pair<int, int>> streak_pixels;
  detail::draw_streaks(f.camera, camera_streaks(rng), model.camera_streak_value, rng, &streak_pixels);
  if (!f.camera_depth.values.empty()) {
    for (const auto& [y, x] : streak_pixels) f.camera_depth.at(0, y, x) = 2.0f;
  }
  const double gated_ratio = f.camera.values.empty()
                                 ? 1.0
                                 : static_cast<double>(f.gated.slices.values.size()) / f.camera.values.size();
  std::poisson_distribution<int> gated_streaks(rate * gated_ratio);
  detail::draw_streaks(f.gated.slices, gated_streaks(rng), model.gated_streak_value, rng, nullptr);

  const double p_drop = std::min(model.max_drop, model.lidar_drop_per_rate * rate);
  std::bernoulli_distribution drop(p_drop);
  std::vector<LidarPoint> kept;
  kept.reserve(f.lidar.points.size());
  std::size_t dropped = 0;
  for (const LidarPoint& p : f.lidar.points) {
    if (drop(rng)) {
      ++dropped;
    } else {
      kept.push_back(p);
    }
  }
  std::poisson_distribution<int> clutter(model.lidar_clutter_per_rate * rate);
  const int n = clutter(rng);
  for (int k = 0; k < n; ++k) kept.push_back(detail::random_lidar_point(rng, 1.5, 10.0, 0.3, 0.9));
  f.lidar.points = std::move(kept);
  if (diag) {
    diag->camera_streak_pixels = std::move(streak_pixels);
    diag->lidar_clutter = static_cast<std::size_t>(n);
    diag->lidar_dropped = dropped;
  }
  const double ambient = f.weather.ambient_light;
  f.weather = WeatherCondition::snow_rain(rate);
  f.weather.ambient_light = ambient;
  return f;
}

inline MultimodalFrame apply_snow_rain(MultimodalFrame f, double rate) {
  const std::uint64_t seed = derive_seed(f.seed, detail::condition_salt(rate, 3));
  return apply_snow_rain(std::move(f), rate, seed);
}

/// Applies a condition to a clear rendering; seeds derive from the frame seed.
inline MultimodalFrame apply_condition(MultimodalFrame f, const WeatherCondition& w) {
  w.validate();
  if (w.ambient_light < 1.0) {
    const std::uint64_t seed = derive_seed(f.seed, detail::condition_salt(w.ambient_light, 2));
    f = apply_night(std::move(f), w.ambient_light, seed,
                    w.kind == WeatherKind::night ? WeatherKind::night : WeatherKind::clear);
  }
  if (std::isfinite(w.visibility)) f = apply_fog(std::move(f), w.visibility);
  if (w.clutter_rate > 0) f = apply_snow_rain(std::move(f), w.clutter_rate);
  f.weather = w;
  return f;
}

/// Renders the scene drawn from `seed` under `w`.
inline MultimodalFrame generate_frame(std::uint64_t seed, const WeatherCondition& w,
                                      const CalibrationModel& calib, const SceneConfig& cfg = {}) {
  return apply_condition(render_clear(random_scene(seed, cfg), calib), w);
}

}  // namespace fogfuse
