#pragma once

// Raw sensor measurements of one synchronized capture.

#include <array>
#include <cstdint>
#include <limits>
#include <string>
#include <string_view>
#include <vector>

#include "fogfuse/error.hpp"
#include "fogfuse/geometry.hpp"

namespace fogfuse {

enum class Stream : std::uint8_t { camera = 0, lidar = 1, radar = 2, gated = 3 };

inline constexpr std::size_t kStreamCount = 4;
inline constexpr std::array<Stream, kStreamCount> kAllStreams = {Stream::camera, Stream::lidar,
                                                                Stream::radar, Stream::gated};

inline std::string_view stream_name(Stream s) {
  switch (s) {
    case Stream::camera: return "camera";
    case Stream::lidar: return "lidar";
    case Stream::radar: return "radar";
    case Stream::gated: return "gated";
  }
  return "?";
}

inline Stream parse_stream(std::string_view name) {
  for (Stream s : kAllStreams) {
    if (stream_name(s) == name) return s;
  }
  throw ConfigError("unknown sensor stream '" + std::string(name) + "'");
}

/// Planar channel-major float image.
struct Image {
  int channels = 0;
  int height = 0;
  int width = 0;
  std::vector<float> values;

  Image() = default;
  Image(int c, int h, int w, float fill = 0.0f)
      : channels(c), height(h), width(w), values(static_cast<std::size_t>(c) * h * w, fill) {}

  bool empty() const { return values.empty(); }
  float& at(int c, int y, int x) { return values[(static_cast<std::size_t>(c) * height + y) * width + x]; }
  float at(int c, int y, int x) const {
    return values[(static_cast<std::size_t>(c) * height + y) * width + x];
  }

  friend bool operator==(const Image&, const Image&) = default;
};

struct LidarPoint {
  double x = 0, y = 0, z = 0;  // meters, lidar frame
  double intensity = 0;        // [0,1]

  double range() const { return std::sqrt(x * x + y * y + z * z); }
  friend bool operator==(const LidarPoint&, const LidarPoint&) = default;
};

struct LidarPointSet {
  std::vector<LidarPoint> points;
  friend bool operator==(const LidarPointSet&, const LidarPointSet&) = default;
};

struct RadarDetection {
  double azimuth_deg = 0;  // positive to the left
  double range = 0;        // meters
  double radial_velocity = 0;
  double amplitude = 0;    // [0,1]
  friend bool operator==(const RadarDetection&, const RadarDetection&) = default;
};

struct RadarScan {
  static constexpr std::size_t kMaxTargets = 100;
  std::vector<RadarDetection> detections;
  friend bool operator==(const RadarScan&, const RadarScan&) = default;
};

/// Three range-gated slices in the gated imager's native plane.
struct GatedSlices {
  Image slices;    // 3 channels, total intensity
  Image ambient;   // 3 channels, passive share of `slices`
  Image depth;     // 1 channel, meters, +inf where nothing was hit
  Mat3 homography; // gated plane -> camera plane

  friend bool operator==(const GatedSlices&, const GatedSlices&) = default;
};

enum class WeatherKind : std::uint8_t { clear = 0, light_fog = 1, dense_fog = 2, snow_rain = 3, night = 4 };

inline constexpr std::array<WeatherKind, 5> kAllWeatherKinds = {
    WeatherKind::clear, WeatherKind::light_fog, WeatherKind::dense_fog, WeatherKind::snow_rain,
    WeatherKind::night};

inline std::string_view weather_name(WeatherKind k) {
  switch (k) {
    case WeatherKind::clear: return "clear";
    case WeatherKind::light_fog: return "light_fog";
    case WeatherKind::dense_fog: return "dense_fog";
    case WeatherKind::snow_rain: return "snow_rain";
    case WeatherKind::night: return "night";
  }
  return "?";
}

inline WeatherKind parse_weather(std::string_view name) {
  for (WeatherKind k : kAllWeatherKinds) {
    if (weather_name(k) == name) return k;
  }
  throw ConfigError("unknown weather kind '" + std::string(name) + "'");
}

struct WeatherCondition {
  WeatherKind kind = WeatherKind::clear;
  double visibility = std::numeric_limits<double>::infinity();  // meters
  double ambient_light = 1.0;                                     // [0,1]
  double clutter_rate = 0.0;                                      // particles per frame

  /// Enforces the annotation rule: dense fog below 100 m, light fog below 1 km.
  void validate() const {
    if (!(visibility > 0)) throw DataError("weather: visibility must be positive");
    if (ambient_light < 0 || ambient_light > 1) throw DataError("weather: ambient light outside [0,1]");
    if (clutter_rate < 0) throw DataError("weather: negative clutter rate");
    if (kind == WeatherKind::dense_fog && !(visibility < 100)) {
      throw DataError("weather: dense fog requires visibility below 100 m");
    }
    if (kind == WeatherKind::light_fog && !(visibility >= 100 && visibility < 1000)) {
      throw DataError("weather: light fog requires 100 m <= visibility < 1000 m");
    }
  }

  static WeatherCondition clear(double ambient = 1.0) {
    return {WeatherKind::clear, std::numeric_limits<double>::infinity(), ambient, 0.0};
  }
  static WeatherCondition fog(double visibility) {
    return {visibility < 100 ? WeatherKind::dense_fog
                             : (visibility < 1000 ? WeatherKind::light_fog : WeatherKind::clear),
            visibility, 1.0, 0.0};
  }
  static WeatherCondition night(double ambient) {
    return {WeatherKind::night, std::numeric_limits<double>::infinity(), ambient, 0.0};
  }
  static WeatherCondition snow_rain(double rate) {
    return {WeatherKind::snow_rain, std::numeric_limits<double>::infinity(), 1.0, rate};
  }

  friend bool operator==(const WeatherCondition&, const WeatherCondition&) = default;
};

struct GroundTruthBox {
  Box2D box;
  int class_id = 1;  // 1 = car
  double occlusion = 0;
  double truncation = 0;

  friend bool operator==(const GroundTruthBox&, const GroundTruthBox&) = default;
};

/// One synchronized capture with labels.
struct MultimodalFrame {
  std::uint64_t id = 0;
  std::uint64_t seed = 0;  // scene seed; the frame is regenerable from it
  WeatherCondition weather;
  Image camera;        // 3 x H x W, [0,1]
  Image camera_depth;  // 1 x H x W, meters, +inf for sky
  LidarPointSet lidar;
  RadarScan radar;
  GatedSlices gated;
  std::vector<GroundTruthBox> boxes;

  friend bool operator==(const MultimodalFrame&, const MultimodalFrame&) = default;
};

}  // namespace fogfuse
