#pragma once

// Synthetic road scenes: flat-shaded boxes on a textured ground plane, ray
// cast into camera, lidar, radar and gated measurements with geometric labels.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <vector>

#include "fogfuse/error.hpp"
#include "fogfuse/frame.hpp"
#include "fogfuse/geometry.hpp"
#include "fogfuse/random.hpp"

namespace fogfuse {

struct SceneObject {
  int class_id = 1;  // 1 = car, 0 = unlabeled distractor
  Vec3 center;       // vehicle frame, meters
  Vec3 extents;      // full length (along heading), width, height
  double yaw = 0;
  std::array<double, 3> albedo{0.5, 0.5, 0.5};
  double nir_albedo = 0.5;
  double radar_amplitude = 0.8;
};

struct SceneSpec {
  std::uint64_t seed = 0;
  std::vector<SceneObject> objects;
  double ground_z = -1.5;
  double ground_brightness = 0.3;
  double texture_scale = 1.0;
  double sky_brightness = 0.75;

  void validate(double max_range) const {
    for (const auto& o : objects) {
      if (o.extents.x < 0 || o.extents.y < 0 || o.extents.z < 0) {
        throw DataError("scene: object with negative extents");
      }
      if (std::hypot(o.center.x, o.center.y) > max_range) {
        throw DataError("scene: object beyond sensor range");
      }
    }
  }
};

struct SceneConfig {
  int min_cars = 1;
  int max_cars = 4;
  int max_distractors = 3;
  double min_distance = 6.0;
  double max_distance = 35.0;
  double max_lateral = 7.0;
};

namespace detail {

inline double hash_unit(std::uint64_t seed, std::int64_t ix, std::int64_t iy) {
  const std::uint64_t h = mix64(seed ^ mix64(static_cast<std::uint64_t>(ix) * 0x9E3779B1ULL +
                                             static_cast<std::uint64_t>(iy) * 0x85EBCA77ULL));
  return static_cast<double>(h >> 11) * (1.0 / 9007199254740992.0);
}

/// Smooth lattice value noise in [0,1].
inline double value_noise(std::uint64_t seed, double x, double y) {
  const double fx = std::floor(x), fy = std::floor(y);
  const auto ix = static_cast<std::int64_t>(fx), iy = static_cast<std::int64_t>(fy);
  double tx = x - fx, ty = y - fy;
  tx = tx * tx * (3 - 2 * tx);
  ty = ty * ty * (3 - 2 * ty);
  const double a = hash_unit(seed, ix, iy), b = hash_unit(seed, ix + 1, iy);
  const double c = hash_unit(seed, ix, iy + 1), d = hash_unit(seed, ix + 1, iy + 1);
  return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty;
}

}  // namespace detail

struct RayHit {
  double distance = std::numeric_limits<double>::infinity();
  int object = -1;  // index into SceneSpec::objects, -1 ground, -2 nothing
  Vec3 point;
  Vec3 normal;
  Vec3 local;  // hit point in the object frame, scaled to [-1,1]^3
  bool hit() const { return object != -2; }
};

/// Ray against one oriented box; `dir` must be unit length.
inline std::optional<RayHit> intersect_box(const SceneObject& o, Vec3 origin, Vec3 dir) {
  const Mat3 to_local = Mat3::rotation_z(-o.yaw);
  const Vec3 lo = to_local * (origin - o.center);
  const Vec3 ld = to_local * dir;
  const double half[3] = {0.5 * o.extents.x, 0.5 * o.extents.y, 0.5 * o.extents.z};
  const double ro[3] = {lo.x, lo.y, lo.z};
  const double rd[3] = {ld.x, ld.y, ld.z};
  double t_near = -std::numeric_limits<double>::infinity();
  double t_far = std::numeric_limits<double>::infinity();
  int axis = -1;
  double sign = 0;
  for (int k = 0; k < 3; ++k) {
    if (std::abs(rd[k]) < 1e-12) {
      if (ro[k] < -half[k] || ro[k] > half[k]) return std::nullopt;
      continue;
    }
    double t1 = (-half[k] - ro[k]) / rd[k];
    double t2 = (half[k] - ro[k]) / rd[k];
    double s = -1;
    if (t1 > t2) {
      std::swap(t1, t2);
      s = 1;
    }
    if (t1 > t_near) {
      t_near = t1;
      axis = k;
      sign = s;
    }
    t_far = std::min(t_far, t2);
  }
  if (t_near > t_far || t_far <= 1e-6 || t_near <= 1e-6 || axis < 0) return std::nullopt;
  RayHit hit;
  hit.distance = t_near;
  hit.point = origin + t_near * dir;
  Vec3 n_local{0, 0, 0};
  (axis == 0 ? n_local.x : axis == 1 ? n_local.y : n_local.z) = sign;
  hit.normal = Mat3::rotation_z(o.yaw) * n_local;
  const Vec3 lp = lo + t_near * ld;
  hit.local = {half[0] > 0 ? lp.x / half[0] : 0, half[1] > 0 ? lp.y / half[1] : 0,
               half[2] > 0 ? lp.z / half[2] : 0};
  return hit;
}

/// Nearest hit among objects and the ground plane. `only` restricts to one object.
inline RayHit cast_ray(const SceneSpec& scene, Vec3 origin, Vec3 dir, int only = -3,
                       double max_ground = 200.0) {
  RayHit best;
  best.object = -2;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    if (only >= 0 && static_cast<int>(i) != only) continue;
    if (auto h = intersect_box(scene.objects[i], origin, dir); h && h->distance < best.distance) {
      best = *h;
      best.object = static_cast<int>(i);
    }
  }
  if (only == -3 && dir.z < -1e-9) {
    const double t = (scene.ground_z - origin.z) / dir.z;
    if (t > 0 && t < max_ground && t < best.distance) {
      best = RayHit{};
      best.distance = t;
      best.object = -1;
      best.point = origin + t * dir;
      best.normal = {0, 0, 1};
    }
  }
  return best;
}

inline Vec3 normalized(Vec3 v) { return (1.0 / v.norm()) * v; }

namespace detail {

inline const Vec3& sun_direction() {
  static const Vec3 sun = normalized({-0.4, 0.5, 0.75});
  return sun;
}

inline bool on_lane_marking(Vec3 p) {
  const double m = std::fmod(std::abs(p.x), 6.0);
  return (std::abs(std::abs(p.y) - 1.75) < 0.09 && m < 3.0) || std::abs(std::abs(p.y) - 5.2) < 0.1;
}

inline std::array<double, 3> ground_color(const SceneSpec& s, Vec3 p) {
  const double n1 = value_noise(s.seed, p.x * 0.9 * s.texture_scale, p.y * 0.9 * s.texture_scale);
  const double n2 = value_noise(s.seed + 1, p.x * 5.0, p.y * 5.0);
  if (std::abs(p.y) > 5.2) {
    const double g = 0.6 + 0.5 * n1 + 0.2 * n2;
    return {0.18 * g, 0.34 * g, 0.14 * g};
  }
  if (on_lane_marking(p)) return {0.85, 0.85, 0.8};
  const double v = s.ground_brightness * (0.7 + 0.45 * n1 + 0.2 * n2);
  return {v, v, v * 1.02};
}

inline std::array<double, 3> object_color(const SceneObject& o, const RayHit& h) {
  const double shade = 0.45 + 0.55 * std::max(0.0, h.normal.dot(sun_direction()));
  double f = shade;
  // Window band on the upper half of cars, bumper line near the bottom.
  if (o.class_id == 1 && h.local.z > 0.25) f *= 0.45;
  if (o.class_id == 1 && h.local.z < -0.55) f *= 0.7;
  return {o.albedo[0] * f, o.albedo[1] * f, o.albedo[2] * f};
}

inline double sky_value(const SceneSpec& s, Vec3 dir) {
  const double elev = std::asin(std::clamp(dir.z, -1.0, 1.0));
  const double cloud = value_noise(s.seed + 7, std::atan2(dir.y, dir.x) * 12.0, elev * 30.0);
  return std::clamp(s.sky_brightness + 0.6 * elev + 0.12 * (cloud - 0.5), 0.0, 1.0);
}

/// NIR reflectance seen by lidar and gated imager.
inline double nir_reflectance(const SceneSpec& s, const RayHit& h) {
  if (h.object >= 0) {
    const SceneObject& o = s.objects[static_cast<std::size_t>(h.object)];
    double r = o.nir_albedo;
    if (o.class_id == 1 && h.local.z > 0.25) r *= 0.35;  // glass
    return r;
  }
  if (on_lane_marking(h.point)) return 0.85;
  const double n = value_noise(s.seed + 3, h.point.x * 0.7, h.point.y * 0.7);
  return std::abs(h.point.y) > 5.2 ? 0.45 + 0.2 * n : 0.2 + 0.12 * n;
}

inline double band_weight(double d, double near, double far, double ramp) {
  return std::clamp((d - near) / ramp, 0.0, 1.0) * std::clamp((far - d) / ramp, 0.0, 1.0);
}

}  // namespace detail

/// Range gates of the three gated slices: near, far, ramp (meters).
inline constexpr std::array<std::array<double, 3>, 3> kGatedSlices = {
    std::array<double, 3>{3.0, 25.0, 4.0}, {18.0, 45.0, 5.0}, {38.0, 80.0, 6.0}};

/// Random scene drawn from `seed`.
inline SceneSpec random_scene(std::uint64_t seed, const SceneConfig& cfg = {}) {
  Rng rng(derive_seed(seed, 0x5ce7e));
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  auto uniform = [&](double lo, double hi) { return lo + (hi - lo) * u01(rng); };
  SceneSpec s;
  s.seed = seed;
  s.ground_brightness = uniform(0.22, 0.4);
  s.texture_scale = uniform(0.7, 1.4);
  s.sky_brightness = uniform(0.6, 0.85);

  auto overlaps = [&](const SceneObject& c) {
    for (const auto& o : s.objects) {
      const double r1 = 0.5 * std::hypot(c.extents.x, c.extents.y);
      const double r2 = 0.5 * std::hypot(o.extents.x, o.extents.y);
      if (std::hypot(c.center.x - o.center.x, c.center.y - o.center.y) < r1 + r2 + 0.3) return true;
    }
    return false;
  };

  const int cars = cfg.min_cars + static_cast<int>(u01(rng) * (cfg.max_cars - cfg.min_cars + 1));
  for (int i = 0, attempts = 0; i < cars && attempts < 50; ++attempts) {
    SceneObject car;
    car.class_id = 1;
    car.extents = {uniform(3.8, 4.8), uniform(1.7, 1.95), uniform(1.4, 1.65)};
    const double dist = uniform(cfg.min_distance, cfg.max_distance);
    const double lateral = uniform(-cfg.max_lateral, cfg.max_lateral);
    car.center = {dist, lateral, s.ground_z + 0.5 * car.extents.z};
    const double r = u01(rng);
    car.yaw = r < 0.75 ? uniform(-0.25, 0.25) : (r < 0.9 ? uniform(0.6, 1.2) : uniform(1.3, 1.85));
    if (u01(rng) < 0.5) car.yaw = -car.yaw;
    const double base = uniform(0.08, 0.95);
    car.albedo = {std::clamp(base * uniform(0.6, 1.4), 0.03, 1.0),
                  std::clamp(base * uniform(0.6, 1.4), 0.03, 1.0),
                  std::clamp(base * uniform(0.6, 1.4), 0.03, 1.0)};
    car.nir_albedo = uniform(0.45, 0.9);
    car.radar_amplitude = uniform(0.6, 1.0);
    if (overlaps(car)) continue;
    s.objects.push_back(car);
    ++i;
  }
  const int distractors = static_cast<int>(u01(rng) * (cfg.max_distractors + 1));
  for (int i = 0, attempts = 0; i < distractors && attempts < 50; ++attempts) {
    SceneObject d;
    d.class_id = 0;
    const bool pole = u01(rng) < 0.5;
    d.extents = pole ? Vec3{0.3, 0.3, uniform(3.0, 6.0)} : Vec3{uniform(6, 14), 0.5, uniform(1.5, 3.5)};
    const double side = u01(rng) < 0.5 ? -1.0 : 1.0;
    d.center = {uniform(8.0, 60.0), side * uniform(6.0, 11.0), s.ground_z + 0.5 * d.extents.z};
    d.yaw = pole ? 0.0 : uniform(-0.1, 0.1);
    const double g = uniform(0.2, 0.8);
    d.albedo = {g, g * uniform(0.85, 1.1), g * uniform(0.85, 1.1)};
    d.nir_albedo = uniform(0.3, 0.8);
    d.radar_amplitude = uniform(0.2, 0.5);
    if (overlaps(d)) continue;
    s.objects.push_back(d);
    ++i;
  }
  return s;
}

/// Ground-truth boxes: projected 3-D box extents, truncation from clipping,
/// occlusion from per-pixel z-buffer counting.
inline std::vector<GroundTruthBox> ground_truth_boxes(const SceneSpec& scene,
                                                      const PinholeIntrinsics& cam) {
  std::vector<GroundTruthBox> out;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    const SceneObject& o = scene.objects[i];
    if (o.class_id != 1) continue;
    const Mat3 rot = Mat3::rotation_z(o.yaw);
    double x1 = INFINITY, y1 = INFINITY, x2 = -INFINITY, y2 = -INFINITY;
    bool behind = false;
    for (int c = 0; c < 8; ++c) {
      const Vec3 corner{(c & 1 ? 0.5 : -0.5) * o.extents.x, (c & 2 ? 0.5 : -0.5) * o.extents.y,
                        (c & 4 ? 0.5 : -0.5) * o.extents.z};
      const auto uv = cam.project(o.center + rot * corner);
      if (!uv) {
        behind = true;
        break;
      }
      x1 = std::min(x1, (*uv)[0]);
      x2 = std::max(x2, (*uv)[0]);
      y1 = std::min(y1, (*uv)[1]);
      y2 = std::max(y2, (*uv)[1]);
    }
    if (behind) continue;
    const Box2D full{x1, y1, x2, y2};
    const Box2D clipped = full.clamped(cam.width, cam.height);
    if (clipped.area() <= 0 || full.area() <= 0) continue;

    std::size_t own = 0, visible = 0;
    for (int v = static_cast<int>(clipped.y1); v < static_cast<int>(std::ceil(clipped.y2)); ++v) {
      for (int u = static_cast<int>(clipped.x1); u < static_cast<int>(std::ceil(clipped.x2)); ++u) {
        const Vec3 dir = normalized(cam.ray(u + 0.5, v + 0.5));
        if (!cast_ray(scene, {0, 0, 0}, dir, static_cast<int>(i)).hit()) continue;
        ++own;
        if (cast_ray(scene, {0, 0, 0}, dir).object == static_cast<int>(i)) ++visible;
      }
    }
    if (own == 0 || visible == 0) continue;
    GroundTruthBox gt;
    gt.box = clipped;
    gt.class_id = 1;
    gt.truncation = std::clamp(1.0 - clipped.area() / full.area(), 0.0, 1.0);
    gt.occlusion = std::clamp(1.0 - static_cast<double>(visible) / static_cast<double>(own), 0.0, 1.0);
    out.push_back(gt);
  }
  return out;
}

/// Renders every sensor for a clear-weather, full-daylight capture.
inline MultimodalFrame render_clear(const SceneSpec& scene, const CalibrationModel& calib) {
  scene.validate(calib.max_range);
  calib.validate();
  MultimodalFrame f;
  f.seed = scene.seed;
  f.weather = WeatherCondition::clear();
  Rng rng(derive_seed(scene.seed, 0x5e75));
  const Vec3 origin{0, 0, 0};

  // Camera.
  const PinholeIntrinsics& cam = calib.camera;
  f.camera = Image(3, cam.height, cam.width);
  f.camera_depth = Image(1, cam.height, cam.width);
  for (int v = 0; v < cam.height; ++v) {
    for (int u = 0; u < cam.width; ++u) {
      const Vec3 dir = normalized(cam.ray(u + 0.5, v + 0.5));
      const RayHit h = cast_ray(scene, origin, dir);
      std::array<double, 3> rgb;
      if (h.object >= 0) {
        rgb = detail::object_color(scene.objects[static_cast<std::size_t>(h.object)], h);
      } else if (h.object == -1) {
        rgb = detail::ground_color(scene, h.point);
      } else {
        const double s = detail::sky_value(scene, dir);
        rgb = {s * 0.92, s * 0.96, s};
      }
      for (int c = 0; c < 3; ++c) f.camera.at(c, v, u) = static_cast<float>(std::clamp(rgb[c], 0.0, 1.0));
      f.camera_depth.at(0, v, u) = static_cast<float>(h.distance);
    }
  }

  // Lidar: 24 lines and 0.8 degree azimuth steps across the camera field of view.
  std::normal_distribution<double> range_noise(0.0, 0.02);
  const double el_lo = -std::atan(0.5 * cam.height / cam.fy) - 0.01;
  const double el_hi = std::atan(0.5 * cam.height / cam.fy) * 0.5;
  const int lines = 24;
  for (int l = 0; l < lines; ++l) {
    const double el = el_lo + (el_hi - el_lo) * l / (lines - 1);
    for (double az = -32.0; az <= 32.0; az += 0.8) {
      const double a = az * M_PI / 180.0;
      const Vec3 dir{std::cos(el) * std::cos(a), std::cos(el) * std::sin(a), std::sin(el)};
      const RayHit h = cast_ray(scene, origin, dir);
      const double noise = range_noise(rng);
      if (!h.hit() || h.distance > calib.max_range) continue;
      const double r = std::max(0.1, h.distance + noise);
      const double incidence = std::abs(h.normal.dot(dir));
      const double intensity =
          std::clamp(detail::nir_reflectance(scene, h) * (0.55 + 0.45 * incidence), 0.0, 1.0);
      f.lidar.points.push_back({r * dir.x, r * dir.y, r * dir.z, intensity});
    }
  }

  // Radar: one return per object centroid in the forward field of view, plus ground clutter.
  std::normal_distribution<double> radar_noise(0.0, 0.15);
  std::uniform_real_distribution<double> u01(0.0, 1.0);
  for (const SceneObject& o : scene.objects) {
    const double range = std::hypot(o.center.x, o.center.y);
    const double az = std::atan2(o.center.y, o.center.x) * 180.0 / M_PI;
    if (range > calib.max_range || std::abs(az) > 35.0) continue;
    f.radar.detections.push_back({az, std::max(0.5, range + radar_noise(rng)), 0.0, o.radar_amplitude});
  }
  for (int k = 0; k < 2; ++k) {
    f.radar.detections.push_back(
        {-35.0 + 70.0 * u01(rng), 5.0 + 80.0 * u01(rng), 0.0, 0.05 + 0.15 * u01(rng)});
  }
  std::sort(f.radar.detections.begin(), f.radar.detections.end(),
            [](const RadarDetection& a, const RadarDetection& b) { return a.range < b.range; });
  if (f.radar.detections.size() > RadarScan::kMaxTargets) f.radar.detections.resize(RadarScan::kMaxTargets);

  // Gated imager in its own plane: actively illuminated range slices plus a passive share.
  const PinholeIntrinsics& g = calib.gated;
  f.gated.slices = Image(3, g.height, g.width);
  f.gated.ambient = Image(3, g.height, g.width);
  f.gated.depth = Image(1, g.height, g.width);
  f.gated.homography = calib.gated_to_camera();
  for (int v = 0; v < g.height; ++v) {
    for (int u = 0; u < g.width; ++u) {
      const Vec3 dir = normalized(g.ray(u + 0.5, v + 0.5));
      const RayHit h = cast_ray(scene, origin, dir);
      double passive, active_base = 0.0;
      if (h.object >= 0) {
        const auto rgb = detail::object_color(scene.objects[static_cast<std::size_t>(h.object)], h);
        passive = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
      } else if (h.object == -1) {
        const auto rgb = detail::ground_color(scene, h.point);
        passive = (rgb[0] + rgb[1] + rgb[2]) / 3.0;
      } else {
        passive = detail::sky_value(scene, dir);
      }
      if (h.hit()) {
        const double falloff = std::min(1.0, std::sqrt(12.0 / std::max(h.distance, 1.0)));
        active_base = detail::nir_reflectance(scene, h) * falloff *
                      (0.6 + 0.4 * std::abs(h.normal.dot(dir)));
      }
      for (int k = 0; k < 3; ++k) {
        const auto& gate = kGatedSlices[static_cast<std::size_t>(k)];
        const double active = h.hit() ? active_base * detail::band_weight(h.distance, gate[0], gate[1], gate[2]) : 0.0;
        const double amb = 0.18 * passive;
        f.gated.ambient.at(k, v, u) = static_cast<float>(amb);
        f.gated.slices.at(k, v, u) = static_cast<float>(std::clamp(active + amb, 0.0, 1.0));
      }
      f.gated.depth.at(0, v, u) = static_cast<float>(h.distance);
    }
  }

  f.boxes = ground_truth_boxes(scene, cam);
  return f;
}

}  // namespace fogfuse
