#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <optional>

#include "fogfuse/error.hpp"

namespace fogfuse {

struct Vec3 {
  double x = 0, y = 0, z = 0;

  friend Vec3 operator+(Vec3 a, Vec3 b) { return {a.x + b.x, a.y + b.y, a.z + b.z}; }
  friend Vec3 operator-(Vec3 a, Vec3 b) { return {a.x - b.x, a.y - b.y, a.z - b.z}; }
  friend Vec3 operator*(double s, Vec3 a) { return {s * a.x, s * a.y, s * a.z}; }
  double dot(Vec3 o) const { return x * o.x + y * o.y + z * o.z; }
  double norm() const { return std::sqrt(dot(*this)); }
};

/// Row-major 3x3 matrix.
struct Mat3 {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  static Mat3 identity() { return {}; }
  double operator()(int r, int c) const { return m[r * 3 + c]; }
  double& operator()(int r, int c) { return m[r * 3 + c]; }
  friend bool operator==(const Mat3&, const Mat3&) = default;

  Vec3 operator*(Vec3 v) const {
    return {m[0] * v.x + m[1] * v.y + m[2] * v.z, m[3] * v.x + m[4] * v.y + m[5] * v.z,
            m[6] * v.x + m[7] * v.y + m[8] * v.z};
  }

  Mat3 operator*(const Mat3& o) const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) {
        double s = 0;
        for (int k = 0; k < 3; ++k) s += (*this)(i, k) * o(k, j);
        r(i, j) = s;
      }
    return r;
  }

  double determinant() const {
    return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) +
           m[2] * (m[3] * m[7] - m[4] * m[6]);
  }

  /// Inverse via the adjugate. Throws DataError when |det| <= min_det.
  Mat3 inverse(double min_det = 1e-9) const {
    const double det = determinant();
    if (!(std::abs(det) > min_det)) {
      throw DataError("matrix is singular (determinant " + std::to_string(det) + ")");
    }
    Mat3 r;
    r(0, 0) = (m[4] * m[8] - m[5] * m[7]) / det;
    r(0, 1) = (m[2] * m[7] - m[1] * m[8]) / det;
    r(0, 2) = (m[1] * m[5] - m[2] * m[4]) / det;
    r(1, 0) = (m[5] * m[6] - m[3] * m[8]) / det;
    r(1, 1) = (m[0] * m[8] - m[2] * m[6]) / det;
    r(1, 2) = (m[2] * m[3] - m[0] * m[5]) / det;
    r(2, 0) = (m[3] * m[7] - m[4] * m[6]) / det;
    r(2, 1) = (m[1] * m[6] - m[0] * m[7]) / det;
    r(2, 2) = (m[0] * m[4] - m[1] * m[3]) / det;
    return r;
  }

  static Mat3 rotation_z(double yaw) {
    const double c = std::cos(yaw), s = std::sin(yaw);
    Mat3 r;
    r.m = {c, -s, 0, s, c, 0, 0, 0, 1};
    return r;
  }

  Mat3 transposed() const {
    Mat3 r;
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 3; ++j) r(i, j) = (*this)(j, i);
    return r;
  }
};

/// Axis-aligned image box in pixels, x1 < x2 and y1 < y2 when valid.
struct Box2D {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double area() const { return std::max(0.0, width()) * std::max(0.0, height()); }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }

  static Box2D from_center(double cx, double cy, double w, double h) {
    return {cx - 0.5 * w, cy - 0.5 * h, cx + 0.5 * w, cy + 0.5 * h};
  }

  Box2D clamped(double width_px, double height_px) const {
    return {std::clamp(x1, 0.0, width_px), std::clamp(y1, 0.0, height_px),
            std::clamp(x2, 0.0, width_px), std::clamp(y2, 0.0, height_px)};
  }

  friend bool operator==(const Box2D&, const Box2D&) = default;
};

/// Intersection over union; 0 for disjoint or degenerate boxes.
inline double iou(const Box2D& a, const Box2D& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

/// Rigid transform from the vehicle frame into a sensor's mounting frame.
struct Pose {
  Mat3 rotation = Mat3::identity();
  Vec3 translation{};

  Vec3 apply(Vec3 p) const { return rotation * p + translation; }
};

/// Pinhole intrinsics plus per-sensor extrinsics.
///
/// Vehicle frame: x forward, y left, z up, origin at the sensor cluster.
/// Image frame: u to the right, v down, pixel (col, row) covers [col, col+1).
struct PinholeIntrinsics {
  double fx = 1, fy = 1, cx = 0, cy = 0;
  int width = 1, height = 1;

  /// Projects a vehicle-frame point; empty when behind the image plane.
  std::optional<std::array<double, 2>> project(Vec3 p) const {
    if (p.x <= 1e-6) return std::nullopt;
    return std::array<double, 2>{cx - fx * p.y / p.x, cy - fy * p.z / p.x};
  }

  /// Direction (not normalized) of the ray through image point (u, v).
  Vec3 ray(double u, double v) const { return {1.0, -(u - cx) / fx, -(v - cy) / fy}; }

  Mat3 matrix() const {
    Mat3 k;
    k.m = {fx, 0, cx, 0, fy, cy, 0, 0, 1};
    return k;
  }
};

struct CalibrationModel {
  PinholeIntrinsics camera;
  PinholeIntrinsics gated;
  Pose lidar_pose;
  Pose radar_pose;
  Pose gated_pose;
  double max_range = 120.0;
  double z_min = -2.0;
  double z_max = 6.0;
  bool metric_lidar = false;  // lidar range and height planes in metres instead of [0,1]

  void validate() const {
    for (const auto* k : {&camera, &gated}) {
      if (!(k->fx > 0) || !(k->fy > 0)) throw DataError("calibration: focal lengths must be positive");
    }
    if (!(max_range > 0) || !(z_max > z_min)) throw DataError("calibration: invalid normalization bounds");
  }

  /// Homography mapping gated pixels into camera pixels (co-located sensors).
  Mat3 gated_to_camera() const {
    return camera.matrix() * gated.matrix().inverse();
  }

  /// Default rig for a camera plane of the given size with a 60 degree field of view.
  static CalibrationModel for_plane(int width, int height) {
    CalibrationModel c;
    const double f = 0.5 * width / std::tan(30.0 * M_PI / 180.0);
    c.camera = {f, f, 0.5 * width, 0.5 * height, width, height};
    // Gated imager: coarser pixels, same field of view, slightly offset principal point.
    const int gw = static_cast<int>(std::lround(width * 0.85));
    const int gh = static_cast<int>(std::lround(height * 0.85));
    const double gf = f * 0.85;
    c.gated = {gf, gf, 0.5 * gw + 1.5, 0.5 * gh - 1.0, gw, gh};
    return c;
  }
};

}  // namespace fogfuse
