#pragma once

// Projection of every sensor into the camera image plane. Pixels without a
// measurement are encoded as exactly zero in every plane.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <tuple>

#include "fogfuse/frame.hpp"
#include "fogfuse/geometry.hpp"
#include "fogfuse/tensor.hpp"

namespace fogfuse {

struct EncodingDiagnostics {
  std::size_t radar_out_of_view = 0;
  std::size_t lidar_out_of_view = 0;
};

struct PlaneSize {
  int width = 0;
  int height = 0;
  friend bool operator==(const PlaneSize&, const PlaneSize&) = default;
};

/// Lidar planes: normalized range, normalized height, intensity. Nearest point wins.
/// With `calib.metric_lidar` range and height stay in metres.
inline Tensor project_lidar(const LidarPointSet& cloud, const CalibrationModel& calib,
                            PlaneSize size, EncodingDiagnostics* diag = nullptr) {
  const std::size_t H = size.height, W = size.width;
  Tensor out = Tensor::zeros({3, H, W});
  // Best (range, height, intensity) per pixel; lexicographic minimum keeps the
  // result independent of point order.
  std::vector<std::tuple<double, double, double>> best(H * W, {INFINITY, 0.0, 0.0});
  PinholeIntrinsics cam = calib.camera;
  const double sx = static_cast<double>(W) / cam.width;
  const double sy = static_cast<double>(H) / cam.height;
  for (const LidarPoint& p : cloud.points) {
    const double r = p.range();
    if (!(r > 0)) continue;
    const Vec3 v = calib.lidar_pose.apply({p.x, p.y, p.z});
    const auto uv = cam.project(v);
    if (!uv) {
      if (diag) ++diag->lidar_out_of_view;
      continue;
    }
    const double u = (*uv)[0] * sx, w = (*uv)[1] * sy;
    if (u < 0 || w < 0 || u >= W || w >= H) {
      if (diag) ++diag->lidar_out_of_view;
      continue;
    }
    const std::size_t col = static_cast<std::size_t>(u), row = static_cast<std::size_t>(w);
    const double height =
        calib.metric_lidar ? v.z : std::clamp((v.z - calib.z_min) / (calib.z_max - calib.z_min), 0.0, 1.0);
    const auto candidate = std::make_tuple(r, height, std::clamp(p.intensity, 0.0, 1.0));
    auto& slot = best[row * W + col];
    if (candidate < slot) slot = candidate;
  }
  float* d = out.mutable_ptr();
  for (std::size_t i = 0; i < H * W; ++i) {
    const auto& [r, h, inten] = best[i];
    if (!std::isfinite(r)) continue;
    d[i] = static_cast<float>(calib.metric_lidar ? r : std::clamp(r / calib.max_range, 0.0, 1.0));
    d[H * W + i] = static_cast<float>(h);
    d[2 * H * W + i] = static_cast<float>(inten);
  }
  return out;
}

/// Radar planes: normalized range and amplitude, replicated down each column.
inline Tensor replicate_radar(const RadarScan& scan, const CalibrationModel& calib, PlaneSize size,
                              EncodingDiagnostics* diag = nullptr) {
  const std::size_t H = size.height, W = size.width;
  Tensor out = Tensor::zeros({2, H, W});
  std::vector<std::pair<double, double>> best(W, {INFINITY, 0.0});
  const PinholeIntrinsics& cam = calib.camera;
  const double sx = static_cast<double>(W) / cam.width;
  for (const RadarDetection& det : scan.detections) {
    const double az = det.azimuth_deg * M_PI / 180.0;
    const Vec3 dir = calib.radar_pose.rotation * Vec3{std::cos(az), std::sin(az), 0.0};
    if (dir.x <= 1e-9) {
      if (diag) ++diag->radar_out_of_view;
      continue;
    }
    const double u = (cam.cx - cam.fx * dir.y / dir.x) * sx;
    if (u < 0 || u >= W || !(det.range > 0)) {
      if (diag) ++diag->radar_out_of_view;
      continue;
    }
    auto& slot = best[static_cast<std::size_t>(u)];
    const std::pair<double, double> candidate{det.range, std::clamp(det.amplitude, 0.0, 1.0)};
    if (candidate < slot) slot = candidate;
  }
  float* d = out.mutable_ptr();
  for (std::size_t col = 0; col < W; ++col) {
    if (!std::isfinite(best[col].first)) continue;
    const float r = static_cast<float>(std::clamp(best[col].first / calib.max_range, 0.0, 1.0));
    const float a = static_cast<float>(best[col].second);
    for (std::size_t row = 0; row < H; ++row) {
      d[row * W + col] = r;
      d[H * W + row * W + col] = a;
    }
  }
  return out;
}

/// Bilinear sample at pixel-index coordinates; 0 outside [0, w-1] x [0, h-1].
inline float sample_bilinear(const Image& img, int channel, double x, double y) {
  if (!(x >= 0) || !(y >= 0) || x > img.width - 1 || y > img.height - 1) return 0.0f;
  const int x0 = static_cast<int>(x), y0 = static_cast<int>(y);
  const int x1 = std::min(x0 + 1, img.width - 1), y1 = std::min(y0 + 1, img.height - 1);
  const double fx = x - x0, fy = y - y0;
  const double top = (1 - fx) * img.at(channel, y0, x0) + fx * img.at(channel, y0, x1);
  const double bottom = (1 - fx) * img.at(channel, y1, x0) + fx * img.at(channel, y1, x1);
  return static_cast<float>((1 - fy) * top + fy * bottom);
}

/// Inverse warp of an image through `homography` (source -> destination,
/// continuous pixel coordinates where pixel i spans [i, i+1)).
inline Image warp_image(const Image& src, const Mat3& homography, PlaneSize size) {
  const Mat3 inv = homography.inverse();
  Image dst(src.channels, size.height, size.width);
  for (int v = 0; v < size.height; ++v) {
    for (int u = 0; u < size.width; ++u) {
      const Vec3 p = inv * Vec3{u + 0.5, v + 0.5, 1.0};
      if (!(std::abs(p.z) > 1e-12)) continue;
      const double x = p.x / p.z - 0.5, y = p.y / p.z - 0.5;
      for (int c = 0; c < src.channels; ++c) dst.at(c, v, u) = sample_bilinear(src, c, x, y);
    }
  }
  return dst;
}

/// Gated slices warped into the camera plane.
inline Tensor warp_gated(const GatedSlices& gated, PlaneSize size) {
  if (!(std::abs(gated.homography.determinant()) > 1e-9)) {
    throw DataError("warp_gated: homography is singular");
  }
  const Image warped = warp_image(gated.slices, gated.homography, size);
  std::vector<float> values(warped.values);
  for (float& v : values) v = std::clamp(v, 0.0f, 1.0f);
  return Tensor(Shape{static_cast<std::size_t>(warped.channels),
                      static_cast<std::size_t>(size.height), static_cast<std::size_t>(size.width)},
                std::move(values));
}

inline Tensor camera_tensor(const Image& camera) {
  std::vector<float> values(camera.values);
  for (float& v : values) v = std::clamp(v, 0.0f, 1.0f);
  return Tensor(Shape{static_cast<std::size_t>(camera.channels),
                      static_cast<std::size_t>(camera.height), static_cast<std::size_t>(camera.width)},
                std::move(values));
}

/// All four streams on the camera plane.
struct EncodedFrame {
  Tensor camera;  // [3,H,W]
  Tensor lidar;   // [3,H,W] depth, height, intensity
  Tensor radar;   // [2,H,W] range, amplitude
  Tensor gated;   // [3,H,W]

  Tensor& stream(Stream s) {
    switch (s) {
      case Stream::camera: return camera;
      case Stream::lidar: return lidar;
      case Stream::radar: return radar;
      case Stream::gated: return gated;
    }
    return camera;
  }
  const Tensor& stream(Stream s) const { return const_cast<EncodedFrame*>(this)->stream(s); }
};

inline std::size_t stream_channels(Stream s) { return s == Stream::radar ? 2 : 3; }

inline EncodedFrame encode_frame(const MultimodalFrame& frame, const CalibrationModel& calib,
                                 EncodingDiagnostics* diag = nullptr) {
  const PlaneSize size{frame.camera.width, frame.camera.height};
  EncodedFrame enc;
  enc.camera = camera_tensor(frame.camera);
  enc.lidar = project_lidar(frame.lidar, calib, size, diag);
  enc.radar = replicate_radar(frame.radar, calib, size, diag);
  enc.gated = warp_gated(frame.gated, size);
  return enc;
}

}  // namespace fogfuse
