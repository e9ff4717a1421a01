#pragma once

// Local measurement entropy: Shannon entropy (bits) of the 8-bit histogram of
// each patch of a stream, broadcast back to pixel resolution.

#include <array>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <string>
#include <vector>

#include "fogfuse/error.hpp"
#include "fogfuse/tensor.hpp"

namespace fogfuse {

struct EntropyConfig {
  std::size_t patch_height = 16;  // M
  std::size_t patch_width = 16;   // N
  bool per_channel = false;       // average per-channel maps instead of histogramming the channel mean
  static constexpr std::size_t kBins = 256;
  static constexpr double kMaxBits = 8.0;
};

struct EntropyMap {
  Tensor values;  // [1,H,W], bits

  double mean() const {
    double s = 0;
    for (float v : values.data()) s += v;
    return values.size() ? s / static_cast<double>(values.size()) : 0.0;
  }
};

struct QuantizeDiagnostics {
  std::size_t clamped = 0;
};

/// Channel mean mapped to 0..255 by floor(v * 255 + 0.5); inputs outside [0,1]
/// are clamped and counted.
inline Tensor quantize8(const Tensor& stream, QuantizeDiagnostics* diag = nullptr) {
  detail::require_rank(stream, 3, "quantize8", "stream");
  const std::size_t C = stream.dim(0), H = stream.dim(1), W = stream.dim(2);
  Tensor out(Shape{1, H, W});
  const float* src = stream.ptr();
  float* dst = out.mutable_ptr();
  for (std::size_t i = 0; i < H * W; ++i) {
    double v = 0;
    for (std::size_t c = 0; c < C; ++c) v += src[c * H * W + i];
    v /= static_cast<double>(C);
    if (v < 0.0 || v > 1.0) {
      if (diag) ++diag->clamped;
      v = std::clamp(v, 0.0, 1.0);
    }
    dst[i] = static_cast<float>(std::floor(v * 255.0 + 0.5));
  }
  return out;
}

/// Entropy map of a quantized stream [1,H,W] with integer levels 0..255.
/// Patches that overhang the border count the missing pixels as level 0.
inline EntropyMap entropy_map(const Tensor& quantized, const EntropyConfig& cfg = {}) {
  detail::require_rank(quantized, 3, "entropy_map", "quantized stream");
  if (quantized.dim(0) != 1) throw ShapeError("entropy_map: expected one channel (dim 0)");
  if (cfg.patch_height == 0 || cfg.patch_width == 0) throw ShapeError("entropy_map: empty patch");
  const std::size_t H = quantized.dim(1), W = quantized.dim(2);
  const std::size_t M = cfg.patch_height, N = cfg.patch_width;
  const double norm = static_cast<double>(M * N);
  EntropyMap map{Tensor(Shape{1, H, W})};
  const float* q = quantized.ptr();
  float* out = map.values.mutable_ptr();
  std::array<std::uint32_t, EntropyConfig::kBins> hist{};
  for (std::size_t py = 0; py < H; py += M) {
    for (std::size_t px = 0; px < W; px += N) {
      hist.fill(0);
      std::size_t counted = 0;
      for (std::size_t y = py; y < std::min(py + M, H); ++y) {
        for (std::size_t x = px; x < std::min(px + N, W); ++x) {
          const int level = std::clamp(static_cast<int>(q[y * W + x]), 0, 255);
          ++hist[static_cast<std::size_t>(level)];
          ++counted;
        }
      }
      hist[0] += static_cast<std::uint32_t>(M * N - counted);
      double bits = 0.0;
      for (std::uint32_t count : hist) {
        if (count == 0) continue;
        const double p = count / norm;
        bits -= p * std::log2(p);
      }
      const float value = static_cast<float>(std::max(0.0, bits));
      for (std::size_t y = py; y < std::min(py + M, H); ++y) {
        for (std::size_t x = px; x < std::min(px + N, W); ++x) out[y * W + x] = value;
      }
    }
  }
  return map;
}

/// Quantizes then computes the entropy map of a raw [C,H,W] stream.
inline EntropyMap stream_entropy(const Tensor& stream, const EntropyConfig& cfg = {}) {
  if (!cfg.per_channel || stream.rank() != 3 || stream.dim(0) == 1) return entropy_map(quantize8(stream), cfg);
  const std::size_t C = stream.dim(0), HW = stream.dim(1) * stream.dim(2);
  EntropyMap sum{Tensor(Shape{1, stream.dim(1), stream.dim(2)})};
  for (std::size_t c = 0; c < C; ++c) {
    const Tensor plane(Shape{1, stream.dim(1), stream.dim(2)},
                       std::vector<float>(stream.ptr() + c * HW, stream.ptr() + (c + 1) * HW));
    const EntropyMap m = entropy_map(quantize8(plane), cfg);
    for (std::size_t i = 0; i < HW; ++i) sum.values.mutable_ptr()[i] += m.values[i] / static_cast<float>(C);
  }
  return sum;
}

/// Mean entropy of `stream` relative to the mean entropy of `reference`.
inline double normalized_entropy(const EntropyMap& stream, const EntropyMap& reference) {
  if (stream.values.shape() != reference.values.shape()) {
    throw ShapeError("normalized_entropy: map shapes differ, " + shape_string(stream.values.shape()) +
                     " vs " + shape_string(reference.values.shape()));
  }
  const double ref = reference.mean();
  if (!(ref > 0)) throw DataError("normalized_entropy: reference has zero entropy");
  return stream.mean() / ref;
}

inline double normalized_entropy(const Tensor& stream, const Tensor& reference,
                                 const EntropyConfig& cfg = {}) {
  return normalized_entropy(stream_entropy(stream, cfg), stream_entropy(reference, cfg));
}

/// Writes an entropy map as binary 8-bit PGM, 0..8 bits mapped to 0..255.
inline void write_entropy_pgm(const std::string& path, const EntropyMap& map) {
  const std::size_t H = map.values.dim(1), W = map.values.dim(2);
  std::ofstream os(path, std::ios::binary);
  if (!os) throw DataError("cannot open '" + path + "' for writing");
  os << "P5\n" << W << ' ' << H << "\n255\n";
  for (float v : map.values.data()) {
    const double scaled = std::clamp(v / EntropyConfig::kMaxBits, 0.0, 1.0) * 255.0;
    os.put(static_cast<char>(static_cast<unsigned char>(std::lround(scaled))));
  }
}

}  // namespace fogfuse
