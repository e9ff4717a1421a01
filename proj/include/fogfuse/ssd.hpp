#pragma once

// Single-shot detector head machinery: anchor grid, target assignment,
// mined softmax cross-entropy, Huber box regression, decoding and NMS.

#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "fogfuse/error.hpp"
#include "fogfuse/frame.hpp"
#include "fogfuse/geometry.hpp"
#include "fogfuse/tensor.hpp"

namespace fogfuse {

struct LevelShape {
  std::size_t height = 0, width = 0;
  friend bool operator==(const LevelShape&, const LevelShape&) = default;
};

struct AnchorConfig {
  std::vector<double> scales;                    // fraction of plane height, one per level
  std::vector<double> aspect_ratios{1.0, 0.5, 2.0};  // width / height

  /// Linearly spaced scales from `lo` to `hi` over `levels` levels.
  static std::vector<double> linear_scales(std::size_t levels, double lo = 0.08, double hi = 0.8) {
    std::vector<double> s(levels);
    for (std::size_t l = 0; l < levels; ++l) {
      s[l] = levels > 1 ? lo + (hi - lo) * static_cast<double>(l) / static_cast<double>(levels - 1) : lo;
    }
    return s;
  }
};

struct AnchorSet {
  std::vector<Box2D> boxes;  // ordered by (level, y, x, anchor)
  std::vector<LevelShape> levels;
  std::vector<std::size_t> level_offsets;
  std::size_t per_cell = 0;

  std::size_t size() const { return boxes.size(); }
};

inline AnchorSet make_anchors(const std::vector<LevelShape>& levels, double plane_width,
                              double plane_height, const AnchorConfig& cfg) {
  const std::vector<double> scales =
      cfg.scales.empty() ? AnchorConfig::linear_scales(levels.size()) : cfg.scales;
  if (scales.size() != levels.size()) {
    throw ConfigError("anchors: " + std::to_string(scales.size()) + " scales for " +
                      std::to_string(levels.size()) + " levels");
  }
  if (cfg.aspect_ratios.empty()) throw ConfigError("anchors: no aspect ratios");
  AnchorSet set;
  set.levels = levels;
  set.per_cell = cfg.aspect_ratios.size();
  for (std::size_t l = 0; l < levels.size(); ++l) {
    set.level_offsets.push_back(set.boxes.size());
    const double sy = plane_height / static_cast<double>(levels[l].height);
    const double sx = plane_width / static_cast<double>(levels[l].width);
    const double side = scales[l] * plane_height;
    for (std::size_t y = 0; y < levels[l].height; ++y) {
      for (std::size_t x = 0; x < levels[l].width; ++x) {
        for (double r : cfg.aspect_ratios) {
          set.boxes.push_back(Box2D::from_center((x + 0.5) * sx, (y + 0.5) * sy, side * std::sqrt(r),
                                                 side / std::sqrt(r)));
        }
      }
    }
  }
  return set;
}

enum class AnchorLabel { negative, positive, ignore };

struct AnchorTarget {
  AnchorLabel label = AnchorLabel::negative;
  int class_id = 0;  // 0 = background
  int gt = -1;
  std::array<double, 4> regression{0, 0, 0, 0};
};

/// (dcx / w_a, dcy / h_a, log(w / w_a), log(h / h_a)).
inline std::array<double, 4> encode_box(const Box2D& anchor, const Box2D& box) {
  return {(box.cx() - anchor.cx()) / anchor.width(), (box.cy() - anchor.cy()) / anchor.height(),
          std::log(box.width() / anchor.width()), std::log(box.height() / anchor.height())};
}

inline Box2D decode_box(const Box2D& anchor, const std::array<double, 4>& d) {
  const double cx = anchor.cx() + d[0] * anchor.width();
  const double cy = anchor.cy() + d[1] * anchor.height();
  const double w = anchor.width() * std::exp(std::min(d[2], 8.0));
  const double h = anchor.height() * std::exp(std::min(d[3], 8.0));
  return Box2D::from_center(cx, cy, w, h);
}

/// IoU >= threshold with the best ground truth, plus each ground truth's best
/// unclaimed anchor forced positive. Ties resolve to the lower index.
inline std::vector<AnchorTarget> match_anchors(const AnchorSet& anchors,
                                               const std::vector<GroundTruthBox>& gts,
                                               double threshold = 0.5) {
  const std::size_t N = anchors.size();
  std::vector<AnchorTarget> targets(N);
  if (gts.empty()) return targets;
  const std::size_t G = gts.size();
  std::vector<double> table(N * G);
  std::vector<double> best_iou(N, 0.0);
  std::vector<int> best_gt(N, -1);
  for (std::size_t i = 0; i < N; ++i) {
    for (std::size_t j = 0; j < G; ++j) {
      const double v = iou(anchors.boxes[i], gts[j].box);
      table[i * G + j] = v;
      if (v > best_iou[i]) {
        best_iou[i] = v;
        best_gt[i] = static_cast<int>(j);
      }
    }
  }
  for (std::size_t i = 0; i < N; ++i) {
    if (best_gt[i] >= 0 && best_iou[i] >= threshold) {
      targets[i].label = AnchorLabel::positive;
      targets[i].gt = best_gt[i];
    }
  }
  // Forced best anchors, in gt order, skipping anchors an earlier gt claimed.
  std::vector<bool> forced(N, false);
  for (std::size_t j = 0; j < G && j < N; ++j) {
    std::size_t arg = N;
    for (std::size_t i = 0; i < N; ++i) {
      if (!forced[i] && (arg == N || table[i * G + j] > table[arg * G + j])) arg = i;
    }
    forced[arg] = true;
    targets[arg].label = AnchorLabel::positive;
    targets[arg].gt = static_cast<int>(j);
  }
  for (std::size_t i = 0; i < N; ++i) {
    if (targets[i].label != AnchorLabel::positive) continue;
    const GroundTruthBox& g = gts[static_cast<std::size_t>(targets[i].gt)];
    targets[i].class_id = g.class_id;
    targets[i].regression = encode_box(anchors.boxes[i], g.box);
  }
  return targets;
}

// ---------------------------------------------------------------------------
// Losses

/// Sum over rows of weight_i * (-log softmax(logits_i)[label_i]); rows with
/// weight 0 contribute nothing.
template <class T>
BasicTensor<T> weighted_softmax_cross_entropy(const BasicTensor<T>& logits,
                                              const std::vector<int>& labels,
                                              const std::vector<double>& weights) {
  detail::require_rank(logits, 2, "softmax_cross_entropy", "logits");
  const std::size_t N = logits.dim(0), K = logits.dim(1);
  if (labels.size() != N || weights.size() != N) {
    throw ShapeError("softmax_cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                     std::to_string(N) + " rows (dim 0)");
  }
  std::vector<double> probs(N * K);
  double total = 0.0;
  const T* x = logits.ptr();
  for (std::size_t i = 0; i < N; ++i) {
    const T* row = x + i * K;
    const double m = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - m);
    for (std::size_t k = 0; k < K; ++k) probs[i * K + k] = std::exp(row[k] - m) / z;
    if (weights[i] != 0.0) {
      const auto label = static_cast<std::size_t>(labels[i]);
      if (labels[i] < 0 || label >= K) throw ShapeError("softmax_cross_entropy: label outside classes");
      total += weights[i] * (m + std::log(z) - row[label]);
    }
  }
  BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(total));
  if (detail::tracking(logits)) {
    detail::record("softmax_cross_entropy", out,
                   [logits, out, labels, weights, probs = std::move(probs), K]() mutable {
                     if (!out.has_grad()) return;
                     const double g = out.grad()[0];
                     T* gx = logits.mutable_grad().data();
                     for (std::size_t i = 0; i < labels.size(); ++i) {
                       if (weights[i] == 0.0) continue;
                       for (std::size_t k = 0; k < K; ++k) {
                         const double onehot = static_cast<int>(k) == labels[i] ? 1.0 : 0.0;
                         gx[i * K + k] += static_cast<T>(g * weights[i] * (probs[i * K + k] - onehot));
                       }
                     }
                   });
  }
  return out;
}

inline double huber(double x) {
  const double a = std::abs(x);
  return a <= 1.0 ? 0.5 * x * x : a - 0.5;
}

/// Sum over rows and columns of weight_i * huber(pred - target).
template <class T>
BasicTensor<T> weighted_huber(const BasicTensor<T>& pred, const std::vector<double>& target,
                              const std::vector<double>& weights) {
  detail::require_rank(pred, 2, "huber", "predictions");
  const std::size_t N = pred.dim(0), V = pred.dim(1);
  if (target.size() != N * V || weights.size() != N) {
    throw ShapeError("huber: target/weight sizes do not match predictions " + shape_string(pred.shape()));
  }
  const T* p = pred.ptr();
  double total = 0.0;
  for (std::size_t i = 0; i < N; ++i) {
    if (weights[i] == 0.0) continue;
    for (std::size_t v = 0; v < V; ++v) total += weights[i] * huber(p[i * V + v] - target[i * V + v]);
  }
  BasicTensor<T> out = BasicTensor<T>::scalar(static_cast<T>(total));
  if (detail::tracking(pred)) {
    detail::record("huber", out, [pred, out, target, weights, V]() mutable {
      if (!out.has_grad()) return;
      const double g = out.grad()[0];
      const T* p = pred.ptr();
      T* gp = pred.mutable_grad().data();
      for (std::size_t i = 0; i < weights.size(); ++i) {
        if (weights[i] == 0.0) continue;
        for (std::size_t v = 0; v < V; ++v) {
          const double r = p[i * V + v] - target[i * V + v];
          gp[i * V + v] += static_cast<T>(g * weights[i] * std::clamp(r, -1.0, 1.0));
        }
      }
    });
  }
  return out;
}

template <class T>
struct DetectionLoss {
  BasicTensor<T> classification;
  BasicTensor<T> regression;
  std::size_t positives = 0;
  std::size_t negatives_kept = 0;

  BasicTensor<T> total() const { return add(classification, regression); }
};

/// Negatives ranked by their own cross-entropy, highest first, ties by index.
template <class T>
std::vector<std::size_t> mine_negatives(const BasicTensor<T>& logits,
                                        const std::vector<AnchorTarget>& targets,
                                        std::size_t keep) {
  const std::size_t K = logits.dim(1);
  const T* x = logits.ptr();
  std::vector<std::pair<double, std::size_t>> neg;
  for (std::size_t i = 0; i < targets.size(); ++i) {
    if (targets[i].label != AnchorLabel::negative) continue;
    const T* row = x + i * K;
    const double m = *std::max_element(row, row + K);
    double z = 0.0;
    for (std::size_t k = 0; k < K; ++k) z += std::exp(row[k] - m);
    neg.emplace_back(m + std::log(z) - row[0], i);
  }
  keep = std::min(keep, neg.size());
  auto order = [](const auto& a, const auto& b) {
    return a.first != b.first ? a.first > b.first : a.second < b.second;
  };
  std::partial_sort(neg.begin(), neg.begin() + static_cast<std::ptrdiff_t>(keep), neg.end(), order);
  std::vector<std::size_t> idx(keep);
  for (std::size_t k = 0; k < keep; ++k) idx[k] = neg[k].second;
  return idx;
}

/// Mined classification loss and Huber regression loss, both normalized by
/// max(#positives, 1).
template <class T>
DetectionLoss<T> detection_loss(const BasicTensor<T>& logits, const BasicTensor<T>& regression,
                                const std::vector<AnchorTarget>& targets, double mining_ratio = 5.0) {
  const std::size_t N = targets.size();
  if (logits.dim(0) != N || regression.dim(0) != N) {
    throw ShapeError("detection_loss: " + std::to_string(N) + " targets but logits " +
                     shape_string(logits.shape()) + " and regression " + shape_string(regression.shape()));
  }
  std::size_t pos = 0;
  for (const auto& t : targets) pos += t.label == AnchorLabel::positive;
  const double norm = 1.0 / static_cast<double>(std::max<std::size_t>(pos, 1));
  const auto kept = mine_negatives(logits, targets,
                                   static_cast<std::size_t>(std::floor(mining_ratio * static_cast<double>(pos))));
  std::vector<int> labels(N, 0);
  std::vector<double> cls_w(N, 0.0), reg_w(N, 0.0), reg_t(N * 4, 0.0);
  for (std::size_t i = 0; i < N; ++i) {
    if (targets[i].label != AnchorLabel::positive) continue;
    labels[i] = targets[i].class_id;
    cls_w[i] = norm;
    reg_w[i] = norm;
    for (std::size_t v = 0; v < 4; ++v) reg_t[i * 4 + v] = targets[i].regression[v];
  }
  for (std::size_t i : kept) cls_w[i] = norm;
  DetectionLoss<T> out;
  out.classification = weighted_softmax_cross_entropy(logits, labels, cls_w);
  out.regression = weighted_huber(regression, reg_t, reg_w);
  out.positives = pos;
  out.negatives_kept = kept.size();
  return out;
}

// ---------------------------------------------------------------------------
// Inference

struct Detection {
  int class_id = 1;
  double score = 0;
  Box2D box;
};

struct DecodeConfig {
  double score_threshold = 0.05;
  double nms_iou = 0.5;
  std::size_t max_detections = 100;
  std::size_t pre_nms_top_k = 400;
};

/// Greedy NMS over candidates already sorted by descending score.
inline std::vector<Detection> greedy_nms(const std::vector<Detection>& sorted, double iou_threshold) {
  std::vector<Detection> kept;
  for (const Detection& d : sorted) {
    bool suppressed = false;
    for (const Detection& k : kept) {
      if (iou(k.box, d.box) > iou_threshold) {
        suppressed = true;
        break;
      }
    }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

inline std::vector<Detection> decode_and_nms(const Tensor& logits, const Tensor& regression,
                                             const AnchorSet& anchors, double plane_width,
                                             double plane_height, const DecodeConfig& cfg = {}) {
  const std::size_t N = anchors.size(), K = logits.dim(1);
  if (logits.dim(0) != N || regression.dim(0) != N || regression.dim(1) != 4) {
    throw ShapeError("decode_and_nms: head outputs do not match " + std::to_string(N) + " anchors");
  }
  auto by_score = [](const Detection& a, const Detection& b) { return a.score > b.score; };
  std::vector<Detection> all;
  const float* x = logits.ptr();
  const float* r = regression.ptr();
  for (std::size_t k = 1; k < K; ++k) {
    std::vector<std::pair<double, std::size_t>> cand;
    for (std::size_t i = 0; i < N; ++i) {
      const float* row = x + i * K;
      const double m = *std::max_element(row, row + K);
      double z = 0.0;
      for (std::size_t c = 0; c < K; ++c) z += std::exp(row[c] - m);
      const double s = std::exp(row[k] - m) / z;
      if (s >= cfg.score_threshold) cand.emplace_back(s, i);
    }
    std::stable_sort(cand.begin(), cand.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
    if (cand.size() > cfg.pre_nms_top_k) cand.resize(cfg.pre_nms_top_k);
    std::vector<Detection> dets;
    for (const auto& [s, i] : cand) {
      const std::array<double, 4> d{r[i * 4], r[i * 4 + 1], r[i * 4 + 2], r[i * 4 + 3]};
      const Box2D b = decode_box(anchors.boxes[i], d).clamped(plane_width, plane_height);
      if (b.area() <= 0) continue;
      dets.push_back({static_cast<int>(k), s, b});
    }
    for (const Detection& d : greedy_nms(dets, cfg.nms_iou)) all.push_back(d);
  }
  std::stable_sort(all.begin(), all.end(), by_score);
  if (all.size() > cfg.max_detections) all.resize(cfg.max_detections);
  return all;
}

}  // namespace fogfuse
