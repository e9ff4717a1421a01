#pragma once

// Average precision with KITTI-style difficulty strata and the per-mode,
// per-weather table.

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fogfuse/error.hpp"
#include "fogfuse/frame.hpp"
#include "fogfuse/ssd.hpp"

namespace fogfuse {

enum class Difficulty { easy, moderate, hard };

inline constexpr std::array<Difficulty, 3> kAllDifficulties{Difficulty::easy, Difficulty::moderate,
                                                            Difficulty::hard};

inline std::string_view difficulty_name(Difficulty d) {
  switch (d) {
    case Difficulty::easy: return "easy";
    case Difficulty::moderate: return "moderate";
    case Difficulty::hard: return "hard";
  }
  return "?";
}

struct DifficultyRule {
  double min_height = 0;  // pixels
  double max_occlusion = 1;
  double max_truncation = 1;

  bool eligible(const GroundTruthBox& g) const {
    return g.box.height() >= min_height && g.occlusion <= max_occlusion && g.truncation <= max_truncation;
  }

  /// KITTI thresholds with pixel heights scaled from a 375-row image to `plane_height`.
  static DifficultyRule kitti(Difficulty d, double plane_height) {
    const double f = plane_height / 375.0;
    switch (d) {
      case Difficulty::easy: return {40.0 * f, 0.0, 0.15};
      case Difficulty::moderate: return {25.0 * f, 0.3, 0.3};
      case Difficulty::hard: return {25.0 * f, 0.5, 0.5};
    }
    return {};
  }
};

struct FrameResult {
  std::vector<Detection> detections;
  std::vector<GroundTruthBox> gts;
};

struct ApDiagnostics {
  std::size_t eligible_gts = 0;
  std::size_t true_positives = 0;
  std::size_t false_positives = 0;
  std::size_t ignored = 0;
};

/// Greedy matching per frame by descending score at IoU >= threshold, each gt
/// used once. Gts outside the stratum are ignore-neutral: detections matching
/// only them are dropped. AP is the mean interpolated precision over 40
/// recall points, in [0,100]; absent when no gt is eligible.
inline std::optional<double> average_precision(const std::vector<FrameResult>& frames,
                                               const DifficultyRule& rule, double iou_threshold = 0.5,
                                               ApDiagnostics* diag = nullptr, int recall_points = 40) {
  struct Scored {
    double score;
    std::size_t frame, index;
    bool tp;
  };
  std::vector<Scored> scored;
  std::size_t eligible = 0;
  ApDiagnostics local;
  for (std::size_t f = 0; f < frames.size(); ++f) {
    const auto& gts = frames[f].gts;
    std::vector<bool> ok(gts.size()), used(gts.size(), false);
    for (std::size_t j = 0; j < gts.size(); ++j) {
      ok[j] = gts[j].class_id == 1 && rule.eligible(gts[j]);
      eligible += ok[j];
    }
    std::vector<std::size_t> order(frames[f].detections.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
      return frames[f].detections[a].score > frames[f].detections[b].score;
    });
    for (std::size_t i : order) {
      const Detection& d = frames[f].detections[i];
      int best = -1;
      double best_iou = iou_threshold;
      bool hits_ignored = false;
      for (std::size_t j = 0; j < gts.size(); ++j) {
        const double v = iou(d.box, gts[j].box);
        if (v < iou_threshold) continue;
        if (!ok[j]) {
          hits_ignored = true;
          continue;
        }
        if (!used[j] && v >= best_iou) {
          if (best < 0 || v > best_iou) {
            best = static_cast<int>(j);
            best_iou = v;
          }
        }
      }
      if (best >= 0) {
        used[static_cast<std::size_t>(best)] = true;
        scored.push_back({d.score, f, i, true});
        ++local.true_positives;
      } else if (hits_ignored) {
        ++local.ignored;
      } else {
        scored.push_back({d.score, f, i, false});
        ++local.false_positives;
      }
    }
  }
  local.eligible_gts = eligible;
  if (diag) *diag = local;
  if (eligible == 0) return std::nullopt;

  std::stable_sort(scored.begin(), scored.end(), [](const Scored& a, const Scored& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.frame != b.frame ? a.frame < b.frame : a.index < b.index;
  });
  std::vector<double> precision, recall;
  std::size_t tp = 0;
  for (std::size_t k = 0; k < scored.size(); ++k) {
    tp += scored[k].tp;
    precision.push_back(static_cast<double>(tp) / static_cast<double>(k + 1));
    recall.push_back(static_cast<double>(tp) / static_cast<double>(eligible));
  }
  // Running maximum from the right gives the interpolated precision.
  for (std::size_t k = precision.size(); k-- > 1;) precision[k - 1] = std::max(precision[k - 1], precision[k]);
  double sum = 0.0;
  std::size_t k = 0;
  for (int r = 1; r <= recall_points; ++r) {
    const double target = static_cast<double>(r) / recall_points;
    while (k < recall.size() && recall[k] < target - 1e-12) ++k;
    if (k < recall.size()) sum += precision[k];
  }
  return 100.0 * sum / recall_points;
}

/// Rows are fusion modes, columns weather x difficulty.
struct ApTable {
  std::vector<std::string> rows;
  std::vector<WeatherKind> weathers;
  std::map<std::string, std::map<std::pair<WeatherKind, Difficulty>, std::optional<double>>> values;

  std::optional<double> get(const std::string& row, WeatherKind w, Difficulty d) const {
    auto it = values.find(row);
    if (it == values.end()) return std::nullopt;
    auto jt = it->second.find({w, d});
    return jt == it->second.end() ? std::nullopt : jt->second;
  }

  void set(const std::string& row, WeatherKind w, Difficulty d, std::optional<double> ap) {
    if (std::find(rows.begin(), rows.end(), row) == rows.end()) rows.push_back(row);
    if (std::find(weathers.begin(), weathers.end(), w) == weathers.end()) weathers.push_back(w);
    values[row][{w, d}] = ap;
  }

  std::string to_csv(const std::string& digest = {}) const {
    std::ostringstream os;
    if (!digest.empty()) os << "# config_digest=" << digest << "\n";
    os << "mode";
    for (WeatherKind w : weathers)
      for (Difficulty d : kAllDifficulties) os << ',' << weather_name(w) << '_' << difficulty_name(d);
    os << '\n';
    os.setf(std::ios::fixed);
    os.precision(2);
    for (const auto& r : rows) {
      os << r;
      for (WeatherKind w : weathers)
        for (Difficulty d : kAllDifficulties) {
          os << ',';
          if (auto v = get(r, w, d)) os << *v;
        }
      os << '\n';
    }
    return os.str();
  }
};

}  // namespace fogfuse
