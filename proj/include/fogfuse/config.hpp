#pragma once

// Run configuration: a flat `key = value` grammar with `[section]` headers.
// Every run writes the fully resolved config, and artifacts carry its digest.

#include <cmath>
#include <cstdio>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "fogfuse/binary_io.hpp"
#include "fogfuse/error.hpp"
#include "fogfuse/eval.hpp"
#include "fogfuse/fusion_net.hpp"
#include "fogfuse/scene.hpp"
#include "fogfuse/train.hpp"

namespace fogfuse {

struct RunConfig {
  // [plane]
  PlaneSize plane{156, 48};
  double reference_height = 375;  // difficulty heights are scaled by plane.height / reference_height

  // [model]
  std::vector<std::size_t> widths{8, 16, 24, 24, 24, 24};
  double min_scale = 0.08, max_scale = 0.8;
  std::vector<double> aspect_ratios{1.0, 0.5, 2.0};
  std::string mode = "entropy_deep";
  bool exchange_residual = true;

  // [train]
  TrainConfig train{.epochs = 4};
  std::size_t seeds = 3;  // ablation repeats

  // [data]
  std::uint64_t seed = 1;
  std::size_t train_frames = 400;
  std::size_t test_frames = 100;  // per weather split
  double light_fog_visibility = 300;
  double dense_fog_visibility = 40;
  double snow_rate = 120;
  double min_distance = 6, max_distance = 35;
  double train_min_ambient = 0.6;  // clear training frames draw daylight level from [this, 1]
  std::string dataset;             // directory; empty means <out>/dataset
  bool metric_lidar = false;

  // [eval]
  double iou_threshold = 0.5;
  DecodeConfig decode{};
  std::string checkpoint;

  // [entropy]
  std::vector<double> visibilities{std::numeric_limits<double>::infinity(), 50, 40, 30};
  std::size_t entropy_scenes = 50;
  bool dump_pgm = false;
  bool entropy_per_channel = false;

  NetConfig net_config() const {
    NetConfig c;
    c.plane = plane;
    c.branch.widths = widths;
    c.anchors.scales = AnchorConfig::linear_scales(kPyramidLevels, min_scale, max_scale);
    c.anchors.aspect_ratios = aspect_ratios;
    c.exchange_residual = exchange_residual;
    return c;
  }

  EntropyConfig entropy_config() const {
    EntropyConfig e;
    e.per_channel = entropy_per_channel;
    return e;
  }

  SceneConfig scene_config() const {
    SceneConfig s;
    s.min_distance = min_distance;
    s.max_distance = max_distance;
    return s;
  }

  DifficultyRule difficulty(Difficulty d) const {
    return DifficultyRule::kitti(d, static_cast<double>(plane.height) * 375.0 / reference_height);
  }

  std::string to_text() const;
  std::string digest() const {
    const std::string t = to_text();
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx",
                  static_cast<unsigned long long>(io::fnv1a(reinterpret_cast<const std::uint8_t*>(t.data()), t.size())));
    return hex;
  }

  void validate() const {
    if (plane.width <= 0 || plane.height <= 0) throw ConfigError("plane extents must be positive");
    pyramid_shapes(plane);
    BranchConfig b;
    b.widths = widths;
    b.validate();
    parse_fusion_mode(mode);
    if (!(train.learning_rate > 0)) throw ConfigError("train.learning_rate must be positive");
    if (train.weight_decay < 0) throw ConfigError("train.weight_decay must be non-negative");
    if (train.dropout_p < 0 || train.dropout_p > 1) throw ConfigError("train.dropout must lie in [0,1]");
    if (!(min_distance > 0 && max_distance > min_distance)) throw ConfigError("data distances must satisfy 0 < min < max");
    if (seeds == 0) throw ConfigError("train.seeds must be at least 1");
    if (!(dense_fog_visibility > 0 && dense_fog_visibility < 100)) {
      throw ConfigError("data.dense_fog_visibility must lie in (0,100)");
    }
    if (!(light_fog_visibility >= 100 && light_fog_visibility < 1000)) {
      throw ConfigError("data.light_fog_visibility must lie in [100,1000)");
    }
  }

  /// Applies `text`; errors name `source` and the line.
  void parse(const std::string& text, const std::string& source = "config");
};

namespace detail {

struct ConfigField {
  std::string key;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

inline std::string trim(const std::string& s) {
  const auto a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return {};
  const auto b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline double to_double(const std::string& v) {
  if (v == "inf") return std::numeric_limits<double>::infinity();
  std::size_t used = 0;
  const double d = std::stod(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return d;
}

inline std::uint64_t to_u64(const std::string& v) {
  if (v.empty() || v[0] == '-') throw std::invalid_argument(v);
  std::size_t used = 0;
  const auto u = std::stoull(v, &used);
  if (used != v.size()) throw std::invalid_argument(v);
  return u;
}

inline bool to_bool(const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw std::invalid_argument(v);
}

template <class T, class F>
std::vector<T> to_list(const std::string& v, F conv) {
  std::vector<T> out;
  std::istringstream s(v);
  std::string tok;
  while (std::getline(s, tok, ',')) out.push_back(static_cast<T>(conv(trim(tok))));
  return out;
}

inline std::string fmt(double v) {
  if (std::isinf(v)) return "inf";
  std::ostringstream os;
  os.precision(17);
  os << v;
  return os.str();
}

template <class T>
std::string fmt_list(const std::vector<T>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ",";
    if constexpr (std::is_floating_point_v<T>) s += fmt(v[i]);
    else s += std::to_string(v[i]);
  }
  return s;
}

#define FOGFUSE_DOUBLE(k, m) \
  {k, [](RunConfig& c, const std::string& v) { c.m = to_double(v); }, [](const RunConfig& c) { return fmt(c.m); }}
#define FOGFUSE_SIZE(k, m)                                                                 \
  {k, [](RunConfig& c, const std::string& v) { c.m = static_cast<decltype(c.m)>(to_u64(v)); }, \
   [](const RunConfig& c) { return std::to_string(c.m); }}
#define FOGFUSE_BOOL(k, m) \
  {k, [](RunConfig& c, const std::string& v) { c.m = to_bool(v); }, \
   [](const RunConfig& c) { return std::string(c.m ? "true" : "false"); }}

inline const std::vector<ConfigField>& config_fields() {
  static const std::vector<ConfigField> fields{
      {"plane.width", [](RunConfig& c, const std::string& v) { c.plane.width = static_cast<int>(to_u64(v)); },
       [](const RunConfig& c) { return std::to_string(c.plane.width); }},
      {"plane.height", [](RunConfig& c, const std::string& v) { c.plane.height = static_cast<int>(to_u64(v)); },
       [](const RunConfig& c) { return std::to_string(c.plane.height); }},
      FOGFUSE_DOUBLE("plane.reference_height", reference_height),
      {"model.widths", [](RunConfig& c, const std::string& v) { c.widths = to_list<std::size_t>(v, to_u64); },
       [](const RunConfig& c) { return fmt_list(c.widths); }},
      FOGFUSE_DOUBLE("model.min_scale", min_scale),
      FOGFUSE_DOUBLE("model.max_scale", max_scale),
      {"model.aspect_ratios",
       [](RunConfig& c, const std::string& v) { c.aspect_ratios = to_list<double>(v, to_double); },
       [](const RunConfig& c) { return fmt_list(c.aspect_ratios); }},
      {"model.mode", [](RunConfig& c, const std::string& v) { c.mode = v; },
       [](const RunConfig& c) { return c.mode; }},
      FOGFUSE_BOOL("model.exchange_residual", exchange_residual),
      FOGFUSE_DOUBLE("train.learning_rate", train.learning_rate),
      FOGFUSE_DOUBLE("train.momentum", train.momentum),
      FOGFUSE_DOUBLE("train.weight_decay", train.weight_decay),
      FOGFUSE_DOUBLE("train.dropout", train.dropout_p),
      FOGFUSE_DOUBLE("train.mining_ratio", train.mining_ratio),
      FOGFUSE_DOUBLE("train.grad_clip", train.grad_clip),
      FOGFUSE_SIZE("train.epochs", train.epochs),
      FOGFUSE_SIZE("train.log_every", train.log_every),
      FOGFUSE_SIZE("train.seeds", seeds),
      FOGFUSE_SIZE("data.seed", seed),
      FOGFUSE_SIZE("data.train_frames", train_frames),
      FOGFUSE_SIZE("data.test_frames", test_frames),
      FOGFUSE_DOUBLE("data.light_fog_visibility", light_fog_visibility),
      FOGFUSE_DOUBLE("data.dense_fog_visibility", dense_fog_visibility),
      FOGFUSE_DOUBLE("data.snow_rate", snow_rate),
      FOGFUSE_DOUBLE("data.min_distance", min_distance),
      FOGFUSE_DOUBLE("data.max_distance", max_distance),
      FOGFUSE_DOUBLE("data.train_min_ambient", train_min_ambient),
      {"data.dataset", [](RunConfig& c, const std::string& v) { c.dataset = v; },
       [](const RunConfig& c) { return c.dataset; }},
      FOGFUSE_BOOL("data.metric_lidar", metric_lidar),
      FOGFUSE_DOUBLE("eval.iou_threshold", iou_threshold),
      FOGFUSE_DOUBLE("eval.score_threshold", decode.score_threshold),
      FOGFUSE_DOUBLE("eval.nms_iou", decode.nms_iou),
      FOGFUSE_SIZE("eval.max_detections", decode.max_detections),
      FOGFUSE_SIZE("eval.pre_nms_top_k", decode.pre_nms_top_k),
      {"eval.checkpoint", [](RunConfig& c, const std::string& v) { c.checkpoint = v; },
       [](const RunConfig& c) { return c.checkpoint; }},
      {"entropy.visibilities",
       [](RunConfig& c, const std::string& v) { c.visibilities = to_list<double>(v, to_double); },
       [](const RunConfig& c) { return fmt_list(c.visibilities); }},
      FOGFUSE_SIZE("entropy.scenes", entropy_scenes),
      FOGFUSE_BOOL("entropy.dump_pgm", dump_pgm),
      FOGFUSE_BOOL("entropy.per_channel", entropy_per_channel),
  };
  return fields;
}

#undef FOGFUSE_DOUBLE
#undef FOGFUSE_SIZE
#undef FOGFUSE_BOOL

}  // namespace detail

inline std::string RunConfig::to_text() const {
  std::ostringstream os;
  std::string section;
  for (const auto& f : detail::config_fields()) {
    const auto dot = f.key.find('.');
    const std::string sec = f.key.substr(0, dot);
    if (sec != section) {
      os << (section.empty() ? "" : "\n") << '[' << sec << "]\n";
      section = sec;
    }
    os << f.key.substr(dot + 1) << " = " << f.get(*this) << '\n';
  }
  return os.str();
}

inline void RunConfig::parse(const std::string& text, const std::string& source) {
  std::istringstream in(text);
  std::string raw, section;
  std::size_t lineno = 0;
  auto fail = [&](const std::string& msg) {
    throw ConfigError(source + ":" + std::to_string(lineno) + ": " + msg);
  };
  while (std::getline(in, raw)) {
    ++lineno;
    std::string line = detail::trim(raw.substr(0, raw.find('#')));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') fail("unterminated section header");
      section = detail::trim(line.substr(1, line.size() - 2));
      if (section.empty()) fail("empty section name");
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) fail("expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (key.empty()) fail("missing key");
    const std::string full = section.empty() ? key : section + "." + key;
    const auto& fields = detail::config_fields();
    auto it = std::find_if(fields.begin(), fields.end(), [&](const auto& f) { return f.key == full; });
    if (it == fields.end()) fail("unknown key '" + full + "'");
    try {
      it->set(*this, value);
    } catch (const std::logic_error&) {
      fail("bad value '" + value + "' for " + full);
    }
  }
  try {
    validate();
  } catch (const ConfigError& e) {
    throw ConfigError(source + ": " + e.what());
  }
}

}  // namespace fogfuse
