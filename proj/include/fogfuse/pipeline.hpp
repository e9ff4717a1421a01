#pragma once

// End-to-end steps shared by the command line tool and the acceptance run:
// dataset generation, sample preparation, training, evaluation, ablation and
// the entropy sweep.

#include <algorithm>
#include <filesystem>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "fogfuse/checkpoint.hpp"
#include "fogfuse/config.hpp"
#include "fogfuse/dataset.hpp"
#include "fogfuse/encoding.hpp"
#include "fogfuse/entropy.hpp"
#include "fogfuse/eval.hpp"
#include "fogfuse/train.hpp"
#include "fogfuse/weather.hpp"

namespace fogfuse {

inline CalibrationModel calibration_for(const RunConfig& cfg) {
  CalibrationModel c = CalibrationModel::for_plane(cfg.plane.width, cfg.plane.height);
  c.metric_lidar = cfg.metric_lidar;
  return c;
}

/// The test weathers in table order.
inline std::vector<WeatherCondition> test_conditions(const RunConfig& cfg) {
  return {WeatherCondition::clear(), WeatherCondition::fog(cfg.light_fog_visibility),
          WeatherCondition::fog(cfg.dense_fog_visibility), WeatherCondition::snow_rain(cfg.snow_rate)};
}

struct GeneratedDataset {
  std::vector<MultimodalFrame> frames;
  SplitManifest split;
};

/// Training scenes take seeds [base, base + train_frames), test scenes the
/// range after it; each test scene is rendered once per test weather.
inline GeneratedDataset generate_dataset(const RunConfig& cfg) {
  const CalibrationModel calib = calibration_for(cfg);
  const SceneConfig scene = cfg.scene_config();
  const std::uint64_t base = derive_seed(cfg.seed, 0xda7a) & 0xffffffffULL;
  GeneratedDataset out;
  std::uint64_t id = 0;
  for (std::size_t i = 0; i < cfg.train_frames; ++i) {
    const std::uint64_t s = base + i;
    Rng rng(derive_seed(s, 0xa3b1e));
    const double ambient = std::uniform_real_distribution<double>(cfg.train_min_ambient, 1.0)(rng);
    MultimodalFrame f = generate_frame(s, WeatherCondition::clear(ambient), calib, scene);
    f.id = id++;
    out.split.splits["train"].push_back(f.id);
    out.frames.push_back(std::move(f));
  }
  for (std::size_t i = 0; i < cfg.test_frames; ++i) {
    const std::uint64_t s = base + cfg.train_frames + i;
    const MultimodalFrame clear = render_clear(random_scene(s, scene), calib);
    for (const WeatherCondition& w : test_conditions(cfg)) {
      MultimodalFrame f = apply_condition(clear, w);
      f.id = id++;
      out.split.splits["test." + std::string(weather_name(w.kind))].push_back(f.id);
      out.frames.push_back(std::move(f));
    }
  }
  validate_split(out.split, out.frames);
  return out;
}

struct PreparedData {
  std::vector<Sample> train;
  std::map<WeatherKind, std::vector<Sample>> test;
};

inline PreparedData prepare_samples(const std::vector<MultimodalFrame>& frames, const SplitManifest& split,
                                    const RunConfig& cfg) {
  validate_split(split, frames);
  const CalibrationModel calib = calibration_for(cfg);
  std::unordered_map<std::uint64_t, const MultimodalFrame*> by_id;
  for (const auto& f : frames) by_id[f.id] = &f;
  PreparedData d;
  for (const auto& [name, ids] : split.splits) {
    for (auto id : ids) {
      Sample s = make_sample(*by_id.at(id), calib, cfg.entropy_config());
      if (name == "train") d.train.push_back(std::move(s));
      else d.test[s.weather.kind].push_back(std::move(s));
    }
  }
  return d;
}

struct TrainedModel {
  FusionNet net;
  std::vector<LossLogRow> log;
};

/// Trains one mode. With `out_dir`, writes a checkpoint after every epoch,
/// the final `model.fgf` and `loss_log.csv`.
inline TrainedModel train_mode(const RunConfig& cfg, FusionMode mode, std::uint64_t model_seed,
                               const std::vector<Sample>& train,
                               const std::optional<std::filesystem::path>& out_dir = std::nullopt) {
  FusionNet net(cfg.net_config(), mode, model_seed);
  TrainConfig tc = cfg.train;
  tc.seed = model_seed;
  const std::string digest = cfg.digest();
  const CheckpointHeader header = header_for(net, model_seed, digest);
  if (out_dir) {
    std::filesystem::create_directories(*out_dir);
    save_checkpoint((*out_dir / "epoch_0.fgf").string(), net, header);
  }
  Trainer trainer(net, tc);
  auto log = trainer.run(train, [&](std::size_t epoch) {
    if (out_dir) save_checkpoint((*out_dir / ("epoch_" + std::to_string(epoch + 1) + ".fgf")).string(), net, header);
  });
  if (out_dir) {
    save_checkpoint((*out_dir / "model.fgf").string(), net, header);
    const std::string csv = loss_log_csv(log, digest);
    io::write_file((*out_dir / "loss_log.csv").string(), csv.data(), csv.size());
  }
  return {std::move(net), std::move(log)};
}

using ModelScores = std::map<std::pair<WeatherKind, Difficulty>, std::optional<double>>;

inline ModelScores evaluate_model(const FusionNet& net, const PreparedData& data, const RunConfig& cfg) {
  ModelScores out;
  for (const auto& [kind, samples] : data.test) {
    const auto results = run_detector(net, samples, cfg.decode);
    for (Difficulty d : kAllDifficulties) {
      out[{kind, d}] = average_precision(results, cfg.difficulty(d), cfg.iou_threshold);
    }
  }
  return out;
}

inline std::optional<double> median(std::vector<double> v) {
  if (v.empty()) return std::nullopt;
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

struct AblationResult {
  std::vector<std::uint64_t> seeds;
  std::vector<ApTable> per_seed;
  ApTable median;
};

/// Trains and evaluates every mode for each model seed on the same data.
/// `progress` receives one line per finished model.
inline AblationResult run_ablation(const RunConfig& cfg, const PreparedData& data,
                                   const std::vector<FusionMode>& modes,
                                   const std::optional<std::filesystem::path>& out_dir = std::nullopt,
                                   const std::function<void(const std::string&)>& progress = {}) {
  AblationResult r;
  for (std::size_t k = 0; k < cfg.seeds; ++k) r.seeds.push_back(derive_seed(cfg.seed, 0x5eed0000ULL + k));
  r.per_seed.resize(r.seeds.size());
  std::map<std::string, std::map<std::pair<WeatherKind, Difficulty>, std::vector<double>>> pooled;
  for (std::size_t k = 0; k < r.seeds.size(); ++k) {
    for (const FusionMode& mode : modes) {
      std::optional<std::filesystem::path> dir;
      if (out_dir) dir = *out_dir / ("seed" + std::to_string(k)) / mode.name();
      const TrainedModel m = train_mode(cfg, mode, r.seeds[k], data.train, dir);
      const ModelScores scores = evaluate_model(m.net, data, cfg);
      for (const auto& [key, ap] : scores) {
        r.per_seed[k].set(mode.name(), key.first, key.second, ap);
        if (ap) pooled[mode.name()][key].push_back(*ap);
      }
      if (progress) {
        std::ostringstream os;
        os << "seed " << k << " " << mode.name();
        for (const auto& [key, ap] : scores) {
          if (key.second == Difficulty::moderate) {
            os << " " << weather_name(key.first) << "=";
            if (ap) os << *ap;
            else os << "-";
          }
        }
        progress(os.str());
      }
    }
  }
  for (const FusionMode& mode : modes) {
    for (const auto& [kind, samples] : data.test) {
      for (Difficulty d : kAllDifficulties) r.median.set(mode.name(), kind, d, median(pooled[mode.name()][{kind, d}]));
    }
  }
  return r;
}

// ---------------------------------------------------------------------------
// Entropy sweep

struct EntropyRow {
  std::string condition;
  Stream stream;
  double mean_entropy = 0;        // bits, averaged over scenes
  double normalized_entropy = 0;  // mean over scenes of the per-scene ratio to clear
};

/// Per-stream entropy for each fog visibility and for darkness (ambient 0),
/// relative to the clear rendering of the same scene.
inline std::vector<EntropyRow> entropy_sweep(const RunConfig& cfg, const std::vector<double>& visibilities,
                                             const std::vector<double>& ambients, std::size_t scenes,
                                             const std::optional<std::filesystem::path>& pgm_dir = std::nullopt) {
  const CalibrationModel calib = calibration_for(cfg);
  const SceneConfig scene = cfg.scene_config();
  const EntropyConfig ecfg = cfg.entropy_config();
  struct Condition {
    std::string name;
    std::function<MultimodalFrame(const MultimodalFrame&)> apply;
  };
  std::vector<Condition> conds;
  auto label = [](const char* prefix, double v) {
    std::ostringstream os;
    os << prefix << v;
    return os.str();
  };
  for (double v : visibilities) {
    conds.push_back({std::isinf(v) ? std::string("clear") : label("fog_V", v),
                     [v](const MultimodalFrame& f) { return apply_fog(f, v); }});
  }
  for (double a : ambients) {
    conds.push_back({label("ambient_", a), [a](const MultimodalFrame& f) { return apply_night(f, a); }});
  }
  std::vector<std::array<double, kStreamCount>> bits(conds.size()), ratio(conds.size());
  for (std::size_t s = 0; s < scenes; ++s) {
    const std::uint64_t seed = derive_seed(cfg.seed, 0xe7700000ULL + s);
    const MultimodalFrame clear = render_clear(random_scene(seed, scene), calib);
    const EncodedFrame ref = encode_frame(clear, calib);
    std::array<EntropyMap, kStreamCount> ref_maps;
    for (Stream st : kAllStreams) ref_maps[static_cast<std::size_t>(st)] = stream_entropy(ref.stream(st), ecfg);
    for (std::size_t c = 0; c < conds.size(); ++c) {
      const EncodedFrame enc = encode_frame(conds[c].apply(clear), calib);
      for (Stream st : kAllStreams) {
        const auto i = static_cast<std::size_t>(st);
        const EntropyMap m = stream_entropy(enc.stream(st), ecfg);
        double mean = 0;
        for (float v : m.values.data()) mean += v;
        bits[c][i] += mean / static_cast<double>(m.values.size()) / static_cast<double>(scenes);
        ratio[c][i] += normalized_entropy(m, ref_maps[i]) / static_cast<double>(scenes);
        if (pgm_dir && s == 0) {
          std::filesystem::create_directories(*pgm_dir);
          write_entropy_pgm((*pgm_dir / (conds[c].name + "_" + std::string(stream_name(st)) + ".pgm")).string(), m);
        }
      }
    }
  }
  std::vector<EntropyRow> rows;
  for (std::size_t c = 0; c < conds.size(); ++c)
    for (Stream st : kAllStreams) {
      const auto i = static_cast<std::size_t>(st);
      rows.push_back({conds[c].name, st, bits[c][i], ratio[c][i]});
    }
  return rows;
}

inline std::string entropy_csv(const std::vector<EntropyRow>& rows, const std::string& digest = {}) {
  std::ostringstream os;
  if (!digest.empty()) os << "# config_digest=" << digest << "\n";
  os << "condition,stream,mean_entropy,normalized_entropy\n";
  os.setf(std::ios::fixed);
  os.precision(6);
  for (const auto& r : rows) {
    os << r.condition << ',' << stream_name(r.stream) << ',' << r.mean_entropy << ',' << r.normalized_entropy << '\n';
  }
  return os.str();
}

}  // namespace fogfuse
