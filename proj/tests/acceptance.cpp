// Acceptance run: one PASS/FAIL line per criterion.
//
//   fogfuse_acceptance                       all criteria (6 trains every mode, ~1 h)
//   fogfuse_acceptance --criteria 1,2,3      a subset
//   fogfuse_acceptance --config run.cfg --out dir

#include <CLI11.hpp>

#include <unistd.h>

#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include "fogfuse/pipeline.hpp"
#include "support/gradcheck.hpp"
#include "support/oracles.hpp"

using namespace fogfuse;
using namespace fogfuse::testing;
using namespace fogfuse::testing::oracles;
namespace fs = std::filesystem;

namespace {

// Pinned tolerances.
constexpr int kGradSeeds = 100;
constexpr double kGradTol = 1e-4;
constexpr double kEntropyTol = 1e-5;
constexpr int kInvariancePatches = 1000;
constexpr std::size_t kEntropyScenes = 50;
constexpr double kRadarBand = 0.10;
constexpr double kNightCameraMax = 0.2;
constexpr double kNightActiveMin = 0.9;
constexpr int kMatcherInstances = 500;
constexpr double kDenseFogDropFraction = 0.5;
constexpr double kFusionGap = 3.0;
constexpr int kDropoutTrials = 10000;
constexpr double kDropLo = 0.47, kDropHi = 0.53;

struct Outcome {
  bool pass = true;
  std::string detail;

  void require(bool ok, const std::string& what) {
    if (!ok) {
      pass = false;
      detail += (detail.empty() ? "" : "; ") + what;
    }
  }
};

std::string fmt(double v, int prec = 3) {
  std::ostringstream os;
  os.setf(std::ios::fixed);
  os.precision(prec);
  os << v;
  return os.str();
}

Tensor64 away_from_zero(Tensor64 t, double margin) {
  for (double& v : t.mutable_data()) {
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
  return t;
}

bool has_near_tie(const Tensor64& x, std::size_t planes, std::size_t h, std::size_t w) {
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t oy = 0; oy < h / 2; ++oy)
      for (std::size_t ox = 0; ox < w / 2; ++ox) {
        std::vector<double> win;
        for (std::size_t dy = 0; dy < 2; ++dy)
          for (std::size_t dx = 0; dx < 2; ++dx) win.push_back(x[(p * h + 2 * oy + dy) * w + 2 * ox + dx]);
        std::sort(win.begin(), win.end());
        if (win[3] - win[2] < 1e-2) return true;
      }
  return false;
}

Outcome gradients() {
  Outcome o;
  std::map<std::string, double> worst;
  auto check = [&](const std::string& op, auto&& make) {
    int done = 0;
    for (std::uint64_t seed = 0; done < kGradSeeds; ++seed) {
      std::mt19937_64 rng(seed);
      auto inst = make(rng);
      if (!inst) continue;
      const auto r = grad_check(inst->first, inst->second, seed);
      worst[op] = std::max(worst[op], r.max_rel_error);
      ++done;
    }
  };
  using Inst = std::optional<std::pair<std::function<Tensor64(const std::vector<Tensor64>&)>, std::vector<Tensor64>>>;

  check("conv2d", [](std::mt19937_64& rng) -> Inst {
    const std::size_t stride = 1 + rng() % 2;
    return {{[stride](const std::vector<Tensor64>& v) { return conv2d(v[0], v[1], stride, 1); },
             {random_tensor({2, 2, 5, 6}, rng), random_tensor({3, 2, 3, 3}, rng)}}};
  });
  check("maxpool", [](std::mt19937_64& rng) -> Inst {
    Tensor64 x = random_tensor({1, 2, 4, 6}, rng);
    if (has_near_tie(x, 2, 4, 6)) return std::nullopt;
    return {{[](const std::vector<Tensor64>& v) { return maxpool2(v[0]); }, {x}}};
  });
  check("sigmoid", [](std::mt19937_64& rng) -> Inst {
    return {{[](const std::vector<Tensor64>& v) { return sigmoid(v[0]); }, {random_tensor({4, 5}, rng, -4, 4)}}};
  });
  check("relu", [](std::mt19937_64& rng) -> Inst {
    return {{[](const std::vector<Tensor64>& v) { return relu(v[0]); },
             {away_from_zero(random_tensor({4, 5}, rng), 1e-2)}}};
  });
  check("gating", [](std::mt19937_64& rng) -> Inst {
    const std::size_t S = 3, Wd = 2, T = S * Wd;
    std::vector<Tensor64> in{random_tensor({1, Wd, 2, 3}, rng),    random_tensor({1, Wd, 2, 3}, rng),
                             random_tensor({1, Wd, 2, 3}, rng),    random_tensor({1, S, 2, 3}, rng, 0, 1),
                             random_tensor({T, S, 1, 1}, rng),     random_tensor({T}, rng)};
    for (std::size_t s = 0; s < S; ++s) {
      in.push_back(random_tensor({Wd, T + S, 1, 1}, rng));
      in.push_back(random_tensor({Wd}, rng));
    }
    return {{[](const std::vector<Tensor64>& x) {
               ExchangeParams<double> p;
               p.gate_w = x[4];
               p.gate_b = x[5];
               for (std::size_t s = 0; s < 3; ++s) {
                 p.proj_w.push_back(x[6 + 2 * s]);
                 p.proj_b.push_back(x[7 + 2 * s]);
               }
               return concat(exchange_block<double>({x[0], x[1], x[2]}, x[3], p), 1);
             },
             in}};
  });
  check("classification_loss", [](std::mt19937_64& rng) -> Inst {
    const auto targets = random_targets(rng, 30, 0.15);
    std::vector<int> labels(30);
    std::vector<double> weights(30);
    std::uniform_real_distribution<double> w(0.0, 1.0);
    for (std::size_t i = 0; i < 30; ++i) {
      labels[i] = targets[i].class_id + (i % 3 == 0 ? 1 : 0);
      weights[i] = i % 4 == 0 ? 0.0 : w(rng);
    }
    return {{[labels, weights](const std::vector<Tensor64>& v) {
               return weighted_softmax_cross_entropy(v[0], labels, weights);
             },
             {random_tensor({30, 3}, rng, -2, 2)}}};
  });
  check("huber_loss", [](std::mt19937_64& rng) -> Inst {
    Tensor64 pred = random_tensor({12, 4}, rng, -3, 3);
    std::vector<double> weights(12);
    std::uniform_real_distribution<double> w(0.0, 1.0);
    for (double& v : weights) v = w(rng);
    for (double v : pred.data()) {
      if (std::abs(std::abs(v) - 1.0) < 1e-2) return std::nullopt;
    }
    return {{[weights](const std::vector<Tensor64>& v) { return weighted_huber(v[0], std::vector<double>(48), weights); },
             {pred}}};
  });
  for (const auto& [op, err] : worst) {
    o.require(err < kGradTol, op + " rel err " + fmt(err, 8));
    if (o.pass) o.detail += (o.detail.empty() ? "" : " ") + op + "=" + fmt(err, 8);
  }
  return o;
}

float patch_entropy(const std::vector<int>& levels) {
  std::vector<float> v(levels.begin(), levels.end());
  return entropy_map(Tensor(Shape{1, 16, 16}, std::move(v))).values[0];
}

Outcome entropy_oracles() {
  Outcome o;
  std::vector<int> all(256);
  std::iota(all.begin(), all.end(), 0);
  std::vector<int> half(256, 0);
  std::fill(half.begin() + 128, half.end(), 255);
  const float c = patch_entropy(std::vector<int>(256, 91)), a = patch_entropy(all), h = patch_entropy(half);
  o.require(c == 0.0f, "constant patch " + fmt(c, 6));
  o.require(std::abs(a - 8.0) < kEntropyTol, "256 levels " + fmt(a, 6));
  o.require(std::abs(h - 1.0) < kEntropyTol, "half/half " + fmt(h, 6));

  std::mt19937_64 rng(2024);
  std::vector<int> relabel(256);
  std::iota(relabel.begin(), relabel.end(), 0);
  double worst_inv = 0, worst_oracle = 0;
  for (int t = 0; t < kInvariancePatches; ++t) {
    std::uniform_int_distribution<int> span(1, 256);
    std::uniform_int_distribution<int> lv(0, span(rng) - 1);
    std::vector<int> levels(256);
    for (int& l : levels) l = lv(rng);
    const float base = patch_entropy(levels);
    worst_oracle = std::max(worst_oracle, std::abs(base - oracle_entropy(levels)));
    std::vector<int> perm = levels;
    std::shuffle(perm.begin(), perm.end(), rng);
    worst_inv = std::max(worst_inv, static_cast<double>(std::abs(patch_entropy(perm) - base)));
    std::shuffle(relabel.begin(), relabel.end(), rng);
    std::vector<int> mapped(256);
    for (std::size_t i = 0; i < 256; ++i) mapped[i] = relabel[levels[i]];
    worst_inv = std::max(worst_inv, static_cast<double>(std::abs(patch_entropy(mapped) - base)));
  }
  o.require(worst_inv < kEntropyTol, "invariance deviation " + fmt(worst_inv, 8));
  o.require(worst_oracle < kEntropyTol, "oracle deviation " + fmt(worst_oracle, 8));
  if (o.pass) o.detail = "max invariance dev " + fmt(worst_inv, 8) + ", max oracle dev " + fmt(worst_oracle, 8);
  return o;
}

struct SweepCache {
  std::vector<EntropyRow> rows;
  double at(const std::string& cond, Stream s) const {
    for (const auto& r : rows) {
      if (r.condition == cond && r.stream == s) return r.normalized_entropy;
    }
    throw std::logic_error("no entropy row " + cond);
  }
};

const SweepCache& sweep(const RunConfig& cfg) {
  static std::optional<SweepCache> cache;
  if (!cache) cache = SweepCache{entropy_sweep(cfg, {INFINITY, 50, 40, 30}, {0.0}, kEntropyScenes)};
  return *cache;
}

Outcome fog_entropy(const RunConfig& cfg) {
  Outcome o;
  const auto& s = sweep(cfg);
  const char* vis[] = {"fog_V50", "fog_V40", "fog_V30"};
  std::ostringstream table;
  for (Stream st : kAllStreams) {
    table << (st == Stream::camera ? "" : " ") << stream_name(st) << "=";
    for (int k = 0; k < 3; ++k) table << (k ? "/" : "") << fmt(s.at(vis[k], st));
  }
  for (Stream st : {Stream::camera, Stream::lidar}) {
    for (int k = 0; k < 2; ++k) {
      o.require(s.at(vis[k], st) > s.at(vis[k + 1], st),
                std::string(stream_name(st)) + " not decreasing at " + vis[k + 1]);
    }
  }
  for (const char* v : vis) {
    const double r = s.at(v, Stream::radar), g = s.at(v, Stream::gated), c = s.at(v, Stream::camera);
    o.require(std::abs(r - 1.0) <= kRadarBand, std::string("radar outside band at ") + v);
    o.require(g > c && g < r, std::string("gated not between camera and radar at ") + v);
  }
  o.detail = table.str() + (o.pass ? "" : " | " + o.detail);
  return o;
}

Outcome night_entropy(const RunConfig& cfg) {
  Outcome o;
  const auto& s = sweep(cfg);
  const double c = s.at("ambient_0", Stream::camera), l = s.at("ambient_0", Stream::lidar),
               r = s.at("ambient_0", Stream::radar);
  o.require(c < kNightCameraMax, "camera " + fmt(c));
  o.require(l > kNightActiveMin, "lidar " + fmt(l));
  o.require(r > kNightActiveMin, "radar " + fmt(r));
  if (o.pass) o.detail = "camera=" + fmt(c) + " lidar=" + fmt(l) + " radar=" + fmt(r);
  return o;
}

Outcome ssd_oracles() {
  Outcome o;
  const Box2D unit{0, 0, 1, 1};
  o.require(iou(unit, unit) == 1.0, "iou identical");
  o.require(iou(unit, {2, 2, 3, 3}) == 0.0, "iou disjoint");
  o.require(std::abs(iou(unit, {0.5, 0, 1.5, 1}) - 1.0 / 3.0) < 1e-12, "iou half offset");

  std::mt19937_64 rng(515);
  int mismatches = 0;
  for (int trial = 0; trial < kMatcherInstances; ++trial) {
    std::vector<Box2D> anchors(50), gtb(3);
    for (auto& b : anchors) b = random_box(rng);
    for (auto& b : gtb) b = random_box(rng);
    anchors[7] = {gtb[0].x1 + 0.5, gtb[0].y1, gtb[0].x2 + 0.5, gtb[0].y2};
    std::vector<GroundTruthBox> gts(3);
    for (int j = 0; j < 3; ++j) gts[j].box = gtb[j];
    const auto got = match_anchors(anchors_from(anchors), gts);
    const auto want = reference_match(anchors, gtb);
    for (std::size_t i = 0; i < anchors.size(); ++i) {
      const bool pos = got[i].label == AnchorLabel::positive;
      if (pos != want[i].first || (pos && got[i].gt != want[i].second)) {
        ++mismatches;
        break;
      }
    }
  }
  o.require(mismatches == 0, std::to_string(mismatches) + " matcher mismatches");

  const double xs[] = {0.5, 2.0, 1.0}, ys[] = {0.125, 1.5, 0.5};
  for (int k = 0; k < 3; ++k) o.require(huber(xs[k]) == ys[k], "huber(" + fmt(xs[k], 1) + ")=" + fmt(huber(xs[k]), 6));

  int mining_bad = 0;
  std::uniform_real_distribution<double> rate(0.0, 0.5);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = 20 + trial % 80;
    const auto targets = random_targets(rng, n, rate(rng));
    std::size_t pos = 0;
    for (const auto& t : targets) pos += t.label == AnchorLabel::positive;
    const auto loss = detection_loss(random_tensor({n, 2}, rng), Tensor64(Shape{n, 4}), targets);
    mining_bad += loss.negatives_kept != std::min(5 * pos, n - pos);
  }
  o.require(mining_bad == 0, std::to_string(mining_bad) + " mining count errors");

  int nms_bad = 0;
  std::uniform_real_distribution<float> lg(-3, 3), rg(-0.3f, 0.3f);
  for (int trial = 0; trial < 100; ++trial) {
    std::vector<Box2D> boxes(60);
    for (auto& b : boxes) b = random_box(rng, 40);
    std::vector<float> lv(120), rv(240);
    for (std::size_t i = 0; i < 60; ++i) lv[i * 2 + 1] = lg(rng);
    for (float& v : rv) v = rg(rng);
    DecodeConfig dc;
    dc.max_detections = 1000;
    const auto got = decode_and_nms(Tensor(Shape{60, 2}, lv), Tensor(Shape{60, 4}, rv), anchors_from(boxes), 156, 48, dc);
    std::vector<Detection> cands;
    for (std::size_t i = 0; i < 60; ++i) {
      const double sc = 1.0 / (1.0 + std::exp(-static_cast<double>(lv[i * 2 + 1])));
      if (sc < dc.score_threshold) continue;
      cands.push_back({1, sc, decode_box(boxes[i], {rv[i * 4], rv[i * 4 + 1], rv[i * 4 + 2], rv[i * 4 + 3]}).clamped(156, 48)});
    }
    const auto want = reference_nms(cands, dc.nms_iou);
    bool same = got.size() == want.size();
    for (std::size_t i = 0; same && i < got.size(); ++i) same = got[i].box == want[i].box;
    nms_bad += !same;
  }
  o.require(nms_bad == 0, std::to_string(nms_bad) + " nms mismatches");
  if (o.pass) o.detail = "iou, matcher x" + std::to_string(kMatcherInstances) + ", huber, mining, nms all agree";
  return o;
}

Outcome ablation(const RunConfig& cfg, const std::optional<fs::path>& out) {
  Outcome o;
  const auto t0 = std::chrono::steady_clock::now();
  const GeneratedDataset gen = generate_dataset(cfg);
  const PreparedData data = prepare_samples(gen.frames, gen.split, cfg);
  std::optional<fs::path> model_dir;
  if (out) model_dir = *out / "ablation";
  const AblationResult r = run_ablation(cfg, data, all_fusion_modes(), model_dir,
                                        [&](const std::string& line) {
                                          const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
                                          std::cerr << "  [" << fmt(s, 0) << "s] " << line << "\n";
                                        });
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  if (out) {
    fs::create_directories(*out);
    const std::string csv = r.median.to_csv(cfg.digest());
    io::write_file((*out / "ablation_table.csv").string(), csv.data(), csv.size());
    for (std::size_t k = 0; k < r.per_seed.size(); ++k) {
      const std::string s = r.per_seed[k].to_csv(cfg.digest());
      io::write_file((*out / ("ablation_seed" + std::to_string(k) + ".csv")).string(), s.data(), s.size());
    }
  }
  const Difficulty d = Difficulty::moderate;
  auto ap = [&](const std::string& mode, WeatherKind w) { return r.median.get(mode, w, d).value_or(NAN); };
  const double lidar_clear = ap("lidar_only", WeatherKind::clear), lidar_fog = ap("lidar_only", WeatherKind::dense_fog);
  const double ed_fog = ap("entropy_deep", WeatherKind::dense_fog), late_fog = ap("late_fusion", WeatherKind::dense_fog),
               early_fog = ap("early_concat", WeatherKind::dense_fog), dne_fog = ap("deep_no_entropy", WeatherKind::dense_fog);
  const double ed_clear = ap("entropy_deep", WeatherKind::clear);
  std::ostringstream os;
  os << "moderate AP median of " << cfg.seeds << " seeds, " << fmt(seconds / 60.0, 1) << " min; ";
  os << "a: lidar clear " << fmt(lidar_clear, 2) << " fog " << fmt(lidar_fog, 2);
  const bool a = lidar_fog < (1.0 - kDenseFogDropFraction) * lidar_clear;
  os << (a ? " ok" : " FAIL");
  const bool b = ed_fog >= late_fog + kFusionGap && ed_fog >= early_fog + kFusionGap;
  os << "; b: fog entropy_deep " << fmt(ed_fog, 2) << " late " << fmt(late_fog, 2) << " early " << fmt(early_fog, 2)
     << (b ? " ok" : " FAIL");
  bool c = true;
  os << "; c: clear entropy_deep " << fmt(ed_clear, 2) << " vs";
  for (Stream s : kAllStreams) {
    const double v = ap(std::string(stream_name(s)) + "_only", WeatherKind::clear);
    os << " " << stream_name(s) << " " << fmt(v, 2);
    c = c && ed_clear >= v;
  }
  os << (c ? " ok" : " FAIL");
  const bool dd = ed_fog >= dne_fog;
  os << "; d: fog deep_no_entropy " << fmt(dne_fog, 2) << (dd ? " ok" : " FAIL");
  o.require(a && b && c && dd && seconds < 3600.0, "");
  if (seconds >= 3600.0) os << "; over the 60 min budget";
  o.detail = os.str();
  return o;
}

Outcome dropout_stats() {
  Outcome o;
  NetInput in;
  std::mt19937_64 init(31);
  for (std::size_t s = 0; s < kStreamCount; ++s) {
    in.streams[s] = random_tensor_as<float>({2, 48, 156}, init, 0, 1);
    in.entropy[s] = random_tensor_as<float>({1, 48, 156}, init, 0, 8);
  }
  Rng rng(derive_seed(99, 7));
  std::array<int, kStreamCount> dropped{};
  int guard_violations = 0;
  for (int t = 0; t < kDropoutTrials; ++t) {
    const DropoutResult r = dropout_streams(in, 0.5, rng);
    int kept = 0;
    for (std::size_t s = 0; s < kStreamCount; ++s) {
      kept += r.kept[s];
      dropped[s] += !r.kept[s];
    }
    guard_violations += kept == 0;
  }
  std::ostringstream os;
  for (std::size_t s = 0; s < kStreamCount; ++s) {
    const double f = static_cast<double>(dropped[s]) / kDropoutTrials;
    os << (s ? " " : "") << stream_name(static_cast<Stream>(s)) << "=" << fmt(f, 4);
    o.require(f >= kDropLo && f <= kDropHi, std::string(stream_name(static_cast<Stream>(s))) + " frequency " + fmt(f, 4));
  }
  o.require(guard_violations == 0, std::to_string(guard_violations) + " all-dropped draws");
  o.detail = os.str() + (o.pass ? ", guard held" : " | " + o.detail);
  return o;
}

struct PipelineRun {
  std::vector<std::vector<std::uint8_t>> checkpoints;
  std::map<std::pair<WeatherKind, Difficulty>, std::optional<double>> ap;
};

PipelineRun pipeline_once(const RunConfig& cfg, const fs::path& dir) {
  fs::remove_all(dir);
  const GeneratedDataset gen = generate_dataset(cfg);
  write_dataset(gen.frames, dir / "dataset", cfg.digest());
  const auto frames = read_dataset(dir / "dataset");
  const PreparedData data = prepare_samples(frames, gen.split, cfg);
  const FusionMode mode = parse_fusion_mode(cfg.mode);
  train_mode(cfg, mode, derive_seed(cfg.seed, 0x5eed0000ULL), data.train, dir / "model");
  PipelineRun r;
  for (std::size_t e = 0; e <= cfg.train.epochs; ++e) {
    r.checkpoints.push_back(io::read_file((dir / "model" / ("epoch_" + std::to_string(e) + ".fgf")).string()));
  }
  r.checkpoints.push_back(io::read_file((dir / "model" / "model.fgf").string()));
  r.ap = evaluate_model(load_checkpoint((dir / "model" / "model.fgf").string()).net, data, cfg);
  return r;
}

Outcome determinism() {
  Outcome o;
  RunConfig cfg;
  cfg.train_frames = 12;
  cfg.test_frames = 4;
  cfg.train.epochs = 2;
  cfg.seed = 4242;
  const fs::path base = fs::temp_directory_path() / ("fogfuse_acceptance_" + std::to_string(::getpid()));
  const PipelineRun a = pipeline_once(cfg, base / "a");
  const PipelineRun b = pipeline_once(cfg, base / "b");
  fs::remove_all(base);
  o.require(a.checkpoints == b.checkpoints, "checkpoints differ");
  std::size_t compared = 0;
  for (const auto& [key, v] : a.ap) {
    const auto& w = b.ap.at(key);
    o.require(v.has_value() == w.has_value() && (!v || std::memcmp(&*v, &*w, sizeof(double)) == 0),
              "AP differs for " + std::string(weather_name(key.first)));
    compared += v.has_value();
  }
  if (o.pass) {
    o.detail = std::to_string(a.checkpoints.size()) + " checkpoints bit-identical, " + std::to_string(compared) +
               " AP values bit-identical";
  }
  return o;
}

Outcome pyramid() {
  Outcome o;
  const std::vector<std::pair<std::size_t, std::size_t>> expected{{24, 78}, {24, 78}, {12, 39}, {12, 39}, {6, 20}, {3, 10}};
  RunConfig rc;
  const NetConfig cfg = rc.net_config();
  NetInput in;
  std::mt19937_64 rng(8);
  for (std::size_t s = 0; s < kStreamCount; ++s) {
    in.streams[s] = random_tensor_as<float>({cfg.branch.input_channels[s], 48, 156}, rng, 0, 1);
    in.entropy[s] = random_tensor_as<float>({1, 48, 156}, rng, 0, 8);
  }
  for (const FusionMode& mode : all_fusion_modes()) {
    const FusionNet net(cfg, mode, 1);
    const ForwardOutput out = net.forward(in);
    bool ok = out.features.size() == expected.size();
    for (std::size_t l = 0; ok && l < expected.size(); ++l) {
      ok = out.features[l].dim(2) == expected[l].first && out.features[l].dim(3) == expected[l].second;
      for (const Tensor& b : out.branch_features[l]) {
        ok = ok && b.dim(2) == expected[l].first && b.dim(3) == expected[l].second;
      }
    }
    o.require(ok, mode.name());
  }
  if (o.pass) o.detail = std::to_string(all_fusion_modes().size()) + " modes match at all 6 levels";
  return o;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria"};
  std::string criteria = "1,2,3,4,5,6,7,8,9";
  std::string config_path, out;
  app.add_option("--criteria", criteria, "comma-separated subset")->capture_default_str();
  app.add_option("--config", config_path, "config for the training and entropy criteria");
  app.add_option("--out", out, "directory for the ablation tables and checkpoints");
  CLI11_PARSE(app, argc, argv);

  RunConfig cfg;
  try {
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      std::stringstream ss;
      ss << in.rdbuf();
      cfg.parse(ss.str(), config_path);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  }
  std::set<int> selected;
  std::istringstream list(criteria);
  for (std::string tok; std::getline(list, tok, ',');) selected.insert(std::stoi(tok));

  std::optional<fs::path> out_dir;
  if (!out.empty()) out_dir = out;
  const std::vector<std::pair<std::string, std::function<Outcome()>>> all{
      {"gradient correctness", gradients},
      {"entropy oracles", entropy_oracles},
      {"fog entropy ordering", [&] { return fog_entropy(cfg); }},
      {"night entropy asymmetry", [&] { return night_entropy(cfg); }},
      {"ssd machinery oracles", ssd_oracles},
      {"fusion ablation orderings", [&] { return ablation(cfg, out_dir); }},
      {"dropout statistics", dropout_stats},
      {"pipeline determinism", determinism},
      {"pyramid shapes", pyramid},
  };
  bool all_pass = true;
  for (std::size_t i = 0; i < all.size(); ++i) {
    const int id = static_cast<int>(i + 1);
    if (!selected.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    Outcome o;
    try {
      o = all[i].second();
    } catch (const std::exception& e) {
      o.pass = false;
      o.detail = std::string("threw: ") + e.what();
    }
    const double s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    all_pass = all_pass && o.pass;
    std::cout << "criterion " << id << " " << (o.pass ? "PASS" : "FAIL") << " " << all[i].first << " (" << fmt(s, 1)
              << "s): " << o.detail << std::endl;
  }
  return all_pass ? 0 : 1;
}
