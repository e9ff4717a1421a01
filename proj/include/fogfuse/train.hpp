#pragma once

// Training loop, optimizer and inference over prepared samples.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <stdexcept>
#include <sstream>
#include <string>
#include <vector>

#include "fogfuse/encoding.hpp"
#include "fogfuse/eval.hpp"
#include "fogfuse/fusion_net.hpp"
#include "fogfuse/random.hpp"
#include "fogfuse/ssd.hpp"

namespace fogfuse {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  double dropout_p = 0.5;
  double mining_ratio = 5.0;
  double grad_clip = 10.0;  // global L2 norm, 0 disables
  std::size_t epochs = 1;
  std::size_t log_every = 50;
  std::uint64_t seed = 1;
};

/// SGD with momentum and L2 weight decay at a constant learning rate.
class Sgd {
 public:
  explicit Sgd(const TrainConfig& cfg) : cfg_(cfg) {}

  void step(ParameterStore& params) {
    auto& ps = params.tensors();
    if (velocity_.size() != ps.size()) {
      velocity_.assign(ps.size(), {});
      for (std::size_t i = 0; i < ps.size(); ++i) velocity_[i].assign(ps[i].size(), 0.0f);
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
      if (!ps[i].has_grad()) throw std::logic_error("sgd: parameter " + params.names()[i] + " has no gradient");
    }
    double scale = 1.0;
    if (cfg_.grad_clip > 0) {
      double sq = 0.0;
      for (const auto& p : ps) {
        for (float g : p.grad()) sq += static_cast<double>(g) * g;
      }
      const double norm = std::sqrt(sq);
      if (norm > cfg_.grad_clip) scale = cfg_.grad_clip / norm;
    }
    for (std::size_t i = 0; i < ps.size(); ++i) {
      float* v = ps[i].mutable_ptr();
      const float* g = ps[i].grad().data();
      float* m = velocity_[i].data();
      for (std::size_t k = 0; k < ps[i].size(); ++k) {
        const double grad = scale * g[k] + cfg_.weight_decay * v[k];
        m[k] = static_cast<float>(cfg_.momentum * m[k] + grad);
        v[k] = static_cast<float>(v[k] - cfg_.learning_rate * m[k]);
      }
      ps[i].clear_grad();
    }
  }

 private:
  TrainConfig cfg_;
  std::vector<std::vector<float>> velocity_;
};

/// One prepared training or test example.
struct Sample {
  std::uint64_t id = 0;
  WeatherCondition weather;
  NetInput input;
  std::vector<GroundTruthBox> boxes;
};

inline Sample make_sample(const MultimodalFrame& f, const CalibrationModel& calib,
                          const EntropyConfig& ecfg = {}) {
  return {f.id, f.weather, make_net_input(encode_frame(f, calib), ecfg), f.boxes};
}

struct LossLogRow {
  std::size_t epoch = 0, step = 0;
  double classification = 0, regression = 0;
  std::array<std::size_t, kStreamCount> active_streams{};  // counts of steps with 1..4 active streams

  std::string histogram() const {
    std::ostringstream os;
    for (std::size_t k = 0; k < kStreamCount; ++k) os << (k ? ":" : "") << active_streams[k];
    return os.str();
  }
};

inline std::string loss_log_csv(const std::vector<LossLogRow>& rows, const std::string& digest = {}) {
  std::ostringstream os;
  if (!digest.empty()) os << "# config_digest=" << digest << "\n";
  os << "epoch,step,classification_loss,regression_loss,active_streams_histogram\n";
  os.precision(9);
  for (const auto& r : rows) {
    os << r.epoch << ',' << r.step << ',' << r.classification << ',' << r.regression << ',' << r.histogram()
       << '\n';
  }
  return os.str();
}

/// Trains `net` in place. Sensor dropout applies to the entropy-steered mode
/// only. `on_epoch` runs after each epoch.
class Trainer {
 public:
  Trainer(FusionNet& net, TrainConfig cfg) : net_(net), cfg_(cfg), opt_(cfg) {}

  void prepare_targets(const std::vector<Sample>& samples) {
    targets_.clear();
    targets_.reserve(samples.size());
    for (const auto& s : samples) targets_.push_back(match_anchors(net_.anchors(), s.boxes));
  }

  std::vector<LossLogRow> run(const std::vector<Sample>& samples,
                              const std::function<void(std::size_t)>& on_epoch = {}) {
    for (const auto& s : samples) {
      if (s.weather.kind != WeatherKind::clear) {
        throw DataError("training sample " + std::to_string(s.id) + " is not clear weather");
      }
    }
    if (targets_.size() != samples.size()) prepare_targets(samples);
    std::vector<LossLogRow> log;
    const bool dropout = net_.mode().kind == FusionKind::entropy_deep && cfg_.dropout_p > 0;
    std::size_t step = 0;
    for (std::size_t epoch = 0; epoch < cfg_.epochs; ++epoch) {
      Rng rng(derive_seed(cfg_.seed, 0xe90c0000ULL + epoch));
      std::vector<std::size_t> order(samples.size());
      std::iota(order.begin(), order.end(), 0);
      std::shuffle(order.begin(), order.end(), rng);
      LossLogRow window;
      std::size_t in_window = 0;
      for (std::size_t idx : order) {
        NetInput input = samples[idx].input;
        std::size_t active = kStreamCount;
        if (dropout) {
          DropoutResult d = dropout_streams(input, cfg_.dropout_p, rng);
          input = std::move(d.input);
          active = static_cast<std::size_t>(std::count(d.kept.begin(), d.kept.end(), true));
        }
        double cls = 0, reg = 0;
        {
          Tape tape;
          Tape::Scope scope(tape);
          const ForwardOutput out = net_.forward(input);
          const auto loss = detection_loss(out.logits, out.regression, targets_[idx], cfg_.mining_ratio);
          cls = loss.classification.item();
          reg = loss.regression.item();
          backward(loss.total());
        }
        opt_.step(net_.params());
        ++step;
        window.classification += cls;
        window.regression += reg;
        ++window.active_streams[active - 1];
        if (++in_window == cfg_.log_every) {
          window.epoch = epoch;
          window.step = step;
          window.classification /= static_cast<double>(in_window);
          window.regression /= static_cast<double>(in_window);
          log.push_back(window);
          window = {};
          in_window = 0;
        }
      }
      if (in_window > 0) {
        window.epoch = epoch;
        window.step = step;
        window.classification /= static_cast<double>(in_window);
        window.regression /= static_cast<double>(in_window);
        log.push_back(window);
      }
      if (on_epoch) on_epoch(epoch);
    }
    return log;
  }

 private:
  FusionNet& net_;
  TrainConfig cfg_;
  Sgd opt_;
  std::vector<std::vector<AnchorTarget>> targets_;
};

inline std::vector<Detection> detect(const FusionNet& net, const NetInput& input, const DecodeConfig& cfg = {}) {
  const ForwardOutput out = net.forward(input);
  return decode_and_nms(out.logits, out.regression, net.anchors(), net.config().plane.width,
                        net.config().plane.height, cfg);
}

inline std::vector<FrameResult> run_detector(const FusionNet& net, const std::vector<Sample>& samples,
                                             const DecodeConfig& cfg = {}) {
  std::vector<FrameResult> out;
  out.reserve(samples.size());
  for (const auto& s : samples) out.push_back({detect(net, s.input, cfg), s.boxes});
  return out;
}

}  // namespace fogfuse
