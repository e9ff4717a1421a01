#pragma once

// Four-branch single-shot fusion detector with entropy-gated feature exchange,
// and the ablation variants that share its building blocks.

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "fogfuse/encoding.hpp"
#include "fogfuse/entropy.hpp"
#include "fogfuse/error.hpp"
#include "fogfuse/random.hpp"
#include "fogfuse/ssd.hpp"
#include "fogfuse/tensor.hpp"

namespace fogfuse {

enum class FusionKind { entropy_deep, deep_no_entropy, late_fusion, early_concat, single_sensor };

struct FusionMode {
  FusionKind kind = FusionKind::entropy_deep;
  Stream stream = Stream::camera;  // single_sensor only

  static FusionMode single(Stream s) { return {FusionKind::single_sensor, s}; }

  std::string name() const {
    switch (kind) {
      case FusionKind::entropy_deep: return "entropy_deep";
      case FusionKind::deep_no_entropy: return "deep_no_entropy";
      case FusionKind::late_fusion: return "late_fusion";
      case FusionKind::early_concat: return "early_concat";
      case FusionKind::single_sensor: return std::string(stream_name(stream)) + "_only";
    }
    return "?";
  }

  bool multi_branch() const {
    return kind == FusionKind::entropy_deep || kind == FusionKind::deep_no_entropy ||
           kind == FusionKind::late_fusion;
  }
  bool exchanges() const { return kind == FusionKind::entropy_deep || kind == FusionKind::deep_no_entropy; }

  friend bool operator==(const FusionMode& a, const FusionMode& b) {
    return a.kind == b.kind && (a.kind != FusionKind::single_sensor || a.stream == b.stream);
  }
};

inline FusionMode parse_fusion_mode(std::string_view name) {
  for (FusionKind k : {FusionKind::entropy_deep, FusionKind::deep_no_entropy, FusionKind::late_fusion,
                       FusionKind::early_concat}) {
    if (FusionMode{k}.name() == name) return {k};
  }
  for (Stream s : kAllStreams) {
    if (FusionMode::single(s).name() == name) return FusionMode::single(s);
  }
  throw ConfigError("unknown fusion mode '" + std::string(name) + "'");
}

/// Table rows in order.
inline std::vector<FusionMode> all_fusion_modes() {
  return {{FusionKind::entropy_deep}, {FusionKind::deep_no_entropy}, {FusionKind::late_fusion},
          {FusionKind::early_concat}, FusionMode::single(Stream::camera), FusionMode::single(Stream::lidar),
          FusionMode::single(Stream::radar), FusionMode::single(Stream::gated)};
}

inline constexpr std::size_t kPyramidLevels = 6;

struct BranchConfig {
  std::array<std::size_t, kStreamCount> input_channels{3, 3, 2, 3};
  std::vector<std::size_t> widths{16, 32, 48, 48, 48, 48};

  void validate() const {
    if (widths.size() != kPyramidLevels) {
      throw ConfigError("branch widths: expected " + std::to_string(kPyramidLevels) + " stages, got " +
                        std::to_string(widths.size()));
    }
    for (std::size_t w : widths) {
      if (w == 0) throw ConfigError("branch widths must be positive");
    }
  }
};

/// Stage strides: stage 0 pools by two, stages 2, 4 and 5 convolve with stride two.
inline constexpr std::array<std::size_t, kPyramidLevels> kStageStride{1, 1, 2, 1, 2, 2};

/// Spatial extent of every pyramid level for a plane.
inline std::vector<LevelShape> pyramid_shapes(PlaneSize plane) {
  if (plane.height % 2 || plane.width % 2 || plane.height == 0 || plane.width == 0) {
    throw ConfigError("plane extents must be even and positive");
  }
  std::vector<LevelShape> out;
  LevelShape s{static_cast<std::size_t>(plane.height) / 2, static_cast<std::size_t>(plane.width) / 2};
  for (std::size_t l = 0; l < kPyramidLevels; ++l) {
    if (kStageStride[l] == 2) s = {(s.height + 1) / 2, (s.width + 1) / 2};
    out.push_back(s);
  }
  return out;
}

struct NetConfig {
  PlaneSize plane{156, 48};
  BranchConfig branch;
  AnchorConfig anchors;
  std::size_t classes = 2;  // background + car
  bool exchange_residual = true;  // exchange output added to the branch, or replacing it
};

/// Encoded planes plus per-stream entropy maps (bits), one slot per stream.
struct NetInput {
  std::array<Tensor, kStreamCount> streams;  // [C,H,W]
  std::array<Tensor, kStreamCount> entropy;  // [1,H,W]
};

inline NetInput make_net_input(EncodedFrame encoded, const EntropyConfig& cfg = {}) {
  NetInput in;
  for (Stream s : kAllStreams) {
    const auto i = static_cast<std::size_t>(s);
    in.streams[i] = encoded.stream(s);
    in.entropy[i] = stream_entropy(in.streams[i], cfg).values;
  }
  return in;
}

struct DropoutResult {
  NetInput input;
  std::array<bool, kStreamCount> kept{};
};

/// Zeroes each stream and its entropy independently with probability p; if
/// every stream was dropped, one uniformly chosen stream is restored.
inline DropoutResult dropout_streams(const NetInput& in, double p, Rng& rng) {
  std::bernoulli_distribution drop(p);
  DropoutResult r{in, {}};
  bool any = false;
  for (std::size_t s = 0; s < kStreamCount; ++s) {
    r.kept[s] = !drop(rng);
    any = any || r.kept[s];
  }
  if (!any) {
    std::uniform_int_distribution<std::size_t> pick(0, kStreamCount - 1);
    r.kept[pick(rng)] = true;
  }
  for (std::size_t s = 0; s < kStreamCount; ++s) {
    if (r.kept[s]) continue;
    r.input.streams[s] = Tensor(in.streams[s].shape());
    r.input.entropy[s] = Tensor(in.entropy[s].shape());
  }
  return r;
}

/// Area average of a [1,H,W] map onto an h x w grid; cell (y,x) covers rows
/// [y*H/h, max((y+1)*H/h, y*H/h + 1)).
inline std::vector<float> adaptive_average_pool(const Tensor& map, LevelShape level) {
  const std::size_t H = map.dim(1), W = map.dim(2);
  std::vector<float> out(level.height * level.width);
  const float* src = map.ptr();
  for (std::size_t y = 0; y < level.height; ++y) {
    const std::size_t y0 = y * H / level.height, y1 = std::max((y + 1) * H / level.height, y0 + 1);
    for (std::size_t x = 0; x < level.width; ++x) {
      const std::size_t x0 = x * W / level.width, x1 = std::max((x + 1) * W / level.width, x0 + 1);
      double s = 0.0;
      for (std::size_t yy = y0; yy < y1; ++yy)
        for (std::size_t xx = x0; xx < x1; ++xx) s += src[yy * W + xx];
      out[y * level.width + x] = static_cast<float>(s / static_cast<double>((y1 - y0) * (x1 - x0)));
    }
  }
  return out;
}

/// Stacked entropies for one level, scaled to [0,1]: [1,S,h,w].
inline Tensor level_entropies(const std::array<Tensor, kStreamCount>& entropy, LevelShape level) {
  Tensor out(Shape{1, kStreamCount, level.height, level.width});
  float* dst = out.mutable_ptr();
  for (std::size_t s = 0; s < kStreamCount; ++s) {
    const auto pooled = adaptive_average_pool(entropy[s], level);
    for (std::size_t i = 0; i < pooled.size(); ++i) {
      dst[s * pooled.size() + i] = pooled[i] / static_cast<float>(EntropyConfig::kMaxBits);
    }
  }
  return out;
}

template <class T>
struct ExchangeParams {
  BasicTensor<T> gate_w;  // [C_total, S, 1, 1]
  BasicTensor<T> gate_b;  // [C_total]
  std::vector<BasicTensor<T>> proj_w;  // per sensor [C_s, C_total + S, 1, 1]
  std::vector<BasicTensor<T>> proj_b;  // per sensor [C_s]
  bool residual = true;
};

/// Gate g = sigmoid(conv1x1(entropies)) per fused channel, fused = concat(features) * g,
/// then each sensor receives conv1x1(concat(fused, entropies)) added to its input
/// (or in place of it when `residual` is off).
/// `gate_override` replaces g by a constant.
template <class T>
std::vector<BasicTensor<T>> exchange_block(const std::vector<BasicTensor<T>>& features,
                                           const BasicTensor<T>& entropies, const ExchangeParams<T>& p,
                                           std::optional<T> gate_override = std::nullopt,
                                           BasicTensor<T>* gate_out = nullptr) {
  if (features.empty()) throw ShapeError("exchange_block: no features");
  for (const auto& f : features) {
    detail::require_rank(f, 4, "exchange_block", "feature");
    if (f.dim(2) != entropies.dim(2) || f.dim(3) != entropies.dim(3) || f.dim(2) != features[0].dim(2) ||
        f.dim(3) != features[0].dim(3)) {
      throw ShapeError("exchange_block: spatial mismatch, feature " + shape_string(f.shape()) +
                       " vs entropy " + shape_string(entropies.shape()));
    }
  }
  if (p.proj_w.size() != features.size()) throw ShapeError("exchange_block: projection count differs from sensors");
  const BasicTensor<T> stacked = concat(features, 1);
  BasicTensor<T> gate;
  if (gate_override) {
    gate = BasicTensor<T>(stacked.shape(), *gate_override);
  } else {
    gate = sigmoid(add_bias(conv2d(entropies, p.gate_w), p.gate_b));
  }
  if (gate_out) *gate_out = gate;
  const BasicTensor<T> fused = mul(stacked, gate);
  const BasicTensor<T> with_entropy = concat(std::vector<BasicTensor<T>>{fused, entropies}, 1);
  std::vector<BasicTensor<T>> out;
  out.reserve(features.size());
  for (std::size_t s = 0; s < features.size(); ++s) {
    const BasicTensor<T> proj = add_bias(conv2d(with_entropy, p.proj_w[s]), p.proj_b[s]);
    out.push_back(p.residual ? add(features[s], proj) : proj);
  }
  return out;
}

/// Ordered, named parameter set.
class ParameterStore {
 public:
  Tensor& add(const std::string& name, Shape shape) {
    if (index_.count(name)) throw std::logic_error("duplicate parameter " + name);
    index_[name] = tensors_.size();
    names_.push_back(name);
    tensors_.emplace_back(std::move(shape));
    tensors_.back().set_requires_grad(true);
    return tensors_.back();
  }
  const Tensor& at(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::out_of_range("no parameter " + name);
    return tensors_[it->second];
  }
  Tensor& at(const std::string& name) { return const_cast<Tensor&>(std::as_const(*this).at(name)); }
  bool contains(const std::string& name) const { return index_.count(name) != 0; }
  std::vector<Tensor>& tensors() { return tensors_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  const std::vector<std::string>& names() const { return names_; }
  std::size_t size() const { return tensors_.size(); }

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> tensors_;
  std::unordered_map<std::string, std::size_t> index_;
};

inline std::uint64_t name_hash(std::string_view s) {
  std::uint64_t h = 1469598103934665603ULL;
  for (char c : s) h = (h ^ static_cast<unsigned char>(c)) * 1099511628211ULL;
  return h;
}

struct ForwardOptions {
  std::optional<float> gate_override;
};

struct ForwardOutput {
  std::vector<Tensor> features;  // head input per level, [1,C,h,w]
  std::vector<std::vector<Tensor>> branch_features;  // per level, per branch after exchange
  std::vector<Tensor> gates;      // per level, exchange modes only
  Tensor logits;      // [N, classes]
  Tensor regression;  // [N, 4]
};

class FusionNet {
 public:
  FusionNet(NetConfig cfg, FusionMode mode, std::uint64_t seed) : cfg_(std::move(cfg)), mode_(mode) {
    cfg_.branch.validate();
    levels_ = pyramid_shapes(cfg_.plane);
    anchors_ = make_anchors(levels_, cfg_.plane.width, cfg_.plane.height, cfg_.anchors);
    build(seed);
  }

  const NetConfig& config() const { return cfg_; }
  FusionMode mode() const { return mode_; }
  const std::vector<LevelShape>& levels() const { return levels_; }
  const AnchorSet& anchors() const { return anchors_; }
  ParameterStore& params() { return params_; }
  const ParameterStore& params() const { return params_; }

  /// Branch names in order: sensor names for multi-branch modes, "early" for
  /// the concatenated branch, or the single sensor.
  std::vector<std::string> branch_names() const {
    if (mode_.multi_branch()) {
      std::vector<std::string> out;
      for (Stream s : kAllStreams) out.emplace_back(stream_name(s));
      return out;
    }
    if (mode_.kind == FusionKind::early_concat) return {"early"};
    return {std::string(stream_name(mode_.stream))};
  }

  ForwardOutput forward(const NetInput& in, const ForwardOptions& opt = {}) const {
    for (Stream s : kAllStreams) {
      const auto i = static_cast<std::size_t>(s);
      const Tensor& t = in.streams[i];
      if (t.rank() != 3 || t.dim(0) != cfg_.branch.input_channels[i] ||
          t.dim(1) != static_cast<std::size_t>(cfg_.plane.height) ||
          t.dim(2) != static_cast<std::size_t>(cfg_.plane.width)) {
        throw ShapeError("forward: " + std::string(stream_name(s)) + " stream has shape " +
                         shape_string(t.shape()) + ", model expects " +
                         std::to_string(cfg_.branch.input_channels[i]) + "x" + std::to_string(cfg_.plane.height) +
                         "x" + std::to_string(cfg_.plane.width));
      }
    }
    if (opt.gate_override && !mode_.exchanges()) {
      throw ConfigError("forward: gate override requires an exchange mode, got " + mode_.name());
    }
    const auto H = static_cast<std::size_t>(cfg_.plane.height), W = static_cast<std::size_t>(cfg_.plane.width);
    auto batch = [&](const Tensor& t) { return reshape(t, Shape{1, t.dim(0), H, W}); };

    std::vector<Tensor> x;
    if (mode_.multi_branch()) {
      for (std::size_t s = 0; s < kStreamCount; ++s) x.push_back(batch(in.streams[s]));
    } else if (mode_.kind == FusionKind::early_concat) {
      std::vector<Tensor> planes;
      for (std::size_t s = 0; s < kStreamCount; ++s) planes.push_back(batch(in.streams[s]));
      x.push_back(concat(planes, 1));
    } else {
      x.push_back(batch(in.streams[static_cast<std::size_t>(mode_.stream)]));
    }
    const std::vector<std::string> names = branch_names();
    const std::optional<float> gate_value =
        mode_.kind == FusionKind::deep_no_entropy ? std::optional<float>(1.0f) : opt.gate_override;

    ForwardOutput out;
    std::vector<Tensor> cls_levels, reg_levels;
    for (std::size_t l = 0; l < kPyramidLevels; ++l) {
      for (std::size_t b = 0; b < x.size(); ++b) {
        const std::string pre = "branch." + names[b] + ".conv" + std::to_string(l);
        Tensor h = relu(add_bias(conv2d(x[b], params_.at(pre + ".w"), kStageStride[l], 1), params_.at(pre + ".b")));
        if (l == 0) h = maxpool2(h);
        x[b] = h;
      }
      if (mode_.exchanges()) {
        const Tensor ent = level_entropies(in.entropy, levels_[l]);
        Tensor gate;
        x = exchange_block(x, ent, exchange_params(l), gate_value, &gate);
        out.gates.push_back(gate);
      }
      out.branch_features.push_back(x);
      const Tensor feat = x.size() == 1 ? x[0] : concat(x, 1);
      out.features.push_back(feat);
      const std::string hp = "head" + std::to_string(l);
      const Tensor hidden =
          relu(add_bias(conv2d(feat, params_.at(hp + ".proj.w")), params_.at(hp + ".proj.b")));
      cls_levels.push_back(add_bias(conv2d(hidden, params_.at(hp + ".cls.w"), 1, 1), params_.at(hp + ".cls.b")));
      reg_levels.push_back(add_bias(conv2d(hidden, params_.at(hp + ".reg.w"), 1, 1), params_.at(hp + ".reg.b")));
    }
    out.logits = flatten_anchor_outputs(cls_levels, anchors_.per_cell, cfg_.classes);
    out.regression = flatten_anchor_outputs(reg_levels, anchors_.per_cell, 4);
    return out;
  }

  ExchangeParams<float> exchange_params(std::size_t level) const {
    const std::string pre = "exchange" + std::to_string(level);
    ExchangeParams<float> p;
    p.residual = cfg_.exchange_residual;
    if (params_.contains(pre + ".gate.w")) {
      p.gate_w = params_.at(pre + ".gate.w");
      p.gate_b = params_.at(pre + ".gate.b");
    }
    for (Stream s : kAllStreams) {
      p.proj_w.push_back(params_.at(pre + ".proj." + std::string(stream_name(s)) + ".w"));
      p.proj_b.push_back(params_.at(pre + ".proj." + std::string(stream_name(s)) + ".b"));
    }
    return p;
  }

 private:
  void build(std::uint64_t seed) {
    const auto& widths = cfg_.branch.widths;
    const std::vector<std::string> names = branch_names();
    auto init = [&](const std::string& name, Shape shape, bool zero = false) {
      Tensor& t = params_.add(name, shape);
      if (zero || shape.size() == 1) return;
      // Seeded by name so modes sharing a layer start from identical weights.
      Rng rng(derive_seed(seed, name_hash(name)));
      const std::size_t rf = shape[2] * shape[3];
      glorot_uniform(t, shape[1] * rf, shape[0] * rf, rng);
    };
    for (std::size_t b = 0; b < names.size(); ++b) {
      std::size_t cin = 0;
      if (mode_.multi_branch()) {
        cin = cfg_.branch.input_channels[b];
      } else if (mode_.kind == FusionKind::early_concat) {
        for (std::size_t c : cfg_.branch.input_channels) cin += c;
      } else {
        cin = cfg_.branch.input_channels[static_cast<std::size_t>(mode_.stream)];
      }
      for (std::size_t l = 0; l < kPyramidLevels; ++l) {
        const std::string pre = "branch." + names[b] + ".conv" + std::to_string(l);
        init(pre + ".w", {widths[l], cin, 3, 3});
        init(pre + ".b", {widths[l]});
        cin = widths[l];
      }
    }
    if (mode_.exchanges()) {
      for (std::size_t l = 0; l < kPyramidLevels; ++l) {
        const std::string pre = "exchange" + std::to_string(l);
        const std::size_t total = widths[l] * kStreamCount;
        if (mode_.kind == FusionKind::entropy_deep) {
          init(pre + ".gate.w", {total, kStreamCount, 1, 1}, true);
          init(pre + ".gate.b", {total});
        }
        for (Stream s : kAllStreams) {
          const std::string pp = pre + ".proj." + std::string(stream_name(s));
          init(pp + ".w", {widths[l], total + kStreamCount, 1, 1}, true);
          init(pp + ".b", {widths[l]});
        }
      }
    }
    const std::size_t A = anchors_.per_cell;
    for (std::size_t l = 0; l < kPyramidLevels; ++l) {
      const std::string hp = "head" + std::to_string(l);
      const std::size_t cin = widths[l] * names.size();
      init(hp + ".proj.w", {widths[l], cin, 1, 1});
      init(hp + ".proj.b", {widths[l]});
      init(hp + ".cls.w", {A * cfg_.classes, widths[l], 3, 3});
      init(hp + ".cls.b", {A * cfg_.classes});
      init(hp + ".reg.w", {A * 4, widths[l], 3, 3});
      init(hp + ".reg.b", {A * 4});
    }
  }

  NetConfig cfg_;
  FusionMode mode_;
  std::vector<LevelShape> levels_;
  AnchorSet anchors_;
  ParameterStore params_;
};

}  // namespace fogfuse
