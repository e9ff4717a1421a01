#pragma once

// FGF1 checkpoints: magic, a header record describing the architecture, then
// per-parameter records (name length, name, rank, extents as u64, f32 payload)
// until end of file.

#include <cstring>
#include <set>
#include <sstream>
#include <string>

#include "fogfuse/binary_io.hpp"
#include "fogfuse/fusion_net.hpp"

namespace fogfuse {

inline constexpr char kCheckpointMagic[4] = {'F', 'G', 'F', '1'};

struct CheckpointHeader {
  std::string mode;
  PlaneSize plane;
  std::vector<std::size_t> widths;
  std::vector<double> scales;
  std::vector<double> aspect_ratios;
  std::size_t classes = 2;
  std::uint64_t seed = 0;
  bool residual = true;
  std::string digest;

  std::string to_text() const {
    std::ostringstream os;
    os.precision(17);
    auto list = [&](const auto& v) {
      for (std::size_t i = 0; i < v.size(); ++i) os << (i ? "," : "") << v[i];
    };
    os << "mode=" << mode << ";plane=" << plane.width << "x" << plane.height << ";widths=";
    list(widths);
    os << ";scales=";
    list(scales);
    os << ";aspect_ratios=";
    list(aspect_ratios);
    os << ";classes=" << classes << ";residual=" << residual << ";seed=" << seed << ";digest=" << digest;
    return os.str();
  }

  static CheckpointHeader parse(const std::string& text) {
    CheckpointHeader h;
    std::istringstream in(text);
    std::string field;
    auto numbers = [](const std::string& v, auto& out) {
      std::istringstream s(v);
      std::string tok;
      while (std::getline(s, tok, ',')) {
        if (tok.empty()) continue;
        using T = typename std::decay_t<decltype(out)>::value_type;
        if constexpr (std::is_integral_v<T>) out.push_back(static_cast<T>(std::stoull(tok)));
        else out.push_back(std::stod(tok));
      }
    };
    try {
      while (std::getline(in, field, ';')) {
        const auto eq = field.find('=');
        if (eq == std::string::npos) throw DataError("checkpoint header: malformed field '" + field + "'");
        const std::string k = field.substr(0, eq), v = field.substr(eq + 1);
        if (k == "mode") h.mode = v;
        else if (k == "plane") {
          const auto x = v.find('x');
          h.plane = {std::stoi(v.substr(0, x)), std::stoi(v.substr(x + 1))};
        } else if (k == "widths") numbers(v, h.widths);
        else if (k == "scales") numbers(v, h.scales);
        else if (k == "aspect_ratios") numbers(v, h.aspect_ratios);
        else if (k == "classes") h.classes = std::stoull(v);
        else if (k == "residual") h.residual = std::stoi(v) != 0;
        else if (k == "seed") h.seed = std::stoull(v);
        else if (k == "digest") h.digest = v;
      }
    } catch (const std::logic_error&) {
      throw DataError("checkpoint header: unreadable '" + text + "'");
    }
    return h;
  }

  NetConfig net_config() const {
    NetConfig cfg;
    cfg.plane = plane;
    cfg.branch.widths = widths;
    cfg.anchors.scales = scales;
    cfg.anchors.aspect_ratios = aspect_ratios;
    cfg.classes = classes;
    cfg.exchange_residual = residual;
    return cfg;
  }
};

inline CheckpointHeader header_for(const FusionNet& net, std::uint64_t seed, const std::string& digest) {
  const NetConfig& c = net.config();
  CheckpointHeader h;
  h.mode = net.mode().name();
  h.plane = c.plane;
  h.widths = c.branch.widths;
  h.scales = c.anchors.scales;
  h.aspect_ratios = c.anchors.aspect_ratios;
  h.classes = c.classes;
  h.residual = c.exchange_residual;
  h.seed = seed;
  h.digest = digest;
  return h;
}

inline std::vector<std::uint8_t> serialize_checkpoint(const FusionNet& net, const CheckpointHeader& header) {
  io::Writer w;
  w.bytes(kCheckpointMagic, 4);
  w.str(header.to_text());
  const auto& names = net.params().names();
  const auto& tensors = net.params().tensors();
  for (std::size_t i = 0; i < names.size(); ++i) {
    w.str(names[i]);
    w.u64(tensors[i].rank());
    for (std::size_t d : tensors[i].shape()) w.u64(d);
    w.bytes(tensors[i].ptr(), tensors[i].size() * sizeof(float));
  }
  return w.data();
}

inline void save_checkpoint(const std::string& path, const FusionNet& net, const CheckpointHeader& header) {
  const auto bytes = serialize_checkpoint(net, header);
  io::write_file(path, bytes.data(), bytes.size());
}

struct LoadedModel {
  CheckpointHeader header;
  FusionNet net;
};

/// Rebuilds the model described by the header and fills every parameter.
inline LoadedModel load_checkpoint(const std::string& path) {
  const auto data = io::read_file(path);
  io::Reader r(data.data(), data.size(), 0, "checkpoint " + path);
  char magic[4] = {};
  r.bytes(magic, 4);
  if (std::memcmp(magic, kCheckpointMagic, 4) != 0) throw DataError("checkpoint " + path + ": bad magic at offset 0");
  CheckpointHeader header = CheckpointHeader::parse(r.str());
  FusionMode mode;
  NetConfig cfg;
  try {
    mode = parse_fusion_mode(header.mode);
    cfg = header.net_config();
    cfg.branch.validate();
  } catch (const ConfigError& e) {
    throw DataError("checkpoint " + path + ": " + e.what());
  }
  FusionNet net(cfg, mode, 0);
  std::set<std::string> seen;
  while (!r.done()) {
    const std::uint64_t at = r.offset();
    const std::string name = r.str(4096);
    if (!net.params().contains(name)) r.fail("unknown parameter '" + name + "'");
    if (!seen.insert(name).second) r.fail("duplicate parameter '" + name + "'");
    Tensor& t = net.params().at(name);
    const std::uint64_t rank = r.u64();
    Shape shape;
    for (std::uint64_t k = 0; k < rank && k < 8; ++k) shape.push_back(r.u64());
    if (shape != t.shape()) {
      throw DataError("checkpoint " + path + ": parameter '" + name + "' at offset " + std::to_string(at) +
                      " has shape " + shape_string(shape) + ", model expects " + shape_string(t.shape()));
    }
    r.bytes(t.mutable_ptr(), t.size() * sizeof(float));
  }
  if (seen.size() != net.params().size()) {
    throw DataError("checkpoint " + path + ": holds " + std::to_string(seen.size()) + " of " +
                    std::to_string(net.params().size()) + " parameters");
  }
  return {std::move(header), std::move(net)};
}

}  // namespace fogfuse
