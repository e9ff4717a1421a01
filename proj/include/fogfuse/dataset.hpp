#pragma once

// FGD1 dataset files with a plain-text offset index, and train/test splits.
//
// frames.fgd: "FGD1", config digest (u64 length + bytes), then records of
// (u64 payload length, payload, u64 FNV-1a of payload).
// index.txt:  "# fogfuse index v1 digest=<hex>" then "id offset length" lines.

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "fogfuse/binary_io.hpp"
#include "fogfuse/error.hpp"
#include "fogfuse/frame.hpp"
#include "fogfuse/random.hpp"

namespace fogfuse {

inline constexpr char kDatasetMagic[4] = {'F', 'G', 'D', '1'};

namespace detail {

inline void put_image(io::Writer& w, const Image& im) {
  w.i64(im.channels);
  w.i64(im.height);
  w.i64(im.width);
  w.f32s(im.values);
}

inline Image get_image(io::Reader& r) {
  Image im;
  im.channels = static_cast<int>(r.i64());
  im.height = static_cast<int>(r.i64());
  im.width = static_cast<int>(r.i64());
  im.values = r.f32s();
  if (im.channels < 0 || im.height < 0 || im.width < 0 ||
      im.values.size() != static_cast<std::size_t>(im.channels) * im.height * im.width) {
    r.fail("image extents disagree with payload");
  }
  return im;
}

inline void put_box(io::Writer& w, const Box2D& b) {
  for (double v : {b.x1, b.y1, b.x2, b.y2}) w.f64(v);
}

inline Box2D get_box(io::Reader& r) {
  Box2D b;
  b.x1 = r.f64();
  b.y1 = r.f64();
  b.x2 = r.f64();
  b.y2 = r.f64();
  return b;
}

}  // namespace detail

inline std::vector<std::uint8_t> encode_frame_record(const MultimodalFrame& f) {
  io::Writer w;
  w.u64(f.id);
  w.u64(f.seed);
  w.u8(static_cast<std::uint8_t>(f.weather.kind));
  w.f64(f.weather.visibility);
  w.f64(f.weather.ambient_light);
  w.f64(f.weather.clutter_rate);
  detail::put_image(w, f.camera);
  detail::put_image(w, f.camera_depth);
  w.u64(f.lidar.points.size());
  for (const auto& p : f.lidar.points) {
    for (double v : {p.x, p.y, p.z, p.intensity}) w.f64(v);
  }
  w.u64(f.radar.detections.size());
  for (const auto& d : f.radar.detections) {
    for (double v : {d.azimuth_deg, d.range, d.radial_velocity, d.amplitude}) w.f64(v);
  }
  detail::put_image(w, f.gated.slices);
  detail::put_image(w, f.gated.ambient);
  detail::put_image(w, f.gated.depth);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) w.f64(f.gated.homography(i, j));
  w.u64(f.boxes.size());
  for (const auto& b : f.boxes) {
    detail::put_box(w, b.box);
    w.i64(b.class_id);
    w.f64(b.occlusion);
    w.f64(b.truncation);
  }
  return w.data();
}

inline MultimodalFrame decode_frame_record(io::Reader& r) {
  MultimodalFrame f;
  f.id = r.u64();
  f.seed = r.u64();
  const std::uint8_t kind = r.u8();
  if (kind > static_cast<std::uint8_t>(WeatherKind::night)) r.fail("unknown weather kind " + std::to_string(kind));
  f.weather.kind = static_cast<WeatherKind>(kind);
  f.weather.visibility = r.f64();
  f.weather.ambient_light = r.f64();
  f.weather.clutter_rate = r.f64();
  f.camera = detail::get_image(r);
  f.camera_depth = detail::get_image(r);
  const std::uint64_t np = r.u64();
  if (np > 10'000'000) r.fail("implausible lidar point count");
  f.lidar.points.resize(np);
  for (auto& p : f.lidar.points) {
    p.x = r.f64();
    p.y = r.f64();
    p.z = r.f64();
    p.intensity = r.f64();
  }
  const std::uint64_t nr = r.u64();
  if (nr > RadarScan::kMaxTargets) r.fail("radar scan exceeds " + std::to_string(RadarScan::kMaxTargets) + " targets");
  f.radar.detections.resize(nr);
  for (auto& d : f.radar.detections) {
    d.azimuth_deg = r.f64();
    d.range = r.f64();
    d.radial_velocity = r.f64();
    d.amplitude = r.f64();
  }
  f.gated.slices = detail::get_image(r);
  f.gated.ambient = detail::get_image(r);
  f.gated.depth = detail::get_image(r);
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) f.gated.homography(i, j) = r.f64();
  const std::uint64_t nb = r.u64();
  if (nb > 100000) r.fail("implausible box count");
  f.boxes.resize(nb);
  for (auto& b : f.boxes) {
    b.box = detail::get_box(r);
    b.class_id = static_cast<int>(r.i64());
    b.occlusion = r.f64();
    b.truncation = r.f64();
  }
  return f;
}

struct IndexEntry {
  std::uint64_t id = 0;
  std::uint64_t offset = 0;  // of the record's length field
  std::uint64_t length = 0;  // payload bytes
};

inline void write_dataset(const std::vector<MultimodalFrame>& frames, const std::filesystem::path& dir,
                          const std::string& digest = {}) {
  std::filesystem::create_directories(dir);
  io::Writer w;
  w.bytes(kDatasetMagic, 4);
  w.str(digest);
  std::vector<IndexEntry> index;
  std::unordered_map<std::uint64_t, bool> seen;
  for (const auto& f : frames) {
    if (seen.count(f.id)) throw DataError("dataset: duplicate frame id " + std::to_string(f.id));
    seen[f.id] = true;
    const auto payload = encode_frame_record(f);
    index.push_back({f.id, w.size(), payload.size()});
    w.u64(payload.size());
    w.bytes(payload.data(), payload.size());
    w.u64(io::fnv1a(payload.data(), payload.size()));
  }
  io::write_file((dir / "frames.fgd").string(), w.data().data(), w.size());
  std::ostringstream os;
  os << "# fogfuse index v1 digest=" << digest << "\n";
  for (const auto& e : index) os << e.id << ' ' << e.offset << ' ' << e.length << '\n';
  const std::string text = os.str();
  io::write_file((dir / "index.txt").string(), text.data(), text.size());
}

/// Random access to a dataset directory; lookups by id go through the offset table.
class DatasetReader {
 public:
  explicit DatasetReader(const std::filesystem::path& dir) {
    const auto data_path = dir / "frames.fgd";
    const auto index_path = dir / "index.txt";
    if (!std::filesystem::exists(data_path) || !std::filesystem::exists(index_path)) {
      throw DataError("dataset: missing frames.fgd or index.txt in " + dir.string());
    }
    data_ = io::read_file(data_path.string());
    io::Reader head(data_.data(), data_.size(), 0, "dataset " + data_path.string());
    char magic[4] = {};
    if (data_.size() < 4) head.fail("file shorter than the magic");
    head.bytes(magic, 4);
    if (std::memcmp(magic, kDatasetMagic, 4) != 0) {
      throw DataError("dataset " + data_path.string() + ": bad magic at offset 0");
    }
    digest_ = head.str();

    std::ifstream in(index_path);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      IndexEntry e;
      if (!(ls >> e.id >> e.offset >> e.length)) {
        throw DataError("dataset index " + index_path.string() + ":" + std::to_string(lineno) + ": malformed entry");
      }
      if (by_id_.count(e.id)) {
        throw DataError("dataset index " + index_path.string() + ":" + std::to_string(lineno) + ": duplicate id " +
                        std::to_string(e.id));
      }
      by_id_[e.id] = entries_.size();
      entries_.push_back(e);
    }
    path_ = data_path.string();
  }

  std::size_t size() const { return entries_.size(); }
  const std::string& digest() const { return digest_; }
  const std::vector<IndexEntry>& entries() const { return entries_; }
  bool contains(std::uint64_t id) const { return by_id_.count(id) != 0; }

  MultimodalFrame read(std::uint64_t id) const {
    auto it = by_id_.find(id);
    if (it == by_id_.end()) throw DataError("dataset: no frame with id " + std::to_string(id));
    return read_entry(entries_[it->second]);
  }

  std::vector<MultimodalFrame> read_all() const {
    std::vector<MultimodalFrame> out;
    out.reserve(entries_.size());
    for (const auto& e : entries_) out.push_back(read_entry(e));
    return out;
  }

 private:
  MultimodalFrame read_entry(const IndexEntry& e) const {
    const std::string what = "dataset " + path_;
    if (e.offset > data_.size() || data_.size() - e.offset < 16 || data_.size() - e.offset - 16 < e.length) {
      throw DataError(what + ": truncated record for id " + std::to_string(e.id) + " at offset " +
                      std::to_string(e.offset));
    }
    io::Reader r(data_.data() + e.offset, e.length + 16, e.offset, what);
    if (r.u64() != e.length) r.fail("record length disagrees with index");
    const std::uint8_t* payload = data_.data() + e.offset + 8;
    io::Reader body(payload, e.length, e.offset + 8, what);
    MultimodalFrame f = decode_frame_record(body);
    if (!body.done()) body.fail("trailing bytes in record");
    io::Reader tail(payload + e.length, 8, e.offset + 8 + e.length, what);
    if (tail.u64() != io::fnv1a(payload, e.length)) {
      throw DataError(what + ": checksum mismatch in record at offset " + std::to_string(e.offset));
    }
    if (f.id != e.id) r.fail("record id " + std::to_string(f.id) + " disagrees with index id " + std::to_string(e.id));
    return f;
  }

  std::string path_;
  std::vector<std::uint8_t> data_;
  std::string digest_;
  std::vector<IndexEntry> entries_;
  std::unordered_map<std::uint64_t, std::size_t> by_id_;
};

inline std::vector<MultimodalFrame> read_dataset(const std::filesystem::path& dir) {
  return DatasetReader(dir).read_all();
}

// ---------------------------------------------------------------------------
// Splits

struct SplitManifest {
  static constexpr const char* kClearOnlyTraining = "clear-only-training";

  std::map<std::string, std::vector<std::uint64_t>> splits;  // "train", "test.<weather>"
  std::string constraint = kClearOnlyTraining;

  std::string to_text() const {
    std::ostringstream os;
    os << "constraint " << constraint << '\n';
    for (const auto& [name, ids] : splits) {
      os << name;
      for (auto id : ids) os << ' ' << id;
      os << '\n';
    }
    return os.str();
  }

  static SplitManifest parse(const std::string& text) {
    SplitManifest m;
    m.constraint.clear();
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      if (line.empty() || line[0] == '#') continue;
      std::istringstream ls(line);
      std::string name;
      ls >> name;
      if (name == "constraint") {
        ls >> m.constraint;
        continue;
      }
      auto& ids = m.splits[name];
      std::string tok;
      while (ls >> tok) {
        try {
          std::size_t used = 0;
          ids.push_back(std::stoull(tok, &used));
          if (used != tok.size()) throw std::invalid_argument(tok);
        } catch (const std::exception&) {
          throw DataError("split manifest:" + std::to_string(lineno) + ": bad frame id '" + tok + "'");
        }
      }
    }
    return m;
  }

  friend bool operator==(const SplitManifest&, const SplitManifest&) = default;
};

struct SplitOptions {
  double train_fraction = 0.8;
  std::size_t min_per_test_kind = 1;
};

/// Scene seeds are sorted and cut into two contiguous ranges; the cut point
/// rotates with `seed`. Training keeps clear frames of its range only; test
/// frames are grouped by weather kind. Every kind present in the input must
/// reach `min_per_test_kind` test frames.
inline SplitManifest make_split(const std::vector<MultimodalFrame>& frames, const SplitOptions& opt,
                                std::uint64_t seed) {
  if (!(opt.train_fraction > 0 && opt.train_fraction < 1)) {
    throw ConfigError("split: train fraction must lie in (0,1)");
  }
  std::vector<std::uint64_t> scenes;
  for (const auto& f : frames) scenes.push_back(f.seed);
  std::sort(scenes.begin(), scenes.end());
  scenes.erase(std::unique(scenes.begin(), scenes.end()), scenes.end());
  const std::size_t n = scenes.size();
  if (n < 2) throw DataError("split: need at least two distinct scenes, got " + std::to_string(n));
  const std::size_t n_train =
      std::clamp<std::size_t>(static_cast<std::size_t>(std::llround(opt.train_fraction * static_cast<double>(n))), 1,
                              n - 1);
  Rng rng(derive_seed(seed, 0x5b117));
  const std::size_t start = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  std::unordered_map<std::uint64_t, bool> in_train;
  for (std::size_t k = 0; k < n; ++k) in_train[scenes[(start + k) % n]] = k < n_train;

  SplitManifest m;
  std::map<WeatherKind, std::size_t> present;
  auto& train = m.splits["train"];
  for (const auto& f : frames) {
    ++present[f.weather.kind];
    if (in_train[f.seed]) {
      if (f.weather.kind == WeatherKind::clear) train.push_back(f.id);
    } else {
      m.splits["test." + std::string(weather_name(f.weather.kind))].push_back(f.id);
    }
  }
  if (train.empty()) throw DataError("split: no clear frames in the training range");
  for (const auto& [kind, count] : present) {
    const auto it = m.splits.find("test." + std::string(weather_name(kind)));
    const std::size_t got = it == m.splits.end() ? 0 : it->second.size();
    if (got < opt.min_per_test_kind) {
      throw DataError("split: insufficient " + std::string(weather_name(kind)) + " frames for the test split (" +
                      std::to_string(got) + " of " + std::to_string(opt.min_per_test_kind) + " required)");
    }
  }
  for (auto& [name, ids] : m.splits) std::sort(ids.begin(), ids.end());
  return m;
}

/// Throws unless splits are disjoint and training holds only clear frames.
inline void validate_split(const SplitManifest& m, const std::vector<MultimodalFrame>& frames) {
  std::unordered_map<std::uint64_t, const MultimodalFrame*> by_id;
  for (const auto& f : frames) by_id[f.id] = &f;
  std::unordered_map<std::uint64_t, std::string> owner;
  for (const auto& [name, ids] : m.splits) {
    for (auto id : ids) {
      auto [it, fresh] = owner.emplace(id, name);
      if (!fresh) throw DataError("split: frame " + std::to_string(id) + " in both " + it->second + " and " + name);
      auto f = by_id.find(id);
      if (f == by_id.end()) throw DataError("split: unknown frame id " + std::to_string(id));
      if (name == "train" && f->second->weather.kind != WeatherKind::clear) {
        throw DataError("split: training frame " + std::to_string(id) + " is " +
                        std::string(weather_name(f->second->weather.kind)));
      }
    }
  }
}

}  // namespace fogfuse
