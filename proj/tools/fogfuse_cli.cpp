// fogfuse: generate data, analyze entropy, train, evaluate and ablate.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "fogfuse/pipeline.hpp"

namespace fs = std::filesystem;
using namespace fogfuse;

namespace {

struct Options {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string out = "run";
};

class UsageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

RunConfig load_config(const Options& o) {
  RunConfig cfg;
  if (!o.config_path.empty()) {
    std::ifstream in(o.config_path);
    if (!in) throw ConfigError("cannot read config " + o.config_path);
    std::stringstream ss;
    ss << in.rdbuf();
    cfg.parse(ss.str(), o.config_path);
  }
  if (o.seed) cfg.seed = *o.seed;
  cfg.validate();
  return cfg;
}

void write_text(const fs::path& p, const std::string& s) {
  fs::create_directories(p.parent_path());
  io::write_file(p.string(), s.data(), s.size());
}

void record_config(const RunConfig& cfg, const fs::path& out) {
  write_text(out / "config.txt", "# config_digest=" + cfg.digest() + "\n" + cfg.to_text());
}

fs::path dataset_dir(const RunConfig& cfg, const Options& o) {
  return cfg.dataset.empty() ? fs::path(o.out) / "dataset" : fs::path(cfg.dataset);
}

PreparedData load_prepared(const RunConfig& cfg, const Options& o) {
  const fs::path dir = dataset_dir(cfg, o);
  if (!fs::exists(dir / "index.txt")) {
    throw UsageError("no dataset at " + dir.string() + "; run `fogfuse generate` or set data.dataset");
  }
  const auto frames = read_dataset(dir);
  const auto split_bytes = io::read_file((dir / "split.txt").string());
  const SplitManifest split = SplitManifest::parse(std::string(split_bytes.begin(), split_bytes.end()));
  return prepare_samples(frames, split, cfg);
}

int cmd_generate(const Options& o) {
  const RunConfig cfg = load_config(o);
  record_config(cfg, o.out);
  const GeneratedDataset d = generate_dataset(cfg);
  const fs::path dir = dataset_dir(cfg, o);
  write_dataset(d.frames, dir, cfg.digest());
  write_text(dir / "split.txt", "# config_digest=" + cfg.digest() + "\n" + d.split.to_text());
  std::cout << "wrote " << d.frames.size() << " frames to " << dir.string() << "\n";
  return 0;
}

int cmd_entropy(const Options& o) {
  const RunConfig cfg = load_config(o);
  record_config(cfg, o.out);
  std::optional<fs::path> pgm;
  if (cfg.dump_pgm) pgm = fs::path(o.out) / "entropy_maps";
  const auto rows = entropy_sweep(cfg, cfg.visibilities, {0.0}, cfg.entropy_scenes, pgm);
  const std::string csv = entropy_csv(rows, cfg.digest());
  write_text(fs::path(o.out) / "entropy.csv", csv);
  std::cout << csv;
  return 0;
}

int cmd_train(const Options& o) {
  const RunConfig cfg = load_config(o);
  record_config(cfg, o.out);
  const PreparedData data = load_prepared(cfg, o);
  const FusionMode mode = parse_fusion_mode(cfg.mode);
  const fs::path dir = fs::path(o.out) / mode.name();
  const TrainedModel m = train_mode(cfg, mode, derive_seed(cfg.seed, 0x5eed0000ULL), data.train, dir);
  std::cout << "trained " << mode.name() << " for " << cfg.train.epochs << " epochs, checkpoint "
            << (dir / "model.fgf").string() << "\n";
  return 0;
}

int cmd_eval(const Options& o) {
  const RunConfig cfg = load_config(o);
  record_config(cfg, o.out);
  const fs::path ckpt =
      cfg.checkpoint.empty() ? fs::path(o.out) / parse_fusion_mode(cfg.mode).name() / "model.fgf" : fs::path(cfg.checkpoint);
  if (!fs::exists(ckpt)) throw UsageError("no checkpoint at " + ckpt.string() + "; run `fogfuse train` or set eval.checkpoint");
  const LoadedModel model = load_checkpoint(ckpt.string());
  const PreparedData data = load_prepared(cfg, o);
  ApTable table;
  for (const auto& [key, ap] : evaluate_model(model.net, data, cfg)) table.set(model.net.mode().name(), key.first, key.second, ap);
  const std::string csv = table.to_csv(cfg.digest());
  write_text(fs::path(o.out) / ("eval_" + model.net.mode().name() + ".csv"), csv);
  std::cout << csv;
  return 0;
}

int cmd_ablate(const Options& o) {
  const RunConfig cfg = load_config(o);
  record_config(cfg, o.out);
  const PreparedData data = load_prepared(cfg, o);
  const auto result = run_ablation(cfg, data, all_fusion_modes(), fs::path(o.out) / "ablation",
                                    [](const std::string& line) { std::cerr << line << "\n"; });
  for (std::size_t k = 0; k < result.per_seed.size(); ++k) {
    write_text(fs::path(o.out) / ("ablation_seed" + std::to_string(k) + ".csv"), result.per_seed[k].to_csv(cfg.digest()));
  }
  const std::string csv = result.median.to_csv(cfg.digest());
  write_text(fs::path(o.out) / "ablation_table.csv", csv);
  std::cout << csv;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Entropy-steered multimodal fusion detector"};
  app.require_subcommand(1);
  Options o;
  std::uint64_t seed = 0;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", o.config_path, "config file (key = value with [sections])");
    sub->add_option("--seed", seed, "overrides data.seed");
    sub->add_option("--out", o.out, "output directory")->capture_default_str();
  };
  std::function<int(const Options&)> action;
  const std::vector<std::pair<std::string, std::function<int(const Options&)>>> commands{
      {"generate", cmd_generate}, {"entropy", cmd_entropy}, {"train", cmd_train},
      {"eval", cmd_eval},         {"ablate", cmd_ablate}};
  const std::map<std::string, std::string> help{
      {"generate", "render the clear training set and the weather test splits"},
      {"entropy", "per-stream entropy over a visibility sweep and darkness"},
      {"train", "train model.mode on the training split"},
      {"eval", "average precision of a checkpoint per weather and difficulty"},
      {"ablate", "train and evaluate every fusion mode, write the table"}};
  std::vector<CLI::App*> subs;
  for (const auto& [name, fn] : commands) {
    CLI::App* sub = app.add_subcommand(name, help.at(name));
    add_common(sub);
    sub->callback([&action, fn = fn] { action = fn; });
    subs.push_back(sub);
  }
  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }
  for (CLI::App* sub : subs) {
    if (sub->parsed() && sub->count("--seed")) o.seed = seed;
  }
  try {
    return action(o);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  }
}
