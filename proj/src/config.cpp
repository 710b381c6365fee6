#include "bimspu/config.hpp"

#include <bit>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace bimspu {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_real(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

double to_real(const std::string& key, const std::string& v) {
  double out = 0.0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || !std::isfinite(out)) {
    throw ContractError("config key '" + key + "': expected a real number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_count(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) {
    throw ContractError("config key '" + key + "': expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "on" || v == "1") return true;
  if (v == "false" || v == "off" || v == "0") return false;
  throw ContractError("config key '" + key + "': expected true/false, got '" + v + "'");
}

std::vector<double> to_list(const std::string& key, const std::string& v) {
  std::vector<double> out;
  if (v.empty()) return out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(to_real(key, trim(item)));
  return out;
}

struct Field {
  std::string key;
  std::string type;
  std::string doc;
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<std::string(const TrainConfig&)> get;
};

#define COUNT_FIELD(name, member, doc)                                                           \
  Field {                                                                                        \
    name, "integer", doc,                                                                        \
        [](TrainConfig& c, const std::string& v) { c.member = static_cast<decltype(c.member)>(to_count(name, v)); }, \
        [](const TrainConfig& c) { return std::to_string(c.member); }                            \
  }
#define REAL_FIELD(name, member, doc)                                                   \
  Field {                                                                               \
    name, "real", doc, [](TrainConfig& c, const std::string& v) { c.member = to_real(name, v); }, \
        [](const TrainConfig& c) { return fmt_real(c.member); }                         \
  }
#define BOOL_FIELD(name, member, doc)                                                   \
  Field {                                                                               \
    name, "bool", doc, [](TrainConfig& c, const std::string& v) { c.member = to_bool(name, v); }, \
        [](const TrainConfig& c) { return std::string(c.member ? "true" : "false"); }   \
  }

const std::vector<Field>& schema() {
  static const std::vector<Field> fields = {
      Field{"preset", "desk|full", "architecture preset supplying every default",
            [](TrainConfig& c, const std::string& v) { c.preset = v; },
            [](const TrainConfig& c) { return c.preset; }},
      COUNT_FIELD("ratio", ratio, "upsampling ratio r, a power of two >= 2"),
      COUNT_FIELD("patch_points", patch_points, "input points per patch N"),
      COUNT_FIELD("knn_k", knn_k, "neighbors in the edge-conv graphs"),
      COUNT_FIELD("entry_channels", entry_channels, "extractor entry width c0"),
      COUNT_FIELD("growth", growth, "channels added per dense unit g (even)"),
      COUNT_FIELD("units", units, "dense edge-conv units U"),
      COUNT_FIELD("channels", channels, "expansion width C2"),
      COUNT_FIELD("head_hidden", head_hidden, "hidden width of the coordinate heads"),
      REAL_FIELD("fusion_eps", fusion_eps, "fusion normalizer epsilon"),
      BOOL_FIELD("fusion", fusion, "bi-directional multi-scale fusion (false: left pathway only)"),
      BOOL_FIELD("residual", residual, "residual blocks (false: plain two-layer MLPs)"),
      BOOL_FIELD("ms_supervision", ms_supervision, "supervise intermediate scales (false: top scale only)"),
      Field{"alphas", "real list", "comma-separated per-scale loss weights (default by ratio)",
            [](TrainConfig& c, const std::string& v) { c.alphas = to_list("alphas", v); },
            [](const TrainConfig& c) {
              std::string out;
              for (std::size_t i = 0; i < c.alphas.size(); ++i) out += (i ? "," : "") + fmt_real(c.alphas[i]);
              return out;
            }},
      REAL_FIELD("lambda", lambda, "repulsion weight"),
      COUNT_FIELD("repulsion_k", repulsion_k, "repulsion neighbors K"),
      REAL_FIELD("repulsion_h", repulsion_h, "repulsion radius h"),
      REAL_FIELD("lr", lr, "initial learning rate"),
      REAL_FIELD("decay_factor", decay_factor, "learning-rate decay factor"),
      COUNT_FIELD("decay_every", decay_every, "epochs between decays"),
      COUNT_FIELD("epochs", epochs, "training epochs"),
      COUNT_FIELD("batch_size", batch_size, "patches per optimizer step"),
      COUNT_FIELD("seed", seed, "master random seed"),
      BOOL_FIELD("augment", augment, "random rotation/scale/shift of training pairs"),
      BOOL_FIELD("aug_rotate", augmentation.rotate, "uniform random rotation"),
      REAL_FIELD("aug_scale_min", augmentation.scale_min, "lower scale bound"),
      REAL_FIELD("aug_scale_max", augmentation.scale_max, "upper scale bound"),
      REAL_FIELD("aug_shift", augmentation.shift, "per-axis shift bound"),
      BOOL_FIELD("resample_input", resample_input, "redraw the sparse input every epoch"),
      COUNT_FIELD("checkpoint_every", checkpoint_every, "epochs between periodic checkpoints (0: end only)"),
      COUNT_FIELD("patches_per_mesh", patches_per_mesh, "training patches extracted per mesh"),
      COUNT_FIELD("object_points", object_points, "points in each sparse test object"),
      COUNT_FIELD("oversample", oversample, "surface oversampling factor before FPS thinning"),
  };
  return fields;
}

#undef COUNT_FIELD
#undef REAL_FIELD
#undef BOOL_FIELD

const std::set<std::string> kRequired = {"preset", "ratio", "epochs", "seed"};

}  // namespace

TrainConfig TrainConfig::desk() { return TrainConfig{}; }

TrainConfig TrainConfig::full() {
  TrainConfig c;
  c.preset = "full";
  c.patch_points = 256;
  c.entry_channels = 24;
  c.growth = 208;
  c.units = 3;
  c.channels = 128;
  c.head_hidden = 64;
  c.epochs = 400;
  c.batch_size = 28;
  c.patches_per_mesh = 200;
  return c;
}

TrainConfig TrainConfig::for_preset(const std::string& name) {
  if (name == "desk") return desk();
  if (name == "full") return full();
  throw ContractError("config key 'preset': unknown preset '" + name + "' (expected desk or full)");
}

std::size_t TrainConfig::levels() const {
  if (ratio < 2 || !std::has_single_bit(ratio)) {
    throw ContractError("ratio must be a power of two >= 2, got " + std::to_string(ratio));
  }
  return static_cast<std::size_t>(std::countr_zero(ratio));
}

ModelConfig TrainConfig::model() const {
  ModelConfig m;
  m.extractor.entry_channels = entry_channels;
  m.extractor.growth = growth;
  m.extractor.units = units;
  m.extractor.k = knn_k;
  m.channels = channels;
  m.levels = levels();
  m.head_hidden = head_hidden;
  m.fusion_eps = fusion_eps;
  m.fusion = fusion;
  m.residual = residual;
  return m;
}

LossConfig TrainConfig::loss() const {
  LossConfig l;
  l.alphas = alphas.empty() ? default_alphas(levels()) : alphas;
  if (!ms_supervision) {
    for (std::size_t i = 0; i + 1 < l.alphas.size(); ++i) l.alphas[i] = 0.0;
  }
  l.lambda = lambda;
  l.repulsion_k = repulsion_k;
  l.repulsion_h = repulsion_h;
  return l;
}

void TrainConfig::validate() const {
  const auto l = levels();
  if (patch_points < knn_k) throw ContractError("patch_points must be >= knn_k");
  if (!(lr > 0.0)) throw ContractError("lr must be positive");
  if (!(decay_factor > 0.0 && decay_factor <= 1.0)) throw ContractError("decay_factor must lie in (0,1]");
  if (decay_every == 0) throw ContractError("decay_every must be positive");
  if (batch_size == 0) throw ContractError("batch_size must be positive");
  if (epochs == 0) throw ContractError("epochs must be positive");
  if (repulsion_k >= 2 * patch_points) throw ContractError("repulsion_k must be smaller than the first scale size");
  if (oversample < 2) throw ContractError("oversample must be >= 2");
  if (object_points < patch_points) throw ContractError("object_points must be >= patch_points");
  if (patches_per_mesh == 0) throw ContractError("patches_per_mesh must be positive");
  loss().validate(l);
  if (augment) {
    Rng probe(0);
    (void)bimspu::augment(PointCloud({Point3::Zero()}), PointCloud({Point3::Zero()}), probe, augmentation);
  }
}

TrainConfig parse_config(std::istream& in, const std::string& source) {
  std::map<std::string, std::string> values;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    line = trim(line.substr(0, line.find('#')));
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ContractError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
    }
    const auto key = trim(line.substr(0, eq));
    const auto value = trim(line.substr(eq + 1));
    bool known = false;
    for (const auto& f : schema()) known = known || f.key == key;
    if (!known) throw ContractError(source + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
    if (!values.emplace(key, value).second) {
      throw ContractError(source + ":" + std::to_string(lineno) + ": duplicate config key '" + key + "'");
    }
  }
  for (const auto& key : kRequired) {
    if (!values.count(key)) throw ContractError(source + ": missing required config key '" + key + "'");
  }
  TrainConfig cfg = TrainConfig::for_preset(values.at("preset"));
  for (const auto& f : schema()) {
    auto it = values.find(f.key);
    if (it != values.end()) f.set(cfg, it->second);
  }
  cfg.validate();
  return cfg;
}

TrainConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open config " + path.string());
  return parse_config(in, path.string());
}

std::string serialize_config(const TrainConfig& cfg) {
  std::string out;
  for (const auto& f : schema()) out += f.key + " = " + f.get(cfg) + "\n";
  return out;
}

std::string config_reference() {
  std::string out = "Config keys (flat 'key = value'; required: preset, ratio, epochs, seed):\n";
  for (const auto& f : schema()) {
    char buf[160];
    std::snprintf(buf, sizeof(buf), "  %-18s %-10s %s\n", f.key.c_str(), f.type.c_str(), f.doc.c_str());
    out += buf;
  }
  return out;
}

}  // namespace bimspu
