#include "bimspu/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <sstream>
#include <thread>

#include "bimspu/io.hpp"

namespace bimspu {

namespace {

// Shuffle streams live in a task range disjoint from the fixed-input draws.
constexpr std::uint64_t kShuffleTask = 1ULL << 40;
constexpr std::uint64_t kFixedInputTask = 1ULL << 41;

std::string hex_real(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%a", v);
  return buf;
}

double parse_hex_real(const std::string& s) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (end == s.c_str() || *end != '\0') throw DataError("checkpoint: malformed progress value '" + s + "'");
  return v;
}

void write_tensor(ByteWriter& w, const std::string& name, const Shape& shape, std::span<const double> data) {
  w.bytes(name);
  w.u32(static_cast<std::uint32_t>(shape.size()));
  for (auto d : shape) w.u64(d);
  for (double v : data) w.f32(static_cast<float>(v));
}

std::pair<std::string, Tensor> read_tensor(ByteReader& r) {
  auto name = r.bytes();
  const auto rank = r.u32();
  if (rank == 0 || rank > 8) throw DataError("checkpoint: tensor '" + name + "' has invalid rank");
  Shape shape(rank);
  std::uint64_t numel = 1;
  for (auto& d : shape) {
    d = r.u64();
    if (d == 0 || d > (1ULL << 32)) throw DataError("checkpoint: tensor '" + name + "' has invalid extent");
    numel *= d;
  }
  if (numel * 4 > r.remaining()) throw DataError("checkpoint: tensor '" + name + "' is truncated");
  std::vector<double> data(numel);
  for (auto& v : data) v = r.f32();
  return {std::move(name), Tensor(std::move(shape), std::move(data))};
}

void round_vector(std::vector<double>& v) {
  for (auto& x : v) x = round_to_f32(x);
}

}  // namespace

// ---------------------------------------------------------------------------
// Optimizer and schedule

AdamState AdamState::zeros_like(const ParamStore& params) {
  AdamState s;
  for (const auto& v : params.values()) {
    s.m.emplace_back(v.numel(), 0.0);
    s.v.emplace_back(v.numel(), 0.0);
  }
  return s;
}

void adam_step(ParamStore& params, const std::vector<std::vector<double>>& grads, AdamState& state, double lr,
               const AdamHyper& hyper) {
  if (grads.size() != params.size() || state.m.size() != params.size() || state.v.size() != params.size()) {
    throw ContractError("adam_step: parameter, gradient and state counts differ");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto n = params.value(i).numel();
    if (grads[i].size() != n || state.m[i].size() != n || state.v[i].size() != n) {
      throw ContractError("adam_step: shape mismatch for parameter '" + params.name(i) + "'");
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(hyper.beta1, t);
  const double c2 = 1.0 - std::pow(hyper.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params.value(i);
    std::vector<double> next(p.data().begin(), p.data().end());
    auto& m = state.m[i];
    auto& v = state.v[i];
    const auto& g = grads[i];
    for (std::size_t e = 0; e < next.size(); ++e) {
      m[e] = hyper.beta1 * m[e] + (1.0 - hyper.beta1) * g[e];
      v[e] = hyper.beta2 * v[e] + (1.0 - hyper.beta2) * g[e] * g[e];
      next[e] -= lr * (m[e] / c1) / (std::sqrt(v[e] / c2) + hyper.eps);
    }
    params.set(i, Tensor(p.shape(), std::move(next)));
  }
}

double lr_at(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr * std::pow(cfg.decay_factor, static_cast<double>(epoch / cfg.decay_every));
}

// ---------------------------------------------------------------------------
// Training pairs

TrainingPair make_training_pair(const PointCloud& gt_patch, Rng& rng, const TrainConfig& cfg) {
  if (gt_patch.size() != cfg.gt_points()) {
    throw ContractError("training pair: gt patch has " + std::to_string(gt_patch.size()) + " points, expected " +
                        std::to_string(cfg.gt_points()));
  }
  auto indices = random_subsample(gt_patch, cfg.patch_points, rng);
  return make_training_pair(gt_patch, std::move(indices), rng, cfg);
}

TrainingPair make_training_pair(const PointCloud& gt_patch, std::vector<std::size_t> input_indices, Rng& rng,
                                const TrainConfig& cfg) {
  if (gt_patch.size() != cfg.gt_points() || input_indices.size() != cfg.patch_points) {
    throw ContractError("training pair: expected " + std::to_string(cfg.patch_points) + " of " +
                        std::to_string(cfg.gt_points()) + " points");
  }
  TrainingPair pair;
  pair.input_indices = std::move(input_indices);
  PointCloud input = select(gt_patch, pair.input_indices);
  PointCloud gt = gt_patch;
  if (cfg.augment) {
    auto moved = augment(input, gt, rng, cfg.augmentation);
    input = std::move(moved.input);
    gt = std::move(moved.gt);
  }
  auto [gt_norm, record] = normalize_to_unit_sphere(gt);
  pair.gt = std::move(gt_norm);
  pair.input = apply_normalization(input, record);
  pair.record = record;
  return pair;
}

std::string format_loss_csv(const std::vector<EpochLog>& log, std::size_t levels) {
  std::string out = "epoch,lr,joint";
  for (std::size_t l = 1; l <= levels; ++l) out += ",cd_scale" + std::to_string(l);
  out += "\n";
  char buf[64];
  for (const auto& row : log) {
    out += std::to_string(row.epoch);
    std::snprintf(buf, sizeof(buf), ",%.10g,%.10g", row.lr, row.joint);
    out += buf;
    for (double cd : row.chamfer) {
      std::snprintf(buf, sizeof(buf), ",%.10g", cd);
      out += buf;
    }
    out += "\n";
  }
  return out;
}

// ---------------------------------------------------------------------------
// Checkpoints

std::string encode_checkpoint(const Checkpoint& ckpt) {
  if (ckpt.names.size() != ckpt.params.size() || ckpt.adam.m.size() != ckpt.params.size() ||
      ckpt.adam.v.size() != ckpt.params.size()) {
    throw ContractError("checkpoint: parameter and optimizer state counts differ");
  }
  std::string text = serialize_config(ckpt.config);
  text += "progress.epoch = " + std::to_string(ckpt.epoch) + "\n";
  text += "progress.batch = " + std::to_string(ckpt.batch) + "\n";
  text += "progress.adam_step = " + std::to_string(ckpt.adam.step) + "\n";
  text += "progress.count = " + std::to_string(ckpt.partial_count) + "\n";
  text += "progress.joint = " + hex_real(ckpt.partial_joint) + "\n";
  text += "progress.chamfer =";
  for (double v : ckpt.partial_chamfer) text += " " + hex_real(v);
  text += "\n";

  ByteWriter w;
  w.raw("BPUC");
  w.u32(kCheckpointVersion);
  w.bytes(text);
  w.u32(static_cast<std::uint32_t>(ckpt.params.size()));
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    write_tensor(w, ckpt.names[i], ckpt.params[i].shape(), ckpt.params[i].data());
  }
  w.u32(static_cast<std::uint32_t>(2 * ckpt.params.size()));
  for (std::size_t i = 0; i < ckpt.params.size(); ++i) {
    write_tensor(w, "adam.m/" + ckpt.names[i], ckpt.params[i].shape(), ckpt.adam.m[i]);
    write_tensor(w, "adam.v/" + ckpt.names[i], ckpt.params[i].shape(), ckpt.adam.v[i]);
  }
  w.bytes(ckpt.rng_state);
  return w.str();
}

Checkpoint decode_checkpoint(const std::string& bytes) {
  ByteReader r(bytes, "checkpoint");
  if (r.raw(4) != "BPUC") throw DataError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kCheckpointVersion) throw DataError("checkpoint: unsupported version " + std::to_string(version));

  Checkpoint ckpt;
  std::istringstream text(r.bytes());
  std::string config_text, line;
  while (std::getline(text, line)) {
    if (line.rfind("progress.", 0) != 0) {
      config_text += line + "\n";
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw DataError("checkpoint: malformed progress line");
    const auto key = line.substr(0, line.find_last_not_of(' ', eq - 1) + 1);
    std::istringstream value(line.substr(eq + 1));
    if (key == "progress.chamfer") {
      std::string tok;
      while (value >> tok) ckpt.partial_chamfer.push_back(parse_hex_real(tok));
      continue;
    }
    std::string tok;
    value >> tok;
    if (key == "progress.joint") {
      ckpt.partial_joint = parse_hex_real(tok);
    } else {
      const auto n = std::stoull(tok);
      if (key == "progress.epoch") ckpt.epoch = n;
      else if (key == "progress.batch") ckpt.batch = n;
      else if (key == "progress.adam_step") ckpt.adam.step = n;
      else if (key == "progress.count") ckpt.partial_count = n;
      else throw DataError("checkpoint: unknown progress key '" + key + "'");
    }
  }
  std::istringstream cfg_stream(config_text);
  ckpt.config = parse_config(cfg_stream, "checkpoint config");

  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [name, t] = read_tensor(r);
    ckpt.names.push_back(std::move(name));
    ckpt.params.push_back(std::move(t));
  }
  const auto adam_count = r.u32();
  if (adam_count != 2 * count) throw DataError("checkpoint: optimizer buffer count mismatch");
  for (std::uint32_t i = 0; i < count; ++i) {
    auto [mname, m] = read_tensor(r);
    auto [vname, v] = read_tensor(r);
    if (mname != "adam.m/" + ckpt.names[i] || vname != "adam.v/" + ckpt.names[i]) {
      throw DataError("checkpoint: optimizer buffers out of order at '" + ckpt.names[i] + "'");
    }
    ckpt.adam.m.emplace_back(m.data().begin(), m.data().end());
    ckpt.adam.v.emplace_back(v.data().begin(), v.data().end());
  }
  ckpt.rng_state = r.bytes();
  if (!r.done()) throw DataError("checkpoint: trailing bytes");
  return ckpt;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt) {
  write_file_bytes(path, encode_checkpoint(ckpt));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(read_file_bytes(path)); }

Model model_from_checkpoint(const Checkpoint& ckpt) {
  Model model(ckpt.config.model(), ckpt.config.seed);
  auto& store = model.params();
  if (store.size() != ckpt.params.size()) {
    throw DataError("checkpoint: holds " + std::to_string(ckpt.params.size()) + " tensors, architecture needs " +
                    std::to_string(store.size()));
  }
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (store.name(i) != ckpt.names[i]) {
      throw DataError("checkpoint: expected tensor '" + store.name(i) + "', found '" + ckpt.names[i] + "'");
    }
    store.set(i, ckpt.params[i]);
  }
  return model;
}

// ---------------------------------------------------------------------------
// Trainer

PatchGradient patch_gradient(const Model& model, const TrainingPair& pair, const LossConfig& loss) {
  Tape tape;
  const auto vars = model.params().watch_all(tape);
  const auto preds = model.forward(tape, vars, to_tensor(pair.input));
  const auto result = joint_loss(tape, to_tensor(pair.gt), preds, loss);
  PatchGradient out;
  out.joint = result.total.item();
  out.chamfer = result.chamfer;
  if (!std::isfinite(out.joint)) return out;
  tape.backward(result.total);
  out.grads.reserve(vars.size());
  for (const auto& v : vars) out.grads.push_back(tape.grad(v));
  return out;
}

Trainer::Trainer(TrainConfig cfg, std::vector<PointCloud> gt_patches)
    : cfg_(std::move(cfg)), loss_(cfg_.loss()), model_(cfg_.model(), cfg_.seed), rng_(derive_rng(cfg_.seed, 0)),
      data_(std::move(gt_patches)) {
  cfg_.validate();
  if (data_.empty()) throw ContractError("trainer: dataset is empty");
  for (const auto& p : data_) {
    if (p.size() != cfg_.gt_points()) {
      throw ContractError("trainer: patch has " + std::to_string(p.size()) + " points, expected " +
                          std::to_string(cfg_.gt_points()));
    }
  }
  // Persisted state is f32; keep the in-memory copy identical to it.
  model_.params().round_to_f32();
  adam_ = AdamState::zeros_like(model_.params());
  if (!cfg_.resample_input) {
    for (std::size_t i = 0; i < data_.size(); ++i) {
      Rng r = derive_rng(cfg_.seed, kFixedInputTask + i);
      fixed_inputs_.push_back(random_subsample(data_[i], cfg_.patch_points, r));
    }
  }
  sum_chamfer_.assign(cfg_.levels(), 0.0);
}

Trainer Trainer::resume(const Checkpoint& ckpt, std::vector<PointCloud> gt_patches) {
  Trainer t(ckpt.config, std::move(gt_patches));
  t.model_ = model_from_checkpoint(ckpt);
  t.adam_ = ckpt.adam;
  t.epoch_ = ckpt.epoch;
  t.batch_ = ckpt.batch;
  t.sum_joint_ = ckpt.partial_joint;
  t.count_ = ckpt.partial_count;
  if (!ckpt.partial_chamfer.empty()) t.sum_chamfer_ = ckpt.partial_chamfer;
  std::istringstream state(ckpt.rng_state);
  state >> t.rng_;
  if (!state) throw DataError("checkpoint: malformed RNG state");
  if (t.batch_ > 0) t.begin_epoch();
  return t;
}

std::size_t Trainer::batches_per_epoch() const { return (data_.size() + cfg_.batch_size - 1) / cfg_.batch_size; }

void Trainer::begin_epoch() {
  order_.resize(data_.size());
  std::iota(order_.begin(), order_.end(), std::size_t{0});
  Rng shuffle = derive_rng(cfg_.seed, kShuffleTask + epoch_);
  std::shuffle(order_.begin(), order_.end(), shuffle);
}

StepResult Trainer::step() {
  if (finished()) throw ContractError("trainer: all epochs already completed");
  if (batch_ == 0) {
    begin_epoch();
    sum_joint_ = 0.0;
    std::fill(sum_chamfer_.begin(), sum_chamfer_.end(), 0.0);
    count_ = 0;
  }
  const auto first = batch_ * cfg_.batch_size;
  const auto last = std::min(first + cfg_.batch_size, data_.size());
  const auto n = last - first;

  std::vector<std::uint64_t> task_seeds(n);
  for (auto& s : task_seeds) s = rng_();

  std::vector<PatchGradient> results(n);
  auto work = [&](std::size_t i) {
    const auto patch = order_[first + i];
    Rng r(task_seeds[i]);
    const TrainingPair pair = cfg_.resample_input ? make_training_pair(data_[patch], r, cfg_)
                                                  : make_training_pair(data_[patch], fixed_inputs_[patch], r, cfg_);
    results[i] = patch_gradient(model_, pair, loss_);
  };
  const auto workers = std::min(threads_, n);
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < n; i += workers) work(i);
      });
    }
  }

  // Reduce in patch order.
  StepResult out;
  out.chamfer.assign(cfg_.levels(), 0.0);
  std::vector<std::vector<double>> grads = AdamState::zeros_like(model_.params()).m;
  for (std::size_t i = 0; i < n; ++i) {
    const auto& r = results[i];
    if (!std::isfinite(r.joint)) {
      throw NumericError("non-finite loss at epoch " + std::to_string(epoch_) + ", batch " + std::to_string(batch_) +
                         " (patch " + std::to_string(order_[first + i]) + ")");
    }
    out.joint += r.joint;
    for (std::size_t l = 0; l < out.chamfer.size(); ++l) out.chamfer[l] += r.chamfer[l];
    for (std::size_t p = 0; p < grads.size(); ++p) {
      for (std::size_t e = 0; e < grads[p].size(); ++e) grads[p][e] += r.grads[p][e];
    }
  }
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& g : grads) {
    for (auto& x : g) {
      x *= inv;
      if (!std::isfinite(x)) {
        throw NumericError("non-finite gradient at epoch " + std::to_string(epoch_) + ", batch " +
                           std::to_string(batch_));
      }
    }
  }

  adam_step(model_.params(), grads, adam_, lr_at(epoch_, cfg_));
  model_.params().round_to_f32();
  for (auto& m : adam_.m) round_vector(m);
  for (auto& v : adam_.v) round_vector(v);

  sum_joint_ += out.joint;
  for (std::size_t l = 0; l < out.chamfer.size(); ++l) sum_chamfer_[l] += out.chamfer[l];
  count_ += n;
  out.joint *= inv;
  for (auto& c : out.chamfer) c *= inv;

  if (++batch_ == batches_per_epoch()) {
    EpochLog row;
    row.epoch = epoch_;
    row.lr = lr_at(epoch_, cfg_);
    row.joint = sum_joint_ / static_cast<double>(count_);
    for (double s : sum_chamfer_) row.chamfer.push_back(s / static_cast<double>(count_));
    log_.push_back(std::move(row));
    ++epoch_;
    batch_ = 0;
  }
  return out;
}

void Trainer::run(const std::function<void(const EpochLog&)>& on_epoch) {
  while (!finished()) {
    const auto before = epoch_;
    step();
    if (epoch_ != before && on_epoch) on_epoch(log_.back());
  }
}

Checkpoint Trainer::checkpoint() const {
  Checkpoint c;
  c.config = cfg_;
  c.names = model_.params().names();
  c.params.assign(model_.params().values().begin(), model_.params().values().end());
  c.adam = adam_;
  c.epoch = epoch_;
  c.batch = batch_;
  c.partial_joint = sum_joint_;
  c.partial_chamfer = sum_chamfer_;
  c.partial_count = count_;
  std::ostringstream state;
  state << rng_;
  c.rng_state = state.str();
  return c;
}

}  // namespace bimspu
