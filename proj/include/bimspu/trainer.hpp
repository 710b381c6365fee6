#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "bimspu/config.hpp"
#include "bimspu/model.hpp"

namespace bimspu {

struct AdamHyper {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct AdamState {
  std::vector<std::vector<double>> m;
  std::vector<std::vector<double>> v;
  std::uint64_t step = 0;

  static AdamState zeros_like(const ParamStore& params);
};

/// Bias-corrected Adam update of every parameter.
void adam_step(ParamStore& params, const std::vector<std::vector<double>>& grads, AdamState& state, double lr,
               const AdamHyper& hyper = {});

/// lr0 * decay_factor ^ floor(epoch / decay_every)
double lr_at(std::size_t epoch, const TrainConfig& cfg);

struct TrainingPair {
  PointCloud input;  ///< N points
  PointCloud gt;     ///< rN points
  NormRecord record;  ///< gt normalization applied to both
  std::vector<std::size_t> input_indices;  ///< rows of the gt patch kept as input
};

/// Monte-Carlo subsample to N, joint augmentation, joint normalization by the gt record.
TrainingPair make_training_pair(const PointCloud& gt_patch, Rng& rng, const TrainConfig& cfg);
/// Same with a predetermined input subset.
TrainingPair make_training_pair(const PointCloud& gt_patch, std::vector<std::size_t> input_indices, Rng& rng,
                                const TrainConfig& cfg);

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double joint = 0.0;
  std::vector<double> chamfer;  ///< mean per scale
};

/// "epoch,lr,joint,cd_scale1,...,cd_scaleL" followed by one row per epoch.
std::string format_loss_csv(const std::vector<EpochLog>& log, std::size_t levels);

/// Persisted training state.
struct Checkpoint {
  TrainConfig config;
  std::vector<std::string> names;
  std::vector<Tensor> params;
  AdamState adam;
  std::size_t epoch = 0;  ///< epochs completed
  std::size_t batch = 0;  ///< batches completed in the current epoch
  double partial_joint = 0.0;
  std::vector<double> partial_chamfer;
  std::size_t partial_count = 0;
  std::string rng_state;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// BPUC layout: "BPUC", u32 version, u32-length-prefixed config text
/// (including progress.* lines), u32 tensor count, per tensor
/// (prefixed name, u32 rank, u64 dims, f32 data), the Adam buffers in the
/// same layout, then the prefixed RNG state.
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Builds a model carrying the checkpoint's parameters.
Model model_from_checkpoint(const Checkpoint& ckpt);

struct StepResult {
  double joint = 0.0;
  std::vector<double> chamfer;
};

/// Loss and parameter gradients of one training pair.
struct PatchGradient {
  double joint = 0.0;
  std::vector<double> chamfer;
  std::vector<std::vector<double>> grads;
};
PatchGradient patch_gradient(const Model& model, const TrainingPair& pair, const LossConfig& loss);

class Trainer {
 public:
  Trainer(TrainConfig cfg, std::vector<PointCloud> gt_patches);
  static Trainer resume(const Checkpoint& ckpt, std::vector<PointCloud> gt_patches);

  void set_threads(std::size_t threads) { threads_ = threads == 0 ? 1 : threads; }

  bool finished() const { return epoch_ >= cfg_.epochs; }
  std::size_t epoch() const { return epoch_; }
  std::size_t batches_per_epoch() const;

  /// One optimizer step over the next batch.
  StepResult step();
  /// Runs to the configured epoch count; `on_epoch` fires after each epoch.
  void run(const std::function<void(const EpochLog&)>& on_epoch = {});

  const std::vector<EpochLog>& log() const { return log_; }
  const Model& model() const { return model_; }
  const TrainConfig& config() const { return cfg_; }
  Checkpoint checkpoint() const;

 private:
  void begin_epoch();

  TrainConfig cfg_;
  LossConfig loss_;
  Model model_;
  AdamState adam_;
  Rng rng_;
  std::vector<PointCloud> data_;
  std::vector<std::vector<std::size_t>> fixed_inputs_;
  std::vector<std::size_t> order_;
  std::size_t epoch_ = 0;
  std::size_t batch_ = 0;
  double sum_joint_ = 0.0;
  std::vector<double> sum_chamfer_;
  std::size_t count_ = 0;
  std::vector<EpochLog> log_;
  std::size_t threads_ = 1;
};

}  // namespace bimspu
