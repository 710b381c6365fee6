#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "bimspu/geometry.hpp"
#include "bimspu/losses.hpp"
#include "bimspu/model.hpp"

namespace bimspu {

/// Run configuration. Files are flat "key = value" text; '#' starts a comment.
/// `preset`, `ratio`, `epochs` and `seed` are required, every other key
/// defaults from the preset. Unknown keys are rejected.
struct TrainConfig {
  std::string preset = "desk";
  std::size_t ratio = 4;
  std::size_t patch_points = 64;  ///< N
  std::size_t knn_k = 16;
  std::size_t entry_channels = 8;
  std::size_t growth = 24;
  std::size_t units = 3;
  std::size_t channels = 32;  ///< C2
  std::size_t head_hidden = 32;
  double fusion_eps = 1e-4;
  bool fusion = true;
  bool residual = true;
  bool ms_supervision = true;

  std::vector<double> alphas;  ///< empty: default_alphas(levels)
  double lambda = 0.02;
  std::size_t repulsion_k = 5;
  double repulsion_h = 0.03;

  double lr = 1e-3;
  double decay_factor = 0.7;
  std::size_t decay_every = 40;
  std::size_t epochs = 100;
  std::size_t batch_size = 4;
  std::uint64_t seed = 1;

  bool augment = true;
  AugmentConfig augmentation;
  bool resample_input = true;  ///< false: one fixed input draw per patch
  std::size_t checkpoint_every = 0;

  std::size_t patches_per_mesh = 64;
  std::size_t object_points = 2048;  ///< test input size; gt objects hold ratio * this
  std::size_t oversample = 3;

  static TrainConfig desk();
  static TrainConfig full();
  static TrainConfig for_preset(const std::string& name);

  std::size_t levels() const;
  std::size_t gt_points() const { return ratio * patch_points; }
  ModelConfig model() const;
  /// Scale weights after the multi-scale supervision toggle.
  LossConfig loss() const;

  void validate() const;
};

TrainConfig parse_config(std::istream& in, const std::string& source = "<config>");
TrainConfig load_config(const std::filesystem::path& path);
std::string serialize_config(const TrainConfig& cfg);

/// Help text listing every key with its type.
std::string config_reference();

}  // namespace bimspu
