#pragma once

// Whole-object workflows: dataset generation from meshes, patch-based
// upsampling, and metric reports.

#include <filesystem>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "bimspu/config.hpp"
#include "bimspu/io.hpp"
#include "bimspu/model.hpp"

namespace bimspu {

struct NamedMesh {
  std::string id;  ///< file stem
  Mesh mesh;
};

/// Every *.off file of a directory, sorted by name. Throws DataError when none.
std::vector<NamedMesh> load_mesh_dir(const std::filesystem::path& dir);

struct TestPair {
  std::string id;
  PointCloud input;  ///< object_points, Monte-Carlo subset of gt
  PointCloud gt;     ///< ratio * object_points
  std::vector<std::size_t> input_indices;
};

struct GeneratedData {
  PatchDataset dataset;
  std::vector<TestPair> tests;
};

/// Per mesh: a dense blue-noise object cloud cut into normalized gt patches
/// around FPS seeds, and an independently sampled test pair.
GeneratedData generate_data(const std::vector<NamedMesh>& meshes, const TrainConfig& cfg);

/// Writes the patch container and `<id>_input.xyz` / `<id>_gt.xyz` per test pair.
void write_generated(const GeneratedData& data, const std::filesystem::path& container,
                     const std::filesystem::path& test_dir);

struct UpsampleOptions {
  std::size_t patch_points = 0;  ///< 0: the model's training N
  std::size_t seeds = 0;         ///< 0: default_seed_count
  std::size_t threads = 1;
};

/// Overlapping kNN patches, per-patch normalize / forward / denormalize, FPS merge to ratio * M.
PointCloud upsample_object(const Model& model, std::size_t train_patch_points, const PointCloud& input,
                           const UpsampleOptions& options = {});

struct MetricRow {
  std::string id;
  double cd = 0.0;
  double hd = 0.0;
  std::optional<double> p2f;
};

MetricRow evaluate_pair(const std::string& id, const PointCloud& pred, const PointCloud& gt,
                        const Mesh* mesh = nullptr);

/// Tab-separated, values in units of 1e-3 at 6 significant digits, with a
/// trailing mean row. The P2F column appears only when every row has it.
std::string format_metric_report(const std::vector<MetricRow>& rows);

}  // namespace bimspu
