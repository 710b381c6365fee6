#include "bimspu/pipeline.hpp"

#include <algorithm>
#include <cstdio>
#include <thread>

#include "bimspu/losses.hpp"

namespace bimspu {

namespace fs = std::filesystem;

namespace {

// Task ids for derive_rng, one block per mesh.
constexpr std::uint64_t kTrainCloudTask = 1ULL << 42;
constexpr std::uint64_t kTestCloudTask = 1ULL << 43;

}  // namespace

std::vector<NamedMesh> load_mesh_dir(const fs::path& dir) {
  if (!fs::is_directory(dir)) throw DataError("mesh directory " + dir.string() + " does not exist");
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(dir)) {
    if (entry.is_regular_file() && entry.path().extension() == ".off") files.push_back(entry.path());
  }
  if (files.empty()) throw DataError("no .off meshes in " + dir.string());
  std::sort(files.begin(), files.end());
  std::vector<NamedMesh> out;
  for (const auto& f : files) out.push_back({f.stem().string(), read_off(f)});
  return out;
}

GeneratedData generate_data(const std::vector<NamedMesh>& meshes, const TrainConfig& cfg) {
  cfg.validate();
  if (meshes.empty()) throw DataError("generate-data: no meshes");
  const auto dense = cfg.ratio * cfg.object_points;
  const auto gt_points = cfg.gt_points();
  if (gt_points > dense) {
    throw ContractError("generate-data: gt patch of " + std::to_string(gt_points) + " points exceeds the dense cloud of " +
                        std::to_string(dense));
  }
  GeneratedData out;
  out.dataset.points_per_patch = static_cast<std::uint32_t>(gt_points);
  for (std::size_t m = 0; m < meshes.size(); ++m) {
    const auto& [id, mesh] = meshes[m];
    Rng train_rng = derive_rng(cfg.seed, kTrainCloudTask + m);
    const PointCloud cloud = poisson_like_sample(mesh, dense, cfg.oversample, train_rng);
    for (const auto& patch : extract_patches(cloud, gt_points, cfg.patches_per_mesh)) {
      out.dataset.patches.push_back(normalize_to_unit_sphere(patch.cloud).first);
      out.dataset.object_ids.push_back(id);
    }

    Rng test_rng = derive_rng(cfg.seed, kTestCloudTask + m);
    TestPair pair;
    pair.id = id;
    pair.gt = poisson_like_sample(mesh, dense, cfg.oversample, test_rng);
    pair.input_indices = random_subsample(pair.gt, cfg.object_points, test_rng);
    pair.input = select(pair.gt, pair.input_indices);
    out.tests.push_back(std::move(pair));
  }
  return out;
}

void write_generated(const GeneratedData& data, const fs::path& container, const fs::path& test_dir) {
  if (container.has_parent_path()) fs::create_directories(container.parent_path());
  write_patch_dataset(container, data.dataset);
  fs::create_directories(test_dir);
  for (const auto& t : data.tests) {
    write_xyz(test_dir / (t.id + "_input.xyz"), t.input);
    write_xyz(test_dir / (t.id + "_gt.xyz"), t.gt);
  }
}

PointCloud upsample_object(const Model& model, std::size_t train_patch_points, const PointCloud& input,
                           const UpsampleOptions& options) {
  const auto patch_points = options.patch_points ? options.patch_points : train_patch_points;
  if (input.size() < patch_points) {
    throw DataError("upsample: input has " + std::to_string(input.size()) + " points, need at least " +
                    std::to_string(patch_points));
  }
  const auto seeds = options.seeds ? options.seeds : default_seed_count(input.size(), patch_points);
  auto patches = extract_patches(input, patch_points, seeds);

  // Any point the FPS-spread patches missed seeds a patch of its own.
  auto missing = uncovered_points(patches, input.size());
  while (!missing.empty()) {
    const PointCloud seed = select(input, std::vector<std::size_t>{missing.front()});
    Patch extra;
    extra.seed = missing.front();
    const auto nn = knn(input, seed, patch_points);
    extra.indices = nn.data;
    extra.cloud = select(input, extra.indices);
    patches.push_back(std::move(extra));
    missing = uncovered_points(patches, input.size());
  }

  std::vector<PointCloud> outputs(patches.size());
  auto work = [&](std::size_t i) {
    const auto [normalized, record] = normalize_to_unit_sphere(patches[i].cloud);
    outputs[i] = denormalize(model.upsample_patch(normalized), record);
  };
  const auto workers = std::max<std::size_t>(1, std::min(options.threads, patches.size()));
  if (workers == 1) {
    for (std::size_t i = 0; i < patches.size(); ++i) work(i);
  } else {
    std::vector<std::jthread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < patches.size(); i += workers) work(i);
      });
    }
  }
  return merge_patches(outputs, model.config().ratio() * input.size());
}

MetricRow evaluate_pair(const std::string& id, const PointCloud& pred, const PointCloud& gt, const Mesh* mesh) {
  MetricRow row;
  row.id = id;
  row.cd = chamfer_distance(pred, gt);
  row.hd = hausdorff_distance(pred, gt);
  if (mesh) row.p2f = point_to_surface(pred, *mesh);
  return row;
}

std::string format_metric_report(const std::vector<MetricRow>& rows) {
  const bool p2f = !rows.empty() && std::all_of(rows.begin(), rows.end(), [](const MetricRow& r) { return r.p2f; });
  std::string out = p2f ? "object\tCD\tHD\tP2F\n" : "object\tCD\tHD\n";
  char buf[64];
  auto cell = [&](double v) {
    std::snprintf(buf, sizeof(buf), "\t%.6g", v * 1e3);
    return std::string(buf);
  };
  double cd = 0.0, hd = 0.0, pf = 0.0;
  for (const auto& r : rows) {
    out += r.id + cell(r.cd) + cell(r.hd) + (p2f ? cell(*r.p2f) : "") + "\n";
    cd += r.cd;
    hd += r.hd;
    if (p2f) pf += *r.p2f;
  }
  if (!rows.empty()) {
    const double n = static_cast<double>(rows.size());
    out += "mean" + cell(cd / n) + cell(hd / n) + (p2f ? cell(pf / n) : "") + "\n";
  }
  return out;
}

}  // namespace bimspu
