// bimspu: dataset generation, training, patch-based upsampling, evaluation
// and gradient self-check.
//
// Exit codes: 0 ok, 1 usage/config error, 2 data error, 3 numeric failure.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>

#include <CLI11.hpp>

#include "bimspu/gradcheck.hpp"
#include "bimspu/io.hpp"
#include "bimspu/pipeline.hpp"
#include "bimspu/trainer.hpp"

namespace fs = std::filesystem;
using namespace bimspu;

namespace {

constexpr int kUsage = 1;
constexpr int kData = 2;
constexpr int kNumeric = 3;

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
  if (!out) throw DataError("cannot write " + path.string());
}

TrainConfig load_with_seed(const fs::path& path, std::optional<std::uint64_t> seed) {
  TrainConfig cfg = load_config(path);
  if (seed) cfg.seed = *seed;
  cfg.validate();
  return cfg;
}

fs::path sibling(const fs::path& path, const std::string& suffix) {
  return path.parent_path() / (path.stem().string() + suffix);
}

struct Args {
  fs::path config, meshes, data, tests, out, log, checkpoint, resume, input, pred, gt, mesh, mesh_dir;
  std::optional<std::uint64_t> seed;
  std::size_t threads = 1;
  std::size_t ratio = 0;
  std::size_t seeds = 5;
  std::string corrupt;
};

int cmd_generate(const Args& a) {
  const auto cfg = load_with_seed(a.config, a.seed);
  const auto data = generate_data(load_mesh_dir(a.meshes), cfg);
  write_generated(data, a.out, a.tests);
  std::printf("wrote %zu patches of %u points to %s, %zu test pairs to %s\n", data.dataset.patches.size(),
              data.dataset.points_per_patch, a.out.string().c_str(), data.tests.size(), a.tests.string().c_str());
  return 0;
}

int cmd_train(const Args& a) {
  const auto dataset = read_patch_dataset(a.data);
  std::optional<Trainer> trainer;
  if (!a.resume.empty()) {
    trainer.emplace(Trainer::resume(load_checkpoint(a.resume), dataset.patches));
  } else {
    const auto cfg = load_with_seed(a.config, a.seed);
    if (dataset.points_per_patch != cfg.gt_points()) {
      throw DataError("dataset patches hold " + std::to_string(dataset.points_per_patch) +
                      " points but the config needs ratio * patch_points = " + std::to_string(cfg.gt_points()));
    }
    trainer.emplace(cfg, dataset.patches);
  }
  trainer->set_threads(a.threads);
  const auto& cfg = trainer->config();
  const fs::path log_path = a.log.empty() ? sibling(a.out, "_loss.csv") : a.log;

  trainer->run([&](const EpochLog& row) {
    std::fprintf(stderr, "epoch %zu  lr %.4g  joint %.6g\n", row.epoch, row.lr, row.joint);
    if (cfg.checkpoint_every && (row.epoch + 1) % cfg.checkpoint_every == 0 && !trainer->finished()) {
      save_checkpoint(sibling(a.out, "_epoch" + std::to_string(row.epoch + 1) + ".bpuc"), trainer->checkpoint());
    }
  });
  save_checkpoint(a.out, trainer->checkpoint());
  write_text(log_path, format_loss_csv(trainer->log(), cfg.levels()));
  std::printf("wrote %s and %s\n", a.out.string().c_str(), log_path.string().c_str());
  return 0;
}

Model load_model(const fs::path& path, std::size_t ratio, TrainConfig& cfg) {
  const auto ckpt = load_checkpoint(path);
  if (ratio && ratio != ckpt.config.ratio) {
    throw DataError("checkpoint was trained for ratio " + std::to_string(ckpt.config.ratio) + ", requested " +
                    std::to_string(ratio));
  }
  cfg = ckpt.config;
  return model_from_checkpoint(ckpt);
}

int cmd_upsample(const Args& a) {
  TrainConfig cfg;
  const Model model = load_model(a.checkpoint, a.ratio, cfg);
  const auto input = read_xyz(a.input);
  UpsampleOptions opt;
  opt.threads = a.threads;
  const auto out = upsample_object(model, cfg.patch_points, input, opt);
  write_xyz(a.out, out);
  std::printf("wrote %zu points to %s\n", out.size(), a.out.string().c_str());
  return 0;
}

int cmd_evaluate(const Args& a) {
  std::vector<MetricRow> rows;
  if (!a.checkpoint.empty()) {
    if (a.tests.empty()) throw ContractError("evaluate: --checkpoint needs --tests");
    TrainConfig cfg;
    const Model model = load_model(a.checkpoint, a.ratio, cfg);
    std::vector<fs::path> inputs;
    for (const auto& e : fs::directory_iterator(a.tests)) {
      const auto name = e.path().filename().string();
      if (name.size() > 10 && name.ends_with("_input.xyz")) inputs.push_back(e.path());
    }
    if (inputs.empty()) throw DataError("no *_input.xyz files in " + a.tests.string());
    std::sort(inputs.begin(), inputs.end());
    UpsampleOptions opt;
    opt.threads = a.threads;
    for (const auto& in : inputs) {
      const auto name = in.filename().string();
      const auto id = name.substr(0, name.size() - 10);
      const auto pred = upsample_object(model, cfg.patch_points, read_xyz(in), opt);
      const auto gt = read_xyz(a.tests / (id + "_gt.xyz"));
      std::optional<Mesh> mesh;
      if (!a.mesh_dir.empty()) mesh = read_off(a.mesh_dir / (id + ".off"));
      rows.push_back(evaluate_pair(id, pred, gt, mesh ? &*mesh : nullptr));
    }
  } else {
    if (a.pred.empty() || a.gt.empty()) throw ContractError("evaluate: give --pred and --gt, or --checkpoint and --tests");
    std::optional<Mesh> mesh;
    if (!a.mesh.empty()) mesh = read_off(a.mesh);
    rows.push_back(evaluate_pair(a.pred.stem().string(), read_xyz(a.pred), read_xyz(a.gt), mesh ? &*mesh : nullptr));
  }
  const auto report = format_metric_report(rows);
  std::fputs(report.c_str(), stdout);
  if (!a.out.empty()) write_text(a.out, report);
  return 0;
}

int cmd_gradcheck(const Args& a) {
  GradCheckOptions opt;
  opt.seeds = a.seeds;
  if (a.seed) opt.base_seed = *a.seed;
  opt.corrupt_op = a.corrupt;
  const auto results = run_gradcheck(opt);
  std::fputs(format_gradcheck_report(results).c_str(), stdout);
  for (const auto& r : results) {
    if (!r.passed) return kNumeric;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"BIMS-PU point cloud upsampling"};
  app.require_subcommand(1);
  app.footer("\n" + config_reference());
  Args a;

  auto add_seed = [&](CLI::App* sub) { sub->add_option("--seed", a.seed, "override the master seed"); };
  auto add_threads = [&](CLI::App* sub) {
    sub->add_option("--threads", a.threads, "worker threads (1 is bitwise reproducible)")->check(CLI::PositiveNumber);
  };

  auto* gen = app.add_subcommand("generate-data", "sample meshes into a patch container and test pairs");
  gen->add_option("--meshes", a.meshes, "directory of .off meshes")->required();
  gen->add_option("--config", a.config, "config file")->required();
  gen->add_option("--out", a.out, "patch container to write")->required();
  gen->add_option("--tests", a.tests, "directory for <id>_input.xyz / <id>_gt.xyz")->required();
  add_seed(gen);

  auto* train = app.add_subcommand("train", "train on a patch container");
  train->add_option("--data", a.data, "patch container")->required();
  auto* cfg_opt = train->add_option("--config", a.config, "config file");
  auto* resume_opt = train->add_option("--resume", a.resume, "continue from a checkpoint");
  cfg_opt->excludes(resume_opt);
  train->add_option("--out", a.out, "checkpoint to write")->required();
  train->add_option("--log", a.log, "loss CSV (default <out>_loss.csv)");
  add_seed(train);
  add_threads(train);

  auto* up = app.add_subcommand("upsample", "upsample a whole object");
  up->add_option("--checkpoint", a.checkpoint, "trained checkpoint")->required();
  up->add_option("--input", a.input, "input .xyz")->required();
  up->add_option("--out", a.out, "output .xyz")->required();
  up->add_option("--ratio", a.ratio, "expected ratio (must match the checkpoint)");
  add_seed(up);
  add_threads(up);

  auto* ev = app.add_subcommand("evaluate", "CD / HD / P2F report in units of 1e-3");
  ev->add_option("--pred", a.pred, "predicted .xyz");
  ev->add_option("--gt", a.gt, "ground-truth .xyz");
  ev->add_option("--mesh", a.mesh, "reference .off for P2F");
  ev->add_option("--checkpoint", a.checkpoint, "upsample every test pair with this checkpoint first");
  ev->add_option("--tests", a.tests, "directory of test pairs");
  ev->add_option("--meshes", a.mesh_dir, "directory of <id>.off for P2F");
  ev->add_option("--ratio", a.ratio, "expected ratio");
  ev->add_option("--out", a.out, "also write the report here");
  add_threads(ev);

  auto* gc = app.add_subcommand("gradcheck", "finite-difference check of every differentiable op");
  gc->add_option("--seeds", a.seeds, "seeds per check")->check(CLI::PositiveNumber);
  gc->add_option("--corrupt", a.corrupt, "scale the analytic gradient of this op (harness test)");
  add_seed(gc);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kUsage;
  }

  try {
    if (*gen) return cmd_generate(a);
    if (*train) {
      if (a.config.empty() && a.resume.empty()) throw ContractError("train: give --config or --resume");
      return cmd_train(a);
    }
    if (*up) return cmd_upsample(a);
    if (*ev) return cmd_evaluate(a);
    if (*gc) return cmd_gradcheck(a);
  } catch (const ContractError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kUsage;
  } catch (const DataError& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  } catch (const NumericError& e) {
    std::fprintf(stderr, "numeric failure: %s\n", e.what());
    return kNumeric;
  } catch (const std::filesystem::filesystem_error& e) {
    std::fprintf(stderr, "data error: %s\n", e.what());
    return kData;
  }
  return kUsage;
}
