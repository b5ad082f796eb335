// Command-line front end: one subcommand per pipeline stage.
#include <cstdio>
#include <cstdlib>
#include <iostream>

#include "CLI11.hpp"
#include "triseg/commands.hpp"
#include "triseg/error.hpp"

using namespace triseg;

namespace {

struct GlobalFlags {
  std::string config;
  std::string data_root;
  std::string output_dir;
  std::optional<std::uint64_t> seed;
  std::optional<int> workers;
};

// defaults < config file < TRISEG_DATA_ROOT < flags
RunConfig build_config(const GlobalFlags& g) {
  RunConfig cfg = g.config.empty() ? RunConfig{} : load_run_config(g.config);
  if (const char* env = std::getenv("TRISEG_DATA_ROOT"); env && *env) cfg.data_root = env;
  if (!g.data_root.empty()) cfg.data_root = g.data_root;
  if (!g.output_dir.empty()) cfg.output_dir = g.output_dir;
  if (g.seed) cfg.seed = *g.seed;
  if (g.workers) cfg.workers = *g.workers;
  cfg.validate();
  return cfg;
}

std::vector<Plane> parse_planes(const std::vector<std::string>& names) {
  std::vector<Plane> out;
  for (const auto& n : names) out.push_back(parse_plane(n));
  return out;
}

int report_cases(const CommandReport& report) {
  for (const auto& c : report.cases) {
    if (c.error)
      std::cerr << c.case_id << ": " << *c.error << '\n';
    else
      std::cout << c.case_id << ": " << c.status << '\n';
  }
  return report.ok() ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Triplanar brain tumour segmentation and survival prediction"};
  app.require_subcommand(1);
  app.fallthrough();
  GlobalFlags g;
  app.add_option("-c,--config", g.config, "Run config (JSON)");
  app.add_option("--data-root", g.data_root, "Raw dataset root (overrides TRISEG_DATA_ROOT)");
  app.add_option("-o,--output-dir", g.output_dir, "Run output directory");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--workers", g.workers, "Parallel workers for per-case work")->check(CLI::PositiveNumber);

  auto* phantoms = app.add_subcommand("make-phantoms", "Write a synthetic dataset in the BraTS layout");
  std::string phantom_out;
  int phantom_count = 4, phantom_size = 64;
  std::uint64_t phantom_seed = 0;
  phantoms->add_option("out", phantom_out, "Destination directory")->required();
  phantoms->add_option("--count", phantom_count, "Number of cases");
  phantoms->add_option("--size", phantom_size, "Edge length of the cubic volume");
  phantoms->add_option("--phantom-seed", phantom_seed, "Seed for shapes and noise");

  auto* preprocess = app.add_subcommand("preprocess", "Normalize and crop the raw dataset");
  std::vector<std::string> pre_cases;
  preprocess->add_option("--cases", pre_cases, "Case ids (default: all)");

  auto* train_seg = app.add_subcommand("train-seg", "Train one planar segmentation model");
  std::string plane_name_arg;
  std::optional<int> iterations, stop_after;
  std::optional<double> seg_lr;
  bool fresh = false;
  train_seg->add_option("--plane", plane_name_arg, "sagittal, coronal or axial")->required();
  train_seg->add_option("--iterations", iterations, "Override the plane's iteration count");
  train_seg->add_option("--lr", seg_lr, "Override the plane's learning rate");
  train_seg->add_option("--stop-after", stop_after, "Stop (with a checkpoint) after this many iterations");
  train_seg->add_flag("--fresh", fresh, "Ignore an existing checkpoint");

  auto* train_surv = app.add_subcommand("train-surv", "Train the survival heads and regression network");
  std::optional<int> epochs;
  train_surv->add_option("--epochs", epochs, "Override the epoch count");

  auto* infer = app.add_subcommand("infer", "Triplanar inference to label files");
  std::vector<std::string> infer_cases, infer_planes{"sagittal", "coronal", "axial"};
  infer->add_option("--cases", infer_cases, "Case ids (default: all preprocessed)");
  infer->add_option("--planes", infer_planes, "Planes to fuse");

  auto* evaluate = app.add_subcommand("evaluate", "Compare predicted and reference label files");
  std::string pred_dir, gt_dir;
  std::vector<std::string> overlay_planes;
  evaluate->add_option("--pred", pred_dir, "Prediction directory (default: <output>/predictions)");
  evaluate->add_option("--gt", gt_dir, "Reference directory (default: data root)");
  evaluate->add_option("--overlay", overlay_planes, "Write FLAIR overlays for these planes");

  auto* predict_surv = app.add_subcommand("predict-surv", "Predict survival days");
  std::vector<std::string> surv_cases;
  bool surv_eval = false;
  predict_surv->add_option("--cases", surv_cases, "Case ids (default: all preprocessed)");
  predict_surv->add_flag("--evaluate", surv_eval, "Score against known survival days");

  CLI11_PARSE(app, argc, argv);

  try {
    if (phantoms->parsed()) {
      const auto specs = cmd_make_phantoms(phantom_out, phantom_count, phantom_seed,
                                           {phantom_size, phantom_size, phantom_size});
      std::cout << "wrote " << specs.size() << " phantom cases to " << phantom_out << '\n';
      return 0;
    }
    RunConfig cfg = build_config(g);
    if (preprocess->parsed()) return report_cases(cmd_preprocess(cfg, pre_cases));
    if (train_seg->parsed()) {
      const Plane plane = parse_plane(plane_name_arg);
      if (iterations) cfg.planes[plane].iterations = *iterations;
      if (seg_lr) cfg.planes[plane].lr = *seg_lr;
      cfg.validate();
      TrainSegOptions opts;
      opts.stop_after = stop_after;
      opts.resume = !fresh;
      opts.on_step = [](int it, const StepResult& r) {
        if (it % 50 == 0) std::printf("iteration %d loss %.6f\n", it, r.loss.total);
      };
      const auto result = cmd_train_seg(cfg, plane, opts);
      std::printf("%s: %d iterations, checkpoint %s\n", std::string(triseg::plane_name(plane)).c_str(),
                  result.checkpoint.iteration, RunPaths{cfg.output_dir}.checkpoint(plane).c_str());
      return 0;
    }
    if (train_surv->parsed()) {
      if (epochs) cfg.survival.epochs = *epochs;
      cfg.validate();
      const auto fit = cmd_train_surv(cfg);
      std::printf("train mse %.3f spearman %.3f accuracy %.3f\n", fit.report.train.mse, fit.report.train.spearman_r,
                  fit.report.train.accuracy);
      if (fit.report.test)
        std::printf("test mse %.3f spearman %.3f accuracy %.3f\n", fit.report.test->mse,
                    fit.report.test->spearman_r, fit.report.test->accuracy);
      return 0;
    }
    if (infer->parsed()) return report_cases(cmd_infer(cfg, infer_cases, parse_planes(infer_planes)));
    if (evaluate->parsed()) {
      const std::filesystem::path pred = pred_dir.empty() ? RunPaths{cfg.output_dir}.predictions() : std::filesystem::path(pred_dir);
      const std::filesystem::path gt = gt_dir.empty() ? cfg.data_root : std::filesystem::path(gt_dir);
      const auto report = cmd_evaluate(cfg, pred, gt, parse_planes(overlay_planes));
      std::printf("region  dsc     hd95\n");
      std::printf("WT      %.4f  %.3f\n", report.mean.wt.dsc, report.mean.wt.hd95);
      std::printf("TC      %.4f  %.3f\n", report.mean.tc.dsc, report.mean.tc.hd95);
      std::printf("ET      %.4f  %.3f\n", report.mean.et.dsc, report.mean.et.hd95);
      return 0;
    }
    if (predict_surv->parsed()) {
      const auto report = cmd_predict_surv(cfg, surv_cases, surv_eval);
      bool ok = true;
      for (const auto& r : report.rows) {
        if (r.days)
          std::printf("%s %.1f %s\n", r.case_id.c_str(), *r.days,
                      std::string(survival_class_name(*r.survival_class)).c_str());
        else
          std::fprintf(stderr, "%s: %s\n", r.case_id.c_str(), r.error.c_str()), ok = false;
      }
      if (report.metrics)
        std::printf("mse %.3f spearman %.3f accuracy %.3f\n", report.metrics->mse, report.metrics->spearman_r,
                    report.metrics->accuracy);
      return ok ? 0 : 1;
    }
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
