#pragma once

#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "triseg/config.hpp"
#include "triseg/metrics.hpp"
#include "triseg/phantoms.hpp"
#include "triseg/survival.hpp"
#include "triseg/training.hpp"

namespace triseg {

/// Directory layout of one run under RunConfig::output_dir.
struct RunPaths {
  std::filesystem::path root;

  std::filesystem::path preprocessed() const { return root / "preprocessed"; }
  std::filesystem::path model_dir(Plane plane) const { return root / "models" / std::string(plane_name(plane)); }
  std::filesystem::path checkpoint(Plane plane) const { return model_dir(plane) / "checkpoint.bin"; }
  std::filesystem::path survival_dir() const { return root / "survival"; }
  std::filesystem::path survival_model() const { return survival_dir() / "model.bin"; }
  std::filesystem::path features() const { return survival_dir() / "features"; }
  std::filesystem::path predictions() const { return root / "predictions"; }
  std::filesystem::path evaluation() const { return root / "evaluation"; }
};

/// Per-case result of a batch command. `status` is a short word such as
/// "written", "skipped" or "failed"; failures carry the error text.
struct CaseOutcome {
  std::string case_id;
  std::string status;
  std::optional<std::string> error;
};

struct CommandReport {
  std::vector<CaseOutcome> cases;
  bool ok() const;
};

/// Writes the effective config as config.json into dir.
void echo_config(const std::filesystem::path& dir, const RunConfig& cfg);

/// Runs fn(i) for i in [0, n) on up to `workers` threads. Exceptions are
/// captured per index and rethrown in index order by the caller's collector.
void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)>& fn);

std::vector<PhantomSpec> cmd_make_phantoms(const std::filesystem::path& root, int count, std::uint64_t seed,
                                           Dims3 shape);

/// Raw layout under data_root -> preprocessed volumes plus crop.json per case.
/// A case is skipped when its crop.json records the same inputs and config.
CommandReport cmd_preprocess(const RunConfig& cfg, const std::vector<std::string>& case_ids = {});

/// Loads every preprocessed case (volumes and labels), in case id order.
std::vector<CaseBundle> load_preprocessed(const RunConfig& cfg, const std::vector<std::string>& case_ids = {});

struct TrainSegOptions {
  std::optional<int> stop_after;
  bool resume = true;
  std::function<void(int, const StepResult&)> on_step;
};

TrainResult cmd_train_seg(const RunConfig& cfg, Plane plane, const TrainSegOptions& options = {});

/// Extracts frozen bottlenecks for every case with age and numeric survival,
/// trains heads and regression network, and caches per-case features.
SurvivalFit cmd_train_surv(const RunConfig& cfg);

/// Triplanar inference for the given cases (all preprocessed cases when
/// empty) using the listed planes; writes BraTS-convention label files in
/// the source geometry.
CommandReport cmd_infer(const RunConfig& cfg, const std::vector<std::string>& case_ids = {},
                        const std::vector<Plane>& planes = {kPlanes.begin(), kPlanes.end()});

struct EvaluationRow {
  std::string case_id;
  CaseMetrics metrics;
};

struct EvaluationReport {
  std::vector<EvaluationRow> rows;
  CaseMetrics mean;  // per-region means over cases
};

/// Compares every label file in pred_dir to gt_dir; the case sets must match.
/// Writes metrics.csv, summary.csv and, for each requested plane, one
/// FLAIR overlay PNG per case.
EvaluationReport cmd_evaluate(const RunConfig& cfg, const std::filesystem::path& pred_dir,
                              const std::filesystem::path& gt_dir, const std::vector<Plane>& overlay_planes = {});

struct SurvivalPrediction {
  std::string case_id;
  std::optional<double> days;
  std::optional<SurvivalClass> survival_class;
  std::optional<double> target;
  std::string error;
};

struct SurvivalPredictionReport {
  std::vector<SurvivalPrediction> rows;
  std::optional<SurvivalMetrics> metrics;  // over rows with targets, when requested
};

/// Writes survival_predictions.csv (case_id, predicted_days, class, error).
SurvivalPredictionReport cmd_predict_surv(const RunConfig& cfg, const std::vector<std::string>& case_ids = {},
                                          bool evaluate = false);

/// Grayscale FLAIR slice with label colours blended in, as an RGB PNG. With
/// a prediction the image holds two panels: ground truth left, prediction right.
void write_overlay_png(const std::filesystem::path& path, const Volume<float>& flair, const LabelVolume& truth,
                       const LabelVolume* prediction, Plane plane, int index);

}  // namespace triseg
