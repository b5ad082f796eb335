#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "json.hpp"
#include "triseg/augment.hpp"
#include "triseg/losses.hpp"
#include "triseg/metrics.hpp"
#include "triseg/network.hpp"
#include "triseg/preprocess.hpp"
#include "triseg/survival.hpp"
#include "triseg/training.hpp"
#include "triseg/triplanar.hpp"

namespace triseg {

/// Per-plane training schedule; loss, augmentation and seed come from the run.
struct PlaneSchedule {
  double lr = 1e-5;
  int batch_slabs = 4;
  int slab_size = 8;
  int iterations = 1300;
  int checkpoint_every = 100;
  double grad_clip = 0.0;
};

/// Everything a run depends on. Precedence when building one:
/// built-in defaults < config file < TRISEG_DATA_ROOT < command-line flags.
struct RunConfig {
  std::filesystem::path data_root = "data";
  std::filesystem::path output_dir = "runs";
  std::uint64_t seed = 0;
  int workers = 1;
  PreprocessConfig preprocess;
  AugmentConfig augment;
  NetworkConfig network;
  LossConfig loss;
  std::map<Plane, PlaneSchedule> planes = default_planes();
  SurvTrainConfig survival;
  FusionMode fusion = FusionMode::MeanProbability;
  int infer_batch = 8;
  MetricConventions metrics;

  static std::map<Plane, PlaneSchedule> default_planes();
  SegTrainConfig seg_config(Plane plane) const;
  void validate() const;
};

void to_json(nlohmann::json& j, const Dims3& d);
void from_json(const nlohmann::json& j, Dims3& d);
void to_json(nlohmann::json& j, const PreprocessConfig& c);
void from_json(const nlohmann::json& j, PreprocessConfig& c);
void to_json(nlohmann::json& j, const AugmentConfig& c);
void from_json(const nlohmann::json& j, AugmentConfig& c);
void to_json(nlohmann::json& j, const NetworkConfig& c);
void from_json(const nlohmann::json& j, NetworkConfig& c);
void to_json(nlohmann::json& j, const LossConfig& c);
void from_json(const nlohmann::json& j, LossConfig& c);
void to_json(nlohmann::json& j, const SegTrainConfig& c);
void from_json(const nlohmann::json& j, SegTrainConfig& c);
void to_json(nlohmann::json& j, const SurvTrainConfig& c);
void from_json(const nlohmann::json& j, SurvTrainConfig& c);
void to_json(nlohmann::json& j, const PlaneSchedule& c);
void from_json(const nlohmann::json& j, PlaneSchedule& c);
void to_json(nlohmann::json& j, const MetricConventions& c);
void from_json(const nlohmann::json& j, MetricConventions& c);
void to_json(nlohmann::json& j, const CropManifest& c);
void from_json(const nlohmann::json& j, CropManifest& c);
void to_json(nlohmann::json& j, const RunConfig& c);
/// Missing keys keep their defaults; unknown keys are a ConfigError.
void from_json(const nlohmann::json& j, RunConfig& c);

RunConfig load_run_config(const std::filesystem::path& path);
void save_run_config(const std::filesystem::path& path, const RunConfig& cfg);

void write_json(const std::filesystem::path& path, const nlohmann::json& j);
nlohmann::json read_json(const std::filesystem::path& path);

}  // namespace triseg
