#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <vector>

#include "triseg/augment.hpp"
#include "triseg/losses.hpp"
#include "triseg/network.hpp"
#include "triseg/optim.hpp"
#include "triseg/triplanar.hpp"

namespace triseg {

/// Optimizer steps per plane: sagittal 1300, coronal and axial 800.
int default_iterations(Plane plane);

struct SegTrainConfig {
  Plane plane = Plane::Sagittal;
  double lr = 1e-5;
  int batch_slabs = 4;
  int slab_size = 8;
  int iterations = 1300;
  std::uint64_t seed = 0;
  LossConfig loss;
  AugmentConfig augment;
  int checkpoint_every = 100;
  double grad_clip = 0.0;  // global-norm clip; 0 disables

  static SegTrainConfig for_plane(Plane plane);
  void validate() const;
};

struct PlanarSlab {
  Plane plane = Plane::Sagittal;
  int start_index = 0;
  Tensor data;                   // (slab, 3, H, W)
  std::optional<Tensor> labels;  // (slab, 1, H, W) class ids
};

/// Contiguous slices [start, start + slab_size) with start uniform over
/// [0, axis_len - slab_size].
PlanarSlab sample_slab(const CaseBundle& c, Plane plane, Rng& rng, int slab_size);

struct Batch {
  Tensor images;  // (batch_slabs * slab_size, 3, H, W)
  Tensor labels;  // (batch_slabs * slab_size, 1, H, W)
};

/// Draws the batch for one iteration. Every slab uses its own stream
/// fork_rng(seed, iteration * batch_slabs + slab), for the case pick, the
/// slab start and the per-slice augmentation.
Batch assemble_batch(const std::vector<CaseBundle>& dataset, const SegTrainConfig& cfg, std::int64_t iteration);

std::vector<Tensor*> parameter_list(NetworkParams& params);
std::vector<const Tensor*> parameter_list(const NetworkParams& params);

struct StepResult {
  LossValue loss;
  double grad_norm = 0.0;
};

/// Forward, total loss, backward and one Adam update. Throws
/// NumericalDivergence on a non-finite loss or gradient.
StepResult train_step(NetworkParams& params, AdamState& opt, const Batch& batch, const SegTrainConfig& cfg);

struct SegCheckpoint {
  NetworkParams params;
  AdamState opt;
  int iteration = 0;
  SegTrainConfig train;
};

void save_checkpoint(const std::filesystem::path& path, const SegCheckpoint& ckpt);
SegCheckpoint load_checkpoint(const std::filesystem::path& path);
/// Just the network, for inference and feature extraction.
NetworkParams load_network(const std::filesystem::path& path);

struct TrainOptions {
  /// Receives checkpoint.bin and loss.csv; empty keeps everything in memory.
  std::filesystem::path out_dir;
  /// Continue from out_dir/checkpoint.bin when it exists.
  bool resume = true;
  /// Stop after this many total iterations (for interrupted runs).
  std::optional<int> stop_after;
  std::function<void(int iteration, const StepResult&)> on_step;
};

struct TrainResult {
  SegCheckpoint checkpoint;
  std::vector<StepResult> steps;  // iterations run by this call
};

TrainResult train_plane(const std::vector<CaseBundle>& dataset, const NetworkConfig& net, const SegTrainConfig& cfg,
                        const TrainOptions& options = {});

}  // namespace triseg
