#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "triseg/network.hpp"
#include "triseg/rng.hpp"
#include "triseg/triplanar.hpp"

namespace triseg {

inline constexpr int kPlaneFeatures = 64;
inline constexpr int kFusedFeatures = 3 * kPlaneFeatures;
/// Widths along the survival head: fused features, three hidden layers,
/// hidden + age, output.
inline constexpr std::array<int, 6> kAnnWidths{192, 64, 64, 28, 29, 1};

enum class SurvivalClass { Short, Mid, Long };
std::string_view survival_class_name(SurvivalClass c);

struct SurvTrainConfig {
  double train_fraction = 0.85;
  int epochs = 400;
  double lr = 1e-4;
  int batch_size = 16;
  double dropout = 0.3;
  double short_below_days = 300.0;  // short if days < this
  double long_above_days = 450.0;   // long if days > this; mid in between, inclusive
  int head_hidden = 128;
  int head_kernel = 3;
  std::uint64_t seed = 0;

  void validate() const;
};

SurvivalClass classify_survival(double days, const SurvTrainConfig& cfg = {});

// --- feature heads ----------------------------------------------------------

/// Two convolutions Cb -> 128 -> 64 with ReLU, then a global average over
/// every slice and pixel.
struct FeatureHeadParams {
  Tensor w1, b1;  // (hidden, Cb, k, k), (hidden)
  Tensor w2, b2;  // (64, hidden, k, k), (64)
};

FeatureHeadParams init_feature_head(int bottleneck_channels, const SurvTrainConfig& cfg, std::uint64_t seed);

struct HeadTrace {
  Tensor input;
  Tensor h1;  // post-ReLU
  Tensor h2;  // post-ReLU
};

std::vector<double> head_forward(const Tensor& bottleneck, const FeatureHeadParams& head, HeadTrace* trace = nullptr);
void head_backward(const std::vector<double>& dfeatures, const FeatureHeadParams& head, const HeadTrace& trace,
                   FeatureHeadParams& grads);

/// Bottleneck activations of every slice of the plane, computed slab by slab:
/// (slices, Cb, h, w).
Tensor plane_bottlenecks(const CaseBundle& c, Plane plane, const NetworkParams& seg, int slab_size = 8);

std::vector<double> extract_plane_features(const CaseBundle& c, Plane plane, const NetworkParams& seg,
                                           const FeatureHeadParams& head, int slab_size = 8);

/// Concatenation in (sagittal, coronal, axial) order.
std::vector<double> fuse_features(const std::vector<double>& sagittal, const std::vector<double>& coronal,
                                  const std::vector<double>& axial);

// --- regression network -----------------------------------------------------

struct AnnParams {
  Tensor w1, b1;  // (64, 192)
  Tensor w2, b2;  // (64, 64)
  Tensor w3, b3;  // (28, 64)
  Tensor w4, b4;  // (1, 29)
};

/// He-initialised; throws ShapeError unless the widths are exactly kAnnWidths.
AnnParams init_ann(std::uint64_t seed);
void check_ann_shapes(const AnnParams& p);

enum class AnnMode { Train, Infer };

struct AnnTrace {
  std::vector<double> input;
  std::array<std::vector<double>, 3> pre;   // pre-activation of each hidden layer
  std::array<std::vector<double>, 3> post;  // after ReLU and dropout
  std::array<std::vector<double>, 3> mask;  // dropout scale per unit (0 or 1/(1-p))
  std::vector<double> joined;               // 28 hidden + normalized age
  std::vector<int> widths;
};

/// Normalized output for normalized age. Train mode applies inverted dropout
/// drawn from rng; Infer mode is deterministic.
double ann_forward(const std::vector<double>& features, double age, const AnnParams& p, AnnMode mode,
                   double dropout = 0.3, Rng* rng = nullptr, AnnTrace* trace = nullptr);
/// Accumulates parameter gradients; returns dL/dfeatures.
std::vector<double> ann_backward(double dout, const AnnParams& p, const AnnTrace& trace, AnnParams& grads);

struct Standardizer {
  double mean = 0.0;
  double stddev = 1.0;

  double apply(double x) const { return (x - mean) / stddev; }
  double invert(double z) const { return z * stddev + mean; }
  static Standardizer fit(const std::vector<double>& values);
};

struct SurvivalModel {
  std::optional<std::array<FeatureHeadParams, 3>> heads;  // absent for ANN-only models
  AnnParams ann;
  Standardizer age;
  Standardizer target;
  SurvTrainConfig config;
  int bottleneck_channels = 0;
};

double predict_days(const SurvivalModel& model, const std::vector<double>& features, double age);

// --- training and evaluation ------------------------------------------------

struct SurvivalSample {
  std::string case_id;
  std::vector<double> features;  // 192
  double age = 0.0;
  double survival_days = 0.0;
};

struct SplitIndices {
  std::vector<std::size_t> train;
  std::vector<std::size_t> test;
};

/// Seeded shuffle; the training side gets floor(train_fraction * n) samples.
SplitIndices split_samples(std::size_t n, double train_fraction, std::uint64_t seed);

struct SurvivalMetrics {
  double mse = 0.0;
  double spearman_r = 0.0;
  double accuracy = 0.0;
};

std::vector<double> average_ranks(const std::vector<double>& v);
double spearman(const std::vector<double>& a, const std::vector<double>& b);
SurvivalMetrics evaluate_survival(const std::vector<double>& preds, const std::vector<double>& targets,
                                  const SurvTrainConfig& cfg = {});

struct SurvivalReport {
  std::vector<std::string> train_ids;
  std::vector<std::string> test_ids;
  SurvivalMetrics train;
  std::optional<SurvivalMetrics> test;
  std::vector<double> epoch_loss;  // mean normalized MSE per epoch
};

struct SurvivalFit {
  SurvivalModel model;
  SurvivalReport report;
};

/// Trains the regression network on fixed 192-feature samples.
SurvivalFit train_survival(const std::vector<SurvivalSample>& samples, const SurvTrainConfig& cfg);

struct SurvivalCase {
  std::string case_id;
  std::array<Tensor, 3> bottlenecks;  // per plane, from plane_bottlenecks
  double age = 0.0;
  double survival_days = 0.0;
};

/// Trains the three feature heads together with the regression network on
/// frozen bottleneck activations.
SurvivalFit train_survival_joint(const std::vector<SurvivalCase>& cases, const SurvTrainConfig& cfg);

/// 192 features of a case from its cached bottlenecks and the model's heads.
std::vector<double> case_features(const SurvivalModel& model, const std::array<Tensor, 3>& bottlenecks);

void save_survival_model(const std::filesystem::path& path, const SurvivalModel& model);
SurvivalModel load_survival_model(const std::filesystem::path& path);

}  // namespace triseg
