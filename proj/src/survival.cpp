#include "triseg/survival.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "triseg/archive.hpp"
#include "triseg/config.hpp"
#include "triseg/error.hpp"
#include "triseg/layers.hpp"
#include "triseg/optim.hpp"

namespace triseg {

namespace {

constexpr const char* kModelKind = "triseg-survival-model";
constexpr int kModelVersion = 1;

Tensor he_normal(Shape shape, int fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (double& v : t.values()) v = normal(rng, 0.0, stddev);
  return t;
}

template <class P, class Fn>
void visit_ann(P& p, Fn&& fn) {
  fn("w1", p.w1);
  fn("b1", p.b1);
  fn("w2", p.w2);
  fn("b2", p.b2);
  fn("w3", p.w3);
  fn("b3", p.b3);
  fn("w4", p.w4);
  fn("b4", p.b4);
}

template <class P, class Fn>
void visit_head(P& p, Fn&& fn) {
  fn("w1", p.w1);
  fn("b1", p.b1);
  fn("w2", p.w2);
  fn("b2", p.b2);
}

AnnParams zeros_like(const AnnParams& p) {
  AnnParams g;
  visit_ann(g, [&](const char* name, Tensor& t) {
    visit_ann(p, [&](const char* other, const Tensor& src) {
      if (std::string_view(name) == other) t = Tensor(src.shape());
    });
  });
  return g;
}

FeatureHeadParams zeros_like(const FeatureHeadParams& p) {
  return {Tensor(p.w1.shape()), Tensor(p.b1.shape()), Tensor(p.w2.shape()), Tensor(p.b2.shape())};
}

// Dense layer y = W x + b with W stored (out, in).
std::vector<double> dense(const Tensor& w, const Tensor& b, const std::vector<double>& x) {
  const int out = w.dim(0), in = w.dim(1);
  std::vector<double> y(static_cast<std::size_t>(out));
  for (int o = 0; o < out; ++o) {
    double s = b[static_cast<std::size_t>(o)];
    const double* row = w.data() + static_cast<std::size_t>(o) * in;
    for (int i = 0; i < in; ++i) s += row[i] * x[static_cast<std::size_t>(i)];
    y[static_cast<std::size_t>(o)] = s;
  }
  return y;
}

void check_sample(const SurvivalSample& s) {
  require(s.features.size() == static_cast<std::size_t>(kFusedFeatures), ErrorCode::ShapeError,
          s.case_id + ": expected 192 features, got " + std::to_string(s.features.size()));
  require(std::isfinite(s.age) && s.age > 0.0, ErrorCode::InvalidInput, s.case_id + ": age must be positive");
  require(std::isfinite(s.survival_days) && s.survival_days > 0.0, ErrorCode::InvalidInput,
          s.case_id + ": survival_days must be positive");
}

std::vector<const Tensor*> const_list(const std::vector<Tensor*>& v) { return {v.begin(), v.end()}; }

// Parameters of the regression network followed by any feature heads, in a
// fixed order for the optimizer.
struct TrainableSet {
  std::vector<Tensor*> params;
  std::vector<Tensor*> grads;
};

void add_ann(TrainableSet& set, AnnParams& p, AnnParams& g) {
  visit_ann(p, [&](const char*, Tensor& t) { set.params.push_back(&t); });
  visit_ann(g, [&](const char*, Tensor& t) { set.grads.push_back(&t); });
}

void add_head(TrainableSet& set, FeatureHeadParams& p, FeatureHeadParams& g) {
  visit_head(p, [&](const char*, Tensor& t) { set.params.push_back(&t); });
  visit_head(g, [&](const char*, Tensor& t) { set.grads.push_back(&t); });
}

void zero(const std::vector<Tensor*>& v) {
  for (Tensor* t : v) t->set_zero();
}

SurvivalMetrics score(const SurvivalModel& model, const std::vector<std::vector<double>>& features,
                      const std::vector<double>& ages, const std::vector<double>& days,
                      const std::vector<std::size_t>& idx) {
  std::vector<double> preds, targets;
  for (std::size_t i : idx) {
    preds.push_back(predict_days(model, features[i], ages[i]));
    targets.push_back(days[i]);
  }
  return evaluate_survival(preds, targets, model.config);
}

}  // namespace

std::string_view survival_class_name(SurvivalClass c) {
  switch (c) {
    case SurvivalClass::Short: return "short";
    case SurvivalClass::Mid: return "mid";
    case SurvivalClass::Long: return "long";
  }
  return "?";
}

void SurvTrainConfig::validate() const {
  require(train_fraction > 0.0 && train_fraction <= 1.0, ErrorCode::ConfigError, "train_fraction must be in (0, 1]");
  require(epochs >= 1, ErrorCode::ConfigError, "epochs must be >= 1");
  require(std::isfinite(lr) && lr >= 0.0, ErrorCode::ConfigError, "lr must be finite and non-negative");
  require(batch_size >= 1, ErrorCode::ConfigError, "batch_size must be >= 1");
  require(dropout >= 0.0 && dropout < 1.0, ErrorCode::ConfigError, "dropout must be in [0, 1)");
  require(short_below_days < long_above_days, ErrorCode::ConfigError, "class thresholds must be increasing");
  require(head_hidden >= 1, ErrorCode::ConfigError, "head_hidden must be >= 1");
  require(head_kernel >= 1 && head_kernel % 2 == 1, ErrorCode::ConfigError, "head_kernel must be odd");
}

SurvivalClass classify_survival(double days, const SurvTrainConfig& cfg) {
  require(std::isfinite(days) && days >= 0.0, ErrorCode::InvalidInput, "survival days must be >= 0");
  if (days < cfg.short_below_days) return SurvivalClass::Short;
  if (days > cfg.long_above_days) return SurvivalClass::Long;
  return SurvivalClass::Mid;
}

// --- feature heads ----------------------------------------------------------

FeatureHeadParams init_feature_head(int bottleneck_channels, const SurvTrainConfig& cfg, std::uint64_t seed) {
  require(bottleneck_channels >= 1, ErrorCode::ShapeError, "bottleneck channel count must be positive");
  Rng rng = fork_rng(seed, 0x68656164);
  const int k = cfg.head_kernel, hid = cfg.head_hidden;
  FeatureHeadParams p;
  p.w1 = he_normal({hid, bottleneck_channels, k, k}, bottleneck_channels * k * k, rng);
  p.b1 = Tensor({hid});
  p.w2 = he_normal({kPlaneFeatures, hid, k, k}, hid * k * k, rng);
  p.b2 = Tensor({kPlaneFeatures});
  return p;
}

std::vector<double> head_forward(const Tensor& bottleneck, const FeatureHeadParams& head, HeadTrace* trace) {
  require(bottleneck.rank() == 4 && bottleneck.c() == head.w1.dim(1), ErrorCode::ShapeError,
          "bottleneck " + shape_string(bottleneck.shape()) + " does not fit the feature head");
  Tensor h1 = nn::relu(nn::conv2d(bottleneck, head.w1, &head.b1));
  Tensor h2 = nn::relu(nn::conv2d(h1, head.w2, &head.b2));
  const int n = h2.n(), c = h2.c();
  const double count = static_cast<double>(n) * static_cast<double>(h2.plane());
  std::vector<double> out(static_cast<std::size_t>(c), 0.0);
  for (int ch = 0; ch < c; ++ch) {
    double s = 0.0;
    for (int i = 0; i < n; ++i) {
      const double* p = h2.channel(i, ch);
      for (std::size_t j = 0; j < h2.plane(); ++j) s += p[j];
    }
    out[static_cast<std::size_t>(ch)] = s / count;
  }
  if (trace) *trace = {bottleneck, std::move(h1), std::move(h2)};
  return out;
}

void head_backward(const std::vector<double>& dfeatures, const FeatureHeadParams& head, const HeadTrace& trace,
                   FeatureHeadParams& grads) {
  const Tensor& h2 = trace.h2;
  require(dfeatures.size() == static_cast<std::size_t>(h2.c()), ErrorCode::ShapeError, "feature gradient length");
  const double inv = 1.0 / (static_cast<double>(h2.n()) * static_cast<double>(h2.plane()));
  Tensor dz2(h2.shape());
  for (int i = 0; i < h2.n(); ++i)
    for (int ch = 0; ch < h2.c(); ++ch) {
      const double g = dfeatures[static_cast<std::size_t>(ch)] * inv;
      const double* a = h2.channel(i, ch);
      double* d = dz2.channel(i, ch);
      for (std::size_t j = 0; j < h2.plane(); ++j) d[j] = a[j] > 0.0 ? g : 0.0;
    }
  Tensor dh1(trace.h1.shape());
  nn::conv2d_backward(trace.h1, head.w2, dz2, &dh1, &grads.w2, &grads.b2);
  const Tensor dz1 = nn::relu_backward(dh1, trace.h1);
  nn::conv2d_backward(trace.input, head.w1, dz1, nullptr, &grads.w1, &grads.b1);
}

Tensor plane_bottlenecks(const CaseBundle& c, Plane plane, const NetworkParams& seg, int slab_size) {
  require(slab_size >= 1, ErrorCode::ConfigError, "slab_size must be >= 1");
  const int len = c.shape()[plane_axis(plane)];
  std::vector<Tensor> parts;
  for (int start = 0; start < len; start += slab_size) {
    const int count = std::min(slab_size, len - start);
    parts.push_back(extract_bottleneck(slice_range(c, plane, start, count), seg));
  }
  require(!parts.empty(), ErrorCode::ShapeError, c.case_id + ": plane has no slices");
  Shape shape = parts.front().shape();
  shape[0] = len;
  Tensor out(shape);
  double* dst = out.data();
  for (const Tensor& p : parts) dst = std::copy(p.storage().begin(), p.storage().end(), dst);
  return out;
}

std::vector<double> extract_plane_features(const CaseBundle& c, Plane plane, const NetworkParams& seg,
                                           const FeatureHeadParams& head, int slab_size) {
  return head_forward(plane_bottlenecks(c, plane, seg, slab_size), head);
}

std::vector<double> fuse_features(const std::vector<double>& sagittal, const std::vector<double>& coronal,
                                  const std::vector<double>& axial) {
  for (const auto* v : {&sagittal, &coronal, &axial})
    require(v->size() == static_cast<std::size_t>(kPlaneFeatures), ErrorCode::ShapeError,
            "plane feature vectors must have 64 entries, got " + std::to_string(v->size()));
  std::vector<double> out;
  out.reserve(kFusedFeatures);
  out.insert(out.end(), sagittal.begin(), sagittal.end());
  out.insert(out.end(), coronal.begin(), coronal.end());
  out.insert(out.end(), axial.begin(), axial.end());
  return out;
}

// --- regression network -----------------------------------------------------

void check_ann_shapes(const AnnParams& p) {
  const auto& w = kAnnWidths;
  const std::array<std::pair<const Tensor*, Shape>, 8> want{{{&p.w1, {w[1], w[0]}},
                                                             {&p.b1, {w[1]}},
                                                             {&p.w2, {w[2], w[1]}},
                                                             {&p.b2, {w[2]}},
                                                             {&p.w3, {w[3], w[2]}},
                                                             {&p.b3, {w[3]}},
                                                             {&p.w4, {w[5], w[4]}},
                                                             {&p.b4, {w[5]}}}};
  for (const auto& [t, shape] : want)
    require(t->shape() == shape, ErrorCode::ShapeError,
            "survival network layer has shape " + shape_string(t->shape()) + ", expected " + shape_string(shape));
  require(w[4] == w[3] + 1, ErrorCode::ShapeError, "age join must add exactly one input");
}

AnnParams init_ann(std::uint64_t seed) {
  const auto& w = kAnnWidths;
  Rng rng = fork_rng(seed, 0x616e6e);
  AnnParams p;
  p.w1 = he_normal({w[1], w[0]}, w[0], rng);
  p.b1 = Tensor({w[1]});
  p.w2 = he_normal({w[2], w[1]}, w[1], rng);
  p.b2 = Tensor({w[2]});
  p.w3 = he_normal({w[3], w[2]}, w[2], rng);
  p.b3 = Tensor({w[3]});
  p.w4 = he_normal({w[5], w[4]}, w[4], rng);
  p.b4 = Tensor({w[5]});
  check_ann_shapes(p);
  return p;
}

double ann_forward(const std::vector<double>& features, double age, const AnnParams& p, AnnMode mode,
                   double dropout, Rng* rng, AnnTrace* trace) {
  require(features.size() == static_cast<std::size_t>(kFusedFeatures), ErrorCode::ShapeError,
          "survival network expects 192 features, got " + std::to_string(features.size()));
  require(std::isfinite(age), ErrorCode::InvalidInput, "age is not finite");
  for (double f : features) require(std::isfinite(f), ErrorCode::InvalidInput, "features contain non-finite values");
  const bool drop = mode == AnnMode::Train && dropout > 0.0;
  require(!drop || rng != nullptr, ErrorCode::InvalidInput, "train mode with dropout needs a random stream");

  const std::array<const Tensor*, 3> ws{&p.w1, &p.w2, &p.w3};
  const std::array<const Tensor*, 3> bs{&p.b1, &p.b2, &p.b3};
  AnnTrace local;
  AnnTrace& tr = trace ? *trace : local;
  tr.input = features;
  tr.widths = {kAnnWidths.begin(), kAnnWidths.end()};
  const std::vector<double>* x = &tr.input;
  for (int k = 0; k < 3; ++k) {
    tr.pre[k] = dense(*ws[k], *bs[k], *x);
    tr.mask[k].assign(tr.pre[k].size(), 1.0);
    tr.post[k].resize(tr.pre[k].size());
    for (std::size_t i = 0; i < tr.pre[k].size(); ++i) {
      if (drop) tr.mask[k][i] = bernoulli(*rng, dropout) ? 0.0 : 1.0 / (1.0 - dropout);
      tr.post[k][i] = std::max(tr.pre[k][i], 0.0) * tr.mask[k][i];
    }
    x = &tr.post[k];
  }
  tr.joined = tr.post[2];
  tr.joined.push_back(age);
  return dense(p.w4, p.b4, tr.joined)[0];
}

std::vector<double> ann_backward(double dout, const AnnParams& p, const AnnTrace& trace, AnnParams& grads) {
  const int joined = static_cast<int>(trace.joined.size());
  for (int i = 0; i < joined; ++i) grads.w4[static_cast<std::size_t>(i)] += dout * trace.joined[static_cast<std::size_t>(i)];
  grads.b4[0] += dout;
  std::vector<double> dpost(static_cast<std::size_t>(joined - 1));
  for (int i = 0; i < joined - 1; ++i) dpost[static_cast<std::size_t>(i)] = dout * p.w4[static_cast<std::size_t>(i)];

  const std::array<const Tensor*, 3> ws{&p.w1, &p.w2, &p.w3};
  const std::array<Tensor*, 3> dws{&grads.w1, &grads.w2, &grads.w3};
  const std::array<Tensor*, 3> dbs{&grads.b1, &grads.b2, &grads.b3};
  for (int k = 2; k >= 0; --k) {
    const std::vector<double>& in = k == 0 ? trace.input : trace.post[k - 1];
    const int out_n = ws[k]->dim(0), in_n = ws[k]->dim(1);
    std::vector<double> dpre(static_cast<std::size_t>(out_n));
    for (int o = 0; o < out_n; ++o) {
      const auto oi = static_cast<std::size_t>(o);
      dpre[oi] = trace.pre[k][oi] > 0.0 ? dpost[oi] * trace.mask[k][oi] : 0.0;
    }
    std::vector<double> din(static_cast<std::size_t>(in_n), 0.0);
    for (int o = 0; o < out_n; ++o) {
      const double g = dpre[static_cast<std::size_t>(o)];
      if (g == 0.0) continue;
      (*dbs[k])[static_cast<std::size_t>(o)] += g;
      double* dw = dws[k]->data() + static_cast<std::size_t>(o) * in_n;
      const double* w = ws[k]->data() + static_cast<std::size_t>(o) * in_n;
      for (int i = 0; i < in_n; ++i) {
        dw[i] += g * in[static_cast<std::size_t>(i)];
        din[static_cast<std::size_t>(i)] += g * w[i];
      }
    }
    dpost = std::move(din);
  }
  return dpost;
}

Standardizer Standardizer::fit(const std::vector<double>& values) {
  require(!values.empty(), ErrorCode::InsufficientData, "cannot fit a standardizer to no values");
  Standardizer s;
  s.mean = std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
  double ss = 0.0;
  for (double v : values) ss += (v - s.mean) * (v - s.mean);
  const double sd = std::sqrt(ss / static_cast<double>(values.size()));
  s.stddev = sd > 1e-12 ? sd : 1.0;
  return s;
}

double predict_days(const SurvivalModel& model, const std::vector<double>& features, double age) {
  require(std::isfinite(age) && age > 0.0, ErrorCode::InvalidInput, "age must be positive");
  return model.target.invert(ann_forward(features, model.age.apply(age), model.ann, AnnMode::Infer));
}

// --- training and evaluation ------------------------------------------------

SplitIndices split_samples(std::size_t n, double train_fraction, std::uint64_t seed) {
  require(train_fraction > 0.0 && train_fraction <= 1.0, ErrorCode::ConfigError, "train_fraction must be in (0, 1]");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  Rng rng = fork_rng(seed, 0x73706c6974);
  std::shuffle(perm.begin(), perm.end(), rng);
  // The tolerance keeps exact products such as 0.85 * 20 from flooring to 16.
  auto n_train = static_cast<std::size_t>(std::floor(train_fraction * static_cast<double>(n) + 1e-9));
  n_train = std::clamp<std::size_t>(n_train, n > 0 ? 1 : 0, n);
  SplitIndices s;
  s.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  s.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  return s;
}

std::vector<double> average_ranks(const std::vector<double>& v) {
  std::vector<std::size_t> order(v.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
  std::vector<double> ranks(v.size());
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j + 1 < order.size() && v[order[j + 1]] == v[order[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
    i = j + 1;
  }
  return ranks;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
  require(a.size() == b.size(), ErrorCode::ShapeError, "spearman inputs differ in length");
  require(!a.empty(), ErrorCode::ShapeError, "spearman of empty inputs");
  const auto ra = average_ranks(a), rb = average_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  // Constant input: no rank information.
  if (saa == 0.0 || sbb == 0.0) return 0.0;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

SurvivalMetrics evaluate_survival(const std::vector<double>& preds, const std::vector<double>& targets,
                                  const SurvTrainConfig& cfg) {
  require(preds.size() == targets.size(), ErrorCode::ShapeError,
          "predictions and targets differ in length (" + std::to_string(preds.size()) + " vs " +
              std::to_string(targets.size()) + ")");
  require(!preds.empty(), ErrorCode::ShapeError, "no predictions to evaluate");
  SurvivalMetrics m;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const double d = preds[i] - targets[i];
    m.mse += d * d;
    if (classify_survival(std::max(preds[i], 0.0), cfg) == classify_survival(targets[i], cfg)) ++hits;
  }
  m.mse /= static_cast<double>(preds.size());
  m.spearman_r = spearman(preds, targets);
  m.accuracy = static_cast<double>(hits) / static_cast<double>(preds.size());
  return m;
}

namespace {

// Shared epoch loop: `forward` returns the normalized prediction of sample i
// in train mode and `backward` pushes dL/dprediction through the same trace.
template <class Forward, class Backward>
std::vector<double> fit_loop(const std::vector<std::size_t>& train, const std::vector<double>& z_target,
                             TrainableSet& set, const SurvTrainConfig& cfg, Forward&& forward, Backward&& backward) {
  AdamState opt = init_adam(const_list(set.params));
  const auto grads = const_list(set.grads);
  std::vector<double> epoch_loss;
  std::vector<std::size_t> order = train;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    Rng rng = fork_rng(cfg.seed, 0x65706f6368ull + static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    for (std::size_t b = 0; b < order.size(); b += static_cast<std::size_t>(cfg.batch_size)) {
      const std::size_t e = std::min(order.size(), b + static_cast<std::size_t>(cfg.batch_size));
      const double inv = 1.0 / static_cast<double>(e - b);
      zero(set.grads);
      for (std::size_t k = b; k < e; ++k) {
        const std::size_t i = order[k];
        const double pred = forward(i, rng);
        const double err = pred - z_target[i];
        total += err * err;
        backward(2.0 * err * inv);
      }
      const double norm = global_norm(grads);
      require(std::isfinite(norm), ErrorCode::NumericalDivergence, "non-finite survival gradient");
      adam_update(set.params, grads, opt, cfg.lr);
    }
    epoch_loss.push_back(total / static_cast<double>(order.size()));
  }
  return epoch_loss;
}

}  // namespace

SurvivalFit train_survival(const std::vector<SurvivalSample>& samples, const SurvTrainConfig& cfg) {
  cfg.validate();
  require(samples.size() >= 2, ErrorCode::InsufficientData,
          "survival training needs at least 2 samples, got " + std::to_string(samples.size()));
  for (const auto& s : samples) check_sample(s);
  const SplitIndices split = split_samples(samples.size(), cfg.train_fraction, cfg.seed);

  SurvivalFit fit;
  SurvivalModel& model = fit.model;
  model.config = cfg;
  std::vector<double> ages, days;
  for (std::size_t i : split.train) {
    ages.push_back(samples[i].age);
    days.push_back(samples[i].survival_days);
  }
  model.age = Standardizer::fit(ages);
  model.target = Standardizer::fit(days);
  model.ann = init_ann(cfg.seed);

  std::vector<double> z(samples.size()), za(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    z[i] = model.target.apply(samples[i].survival_days);
    za[i] = model.age.apply(samples[i].age);
  }

  AnnParams g = zeros_like(model.ann);
  TrainableSet set;
  add_ann(set, model.ann, g);
  AnnTrace trace;
  fit.report.epoch_loss = fit_loop(
      split.train, z, set, cfg,
      [&](std::size_t i, Rng& rng) {
        return ann_forward(samples[i].features, za[i], model.ann, AnnMode::Train, cfg.dropout, &rng, &trace);
      },
      [&](double dout) { ann_backward(dout, model.ann, trace, g); });

  std::vector<std::vector<double>> feats;
  std::vector<double> all_ages, all_days;
  for (const auto& s : samples) {
    feats.push_back(s.features);
    all_ages.push_back(s.age);
    all_days.push_back(s.survival_days);
  }
  for (std::size_t i : split.train) fit.report.train_ids.push_back(samples[i].case_id);
  for (std::size_t i : split.test) fit.report.test_ids.push_back(samples[i].case_id);
  fit.report.train = score(model, feats, all_ages, all_days, split.train);
  if (!split.test.empty()) fit.report.test = score(model, feats, all_ages, all_days, split.test);
  return fit;
}

SurvivalFit train_survival_joint(const std::vector<SurvivalCase>& cases, const SurvTrainConfig& cfg) {
  cfg.validate();
  require(cases.size() >= 2, ErrorCode::InsufficientData,
          "survival training needs at least 2 cases, got " + std::to_string(cases.size()));
  const int cb = cases.front().bottlenecks[0].rank() == 4 ? cases.front().bottlenecks[0].c() : 0;
  for (const auto& c : cases) {
    for (const Tensor& b : c.bottlenecks)
      require(b.rank() == 4 && b.c() == cb, ErrorCode::ShapeError, c.case_id + ": inconsistent bottleneck shapes");
    require(std::isfinite(c.age) && c.age > 0.0, ErrorCode::InvalidInput, c.case_id + ": age must be positive");
    require(std::isfinite(c.survival_days) && c.survival_days > 0.0, ErrorCode::InvalidInput,
            c.case_id + ": survival_days must be positive");
  }
  const SplitIndices split = split_samples(cases.size(), cfg.train_fraction, cfg.seed);

  SurvivalFit fit;
  SurvivalModel& model = fit.model;
  model.config = cfg;
  model.bottleneck_channels = cb;
  std::vector<double> ages, days;
  for (std::size_t i : split.train) {
    ages.push_back(cases[i].age);
    days.push_back(cases[i].survival_days);
  }
  model.age = Standardizer::fit(ages);
  model.target = Standardizer::fit(days);
  model.ann = init_ann(cfg.seed);
  model.heads.emplace();
  for (std::size_t p = 0; p < 3; ++p) (*model.heads)[p] = init_feature_head(cb, cfg, cfg.seed * 3 + p + 1);

  std::vector<double> z(cases.size()), za(cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    z[i] = model.target.apply(cases[i].survival_days);
    za[i] = model.age.apply(cases[i].age);
  }

  AnnParams g = zeros_like(model.ann);
  std::array<FeatureHeadParams, 3> hg;
  TrainableSet set;
  add_ann(set, model.ann, g);
  for (std::size_t p = 0; p < 3; ++p) {
    hg[p] = zeros_like((*model.heads)[p]);
    add_head(set, (*model.heads)[p], hg[p]);
  }
  AnnTrace trace;
  std::array<HeadTrace, 3> htrace;
  fit.report.epoch_loss = fit_loop(
      split.train, z, set, cfg,
      [&](std::size_t i, Rng& rng) {
        std::array<std::vector<double>, 3> f;
        for (std::size_t p = 0; p < 3; ++p) f[p] = head_forward(cases[i].bottlenecks[p], (*model.heads)[p], &htrace[p]);
        return ann_forward(fuse_features(f[0], f[1], f[2]), za[i], model.ann, AnnMode::Train, cfg.dropout, &rng,
                           &trace);
      },
      [&](double dout) {
        const auto df = ann_backward(dout, model.ann, trace, g);
        for (std::size_t p = 0; p < 3; ++p) {
          const auto first = df.begin() + static_cast<std::ptrdiff_t>(p * kPlaneFeatures);
          head_backward({first, first + kPlaneFeatures}, (*model.heads)[p], htrace[p], hg[p]);
        }
      });

  std::vector<std::vector<double>> feats;
  std::vector<double> all_ages, all_days;
  for (const auto& c : cases) {
    feats.push_back(case_features(model, c.bottlenecks));
    all_ages.push_back(c.age);
    all_days.push_back(c.survival_days);
  }
  for (std::size_t i : split.train) fit.report.train_ids.push_back(cases[i].case_id);
  for (std::size_t i : split.test) fit.report.test_ids.push_back(cases[i].case_id);
  fit.report.train = score(model, feats, all_ages, all_days, split.train);
  if (!split.test.empty()) fit.report.test = score(model, feats, all_ages, all_days, split.test);
  return fit;
}

std::vector<double> case_features(const SurvivalModel& model, const std::array<Tensor, 3>& bottlenecks) {
  require(model.heads.has_value(), ErrorCode::MissingModel, "survival model has no feature heads");
  return fuse_features(head_forward(bottlenecks[0], (*model.heads)[0]),
                       head_forward(bottlenecks[1], (*model.heads)[1]),
                       head_forward(bottlenecks[2], (*model.heads)[2]));
}

void save_survival_model(const std::filesystem::path& path, const SurvivalModel& model) {
  check_ann_shapes(model.ann);
  Archive a;
  a.manifest = {{"kind", kModelKind},
                {"version", kModelVersion},
                {"config", model.config},
                {"age", {{"mean", model.age.mean}, {"stddev", model.age.stddev}}},
                {"target", {{"mean", model.target.mean}, {"stddev", model.target.stddev}}},
                {"bottleneck_channels", model.bottleneck_channels},
                {"has_heads", model.heads.has_value()},
                {"widths", kAnnWidths}};
  visit_ann(model.ann, [&](const char* name, const Tensor& t) { a.arrays[std::string("ann.") + name] = t; });
  if (model.heads) {
    for (Plane p : kPlanes) {
      const auto prefix = "head." + std::string(plane_name(p)) + ".";
      visit_head((*model.heads)[static_cast<std::size_t>(p)],
                 [&](const char* name, const Tensor& t) { a.arrays[prefix + name] = t; });
    }
  }
  write_archive(path, a);
}

SurvivalModel load_survival_model(const std::filesystem::path& path) {
  const Archive a = read_archive(path);
  const auto& m = a.manifest;
  require(m.value("kind", "") == kModelKind, ErrorCode::MissingModel, path.string() + " is not a survival model");
  require(m.value("version", 0) == kModelVersion, ErrorCode::MissingModel,
          path.string() + ": unsupported survival model version");
  SurvivalModel model;
  try {
    from_json(m.at("config"), model.config);
    model.age = {m.at("age").at("mean").get<double>(), m.at("age").at("stddev").get<double>()};
    model.target = {m.at("target").at("mean").get<double>(), m.at("target").at("stddev").get<double>()};
    model.bottleneck_channels = m.at("bottleneck_channels").get<int>();
    if (m.at("has_heads").get<bool>()) model.heads.emplace();
  } catch (const nlohmann::json::exception& e) {
    fail(ErrorCode::IoError, path.string() + ": bad manifest: " + e.what());
  }
  visit_ann(model.ann, [&](const char* name, Tensor& t) { t = a.array(std::string("ann.") + name); });
  check_ann_shapes(model.ann);
  if (model.heads) {
    for (Plane p : kPlanes) {
      const auto prefix = "head." + std::string(plane_name(p)) + ".";
      visit_head((*model.heads)[static_cast<std::size_t>(p)],
                 [&](const char* name, Tensor& t) { t = a.array(prefix + name); });
    }
  }
  return model;
}

}  // namespace triseg
