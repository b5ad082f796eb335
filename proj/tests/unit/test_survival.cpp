#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include "doctest.h"
#include "expect.hpp"
#include "triseg/phantoms.hpp"
#include "triseg/survival.hpp"

using namespace triseg;
using triseg::testing::error_code_of;

namespace {

std::vector<double> random_vector(std::size_t n, Rng& rng, double lo = 0.0, double hi = 1.0) {
  std::vector<double> v(n);
  for (double& x : v) x = uniform(rng, lo, hi);
  return v;
}

// Rank of each entry: 1 + (# smaller) + (# equal others) / 2.
double oracle_spearman(const std::vector<double>& a, const std::vector<double>& b) {
  auto ranks = [](const std::vector<double>& v) {
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < v.size(); ++i) {
      double less = 0, equal = 0;
      for (std::size_t j = 0; j < v.size(); ++j) {
        if (v[j] < v[i]) less += 1;
        if (j != i && v[j] == v[i]) equal += 1;
      }
      r[i] = 1 + less + equal / 2;
    }
    return r;
  };
  const auto ra = ranks(a), rb = ranks(b);
  const double n = static_cast<double>(a.size());
  double ma = 0, mb = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) ma += ra[i] / n, mb += rb[i] / n;
  double num = 0, da = 0, db = 0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    num += (ra[i] - ma) * (rb[i] - mb);
    da += (ra[i] - ma) * (ra[i] - ma);
    db += (rb[i] - mb) * (rb[i] - mb);
  }
  return num / std::sqrt(da * db);
}

std::vector<SurvivalSample> linear_samples(int n, std::uint64_t seed) {
  Rng rng = fork_rng(seed, 1);
  const auto coef = random_vector(kFusedFeatures, rng, -1.0, 1.0);
  std::vector<SurvivalSample> out;
  for (int i = 0; i < n; ++i) {
    SurvivalSample s;
    s.case_id = "S" + std::to_string(i);
    s.features = random_vector(kFusedFeatures, rng);
    s.age = uniform(rng, 30.0, 80.0);
    double y = 0.0;
    for (int k = 0; k < kFusedFeatures; ++k) y += coef[static_cast<std::size_t>(k)] * s.features[static_cast<std::size_t>(k)];
    s.survival_days = 450.0 + 60.0 * y;
    out.push_back(std::move(s));
  }
  return out;
}

double variance(const std::vector<double>& v) {
  const double m = std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return s / static_cast<double>(v.size());
}

}  // namespace

TEST_CASE("survival classes use 300 and 450 day thresholds") {
  CHECK(classify_survival(200) == SurvivalClass::Short);
  CHECK(classify_survival(299.999) == SurvivalClass::Short);
  CHECK(classify_survival(300) == SurvivalClass::Mid);
  CHECK(classify_survival(450) == SurvivalClass::Mid);
  CHECK(classify_survival(451) == SurvivalClass::Long);
  CHECK(classify_survival(0) == SurvivalClass::Short);
  CHECK(error_code_of([] { classify_survival(-1); }) == ErrorCode::InvalidInput);
  SurvTrainConfig bad;
  bad.long_above_days = 200;
  CHECK(error_code_of([&] { bad.validate(); }) == ErrorCode::ConfigError);
}

TEST_CASE("fuse_features concatenates sagittal, coronal, axial") {
  std::vector<double> a(64), b(64), c(64);
  std::iota(a.begin(), a.end(), 0.0);
  std::iota(b.begin(), b.end(), 100.0);
  std::iota(c.begin(), c.end(), 200.0);
  const auto f = fuse_features(a, b, c);
  REQUIRE(f.size() == 192);
  for (int i = 0; i < 64; ++i) {
    CHECK(f[static_cast<std::size_t>(i)] == a[static_cast<std::size_t>(i)]);
    CHECK(f[static_cast<std::size_t>(64 + i)] == b[static_cast<std::size_t>(i)]);
    CHECK(f[static_cast<std::size_t>(128 + i)] == c[static_cast<std::size_t>(i)]);
  }
  const std::vector<double> z(64, 0.0);
  const auto fz = fuse_features(z, z, z);
  CHECK(std::all_of(fz.begin(), fz.end(), [](double v) { return v == 0.0; }));
  auto b2 = b;
  b2[5] += 1.0;
  CHECK(fuse_features(a, b2, c) != f);
  CHECK(error_code_of([&] { fuse_features(a, std::vector<double>(63), c); }) == ErrorCode::ShapeError);
}

TEST_CASE("regression network traces 192-64-64-28-29-1") {
  const AnnParams p = init_ann(3);
  CHECK_NOTHROW(check_ann_shapes(p));
  Rng rng = fork_rng(0, 0);
  AnnTrace tr;
  const double y = ann_forward(random_vector(192, rng), 0.3, p, AnnMode::Infer, 0.3, nullptr, &tr);
  CHECK(std::isfinite(y));
  CHECK(tr.input.size() == 192);
  CHECK(tr.post[0].size() == 64);
  CHECK(tr.post[1].size() == 64);
  CHECK(tr.post[2].size() == 28);
  CHECK(tr.joined.size() == 29);
  CHECK(tr.widths == std::vector<int>{192, 64, 64, 28, 29, 1});

  AnnParams bad = p;
  bad.w3 = Tensor({27, 64});
  CHECK(error_code_of([&] { check_ann_shapes(bad); }) == ErrorCode::ShapeError);
  CHECK(error_code_of([&] { ann_forward(std::vector<double>(191), 0, p, AnnMode::Infer); }) == ErrorCode::ShapeError);
  auto nan_in = random_vector(192, rng);
  nan_in[7] = std::nan("");
  CHECK(error_code_of([&] { ann_forward(nan_in, 0, p, AnnMode::Infer); }) == ErrorCode::InvalidInput);
}

TEST_CASE("zero weights reduce the network to its output bias") {
  AnnParams p = init_ann(1);
  for (Tensor* t : {&p.w1, &p.b1, &p.w2, &p.b2, &p.w3, &p.b3, &p.w4}) t->set_zero();
  p.b4[0] = 3.25;
  Rng rng = fork_rng(5, 5);
  for (int i = 0; i < 5; ++i) {
    CHECK(ann_forward(random_vector(192, rng, -5, 5), uniform(rng, -2, 2), p, AnnMode::Infer) == 3.25);
    CHECK(ann_forward(random_vector(192, rng, -5, 5), 0.0, p, AnnMode::Train, 0.3, &rng) == 3.25);
  }
}

TEST_CASE("inference ignores the dropout stream; training mode uses it") {
  const AnnParams p = init_ann(2);
  Rng rng = fork_rng(1, 1);
  const auto x = random_vector(192, rng);
  Rng r1 = fork_rng(10, 0), r2 = fork_rng(11, 0);
  const double a = ann_forward(x, 0.1, p, AnnMode::Infer, 0.3, &r1);
  const double b = ann_forward(x, 0.1, p, AnnMode::Infer, 0.3, &r2);
  CHECK(a == b);
  CHECK(a == ann_forward(x, 0.1, p, AnnMode::Infer));
  Rng t1 = fork_rng(10, 0), t2 = fork_rng(11, 0);
  AnnTrace tr;
  const double ta = ann_forward(x, 0.1, p, AnnMode::Train, 0.3, &t1, &tr);
  CHECK(ta != ann_forward(x, 0.1, p, AnnMode::Train, 0.3, &t2));
  for (const auto& mask : tr.mask)
    for (double m : mask) CHECK((m == 0.0 || std::abs(m - 1.0 / 0.7) < 1e-15));
}

TEST_CASE("regression network gradients match finite differences") {
  AnnParams p = init_ann(4);
  Rng rng = fork_rng(2, 2);
  const auto x = random_vector(192, rng);
  const double age = 0.4;
  Rng drop = fork_rng(9, 9);
  AnnTrace tr;
  ann_forward(x, age, p, AnnMode::Train, 0.3, &drop, &tr);
  AnnParams g = p;
  for (Tensor* t : {&g.w1, &g.b1, &g.w2, &g.b2, &g.w3, &g.b3, &g.w4, &g.b4}) t->set_zero();
  const auto dx = ann_backward(1.0, p, tr, g);

  // Replays the recorded dropout masks so the function is deterministic.
  auto f = [&](const AnnParams& q, const std::vector<double>& in) {
    std::vector<double> h = in;
    const std::array<const Tensor*, 3> ws{&q.w1, &q.w2, &q.w3};
    const std::array<const Tensor*, 3> bs{&q.b1, &q.b2, &q.b3};
    for (int k = 0; k < 3; ++k) {
      std::vector<double> o(static_cast<std::size_t>(ws[k]->dim(0)));
      for (int r = 0; r < ws[k]->dim(0); ++r) {
        double s = (*bs[k])[static_cast<std::size_t>(r)];
        for (int c = 0; c < ws[k]->dim(1); ++c)
          s += ws[k]->storage()[static_cast<std::size_t>(r * ws[k]->dim(1) + c)] * h[static_cast<std::size_t>(c)];
        o[static_cast<std::size_t>(r)] = std::max(s, 0.0) * tr.mask[k][static_cast<std::size_t>(r)];
      }
      h = o;
    }
    h.push_back(age);
    double y = q.b4[0];
    for (int i = 0; i < 29; ++i) y += q.w4[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(i)];
    return y;
  };
  CHECK(std::abs(f(p, x) - ann_forward(x, age, p, AnnMode::Train, 0.3, &(drop = fork_rng(9, 9)))) < 1e-12);
  const double h = 1e-6;
  for (auto [pt, gt] : {std::pair{&p.w1, &g.w1}, {&p.b2, &g.b2}, {&p.w3, &g.w3}, {&p.w4, &g.w4}, {&p.b4, &g.b4}}) {
    for (std::size_t i = 0; i < pt->size(); i += 1 + pt->size() / 17) {
      const double keep = (*pt)[i];
      (*pt)[i] = keep + h;
      const double up = f(p, x);
      (*pt)[i] = keep - h;
      const double dn = f(p, x);
      (*pt)[i] = keep;
      CHECK(std::abs((up - dn) / (2 * h) - (*gt)[i]) < 1e-6);
    }
  }
  for (std::size_t i = 0; i < x.size(); i += 11) {
    auto xp = x, xm = x;
    xp[i] += h;
    xm[i] -= h;
    CHECK(std::abs((f(p, xp) - f(p, xm)) / (2 * h) - dx[i]) < 1e-6);
  }
}

TEST_CASE("feature head pools to 64 values and ignores duplicated slabs") {
  SurvTrainConfig cfg;
  cfg.head_hidden = 12;
  const FeatureHeadParams head = init_feature_head(6, cfg, 1);
  Rng rng = fork_rng(3, 3);
  Tensor b({4, 6, 5, 5});
  for (double& v : b.values()) v = uniform(rng, -1, 1);
  const auto f = head_forward(b, head);
  CHECK(f.size() == 64);
  Tensor twice({8, 6, 5, 5});
  std::copy(b.storage().begin(), b.storage().end(), twice.data());
  std::copy(b.storage().begin(), b.storage().end(), twice.data() + b.size());
  const auto f2 = head_forward(twice, head);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(f2[i] == doctest::Approx(f[i]).epsilon(1e-12));
  CHECK(error_code_of([&] { head_forward(Tensor({1, 5, 4, 4}), head); }) == ErrorCode::ShapeError);
}

TEST_CASE("constant bottleneck pools to the pointwise head response") {
  SurvTrainConfig cfg;
  cfg.head_hidden = 10;
  cfg.head_kernel = 1;  // no padding border, so every pixel sees the same input
  const FeatureHeadParams head = init_feature_head(4, cfg, 7);
  const double c = 0.7;
  const auto f = head_forward(Tensor({3, 4, 6, 6}, c), head);
  std::vector<double> hid(10);
  for (int o = 0; o < 10; ++o) {
    double s = head.b1[static_cast<std::size_t>(o)];
    for (int i = 0; i < 4; ++i) s += head.w1[static_cast<std::size_t>(o * 4 + i)] * c;
    hid[static_cast<std::size_t>(o)] = std::max(s, 0.0);
  }
  for (int o = 0; o < 64; ++o) {
    double s = head.b2[static_cast<std::size_t>(o)];
    for (int i = 0; i < 10; ++i) s += head.w2[static_cast<std::size_t>(o * 10 + i)] * hid[static_cast<std::size_t>(i)];
    CHECK(f[static_cast<std::size_t>(o)] == doctest::Approx(std::max(s, 0.0)).epsilon(1e-12));
  }
}

TEST_CASE("feature head gradients match finite differences") {
  SurvTrainConfig cfg;
  cfg.head_hidden = 5;
  FeatureHeadParams head = init_feature_head(3, cfg, 2);
  Rng rng = fork_rng(4, 4);
  Tensor b({2, 3, 4, 4});
  for (double& v : b.values()) v = uniform(rng, -1, 1);
  const auto weights = random_vector(64, rng, -1, 1);
  auto loss = [&](const FeatureHeadParams& h) {
    const auto f = head_forward(b, h);
    return std::inner_product(f.begin(), f.end(), weights.begin(), 0.0);
  };
  HeadTrace tr;
  head_forward(b, head, &tr);
  FeatureHeadParams g{Tensor(head.w1.shape()), Tensor(head.b1.shape()), Tensor(head.w2.shape()),
                      Tensor(head.b2.shape())};
  head_backward(weights, head, tr, g);
  const double h = 1e-6;
  for (auto [pt, gt] : {std::pair{&head.w1, &g.w1}, {&head.b1, &g.b1}, {&head.w2, &g.w2}, {&head.b2, &g.b2}}) {
    for (std::size_t i = 0; i < pt->size(); i += 1 + pt->size() / 13) {
      const double keep = (*pt)[i];
      (*pt)[i] = keep + h;
      const double up = loss(head);
      (*pt)[i] = keep - h;
      const double dn = loss(head);
      (*pt)[i] = keep;
      CHECK(std::abs((up - dn) / (2 * h) - (*gt)[i]) < 1e-6);
    }
  }
}

TEST_CASE("spearman uses average ranks") {
  const std::vector<double> t{1, 2, 3, 4};
  CHECK(spearman(t, t) == doctest::Approx(1.0));
  CHECK(spearman({4, 3, 2, 1}, t) == doctest::Approx(-1.0));
  const std::vector<double> p{1, 2, 2, 4};
  CHECK(average_ranks(p) == std::vector<double>{1, 2.5, 2.5, 4});
  CHECK(std::abs(spearman(p, t) - oracle_spearman(p, t)) < 1e-12);

  Rng rng = fork_rng(6, 6);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a(12), b(12);
    for (auto& v : a) v = std::floor(uniform(rng, 0, 5));  // ties are common
    for (auto& v : b) v = uniform(rng, 0, 1);
    const double r = spearman(a, b);
    CHECK(r >= -1.0);
    CHECK(r <= 1.0);
    CHECK(std::abs(r - oracle_spearman(a, b)) < 1e-12);
    std::vector<double> moved(b.size());
    std::transform(b.begin(), b.end(), moved.begin(), [](double v) { return std::exp(3 * v) - 7; });
    CHECK(spearman(a, moved) == r);
  }
}

TEST_CASE("evaluate_survival matches mse, rank and threshold oracles") {
  const std::vector<double> t{100, 320, 460, 700, 299};
  const auto same = evaluate_survival(t, t);
  CHECK(same.mse == 0.0);
  CHECK(same.spearman_r == doctest::Approx(1.0));
  CHECK(same.accuracy == 1.0);

  const std::vector<double> p{250, 330, 440, 460, 305};
  const auto m = evaluate_survival(p, t);
  double mse = 0;
  int hits = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    mse += (p[i] - t[i]) * (p[i] - t[i]) / 5.0;
    auto cls = [](double d) { return d < 300 ? 0 : (d > 450 ? 2 : 1); };
    hits += cls(p[i]) == cls(t[i]);
  }
  CHECK(m.mse == doctest::Approx(mse).epsilon(1e-14));
  CHECK(m.accuracy == hits / 5.0);
  CHECK(m.spearman_r == doctest::Approx(oracle_spearman(p, t)).epsilon(1e-12));

  // Moving a prediction without crossing a threshold keeps accuracy.
  auto p2 = p;
  p2[0] = 10;
  p2[3] = 1000;
  CHECK(evaluate_survival(p2, t).accuracy == m.accuracy);
  CHECK(error_code_of([&] { evaluate_survival({1, 2}, {1, 2, 3}); }) == ErrorCode::ShapeError);
}

TEST_CASE("split is seeded and floors the training side") {
  const auto s = split_samples(236, 0.85, 42);
  CHECK(s.train.size() == 200);
  CHECK(s.test.size() == 36);
  const auto again = split_samples(236, 0.85, 42);
  CHECK(again.train == s.train);
  CHECK(again.test == s.test);
  CHECK(split_samples(236, 0.85, 43).train != s.train);
  std::vector<std::size_t> all = s.train;
  all.insert(all.end(), s.test.begin(), s.test.end());
  std::sort(all.begin(), all.end());
  for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
  CHECK(split_samples(20, 0.85, 0).train.size() == 17);
}

TEST_CASE("train_survival rejects too little data") {
  auto samples = linear_samples(1, 0);
  SurvTrainConfig cfg;
  cfg.epochs = 1;
  CHECK(error_code_of([&] { train_survival(samples, cfg); }) == ErrorCode::InsufficientData);
  samples = linear_samples(3, 0);
  samples[1].features.pop_back();
  CHECK(error_code_of([&] { train_survival(samples, cfg); }) == ErrorCode::ShapeError);
}

TEST_CASE("linear targets are recovered on the training split") {
  const auto samples = linear_samples(20, 11);
  // Dropout is a regularizer that keeps the fit from interpolating, so the
  // recoverability probe turns it off and uses 4-sample mini-batches.
  SurvTrainConfig cfg;
  cfg.dropout = 0.0;
  cfg.batch_size = 4;
  const auto fit = train_survival(samples, cfg);
  std::vector<double> train_days;
  for (const auto& s : samples)
    if (std::find(fit.report.train_ids.begin(), fit.report.train_ids.end(), s.case_id) != fit.report.train_ids.end())
      train_days.push_back(s.survival_days);
  const double var = variance(train_days);

  CHECK(fit.report.train_ids.size() == 17);
  CHECK(fit.report.test_ids.size() == 3);
  CHECK(fit.report.epoch_loss.size() == 400);
  CHECK(fit.report.train.mse < 0.01 * var);
}

TEST_CASE("survival model survives a save and load") {
  const auto samples = linear_samples(8, 2);
  SurvTrainConfig cfg;
  cfg.epochs = 3;
  const auto fit = train_survival(samples, cfg);
  const auto path = std::filesystem::temp_directory_path() / "triseg_surv_model.bin";
  save_survival_model(path, fit.model);
  const SurvivalModel back = load_survival_model(path);
  for (const auto& s : samples) CHECK(predict_days(back, s.features, s.age) == predict_days(fit.model, s.features, s.age));
  CHECK(!back.heads.has_value());
  std::filesystem::remove(path);
  CHECK(error_code_of([&] { load_survival_model(path); }) == ErrorCode::MissingModel);
}

TEST_CASE("joint training updates heads and network from bottlenecks") {
  NetworkConfig net;
  net.level_filters = {4, 8};
  const NetworkParams seg = init_network(net, 1);
  std::vector<SurvivalCase> cases;
  for (const auto& spec : phantom_series(4, 5, {16, 16, 16})) {
    const CaseBundle c = make_phantom(spec);
    SurvivalCase sc;
    sc.case_id = c.case_id;
    for (Plane p : kPlanes) sc.bottlenecks[static_cast<std::size_t>(p)] = plane_bottlenecks(c, p, seg, 8);
    sc.age = *c.clinical.age;
    sc.survival_days = *c.clinical.survival_days;
    cases.push_back(std::move(sc));
  }
  CHECK(cases[0].bottlenecks[0].shape() == Shape{16, 8, 8, 8});
  SurvTrainConfig cfg;
  cfg.epochs = 20;
  cfg.lr = 1e-3;
  cfg.dropout = 0.0;
  cfg.head_hidden = 8;
  cfg.train_fraction = 1.0;
  const auto fit = train_survival_joint(cases, cfg);
  REQUIRE(fit.model.heads.has_value());
  CHECK(fit.model.bottleneck_channels == 8);
  CHECK(fit.report.train_ids.size() == 4);
  CHECK(fit.report.epoch_loss.back() < fit.report.epoch_loss.front());
  const auto f = case_features(fit.model, cases[0].bottlenecks);
  CHECK(f.size() == 192);
  CHECK(std::isfinite(predict_days(fit.model, f, cases[0].age)));

  const auto path = std::filesystem::temp_directory_path() / "triseg_surv_joint.bin";
  save_survival_model(path, fit.model);
  const auto back = load_survival_model(path);
  CHECK(case_features(back, cases[1].bottlenecks) == case_features(fit.model, cases[1].bottlenecks));
  std::filesystem::remove(path);
}
