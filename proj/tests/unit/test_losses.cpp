#include <cmath>

#include "doctest.h"
#include "expect.hpp"
#include "gradcheck.hpp"
#include "triseg/losses.hpp"

using namespace triseg;
using triseg::testing::check_gradient;
using triseg::testing::error_code_of;
using triseg::testing::random_onehot;
using triseg::testing::random_probs;

namespace {

double loop_dice(const Tensor& p, const Tensor& t, double eps) {
  double score = 0.0;
  for (int c = 0; c < p.c(); ++c) {
    double inter = 0.0, sp = 0.0, st = 0.0;
    for (int n = 0; n < p.n(); ++n)
      for (int y = 0; y < p.h(); ++y)
        for (int x = 0; x < p.w(); ++x) {
          inter += p.at(n, c, y, x) * t.at(n, c, y, x);
          sp += p.at(n, c, y, x);
          st += t.at(n, c, y, x);
        }
    score += (2.0 * inter + eps) / (sp + st + eps);
  }
  return 1.0 - score / p.c();
}

double mean_cross_entropy(const Tensor& p, const Tensor& t, double eps) {
  double sum = 0.0;
  int voxels = 0;
  for (int n = 0; n < p.n(); ++n)
    for (int y = 0; y < p.h(); ++y)
      for (int x = 0; x < p.w(); ++x, ++voxels)
        for (int c = 0; c < p.c(); ++c)
          if (t.at(n, c, y, x) == 1.0) sum -= std::log(p.at(n, c, y, x) + eps);
  return sum / voxels;
}

Tensor single_voxel(std::vector<double> values) {
  const int c = static_cast<int>(values.size());
  return Tensor({1, c, 1, 1}, std::move(values));
}

}  // namespace

TEST_CASE("dice_loss: perfect prediction is exactly zero") {
  std::mt19937_64 rng(1);
  const Tensor t = random_onehot({2, 4, 5, 6}, rng);
  CHECK(dice_loss(t, t, {}) == 0.0);
}

TEST_CASE("dice_loss: two-class single-voxel hand evaluation") {
  const LossConfig cfg;
  const double e = cfg.epsilon;
  const double expected = 1.0 - 0.5 * ((1.0 + e) / (1.5 + e) + e / (0.5 + e));
  CHECK(dice_loss(single_voxel({0.5, 0.5}), single_voxel({1.0, 0.0}), cfg) == doctest::Approx(expected).epsilon(1e-14));
  CHECK(expected == doctest::Approx(2.0 / 3.0).epsilon(1e-5));
}

TEST_CASE("dice_loss: uniform probabilities vs random target match a loop oracle") {
  std::mt19937_64 rng(2);
  Tensor p({1, 4, 10, 10}, 0.25);
  const Tensor t = random_onehot({1, 4, 10, 10}, rng);
  CHECK(std::abs(dice_loss(p, t, {}) - loop_dice(p, t, 1e-6)) <= 1e-9);
  for (int k = 0; k < 10; ++k) {
    const Tensor q = random_probs({2, 4, 5, 5}, rng);
    const Tensor tt = random_onehot({2, 4, 5, 5}, rng);
    const double d = dice_loss(q, tt, {});
    CHECK(std::abs(d - loop_dice(q, tt, 1e-6)) <= 1e-9);
    CHECK(d >= 0.0);
    CHECK(d < 1.0);
  }
}

TEST_CASE("focal_loss: reductions and hand values") {
  LossConfig ce;
  ce.gamma = 0.0;
  const double e = ce.epsilon;
  CHECK(focal_loss(single_voxel({0.5, 0.5}), single_voxel({1.0, 0.0}), ce) == doctest::Approx(std::log(2.0)).epsilon(1e-5));
  CHECK(focal_loss(single_voxel({1.0, 0.0}), single_voxel({1.0, 0.0}), {}) == doctest::Approx(-std::log(1.0 + e)));
  const double g2 = focal_loss(single_voxel({0.9, 0.1}), single_voxel({1.0, 0.0}), {});
  const double g0 = focal_loss(single_voxel({0.9, 0.1}), single_voxel({1.0, 0.0}), ce);
  CHECK(g2 == doctest::Approx(0.01 * -std::log(0.9 + e)).epsilon(1e-12));
  CHECK(g2 == doctest::Approx(0.001054).epsilon(1e-3));
  CHECK(g0 == doctest::Approx(0.10536).epsilon(1e-4));
}

TEST_CASE("focal_loss with gamma 0 and alpha 1 is mean cross-entropy") {
  std::mt19937_64 rng(3);
  LossConfig ce;
  ce.gamma = 0.0;
  for (int k = 0; k < 20; ++k) {
    const Tensor p = random_probs({2, 4, 4, 3}, rng);
    const Tensor t = random_onehot({2, 4, 4, 3}, rng);
    CHECK(std::abs(focal_loss(p, t, ce) - mean_cross_entropy(p, t, ce.epsilon)) <= 1e-9);
    CHECK(focal_loss(p, t, {}) >= 0.0);
  }
}

TEST_CASE("focal_loss: per-class alpha weights and scalar broadcast") {
  const Tensor p = single_voxel({0.3, 0.7});
  const Tensor t = single_voxel({0.0, 1.0});
  LossConfig a;
  a.alpha = {5.0, 2.0};
  LossConfig b;
  b.alpha = {2.0};
  CHECK(focal_loss(p, t, a) == doctest::Approx(focal_loss(p, t, b)).epsilon(1e-15));
  CHECK(focal_loss(p, t, a) == doctest::Approx(2.0 * focal_loss(p, t, {})).epsilon(1e-15));
}

TEST_CASE("total_loss is the sum of its parts and zero-ish when perfect") {
  std::mt19937_64 rng(4);
  for (int k = 0; k < 10; ++k) {
    const Tensor p = random_probs({1, 4, 6, 6}, rng);
    const Tensor t = random_onehot({1, 4, 6, 6}, rng);
    const LossValue v = total_loss(p, t, {});
    CHECK(std::abs(v.total - (dice_loss(p, t, {}) + focal_loss(p, t, {}))) <= 1e-12);
  }
  const Tensor t = random_onehot({1, 4, 6, 6}, rng);
  CHECK(total_loss(t, t, {}).total == doctest::Approx(0.0).epsilon(1e-5));
}

TEST_CASE("loss gradients match central differences") {
  std::mt19937_64 rng(5);
  Tensor p = random_probs({1, 4, 8, 8}, rng);
  const Tensor t = random_onehot({1, 4, 8, 8}, rng);
  LossConfig cfg;
  cfg.alpha = {0.5, 1.0, 2.0, 1.5};
  Tensor g(p.shape());
  total_loss(p, t, cfg, &g);
  const auto r = check_gradient(p, g, [&] { return total_loss(p, t, cfg).total; }, rng);
  CHECK(r.max_rel_error < 1e-5);
  CHECK(r.checked == p.size());
}

TEST_CASE("losses are invariant to voxel order") {
  std::mt19937_64 rng(6);
  const Tensor p = random_probs({1, 4, 1, 12}, rng);
  const Tensor t = random_onehot({1, 4, 1, 12}, rng);
  Tensor pr = p, tr = t;
  for (int c = 0; c < 4; ++c)
    for (int i = 0; i < 12; ++i) {
      pr.at(0, c, 0, i) = p.at(0, c, 0, 11 - i);
      tr.at(0, c, 0, i) = t.at(0, c, 0, 11 - i);
    }
  CHECK(dice_loss(pr, tr, {}) == doctest::Approx(dice_loss(p, t, {})).epsilon(1e-14));
  CHECK(focal_loss(pr, tr, {}) == doctest::Approx(focal_loss(p, t, {})).epsilon(1e-14));
}

TEST_CASE("raising the true-class probability never increases either loss") {
  std::mt19937_64 rng(7);
  Tensor p = random_probs({1, 4, 3, 3}, rng);
  const Tensor t = random_onehot({1, 4, 3, 3}, rng);
  int truth = 0;
  for (int c = 0; c < 4; ++c)
    if (t.at(0, c, 1, 1) == 1.0) truth = c;
  double prev_dice = dice_loss(p, t, {}), prev_focal = focal_loss(p, t, {});
  for (int step = 0; step < 10; ++step) {
    const double old = p.at(0, truth, 1, 1);
    const double next = old + 0.5 * (1.0 - old);
    for (int c = 0; c < 4; ++c) {
      if (c == truth) p.at(0, c, 1, 1) = next;
      else p.at(0, c, 1, 1) *= (1.0 - next) / (1.0 - old);
    }
    const double d = dice_loss(p, t, {}), f = focal_loss(p, t, {});
    CHECK(d <= prev_dice + 1e-15);
    CHECK(f <= prev_focal + 1e-15);
    prev_dice = d;
    prev_focal = f;
  }
}

TEST_CASE("shape mismatch and invalid config") {
  CHECK(error_code_of([] { dice_loss(Tensor({1, 4, 2, 2}), Tensor({1, 4, 2, 3}), {}); }) == ErrorCode::ShapeError);
  CHECK(error_code_of([] { focal_loss(Tensor({1, 4, 2, 2}), Tensor({1, 3, 2, 2}), {}); }) == ErrorCode::ShapeError);
  LossConfig bad;
  bad.epsilon = 0.0;
  CHECK(error_code_of([&] { bad.validate(); }) == ErrorCode::ConfigError);
}

TEST_CASE("one_hot encodes class ids and rejects out-of-range ids") {
  Tensor l({1, 1, 1, 3}, std::vector<double>{0, 3, 1});
  const Tensor h = one_hot(l, 4);
  CHECK(h.at(0, 0, 0, 0) == 1.0);
  CHECK(h.at(0, 3, 0, 1) == 1.0);
  CHECK(h.at(0, 1, 0, 2) == 1.0);
  double sum = 0.0;
  for (double v : h.values()) sum += v;
  CHECK(sum == 3.0);
  l[0] = 4;
  CHECK(error_code_of([&] { one_hot(l, 4); }) == ErrorCode::InvalidLabel);
}
