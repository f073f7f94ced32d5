#include "doctest.h"

#include <cmath>

#include "gradcheck.hpp"
#include "itmn/loss.hpp"
#include "itmn/rng.hpp"

using namespace itmn;
using testutil::gradcheck;

TEST_CASE("focal loss closed-form values") {
  CHECK(focal_loss_value(1.0, 2.0) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(focal_loss_value(0.5, 2.0) == doctest::Approx(0.25 * std::log(2.0)).epsilon(1e-12));
  // gamma 0 reduces to cross entropy
  for (double p : {0.1, 0.3, 0.7, 0.99}) CHECK(focal_loss_value(p, 0.0) == doctest::Approx(-std::log(p)).epsilon(1e-12));
  // the modulating factor vanishes as p_t -> 1 faster than CE
  CHECK(focal_loss_value(0.9, 2.0) < 0.05 * focal_loss_value(0.9, 0.0) + 1e-3);
}

TEST_CASE("softmax focal loss with gamma 0 equals softmax cross entropy") {
  Rng rng(21);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> raw(8);
    for (auto& v : raw) v = rng.uniform(-3, 3);
    Tensor<double> s({4, 2}, raw);
    std::vector<int> labels = {0, 1, 1, 0};
    const double fl = softmax_focal_loss(s, labels, 0.0).item();
    double ce = 0;
    for (int i = 0; i < 4; ++i) {
      const double a = raw[2 * i], b = raw[2 * i + 1];
      const double z = std::exp(a) + std::exp(b);
      const double pt = std::exp(labels[i] == 0 ? a : b) / z;
      ce += -std::log(pt);
    }
    CHECK(fl == doctest::Approx(ce / 4.0).epsilon(1e-12));
  }
}

TEST_CASE("smooth L1 values") {
  // |d| < 1 -> 0.5 d^2 ; otherwise |d| - 0.5. One row sums its coords.
  Tensor<double> p({1, 4}, {0.5, -0.5, 2.0, -3.0});
  std::vector<double> target(4, 0.0);
  const double expect = 0.125 + 0.125 + 1.5 + 2.5;
  CHECK(smooth_l1_mean(p, target).item() == doctest::Approx(expect).epsilon(1e-12));
  // mean over rows
  Tensor<double> p2({2, 2}, {2.0, 0.0, 0.0, 0.0});
  CHECK(smooth_l1_mean(p2, std::vector<double>(4, 0.0)).item() == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(smooth_l1_mean(Tensor<double>({1, 1}, {2.5}), {0.5}).item() == doctest::Approx(2.0 - 0.5).epsilon(1e-12));
}

TEST_CASE("total loss composes cls and loc and counts positives") {
  BoxConfig bc;
  bc.level_extents = {6, 5, 4, 3, 2, 1};
  DefaultBoxSet boxes = generate_default_boxes(bc);
  const int a = static_cast<int>(boxes.size());
  Rng rng(22);
  std::vector<double> dv(a * 4), sv(a * 2);
  for (auto& v : dv) v = rng.uniform(-0.5, 0.5);
  for (auto& v : sv) v = rng.uniform(-1, 1);
  Tensor<double> deltas({a, 4}, dv, true);
  Tensor<double> scores({a, 2}, sv, true);
  std::vector<Box> gts = {{0.3, 0.2, 0.55, 0.75}};

  LossConfig cfg;
  LossTerms<double> t = total_loss(deltas, scores, gts, boxes, cfg);
  CHECK(t.positives > 0);
  CHECK(t.total.item() == doctest::Approx(t.cls + cfg.alpha * t.loc).epsilon(1e-12));

  LossConfig weighted = cfg;
  weighted.alpha = 2.5;
  LossTerms<double> t2 = total_loss(deltas, scores, gts, boxes, weighted);
  CHECK(t2.total.item() == doctest::Approx(t2.cls + 2.5 * t2.loc).epsilon(1e-12));

  // no ground truths: pure classification
  LossTerms<double> t3 = total_loss(deltas, scores, {}, boxes, cfg);
  CHECK(t3.positives == 0);
  CHECK(t3.loc == 0.0);
}

TEST_CASE("total loss gradient check on a toy instance") {
  BoxConfig bc;
  bc.level_extents = {6, 5, 4, 3, 2, 1};
  DefaultBoxSet boxes = generate_default_boxes(bc);
  const int a = static_cast<int>(boxes.size());
  double worst = 0.0;
  for (int trial = 0; trial < 5; ++trial) {
    Rng rng(2300 + trial);
    std::vector<double> dv(a * 4), sv(a * 2);
    for (auto& v : dv) v = rng.uniform(-0.5, 0.5);
    for (auto& v : sv) v = rng.uniform(-1, 1);
    Tensor<double> deltas({a, 4}, dv, true);
    Tensor<double> scores({a, 2}, sv, true);
    std::vector<Box> gts = {{0.25, 0.2, 0.5, 0.8}, {0.6, 0.5, 0.8, 0.95}};
    auto build = [&] { return total_loss(deltas, scores, gts, boxes, LossConfig{}).total; };
    worst = std::max(worst, gradcheck({deltas, scores}, build, 1e-5));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("row count mismatch is an error") {
  BoxConfig bc;
  bc.level_extents = {6, 5, 4, 3, 2, 1};
  DefaultBoxSet boxes = generate_default_boxes(bc);
  Tensor<double> deltas({3, 4}, std::vector<double>(12, 0.0));
  Tensor<double> scores({3, 2}, std::vector<double>(6, 0.0));
  CHECK_THROWS_AS(total_loss(deltas, scores, {}, boxes, LossConfig{}), std::invalid_argument);
}
