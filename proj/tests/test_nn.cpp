#include "doctest.h"

#include <cmath>
#include <cstring>

#include "gradcheck.hpp"
#include "itmn/nn.hpp"
#include "itmn/rng.hpp"

using namespace itmn;
using testutil::gradcheck;

namespace {

Tensor<double> random_tensor(Rng& rng, std::vector<int> shape, double lo = -1.0, double hi = 1.0) {
  std::vector<double> d(shape_numel(shape));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(d), true);
}

}  // namespace

TEST_CASE("parallel conv kernels match the serial reference bit for bit") {
  Rng rng(11);
  struct Case {
    int c, h, oc, k, stride, pad;
  };
  const Case cases[] = {{3, 17, 8, 3, 2, 1}, {8, 9, 16, 3, 1, 1}, {16, 12, 32, 1, 1, 0}, {4, 7, 5, 3, 2, 0}};
  for (const auto& cs : cases) {
    ConvDims d;
    d.n = 2;
    d.c = cs.c;
    d.h = d.w = cs.h;
    d.oc = cs.oc;
    d.k = cs.k;
    d.stride = cs.stride;
    d.pad = cs.pad;
    d.oh = conv_out_extent(cs.h, cs.k, cs.stride, cs.pad);
    d.ow = d.oh;
    std::vector<double> x(static_cast<std::size_t>(d.n) * d.c * d.h * d.w);
    std::vector<double> w(static_cast<std::size_t>(d.oc) * d.c * d.k * d.k);
    std::vector<double> b(d.oc);
    for (auto& v : x) v = rng.uniform(-1, 1);
    for (auto& v : w) v = rng.uniform(-1, 1);
    for (auto& v : b) v = rng.uniform(-1, 1);
    std::vector<double> y0(static_cast<std::size_t>(d.n) * d.oc * d.oh * d.ow), y1(y0.size());
    ref::conv2d_fwd(x.data(), w.data(), b.data(), y0.data(), d);
    kern::conv2d_fwd(x.data(), w.data(), b.data(), y1.data(), d);
    CHECK(std::memcmp(y0.data(), y1.data(), y0.size() * sizeof(double)) == 0);
  }
}

TEST_CASE("parallel depthwise kernel matches the serial reference bit for bit") {
  Rng rng(12);
  ConvDims d;
  d.n = 2;
  d.c = 6;
  d.h = d.w = 13;
  d.oc = 6;
  d.k = 3;
  d.stride = 2;
  d.pad = 1;
  d.oh = conv_out_extent(13, 3, 2, 1);
  d.ow = d.oh;
  std::vector<double> x(static_cast<std::size_t>(d.n) * d.c * d.h * d.w);
  std::vector<double> w(static_cast<std::size_t>(d.c) * d.k * d.k);
  for (auto& v : x) v = rng.uniform(-1, 1);
  for (auto& v : w) v = rng.uniform(-1, 1);
  std::vector<double> y0(static_cast<std::size_t>(d.n) * d.c * d.oh * d.ow), y1(y0.size());
  ref::dwconv2d_fwd(x.data(), w.data(), static_cast<const double*>(nullptr), y0.data(), d);
  kern::dwconv2d_fwd(x.data(), w.data(), static_cast<const double*>(nullptr), y1.data(), d);
  CHECK(std::memcmp(y0.data(), y1.data(), y0.size() * sizeof(double)) == 0);
}

TEST_CASE("conv2d known value") {
  // 1x1x3x3 input, 2x2 kernel of ones, stride 1, no pad: sums of windows
  Tensor<double> x({1, 1, 3, 3}, {1, 2, 3, 4, 5, 6, 7, 8, 9});
  Tensor<double> w({1, 1, 2, 2}, {1, 1, 1, 1});
  Tensor<double> none;
  Tensor<double> y = conv2d(x, w, none, 1, 0);
  CHECK(y.shape() == std::vector<int>{1, 1, 2, 2});
  CHECK(y.data() == std::vector<double>{12, 16, 24, 28});
}

TEST_CASE("conv gradients") {
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    Rng rng(400 + trial);
    Tensor<double> x = random_tensor(rng, {1, 3, 6, 6});
    Tensor<double> w = random_tensor(rng, {4, 3, 3, 3});
    Tensor<double> b = random_tensor(rng, {4});
    auto build = [&] { return reduce_mean(relu(conv2d(x, w, b, 2, 1)), {0, 1, 2, 3}); };
    worst = std::max(worst, gradcheck({x, w, b}, build));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("depthwise conv gradients") {
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    Rng rng(500 + trial);
    Tensor<double> x = random_tensor(rng, {1, 4, 5, 5});
    Tensor<double> w = random_tensor(rng, {4, 1, 3, 3});
    Tensor<double> none;
    auto build = [&] { return reduce_mean(depthwise_conv2d(x, w, none, 1, 1), {0, 1, 2, 3}); };
    worst = std::max(worst, gradcheck({x, w}, build));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("maxpool floors odd extents and routes gradients") {
  Tensor<double> x({1, 1, 5, 5}, std::vector<double>(25, 0.0), true);
  x.data()[6] = 3.0;  // (1,1) inside the first window
  Tensor<double> y = maxpool2d(x);
  CHECK(y.shape() == std::vector<int>{1, 1, 2, 2});
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    Rng rng(600 + trial);
    Tensor<double> t = random_tensor(rng, {1, 2, 6, 6});
    auto build = [&] { return reduce_sum(maxpool2d(t), {0, 1, 2, 3}); };
    worst = std::max(worst, gradcheck({t}, build));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("global average pool and linear gradients") {
  double worst = 0.0;
  for (int trial = 0; trial < 25; ++trial) {
    Rng rng(700 + trial);
    Tensor<double> x = random_tensor(rng, {2, 3, 4, 4});
    Tensor<double> w = random_tensor(rng, {5, 3});
    Tensor<double> b = random_tensor(rng, {5});
    auto build = [&] { return reduce_mean(sigmoid(linear(global_avg_pool(x), w, b)), {0, 1}); };
    worst = std::max(worst, gradcheck({x, w, b}, build));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("batchnorm training output is normalized then affine") {
  Rng rng(13);
  Tensor<double> x = random_tensor(rng, {2, 3, 4, 4});
  Tensor<double> gamma = Tensor<double>::full({3}, 2.0, true);
  Tensor<double> beta = Tensor<double>::full({3}, -1.0, true);
  std::vector<double> mean, var;
  Tensor<double> y = batchnorm_train(x, gamma, beta, 1e-9, &mean, &var);
  // per channel: mean of y equals beta, std equals gamma
  for (int c = 0; c < 3; ++c) {
    double acc = 0, acc2 = 0;
    int count = 0;
    for (int n = 0; n < 2; ++n)
      for (int i = 0; i < 16; ++i) {
        const double v = y.data()[(n * 3 + c) * 16 + i];
        acc += v;
        acc2 += v * v;
        ++count;
      }
    const double m = acc / count;
    const double sd = std::sqrt(acc2 / count - m * m);
    CHECK(m == doctest::Approx(-1.0).epsilon(1e-9));
    CHECK(sd == doctest::Approx(2.0).epsilon(1e-6));
  }
}

TEST_CASE("batchnorm gradients, train and infer") {
  double worst = 0.0;
  for (int trial = 0; trial < 20; ++trial) {
    Rng rng(800 + trial);
    Tensor<double> x = random_tensor(rng, {2, 2, 3, 3});
    Tensor<double> gamma = random_tensor(rng, {2}, 0.5, 1.5);
    Tensor<double> beta = random_tensor(rng, {2}, -0.5, 0.5);
    auto build_train = [&] {
      return reduce_mean(relu(batchnorm_train<double>(x, gamma, beta, 1e-5, nullptr, nullptr)), {0, 1, 2, 3});
    };
    worst = std::max(worst, gradcheck({x, gamma, beta}, build_train));
    std::vector<double> rm = {0.1, -0.2}, rv = {0.9, 1.3};
    auto build_infer = [&] { return reduce_mean(batchnorm_infer(x, gamma, beta, rm, rv, 1e-5), {0, 1, 2, 3}); };
    worst = std::max(worst, gradcheck({x, gamma, beta}, build_infer));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("flatten_head ordering contract") {
  // [1, Dn*K, 2, 2] with Dn=2, K=3; channel d*K+j holds value 100*d+10*j+cell
  const int dn = 2, k = 3, f = 2;
  std::vector<double> v(dn * k * f * f);
  for (int d = 0; d < dn; ++d)
    for (int j = 0; j < k; ++j)
      for (int cell = 0; cell < f * f; ++cell) v[(d * k + j) * f * f + cell] = 100.0 * d + 10.0 * j + cell;
  Tensor<double> x({1, dn * k, f, f}, v);
  Tensor<double> out = flatten_head(x, dn, k);
  CHECK(out.shape() == std::vector<int>{f * f * dn, k});
  for (int cell = 0; cell < f * f; ++cell)
    for (int d = 0; d < dn; ++d)
      for (int j = 0; j < k; ++j)
        CHECK(out.data()[(cell * dn + d) * k + j] == 100.0 * d + 10.0 * j + cell);
}

TEST_CASE("flatten_head gradients") {
  double worst = 0.0;
  for (int trial = 0; trial < 10; ++trial) {
    Rng rng(900 + trial);
    Tensor<double> x = random_tensor(rng, {1, 6, 2, 2});
    auto build = [&] { return reduce_mean(mul(flatten_head(x, 2, 3), flatten_head(x, 2, 3)), {0, 1}); };
    worst = std::max(worst, gradcheck({x}, build));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("focal and smooth-L1 loss gradients") {
  double worst = 0.0;
  for (int trial = 0; trial < 30; ++trial) {
    Rng rng(950 + trial);
    Tensor<double> s = random_tensor(rng, {5, 2}, -2.0, 2.0);
    std::vector<int> labels = {0, 1, 0, 1, 1};
    auto build_fl = [&] { return softmax_focal_loss(s, labels, 2.0); };
    worst = std::max(worst, gradcheck({s}, build_fl));
    Tensor<double> p = random_tensor(rng, {3, 4}, -2.0, 2.0);
    std::vector<double> target(12);
    for (auto& t : target) t = rng.uniform(-2, 2);
    auto build_sl = [&] { return smooth_l1_mean(p, target); };
    worst = std::max(worst, gradcheck({p}, build_sl));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("separable conv parameter count") {
  Rng rng(14);
  auto sep = SeparableConv2dLayer<double>::create(rng, 64, 128, 3, 1, 1);
  CHECK(sep.param_count() == 64 * 9 + 128 * 64);  // 8768 vs dense 73728
  CHECK(sep.param_count() * 8 < static_cast<std::size_t>(128 * 64 * 9));
}

TEST_CASE("batchnorm layer running stats update") {
  auto bn = BatchNormLayer<double>::create(2);
  Rng rng(15);
  Tensor<double> x = random_tensor(rng, {2, 2, 3, 3});
  std::vector<double> mean, var;
  batchnorm_train<double>(x, bn.gamma, bn.beta, bn.eps, &mean, &var);
  Tensor<double> y = bn(x, true);
  // the EMA tracks the raw first and second moments; the variance estimate
  // is derived from them so it captures drift between forwards too
  for (int c = 0; c < 2; ++c) {
    const double sq = var[c] + mean[c] * mean[c];  // E[x^2] of this input
    const double em = 0.1 * mean[c];
    const double esq = 0.9 * 1.0 + 0.1 * sq;
    CHECK(bn.running_mean[c] == doctest::Approx(em).epsilon(1e-12));
    CHECK(bn.running_sqmean[c] == doctest::Approx(esq).epsilon(1e-12));
    CHECK(bn.running_var[c] == doctest::Approx(esq - em * em).epsilon(1e-12));
  }
  // training-mode output is the same affine function inference applies
  Tensor<double> z = batchnorm_infer<double>(x, bn.gamma, bn.beta, bn.running_mean, bn.running_var, bn.eps);
  bool same = true;
  for (std::size_t i = 0; i < y.numel(); ++i)
    if (y.data()[i] != z.data()[i]) same = false;
  CHECK(same);
}

TEST_CASE("batchnorm stat re-estimation matches exact population moments") {
  auto bn = BatchNormLayer<double>::create(1);
  Rng rng(77);
  std::vector<Tensor<double>> xs;
  double sum = 0, sq = 0, count = 0;
  for (int i = 0; i < 5; ++i) {
    // shift each sample so between-image variance dominates
    Tensor<double> x = random_tensor(rng, {1, 1, 2, 2}, i - 2.0, i - 1.0);
    for (double v : x.data()) {
      sum += v;
      sq += v * v;
      count += 1;
    }
    xs.push_back(x);
  }
  bn.begin_stats();
  for (auto& x : xs) bn(x, true);
  bn.finish_stats();
  const double m = sum / count;
  CHECK(bn.running_mean[0] == doctest::Approx(m).epsilon(1e-12));
  CHECK(bn.running_var[0] == doctest::Approx(sq / count - m * m).epsilon(1e-12));
}

TEST_CASE("nin block rejects odd channel counts") {
  Rng rng(16);
  CHECK_THROWS_AS(NinBlock<double>::create(rng, 5), std::invalid_argument);
}
