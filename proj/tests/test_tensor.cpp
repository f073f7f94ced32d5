#include "doctest.h"

#include <cmath>
#include <cstring>

#include "gradcheck.hpp"
#include "itmn/rng.hpp"
#include "itmn/tensor.hpp"

using namespace itmn;
using testutil::gradcheck;

namespace {

Tensor<double> random_tensor(Rng& rng, std::vector<int> shape, double lo = -2.0, double hi = 2.0) {
  std::vector<double> d(shape_numel(shape));
  for (auto& v : d) v = rng.uniform(lo, hi);
  return Tensor<double>(std::move(shape), std::move(d), true);
}

}  // namespace

TEST_CASE("elementwise forward values") {
  Tensor<double> a({3}, {1.0, -2.0, 3.0});
  Tensor<double> b({3}, {4.0, 5.0, -6.0});
  CHECK(add(a, b).data() == std::vector<double>{5.0, 3.0, -3.0});
  CHECK(sub(a, b).data() == std::vector<double>{-3.0, -7.0, 9.0});
  CHECK(mul(a, b).data() == std::vector<double>{4.0, -10.0, -18.0});
  CHECK(relu(a).data() == std::vector<double>{1.0, 0.0, 3.0});
  CHECK(emax(a, b).data() == std::vector<double>{4.0, 5.0, 3.0});
  CHECK(scale(a, 2.0).data() == std::vector<double>{2.0, -4.0, 6.0});
  CHECK(neg(a).data() == std::vector<double>{-1.0, 2.0, -3.0});
  CHECK(sigmoid(Tensor<double>::scalar(0.0)).item() == doctest::Approx(0.5).epsilon(1e-15));
}

TEST_CASE("scalar broadcast both directions") {
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  Tensor<double> s = Tensor<double>::scalar(10.0);
  CHECK(add(a, s).data() == std::vector<double>{11, 12, 13, 14});
  CHECK(add(s, a).data() == std::vector<double>{11, 12, 13, 14});
  CHECK(mul(s, a).data() == std::vector<double>{10, 20, 30, 40});
  CHECK_THROWS_AS(add(a, Tensor<double>({3}, {1, 2, 3})), std::invalid_argument);
}

TEST_CASE("matmul forward oracle") {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor<double> c = matmul(a, b);
  CHECK(c.shape() == std::vector<int>{2, 2});
  CHECK(c.data() == std::vector<double>{58, 64, 139, 154});
}

TEST_CASE("reductions") {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(reduce_sum(a, {0, 1}).item() == 21.0);
  CHECK(reduce_mean(a, {0, 1}).item() == 3.5);
  CHECK(reduce_max(a, {0, 1}).item() == 6.0);
  // argmax ties route gradient to the first occurrence
  Tensor<double> t({3}, {5.0, 5.0, 1.0}, true);
  {
    Tape<double> tape;
    Tensor<double> m = reduce_max(t, {0});
    tape.backward(m);
  }
  CHECK(t.grad() == std::vector<double>{1.0, 0.0, 0.0});
}

TEST_CASE("concat and gather_rows and take") {
  Tensor<double> a({2, 2}, {1, 2, 3, 4});
  Tensor<double> b({1, 2}, {5, 6});
  Tensor<double> c = concat<double>({a, b}, 0);
  CHECK(c.shape() == std::vector<int>{3, 2});
  CHECK(c.data() == std::vector<double>{1, 2, 3, 4, 5, 6});
  Tensor<double> g = gather_rows(c, {2, 0});
  CHECK(g.data() == std::vector<double>{5, 6, 1, 2});
  CHECK(take(c, 3).item() == 4.0);
}

TEST_CASE("concat axis 1 rank 4") {
  Tensor<double> a({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor<double> b({1, 2, 2, 2}, {5, 6, 7, 8, 9, 10, 11, 12});
  Tensor<double> c = concat<double>({a, b}, 1);
  CHECK(c.shape() == std::vector<int>{1, 3, 2, 2});
  CHECK(c.data() == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12});
}

TEST_CASE("gradient checks on composite expressions, 100+ randomized trials") {
  double worst = 0.0;
  for (int trial = 0; trial < 110; ++trial) {
    Rng rng(1000 + trial);
    Tensor<double> a = random_tensor(rng, {3, 4});
    Tensor<double> b = random_tensor(rng, {3, 4});
    Tensor<double> w = random_tensor(rng, {4, 2});
    auto build = [&] {
      Tensor<double> x = mul(add(a, b), sigmoid(sub(a, scale(b, 0.5))));
      Tensor<double> y = matmul(relu(x), w);
      Tensor<double> z = add(y, texp(scale(y, -0.7)));
      return reduce_mean(z, {0, 1});
    };
    worst = std::max(worst, gradcheck({a, b, w}, build));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("gradient checks for log, max, concat, gather") {
  double worst = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    Rng rng(2000 + trial);
    Tensor<double> a = random_tensor(rng, {2, 3}, 0.2, 2.0);
    Tensor<double> b = random_tensor(rng, {2, 3}, 0.1, 1.5);
    auto build = [&] {
      Tensor<double> c = concat<double>({tlog(a), emax(a, b)}, 0);
      Tensor<double> g = gather_rows(c, {3, 0, 2});
      return reduce_sum(g, {0, 1});
    };
    worst = std::max(worst, gradcheck({a, b}, build));
  }
  CHECK(worst <= 1e-4);
}

TEST_CASE("backward accumulates into leaves across calls") {
  Tensor<double> a({2}, {1.0, 2.0}, true);
  for (int i = 0; i < 3; ++i) {
    Tape<double> tape;
    Tensor<double> loss = reduce_sum(mul(a, a), {0});
    tape.backward(loss);
  }
  CHECK(a.grad() == std::vector<double>{6.0, 12.0});  // 3 * 2a
}

TEST_CASE("forward is deterministic across repeats") {
  Rng rng(7);
  Tensor<double> a = random_tensor(rng, {8, 8});
  Tensor<double> b = random_tensor(rng, {8, 8});
  Tensor<double> first = matmul(a, b);
  for (int i = 0; i < 5; ++i) {
    Tensor<double> again = matmul(a, b);
    CHECK(std::memcmp(first.data().data(), again.data().data(), sizeof(double) * first.numel()) == 0);
  }
}

TEST_CASE("shape errors carry shapes in the message") {
  Tensor<double> a({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor<double> b({2, 2}, {1, 2, 3, 4});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2,3]"), std::invalid_argument);
}
