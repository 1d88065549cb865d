#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "geoadapt/tensor.hpp"

using namespace geoadapt;

TEST_CASE("zeros and full construct the right shape and values") {
  auto z = Tensor::zeros({2, 3});
  CHECK(z.rank() == 2);
  CHECK(z.dim(0) == 2);
  CHECK(z.dim(1) == 3);
  CHECK(z.size() == 6);
  for (std::size_t i = 0; i < z.size(); ++i) CHECK(z[i] == 0.0);

  auto f = Tensor::full({4}, 2.5);
  for (std::size_t i = 0; i < f.size(); ++i) CHECK(f[i] == 2.5);
}

TEST_CASE("at() indexes row-major") {
  auto t = Tensor::zeros({2, 3, 4});
  t.at(1, 2, 3) = 7.0;
  CHECK(t[1 * 12 + 2 * 4 + 3] == 7.0);
  t.at(0, 1, 0) = -1.0;
  CHECK(t[4] == -1.0);

  auto u = Tensor::zeros({2, 2, 2, 2});
  u.at(1, 0, 1, 0) = 3.0;
  CHECK(u[8 + 2] == 3.0);
}

TEST_CASE("empty tensor behaves") {
  Tensor t;
  CHECK(t.empty());
  CHECK(t.size() == 0);
  CHECK(t.rank() == 0);
}

TEST_CASE("shape with a zero extent has no elements") {
  auto t = Tensor::zeros({0, 5});
  CHECK(t.size() == 0);
  CHECK(t.empty());
}
