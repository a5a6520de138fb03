#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <set>

#include "planeloc/rng.hpp"

using planeloc::Rng;

TEST_CASE("same seed reproduces the sequence") {
  Rng a = Rng::from_seed(42);
  Rng b = Rng::from_seed(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds and purposes give distinct streams") {
  Rng a = Rng::from_seed(1);
  Rng b = Rng::from_seed(2);
  CHECK(a.next_u64() != b.next_u64());

  Rng root = Rng::from_seed(7);
  Rng s1 = root.split("rollout");
  Rng s2 = root.split("speckle");
  Rng s3 = root.split(std::uint64_t{0});
  Rng s4 = root.split(std::uint64_t{1});
  std::set<std::uint64_t> first = {s1.next_u64(), s2.next_u64(), s3.next_u64(), s4.next_u64()};
  CHECK(first.size() == 4);
}

TEST_CASE("split is independent of parent draw position") {
  Rng a = Rng::from_seed(9);
  Rng b = Rng::from_seed(9);
  (void)b.next_u64();
  (void)b.next_u64();
  Rng ca = a.split("child");
  Rng cb = b.split("child");
  CHECK(ca.next_u64() == cb.next_u64());
}

TEST_CASE("uniform doubles sit in [0,1) with plausible mean") {
  Rng r = Rng::from_seed(3);
  double sum = 0;
  const int n = 20000;
  for (int i = 0; i < n; ++i) {
    double x = r.next_double();
    CHECK(x >= 0.0);
    CHECK(x < 1.0);
    sum += x;
  }
  CHECK(std::fabs(sum / n - 0.5) < 0.01);
}

TEST_CASE("next_int stays in range and covers values") {
  Rng r = Rng::from_seed(11);
  std::set<int> seen;
  for (int i = 0; i < 1000; ++i) {
    int v = r.next_int(8);
    CHECK(v >= 0);
    CHECK(v < 8);
    seen.insert(v);
  }
  CHECK(seen.size() == 8);
}

TEST_CASE("normal has roughly standard moments") {
  Rng r = Rng::from_seed(13);
  double s1 = 0, s2 = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) {
    double x = r.normal();
    s1 += x;
    s2 += x * x;
  }
  CHECK(std::fabs(s1 / n) < 0.02);
  CHECK(std::fabs(s2 / n - 1.0) < 0.03);
}

TEST_CASE("gumbel has roughly the Euler-Mascheroni mean") {
  Rng r = Rng::from_seed(17);
  double s = 0;
  const int n = 50000;
  for (int i = 0; i < n; ++i) s += r.gumbel();
  CHECK(std::fabs(s / n - 0.5772) < 0.03);
}
