#include <algorithm>
#include <cmath>
#include <set>
#include <vector>

#include "doctest.h"
#include "etbert/rng.hpp"

using namespace etbert;

TEST_CASE("identical seeds give identical streams") {
  Rng a(42), b(42);
  for (int i = 0; i < 1000; i++) CHECK(a.next_u64() == b.next_u64());
}

TEST_CASE("different seeds diverge") {
  Rng a(1), b(2);
  int same = 0;
  for (int i = 0; i < 100; i++)
    if (a.next_u64() == b.next_u64()) same++;
  CHECK(same == 0);
}

TEST_CASE("mix_seed depends on every part and on order") {
  CHECK(mix_seed({1, 2}) != mix_seed({2, 1}));
  CHECK(mix_seed({1, 2}) != mix_seed({1, 3}));
  CHECK(mix_seed({1}) != mix_seed({1, 0}));
  CHECK(mix_seed({7, 9}) == mix_seed({7, 9}));
}

TEST_CASE("child streams are independent of sibling order") {
  Rng root(5);
  Rng a = root.child({1});
  Rng b = root.child({2});
  Rng a2 = Rng(5).child({1});
  CHECK(a.next_u64() == a2.next_u64());
  CHECK(a.next_u64() != b.next_u64());
}

TEST_CASE("uniform_u64 stays in bounds and reaches every value") {
  Rng rng(3);
  std::set<uint64_t> seen;
  for (int i = 0; i < 2000; i++) {
    uint64_t v = rng.uniform_u64(7);
    CHECK(v < 7);
    seen.insert(v);
  }
  CHECK(seen.size() == 7);
}

TEST_CASE("uniform lies in the unit interval with a sane mean") {
  Rng rng(11);
  double sum = 0;
  const int n = 20000;
  for (int i = 0; i < n; i++) {
    double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("bernoulli hits its rate") {
  Rng rng(13);
  int hits = 0;
  const int n = 50000;
  for (int i = 0; i < n; i++)
    if (rng.bernoulli(0.15)) hits++;
  CHECK(std::abs(double(hits) / n - 0.15) < 0.01);
}

TEST_CASE("normal has zero mean and unit variance") {
  Rng rng(17);
  double s1 = 0, s2 = 0;
  const int n = 50000;
  for (int i = 0; i < n; i++) {
    double z = rng.normal();
    s1 += z;
    s2 += z * z;
  }
  CHECK(std::abs(s1 / n) < 0.02);
  CHECK(std::abs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("truncated_normal never leaves two standard deviations") {
  Rng rng(19);
  for (int i = 0; i < 10000; i++) {
    double v = rng.truncated_normal(0.02);
    CHECK(v >= -0.04);
    CHECK(v <= 0.04);
  }
}

TEST_CASE("shuffle permutes without losing elements") {
  Rng rng(23);
  std::vector<int> v(50);
  for (int i = 0; i < 50; i++) v[i] = i;
  std::vector<int> orig = v;
  rng.shuffle(v);
  CHECK(v != orig);  // 50! makes a fixed point essentially impossible
  std::sort(v.begin(), v.end());
  CHECK(v == orig);
}

TEST_CASE("shuffle is seed deterministic") {
  std::vector<int> a(20), b(20);
  for (int i = 0; i < 20; i++) a[i] = b[i] = i;
  Rng r1(99), r2(99);
  r1.shuffle(a);
  r2.shuffle(b);
  CHECK(a == b);
}
