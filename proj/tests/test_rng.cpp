#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <map>
#include <vector>

#include "fedafd/rng.hpp"

using namespace fedafd;

TEST_CASE("streams are deterministic and tag-separated") {
  Rng a(42), b(42);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());

  CHECK(derive_seed(1, "plan", 3, 4) == derive_seed(1, "plan", 3, 4));
  CHECK(derive_seed(1, "plan", 3, 4) != derive_seed(1, "plan", 3, 5));
  CHECK(derive_seed(1, "plan", 3, 4) != derive_seed(1, "train", 3, 4));
  CHECK(derive_seed(1, "plan", 3, 4) != derive_seed(2, "plan", 3, 4));
}

TEST_CASE("next_below is unbiased within Monte Carlo bounds") {
  Rng rng(7);
  std::vector<int> counts(5, 0);
  const int draws = 50000;
  for (int i = 0; i < draws; ++i) ++counts[rng.next_below(5)];
  for (int c : counts) {
    const double p = static_cast<double>(c) / draws;
    CHECK(p == doctest::Approx(0.2).epsilon(0.05));
  }
}

TEST_CASE("next_unit stays in [0,1) and next_normal has sane moments") {
  Rng rng(11);
  double sum = 0, sq = 0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.next_unit();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    const double z = rng.next_normal();
    sum += z;
    sq += z * z;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.02));
  CHECK(sq / n == doctest::Approx(1.0).epsilon(0.02));
}

TEST_CASE("sample_without_replacement returns sorted distinct uniform subsets") {
  Rng rng(3);
  std::map<std::vector<int>, int> counts;
  const int draws = 12000;
  for (int i = 0; i < draws; ++i) {
    auto s = rng.sample_without_replacement(4, 2);
    REQUIRE(s.size() == 2);
    CHECK(s[0] < s[1]);
    ++counts[s];
  }
  CHECK(counts.size() == 6);  // C(4,2) subsets all occur
  for (const auto& [subset, c] : counts) {
    CHECK(static_cast<double>(c) / draws ==
          doctest::Approx(1.0 / 6.0).epsilon(0.1));
  }
}
