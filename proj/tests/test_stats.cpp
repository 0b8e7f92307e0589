#include "doctest.h"
#include "stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <vector>

using namespace fnet;

namespace {

double t_density(double x, int df) {
  const double c = std::exp(std::lgamma(0.5 * (df + 1)) - std::lgamma(0.5 * df)) /
                   std::sqrt(df * 3.14159265358979323846);
  return c * std::pow(1.0 + x * x / df, -0.5 * (df + 1));
}

// Reference two-sided p by composite Simpson over [0, |t|]. Entirely
// independent of the incomplete-beta route in the library.
double quadrature_p(double t, int df) {
  const double hi = std::abs(t);
  const int steps = 40000;
  const double h = hi / steps;
  double s = t_density(0.0, df) + t_density(hi, df);
  for (int i = 1; i < steps; ++i) s += t_density(i * h, df) * (i % 2 ? 4.0 : 2.0);
  const double central = s * h / 3.0;
  return std::max(0.0, 1.0 - 2.0 * central);
}

bool plans_equal(const FoldPlan& a, const FoldPlan& b) {
  if (a.folds.size() != b.folds.size()) return false;
  for (std::size_t i = 0; i < a.folds.size(); ++i)
    if (a.folds[i].train != b.folds[i].train || a.folds[i].val != b.folds[i].val ||
        a.folds[i].test != b.folds[i].test)
      return false;
  return true;
}

}  // namespace

TEST_CASE("t statistic and p match the hand-worked example") {
  // Differences 0.1, 0.2, 0.3: mean 0.2, sd 0.1, t = 0.2 / (0.1 / sqrt 3).
  std::vector<double> a{1.1, 1.2, 1.3};
  std::vector<double> b{1.0, 1.0, 1.0};
  TTestResult r = paired_t_test(a, b);
  CHECK(r.df == 2);
  CHECK(!r.degenerate);
  CHECK(r.t == doctest::Approx(2.0 * std::sqrt(3.0)).epsilon(1e-12));
  // At two degrees of freedom the CDF closes: p = 1 - sqrt(t^2 / (2 + t^2)).
  CHECK(r.p == doctest::Approx(1.0 - std::sqrt(6.0 / 7.0)).epsilon(1e-10));
  CHECK(r.t == doctest::Approx(3.4641).epsilon(1e-4));
  CHECK(r.p == doctest::Approx(0.0742).epsilon(1e-2));
}

TEST_CASE("identical score lists are flagged degenerate") {
  std::vector<double> a{0.9, 0.8, 0.95, 0.7};
  TTestResult r = paired_t_test(a, a);
  CHECK(r.degenerate);
  CHECK(r.t == 0.0);
  CHECK(r.p == 1.0);

  // Constant nonzero differences: the statistic runs away, p collapses.
  // Dyadic values keep each difference exactly 0.25.
  std::vector<double> base{0.5, 0.75, 1.0, 1.25};
  std::vector<double> shifted{0.75, 1.0, 1.25, 1.5};
  TTestResult up = paired_t_test(shifted, base);
  CHECK(up.degenerate);
  CHECK(up.t == std::numeric_limits<double>::infinity());
  CHECK(up.p == 0.0);
  CHECK(paired_t_test(base, shifted).t == -std::numeric_limits<double>::infinity());
}

TEST_CASE("swapping the sides negates t and keeps p") {
  Rng rng(404);
  for (int rep = 0; rep < 5; ++rep) {
    std::vector<double> a, b;
    const int n = 3 + rep;
    for (int i = 0; i < n; ++i) {
      a.push_back(rng.uniform());
      b.push_back(rng.uniform());
    }
    TTestResult ab = paired_t_test(a, b);
    TTestResult ba = paired_t_test(b, a);
    CHECK(ab.t == -ba.t);
    CHECK(ab.p == ba.p);
    CHECK(ab.df == n - 1);
  }
}

TEST_CASE("p-values agree with direct quadrature of the t density") {
  Rng rng(71);
  int checked = 0;
  for (int rep = 0; rep < 20; ++rep) {
    const int n = 2 + rep % 9;
    std::vector<double> a, b;
    for (int i = 0; i < n; ++i) {
      a.push_back(rng.uniform());
      b.push_back(rng.uniform(0.0, 0.8));
    }
    TTestResult r = paired_t_test(a, b);
    if (r.degenerate) continue;
    REQUIRE(std::abs(r.t) < 50.0);  // keeps the quadrature grid dense enough
    CHECK(std::abs(r.p - quadrature_p(r.t, r.df)) < 1e-6);
    ++checked;
  }
  CHECK(checked == 20);

  // Spot values across the df range used by the experiments.
  for (int df : {1, 2, 5, 9, 29}) {
    for (double t : {0.0, 0.3, 1.0, 2.5, 7.0}) {
      CHECK(std::abs(student_t_two_sided_p(t, df) - quadrature_p(t, df)) < 1e-8);
    }
  }
  CHECK(student_t_two_sided_p(0.0, 4) == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("t test rejects malformed inputs") {
  CHECK_THROWS_AS(paired_t_test({0.1, 0.2}, {0.1}), InvalidArgumentError);
  CHECK_THROWS_AS(paired_t_test({0.1}, {0.1}), InvalidArgumentError);
  CHECK_THROWS_AS(paired_t_test({}, {}), InvalidArgumentError);
}

TEST_CASE("paper-scale split yields 150/30/30 per fold") {
  FoldPlan plan = kfold_split(210, 7, 1.0 / 7.0, 2024);
  REQUIRE(plan.folds.size() == 7);
  std::set<int> all_tests;
  for (const Fold& f : plan.folds) {
    CHECK(f.train.size() == 150);
    CHECK(f.val.size() == 30);
    CHECK(f.test.size() == 30);
    for (int s : f.test) {
      CHECK(all_tests.insert(s).second);  // disjoint across folds
    }
  }
  CHECK(all_tests.size() == 210);
  CHECK(*all_tests.begin() == 0);
  CHECK(*all_tests.rbegin() == 209);
}

TEST_CASE("every fold partitions the subjects") {
  FoldPlan plan = kfold_split(11, 3, 0.2, 9);
  REQUIRE(plan.folds.size() == 3);
  for (const Fold& f : plan.folds) {
    std::vector<int> all;
    all.insert(all.end(), f.train.begin(), f.train.end());
    all.insert(all.end(), f.val.begin(), f.val.end());
    all.insert(all.end(), f.test.begin(), f.test.end());
    std::sort(all.begin(), all.end());
    std::vector<int> want(11);
    for (int i = 0; i < 11; ++i) want[static_cast<std::size_t>(i)] = i;
    CHECK(all == want);
    CHECK(f.val.size() == 2);  // round(0.2 * 11)
  }
  // 11 = 4 + 4 + 3: shard sizes may differ by at most one.
  CHECK(plan.folds[0].test.size() == 4);
  CHECK(plan.folds[1].test.size() == 4);
  CHECK(plan.folds[2].test.size() == 3);
}

TEST_CASE("same seed reproduces the plan") {
  FoldPlan a = kfold_split(20, 4, 0.15, 5);
  FoldPlan b = kfold_split(20, 4, 0.15, 5);
  FoldPlan c = kfold_split(20, 4, 0.15, 6);
  CHECK(plans_equal(a, b));
  CHECK(!plans_equal(a, c));
}

TEST_CASE("splits that would leave an empty side are rejected") {
  CHECK_THROWS_AS(kfold_split(5, 1, 0.2, 1), InvalidArgumentError);   // k too small
  CHECK_THROWS_AS(kfold_split(3, 4, 0.2, 1), InvalidArgumentError);   // more shards than subjects
  CHECK_THROWS_AS(kfold_split(10, 2, 1.0, 1), InvalidArgumentError);  // fraction out of range
  CHECK_THROWS_AS(kfold_split(10, 2, 0.0, 1), InvalidArgumentError);  // empty validation
  CHECK_THROWS_AS(kfold_split(2, 2, 0.5, 1), InvalidArgumentError);   // nothing left to train on
  CHECK_NOTHROW(kfold_split(6, 3, 1.0 / 6.0, 1));
}
