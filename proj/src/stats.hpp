#pragma once

// Protocol statistics: deterministic k-fold subject splits and the paired
// t-test used to compare per-sample Dice scores between methods.

#include <cstdint>
#include <vector>

#include "common.hpp"

namespace fnet {

struct Fold {
  std::vector<int> train;
  std::vector<int> val;
  std::vector<int> test;
};

struct FoldPlan {
  int n_subjects = 0;
  std::vector<Fold> folds;

  // Every fold partitions all subjects; test shards are disjoint across
  // folds and together cover every subject exactly once.
  void validate() const;
};

// Shuffles subject indices by seed and deals them into k test shards whose
// sizes differ by at most one. Fold f tests on shard f, validates on the
// round(val_fraction * n) subjects that follow the shard along the shuffled
// circle, and trains on the rest. Throws if any split would come out empty.
FoldPlan kfold_split(int n_subjects, int k, double val_fraction, std::uint64_t seed);

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  int df = 0;
  bool degenerate = false;  // zero-variance differences; t and p are limits
};

// Paired two-sided t-test on the differences a[i] - b[i], sample variance
// with the n-1 denominator. Throws on mismatched lengths or fewer than two
// pairs; constant differences set the degenerate flag instead of dividing
// by zero.
TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

// P(|T| > |t|) for Student's t with df degrees of freedom, evaluated through
// the regularized incomplete beta continued fraction (absolute error well
// below 1e-12 over the df range used here).
double student_t_two_sided_p(double t, int df);

}  // namespace fnet
