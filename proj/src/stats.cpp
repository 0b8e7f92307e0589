#include "stats.hpp"

#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace fnet {

void FoldPlan::validate() const {
  std::vector<int> test_seen(static_cast<std::size_t>(n_subjects), 0);
  for (const Fold& fold : folds) {
    std::vector<int> seen(static_cast<std::size_t>(n_subjects), 0);
    for (const auto* part : {&fold.train, &fold.val, &fold.test})
      for (int s : *part) {
        if (s < 0 || s >= n_subjects)
          throw InvalidArgumentError("fold references unknown subject " + std::to_string(s));
        ++seen[static_cast<std::size_t>(s)];
      }
    for (int s = 0; s < n_subjects; ++s)
      if (seen[static_cast<std::size_t>(s)] != 1)
        throw InvalidArgumentError("fold does not partition the subjects");
    for (int s : fold.test) ++test_seen[static_cast<std::size_t>(s)];
  }
  for (int s = 0; s < n_subjects; ++s)
    if (test_seen[static_cast<std::size_t>(s)] != 1)
      throw InvalidArgumentError("test shards must cover every subject exactly once");
}

FoldPlan kfold_split(int n_subjects, int k, double val_fraction, std::uint64_t seed) {
  if (k < 2) throw InvalidArgumentError("k-fold split needs k >= 2, got " + std::to_string(k));
  if (n_subjects < k)
    throw InvalidArgumentError("k-fold split needs one subject per shard: n_subjects=" +
                               std::to_string(n_subjects) + ", k=" + std::to_string(k));
  if (!(val_fraction >= 0.0 && val_fraction < 1.0))
    throw InvalidArgumentError("val_fraction must lie in [0, 1)");

  const int n = n_subjects;
  const int val_count = static_cast<int>(std::llround(val_fraction * n));

  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  Rng rng = Rng::substream(seed, "kfold");
  rng.shuffle(order);

  FoldPlan plan;
  plan.n_subjects = n;
  const int base = n / k;
  const int extra = n % k;
  int begin = 0;
  for (int f = 0; f < k; ++f) {
    const int size = base + (f < extra ? 1 : 0);
    Fold fold;
    fold.test.assign(order.begin() + begin, order.begin() + begin + size);
    std::vector<int> rest;
    rest.reserve(static_cast<std::size_t>(n - size));
    for (int i = 0; i < n - size; ++i)
      rest.push_back(order[static_cast<std::size_t>((begin + size + i) % n)]);
    if (val_count < 1 || static_cast<int>(rest.size()) - val_count < 1)
      throw InvalidArgumentError("validation and training splits must both be nonempty");
    fold.val.assign(rest.begin(), rest.begin() + val_count);
    fold.train.assign(rest.begin() + val_count, rest.end());
    plan.folds.push_back(std::move(fold));
    begin += size;
  }
  plan.validate();
  return plan;
}

namespace {

// Continued fraction for the incomplete beta, modified Lentz iteration.
double betacf(double a, double b, double x) {
  constexpr double tiny = 1e-300;
  const double qab = a + b;
  const double qap = a + 1.0;
  const double qam = a - 1.0;
  double c = 1.0;
  double d = 1.0 - qab * x / qap;
  if (std::abs(d) < tiny) d = tiny;
  d = 1.0 / d;
  double h = d;
  for (int m = 1; m <= 300; ++m) {
    const int m2 = 2 * m;
    double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    h *= d * c;
    aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
    d = 1.0 + aa * d;
    if (std::abs(d) < tiny) d = tiny;
    c = 1.0 + aa / c;
    if (std::abs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double del = d * c;
    h *= del;
    if (std::abs(del - 1.0) < 3e-15) return h;
  }
  throw NumericError("incomplete beta continued fraction did not converge");
}

double reg_incomplete_beta(double a, double b, double x) {
  if (x <= 0.0) return 0.0;
  if (x >= 1.0) return 1.0;
  const double front = std::exp(std::lgamma(a + b) - std::lgamma(a) - std::lgamma(b) +
                                a * std::log(x) + b * std::log1p(-x));
  // The fraction converges fast only below the distribution's mean; use the
  // symmetry I_x(a,b) = 1 - I_{1-x}(b,a) on the far side.
  if (x < (a + 1.0) / (a + b + 2.0)) return front * betacf(a, b, x) / a;
  return 1.0 - front * betacf(b, a, 1.0 - x) / b;
}

}  // namespace

double student_t_two_sided_p(double t, int df) {
  if (df < 1) throw InvalidArgumentError("t distribution needs df >= 1");
  if (std::isinf(t)) return 0.0;
  const double x = df / (df + t * t);
  return reg_incomplete_beta(0.5 * df, 0.5, x);
}

TTestResult paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size())
    throw InvalidArgumentError("paired t-test needs equally many scores per side: " +
                               std::to_string(a.size()) + " vs " + std::to_string(b.size()));
  const std::size_t n = a.size();
  if (n < 2) throw InvalidArgumentError("paired t-test needs at least two pairs");

  std::vector<double> d(n);
  for (std::size_t i = 0; i < n; ++i) d[i] = a[i] - b[i];
  const double mean = std::accumulate(d.begin(), d.end(), 0.0) / static_cast<double>(n);
  double ss = 0.0;
  for (double v : d) ss += (v - mean) * (v - mean);
  const double var = ss / static_cast<double>(n - 1);

  TTestResult r;
  r.df = static_cast<int>(n) - 1;
  if (var == 0.0) {
    r.degenerate = true;
    if (mean == 0.0) {
      r.t = 0.0;
      r.p = 1.0;
    } else {
      r.t = std::copysign(std::numeric_limits<double>::infinity(), mean);
      r.p = 0.0;
    }
    return r;
  }
  r.t = mean / std::sqrt(var / static_cast<double>(n));
  r.p = student_t_two_sided_p(r.t, r.df);
  return r;
}

}  // namespace fnet
