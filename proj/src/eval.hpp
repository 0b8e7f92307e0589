#pragma once

// Experiment reports: per-frame Dice tables over a dataset's test subjects,
// cross-validation pooling, pairwise significance, frame-interval robustness,
// volume curves, and the CSV / JSON renderings of all of these.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bilinear.hpp"
#include "phantom.hpp"
#include "stats.hpp"
#include "voxel.hpp"

namespace fnet {

// How predictions for one report row are produced.
struct MethodSpec {
  enum class Kind { fusionnet, bilinear, external };

  Kind kind = Kind::bilinear;
  std::string name;            // row label
  std::string checkpoint;      // fusionnet: FNCK file
  BilinearConfig smoothing;    // bilinear settings
  std::string prediction_dir;  // external: one <subject_id>.vox4 per subject

  static MethodSpec fusionnet_checkpoint(std::string path, std::string name = "fusionnet");
  static MethodSpec bilinear_baseline(BilinearConfig cfg = {}, std::string name = "bilinear");
  static MethodSpec external_predictions(std::string dir, std::string name = "external");
};

// One scored test subject. frame_dice is aligned with the task's target
// frames; mismatch_voxels sums the difference-image sizes over those frames.
struct SampleScore {
  std::string subject_id;
  int fold = 0;
  std::vector<double> frame_dice;
  double average = 0.0;
  std::int64_t mismatch_voxels = 0;
};

// One table row: a method's scores over every test subject evaluated so far.
// Aggregates are pure functions of the retained samples; finalize() rebuilds
// them. Means pool all samples; the _fold_ stds are taken over per-fold means
// and the _sample_ stds over individual subjects, both with the n-1
// denominator (zero when fewer than two values).
struct MethodReport {
  std::string method;
  std::vector<int> target_frames;  // 1-based
  std::vector<SampleScore> samples;

  std::vector<double> frame_mean;
  std::vector<double> frame_fold_std;
  std::vector<double> frame_sample_std;
  double overall_mean = 0.0;  // mean of per-sample averages
  double overall_fold_std = 0.0;
  double overall_sample_std = 0.0;
  std::vector<double> fold_means;

  void finalize();
};

struct SignificanceCell {
  std::string method_a;
  std::string method_b;
  int interval = 0;
  TTestResult test;
};

struct ExperimentReport {
  std::string config_hash;  // 16 hex digits
  std::uint64_t seed = 0;
  int interval = 0;
  std::vector<int> target_frames;
  std::vector<MethodReport> methods;
  std::vector<SignificanceCell> significance;
};

// Scores one method over the manifest's test subjects. Each subject's VOX4
// file is the ground truth; the input the method sees is its restriction to
// the task's input frames. Predictions are binarized at 0.5 and scored with
// Dice per target frame. Samples are ordered by subject id, so permuting the
// manifest cannot change the report.
MethodReport evaluate_method(const MethodSpec& spec, const DatasetManifest& manifest,
                             const std::string& base_dir, const InterpolationTask& task,
                             int fold = 0);

// Pools per-fold rows of one method into a single row.
MethodReport merge_folds(const std::vector<MethodReport>& rows);

// Pairwise paired t-tests on per-sample averages. Rows must hold identical
// subject lists (same manifest), which keeps the pairing meaningful.
std::vector<SignificanceCell> significance_matrix(const std::vector<MethodReport>& rows,
                                                  int interval);

// Assembles rows into a report and fills in the significance matrix.
ExperimentReport make_report(std::vector<MethodReport> rows, int interval, std::uint64_t seed,
                             std::uint64_t config_hash);

// Frame-interval robustness study: evaluates every method at every interval.
struct StudyMethod {
  std::string name;
  std::map<int, MethodSpec> by_interval;  // learned methods need one checkpoint per interval

  // The same spec at every interval (classical baselines).
  static StudyMethod uniform(MethodSpec spec, const std::vector<int>& intervals);
};

struct IntervalStudyRow {
  int interval = 0;
  MethodReport report;
};

struct IntervalStudyResult {
  std::vector<IntervalStudyRow> rows;  // |intervals| x |methods|, interval-major
  std::vector<SignificanceCell> significance;
};

IntervalStudyResult frame_interval_study(const std::vector<StudyMethod>& methods,
                                         const DatasetManifest& manifest,
                                         const std::string& base_dir,
                                         const std::vector<int>& intervals);

// Mean occupied-voxel count per frame over every model in the manifest.
struct VolumeCurve {
  int n_models = 0;
  std::vector<double> frame_means;  // index 0 holds frame 1
};

VolumeCurve volume_curve_report(const DatasetManifest& manifest, const std::string& base_dir);

// Dice table, one row per method: "method,Frame 2,...,Average" with
// "mean ± std" cells, the std taken over fold means.
std::string table_csv(const ExperimentReport& report);

// Robustness pivot: one row per method, one "interval k" column per interval.
std::string interval_csv(const IntervalStudyResult& study);

std::string volume_csv(const VolumeCurve& curve);

// Full sample-level detail, deterministic key order.
std::string report_json(const ExperimentReport& report);
std::string interval_study_json(const IntervalStudyResult& study);

}  // namespace fnet
