#include "eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <iomanip>
#include <sstream>

#include "checkpoint.hpp"
#include "json.hpp"
#include "model.hpp"

namespace fnet {

MethodSpec MethodSpec::fusionnet_checkpoint(std::string path, std::string name) {
  MethodSpec s;
  s.kind = Kind::fusionnet;
  s.name = std::move(name);
  s.checkpoint = std::move(path);
  return s;
}

MethodSpec MethodSpec::bilinear_baseline(BilinearConfig cfg, std::string name) {
  MethodSpec s;
  s.kind = Kind::bilinear;
  s.name = std::move(name);
  s.smoothing = cfg;
  return s;
}

MethodSpec MethodSpec::external_predictions(std::string dir, std::string name) {
  MethodSpec s;
  s.kind = Kind::external;
  s.name = std::move(name);
  s.prediction_dir = std::move(dir);
  return s;
}

namespace {

// The task's input frames copied out of the ground truth, i.e. what a method
// is allowed to see.
VoxelModel4D restrict_to_inputs(const VoxelModel4D& hfr, const InterpolationTask& task) {
  auto dims = hfr.dims;
  dims[3] = static_cast<std::uint32_t>(task.input_frames.size());
  VoxelModel4D lfr = VoxelModel4D::zeros(dims, hfr.kind);
  const std::size_t bytes = sizeof(float) * static_cast<std::size_t>(hfr.frame_size());
  for (std::size_t i = 0; i < task.input_frames.size(); ++i)
    std::memcpy(lfr.frame(static_cast<int>(i) + 1), hfr.frame(task.input_frames[i]), bytes);
  return lfr;
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

// n-1 standard deviation; zero when fewer than two values.
double std_of(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  const double m = mean_of(v);
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

std::string format_cell(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f ± %.3f", mean, std);
  return buf;
}

std::string hex16(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

nlohmann::json method_json(const MethodReport& r) {
  nlohmann::json samples = nlohmann::json::array();
  for (const SampleScore& s : r.samples) {
    samples.push_back({{"subject_id", s.subject_id},
                       {"fold", s.fold},
                       {"frame_dice", s.frame_dice},
                       {"average", s.average},
                       {"mismatch_voxels", s.mismatch_voxels}});
  }
  return {{"method", r.method},
          {"target_frames", r.target_frames},
          {"frame_mean", r.frame_mean},
          {"frame_fold_std", r.frame_fold_std},
          {"frame_sample_std", r.frame_sample_std},
          {"overall",
           {{"mean", r.overall_mean},
            {"fold_std", r.overall_fold_std},
            {"sample_std", r.overall_sample_std}}},
          {"fold_means", r.fold_means},
          {"samples", samples}};
}

nlohmann::json significance_json(const std::vector<SignificanceCell>& cells) {
  nlohmann::json out = nlohmann::json::array();
  for (const SignificanceCell& c : cells) {
    out.push_back({{"method_a", c.method_a},
                   {"method_b", c.method_b},
                   {"interval", c.interval},
                   {"t", c.test.t},
                   {"p", c.test.p},
                   {"df", c.test.df},
                   {"degenerate", c.test.degenerate}});
  }
  return out;
}

}  // namespace

void MethodReport::finalize() {
  const std::size_t nf = target_frames.size();
  frame_mean.assign(nf, 0.0);
  frame_fold_std.assign(nf, 0.0);
  frame_sample_std.assign(nf, 0.0);
  fold_means.clear();
  overall_mean = overall_fold_std = overall_sample_std = 0.0;
  if (samples.empty()) return;

  std::vector<double> averages;
  std::vector<std::vector<double>> per_frame(nf);
  std::map<int, std::vector<const SampleScore*>> by_fold;
  for (const SampleScore& s : samples) {
    if (s.frame_dice.size() != nf)
      throw InvalidArgumentError("sample " + s.subject_id + " scores " +
                                 std::to_string(s.frame_dice.size()) + " frames, row has " +
                                 std::to_string(nf));
    averages.push_back(s.average);
    for (std::size_t j = 0; j < nf; ++j) per_frame[j].push_back(s.frame_dice[j]);
    by_fold[s.fold].push_back(&s);
  }

  overall_mean = mean_of(averages);
  overall_sample_std = std_of(averages);
  for (std::size_t j = 0; j < nf; ++j) {
    frame_mean[j] = mean_of(per_frame[j]);
    frame_sample_std[j] = std_of(per_frame[j]);
  }

  std::vector<std::vector<double>> fold_frame_means(nf);
  for (const auto& [fold, members] : by_fold) {
    std::vector<double> avg;
    std::vector<std::vector<double>> frames(nf);
    for (const SampleScore* s : members) {
      avg.push_back(s->average);
      for (std::size_t j = 0; j < nf; ++j) frames[j].push_back(s->frame_dice[j]);
    }
    fold_means.push_back(mean_of(avg));
    for (std::size_t j = 0; j < nf; ++j) fold_frame_means[j].push_back(mean_of(frames[j]));
  }
  overall_fold_std = std_of(fold_means);
  for (std::size_t j = 0; j < nf; ++j) frame_fold_std[j] = std_of(fold_frame_means[j]);
}

MethodReport evaluate_method(const MethodSpec& spec, const DatasetManifest& manifest,
                             const std::string& base_dir, const InterpolationTask& task,
                             int fold) {
  task.validate();
  std::vector<const ManifestEntry*> subjects = manifest.split("test");
  if (subjects.empty()) throw InvalidArgumentError("manifest has no test subjects");
  std::sort(subjects.begin(), subjects.end(),
            [](const ManifestEntry* a, const ManifestEntry* b) {
              return a->subject_id < b->subject_id;
            });

  NetworkParams net;
  if (spec.kind == MethodSpec::Kind::fusionnet) {
    net = read_fnck(spec.checkpoint);
    if (net.arch.input_frames != static_cast<int>(task.input_frames.size()) ||
        net.arch.output_frames != task.total_frames)
      throw DimensionError("checkpoint expects " + std::to_string(net.arch.input_frames) +
                           " -> " + std::to_string(net.arch.output_frames) +
                           " frames, task has " + std::to_string(task.input_frames.size()) +
                           " -> " + std::to_string(task.total_frames));
  }

  MethodReport row;
  row.method = spec.name;
  row.target_frames = task.target_frames;
  for (const ManifestEntry* e : subjects) {
    const VoxelModel4D hfr = read_vox4(base_dir + "/" + e->path);
    if (hfr.frame_count() != task.total_frames)
      throw DimensionError("subject " + e->subject_id + " has " +
                           std::to_string(hfr.frame_count()) + " frames, task expects " +
                           std::to_string(task.total_frames));

    VoxelModel4D pred;
    switch (spec.kind) {
      case MethodSpec::Kind::fusionnet: {
        if (static_cast<int>(hfr.dims[0]) != net.arch.grid_size)
          throw DimensionError("subject " + e->subject_id + " grid " +
                               std::to_string(hfr.dims[0]) + " does not match checkpoint grid " +
                               std::to_string(net.arch.grid_size));
        pred = infer(net, restrict_to_inputs(hfr, task));
        break;
      }
      case MethodSpec::Kind::bilinear:
        pred = bilinear_interpolate(restrict_to_inputs(hfr, task), task, spec.smoothing);
        break;
      case MethodSpec::Kind::external:
        pred = read_vox4(spec.prediction_dir + "/" + e->subject_id + ".vox4");
        break;
    }
    if (pred.dims != hfr.dims)
      throw DimensionError("prediction for subject " + e->subject_id +
                           " does not match the ground-truth dimensions");

    const VoxelModel4D bin = binarize(pred, 0.5f);
    SampleScore score;
    score.subject_id = e->subject_id;
    score.fold = fold;
    for (int t : task.target_frames) {
      score.frame_dice.push_back(dice_frames(bin, t, hfr, t));
      score.mismatch_voxels += mismatch_count(bin, t, hfr, t);
    }
    score.average = mean_of(score.frame_dice);
    row.samples.push_back(std::move(score));
  }
  row.finalize();
  return row;
}

MethodReport merge_folds(const std::vector<MethodReport>& rows) {
  if (rows.empty()) throw InvalidArgumentError("no fold rows to merge");
  MethodReport merged;
  merged.method = rows.front().method;
  merged.target_frames = rows.front().target_frames;
  for (const MethodReport& r : rows) {
    if (r.method != merged.method || r.target_frames != merged.target_frames)
      throw InvalidArgumentError("fold rows disagree on method or target frames");
    merged.samples.insert(merged.samples.end(), r.samples.begin(), r.samples.end());
  }
  merged.finalize();
  return merged;
}

std::vector<SignificanceCell> significance_matrix(const std::vector<MethodReport>& rows,
                                                  int interval) {
  std::vector<SignificanceCell> cells;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    for (std::size_t j = i + 1; j < rows.size(); ++j) {
      const MethodReport& a = rows[i];
      const MethodReport& b = rows[j];
      if (a.samples.size() != b.samples.size())
        throw InvalidArgumentError("methods " + a.method + " and " + b.method +
                                   " scored different sample counts");
      std::vector<double> va, vb;
      for (std::size_t s = 0; s < a.samples.size(); ++s) {
        if (a.samples[s].subject_id != b.samples[s].subject_id)
          throw InvalidArgumentError("methods " + a.method + " and " + b.method +
                                     " scored different subjects; pairing is undefined");
        va.push_back(a.samples[s].average);
        vb.push_back(b.samples[s].average);
      }
      cells.push_back({a.method, b.method, interval, paired_t_test(va, vb)});
    }
  }
  return cells;
}

ExperimentReport make_report(std::vector<MethodReport> rows, int interval, std::uint64_t seed,
                             std::uint64_t config_hash) {
  if (rows.empty()) throw InvalidArgumentError("a report needs at least one method row");
  ExperimentReport rep;
  rep.config_hash = hex16(config_hash);
  rep.seed = seed;
  rep.interval = interval;
  rep.target_frames = rows.front().target_frames;
  rep.significance = significance_matrix(rows, interval);
  rep.methods = std::move(rows);
  return rep;
}

StudyMethod StudyMethod::uniform(MethodSpec spec, const std::vector<int>& intervals) {
  StudyMethod m;
  m.name = spec.name;
  for (int i : intervals) m.by_interval[i] = spec;
  return m;
}

IntervalStudyResult frame_interval_study(const std::vector<StudyMethod>& methods,
                                         const DatasetManifest& manifest,
                                         const std::string& base_dir,
                                         const std::vector<int>& intervals) {
  if (methods.empty()) throw InvalidArgumentError("interval study needs at least one method");
  if (intervals.empty()) throw InvalidArgumentError("interval study needs at least one interval");
  std::vector<const ManifestEntry*> subjects = manifest.split("test");
  if (subjects.empty()) throw InvalidArgumentError("manifest has no test subjects");
  const VoxelModel4D first = read_vox4(base_dir + "/" + subjects.front()->path);

  IntervalStudyResult out;
  for (int interval : intervals) {
    const InterpolationTask task = subsample_frames(first, interval).second;
    std::vector<MethodReport> rows;
    for (const StudyMethod& m : methods) {
      auto it = m.by_interval.find(interval);
      if (it == m.by_interval.end())
        throw InvalidArgumentError("method " + m.name + " has no spec for interval " +
                                   std::to_string(interval));
      MethodReport row = evaluate_method(it->second, manifest, base_dir, task);
      row.method = m.name;
      rows.push_back(std::move(row));
    }
    std::vector<SignificanceCell> sig = significance_matrix(rows, interval);
    out.significance.insert(out.significance.end(), sig.begin(), sig.end());
    for (MethodReport& row : rows) out.rows.push_back({interval, std::move(row)});
  }
  return out;
}

VolumeCurve volume_curve_report(const DatasetManifest& manifest, const std::string& base_dir) {
  if (manifest.entries.empty()) throw InvalidArgumentError("manifest holds no models");
  VolumeCurve curve;
  for (const ManifestEntry& e : manifest.entries) {
    const VoxelModel4D m = read_vox4(base_dir + "/" + e.path);
    if (curve.n_models == 0) {
      curve.frame_means.assign(static_cast<std::size_t>(m.frame_count()), 0.0);
    } else if (m.frame_count() != static_cast<int>(curve.frame_means.size())) {
      throw DimensionError("model " + e.subject_id + " has " + std::to_string(m.frame_count()) +
                           " frames, earlier models have " +
                           std::to_string(curve.frame_means.size()));
    }
    for (int t = 1; t <= m.frame_count(); ++t)
      curve.frame_means[static_cast<std::size_t>(t - 1)] +=
          static_cast<double>(m.occupied_count(t));
    ++curve.n_models;
  }
  for (double& v : curve.frame_means) v /= curve.n_models;
  return curve;
}

std::string table_csv(const ExperimentReport& report) {
  std::string out = "method";
  for (int t : report.target_frames) out += ",Frame " + std::to_string(t);
  out += ",Average\n";
  for (const MethodReport& r : report.methods) {
    out += r.method;
    for (std::size_t j = 0; j < r.frame_mean.size(); ++j)
      out += "," + format_cell(r.frame_mean[j], r.frame_fold_std[j]);
    out += "," + format_cell(r.overall_mean, r.overall_fold_std) + "\n";
  }
  return out;
}

std::string interval_csv(const IntervalStudyResult& study) {
  std::vector<int> intervals;
  std::vector<std::string> methods;
  std::map<std::pair<std::string, int>, const MethodReport*> cells;
  for (const IntervalStudyRow& row : study.rows) {
    if (std::find(intervals.begin(), intervals.end(), row.interval) == intervals.end())
      intervals.push_back(row.interval);
    if (std::find(methods.begin(), methods.end(), row.report.method) == methods.end())
      methods.push_back(row.report.method);
    cells[{row.report.method, row.interval}] = &row.report;
  }
  std::string out = "method";
  for (int i : intervals) out += ",interval " + std::to_string(i);
  out += "\n";
  for (const std::string& m : methods) {
    out += m;
    for (int i : intervals) {
      auto it = cells.find({m, i});
      out += it == cells.end()
                 ? ","
                 : "," + format_cell(it->second->overall_mean, it->second->overall_fold_std);
    }
    out += "\n";
  }
  return out;
}

std::string volume_csv(const VolumeCurve& curve) {
  std::string out = "frame,mean_occupied\n";
  for (std::size_t i = 0; i < curve.frame_means.size(); ++i) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%zu,%.5f\n", i + 1, curve.frame_means[i]);
    out += buf;
  }
  return out;
}

std::string report_json(const ExperimentReport& report) {
  nlohmann::json j;
  j["config_hash"] = report.config_hash;
  j["seed"] = report.seed;
  j["interval"] = report.interval;
  j["target_frames"] = report.target_frames;
  j["methods"] = nlohmann::json::array();
  for (const MethodReport& r : report.methods) j["methods"].push_back(method_json(r));
  j["significance"] = significance_json(report.significance);
  return j.dump(2) + "\n";
}

std::string interval_study_json(const IntervalStudyResult& study) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const IntervalStudyRow& row : study.rows)
    j["rows"].push_back({{"interval", row.interval}, {"report", method_json(row.report)}});
  j["significance"] = significance_json(study.significance);
  return j.dump(2) + "\n";
}

}  // namespace fnet
