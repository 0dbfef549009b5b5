/*
 * Copyright 2026 The IBIS Authors.
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     https://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

// End-to-end commands shared by the CLI and the acceptance suite:
// synth -> train (one model per antenna) -> svm-fit -> eval, plus
// region-plot and arch-check.
//
// Model directory layout:
//   antenna_<a>.ibck       network checkpoint per antenna
//   svm_antenna_<a>.ibsv   SVM post-classifier per antenna
//   timings.csv            per-epoch training log for all antennas

#ifndef IBIS_PIPELINE_HPP_
#define IBIS_PIPELINE_HPP_

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <filesystem>
#include <iomanip>
#include <map>
#include <mutex>
#include <ostream>
#include <set>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ibis/errors.hpp"
#include "ibis/metrics.hpp"
#include "ibis/model.hpp"
#include "ibis/svm.hpp"
#include "ibis/synth.hpp"

namespace ibis {

class MissingArtifactError : public Error {
 public:
  using Error::Error;
};

namespace fs = std::filesystem;

inline fs::path checkpoint_path(const fs::path& dir, std::size_t antenna) {
  return dir / ("antenna_" + std::to_string(antenna) + ".ibck");
}
inline fs::path svm_path(const fs::path& dir, std::size_t antenna) {
  return dir / ("svm_antenna_" + std::to_string(antenna) + ".ibsv");
}

// Distinct, reproducible seed per antenna.
inline std::uint64_t antenna_seed(std::uint64_t seed, std::size_t antenna) {
  return seed * 1000003ULL + 7919ULL * (antenna + 1);
}

inline void require_file(const fs::path& path, const char* what) {
  if (!fs::exists(path)) {
    throw MissingArtifactError(std::string("missing ") + what + ": " + path.string());
  }
}

inline Dataset load_dataset_for_run(const fs::path& path, const SplitRatios& ratios,
                                    std::uint64_t split_seed) {
  if (!fs::exists(path)) throw IoError("dataset not found: " + path.string());
  Dataset ds = load_dataset(path);
  const bool unassigned =
      ds.splits.size() != ds.windows.size() ||
      std::any_of(ds.splits.begin(), ds.splits.end(),
                  [](Split s) { return s == Split::kUnassigned; });
  if (unassigned) ds.splits = split_dataset(ds, ratios, split_seed);
  return ds;
}

struct AntennaData {
  std::vector<DopplerWindow> train, validation, test;  // each sorted by event
};

inline AntennaData antenna_data(const Dataset& ds, std::size_t antenna) {
  AntennaData d;
  for (std::size_t i = 0; i < ds.windows.size(); ++i) {
    const auto& w = ds.windows[i];
    if (w.antenna != antenna) continue;
    switch (ds.splits.at(i)) {
      case Split::kTrain: d.train.push_back(w); break;
      case Split::kValidation: d.validation.push_back(w); break;
      case Split::kTest: d.test.push_back(w); break;
      case Split::kUnassigned: break;
    }
  }
  auto by_event = [](const DopplerWindow& a, const DopplerWindow& b) {
    return a.event < b.event;
  };
  for (auto* v : {&d.train, &d.validation, &d.test}) {
    std::stable_sort(v->begin(), v->end(), by_event);
  }
  return d;
}

// ---------------------------------------------------------------------------
// synth

inline std::string split_counts_table(const Dataset& ds) {
  std::map<std::pair<std::size_t, int>, std::size_t> counts;
  for (std::size_t i = 0; i < ds.windows.size(); ++i) {
    ++counts[{ds.windows[i].label, static_cast<int>(ds.splits[i])}];
  }
  std::ostringstream os;
  os << std::left << std::setw(12) << "class" << std::right << std::setw(8)
     << "train" << std::setw(8) << "val" << std::setw(8) << "test" << '\n';
  for (std::size_t c = 0; c < ds.num_classes(); ++c) {
    os << std::left << std::setw(12) << ds.class_names[c] << std::right;
    for (int s = 0; s < 3; ++s) os << std::setw(8) << counts[{c, s}];
    os << '\n';
  }
  os << "total windows: " << ds.windows.size() << " (" << ds.antenna_count()
     << " antennas)\n";
  return os.str();
}

inline Dataset synth_command(const SynthConfig& config, const SplitRatios& ratios,
                             const fs::path& out, std::ostream& log) {
  Dataset ds = generate_synthetic_dataset(config);
  ds.splits = split_dataset(ds, ratios, config.seed);
  save_dataset(ds, out);
  log << split_counts_table(ds);
  return ds;
}

// ---------------------------------------------------------------------------
// train

struct TrainOptions {
  Architecture architecture = Architecture::kIbis;
  TrainConfig train;
  std::size_t jobs = 1;  // concurrent antenna jobs
};

// Runs fn(antenna) for every antenna on up to `jobs` threads; the first
// exception is rethrown after all workers finish.
template <typename Fn>
void for_each_antenna(std::size_t antennas, std::size_t jobs, Fn fn) {
  jobs = std::max<std::size_t>(1, std::min(jobs, antennas));
  if (jobs == 1) {
    for (std::size_t a = 0; a < antennas; ++a) fn(a);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr failure;
  std::mutex failure_mutex;
  std::vector<std::thread> workers;
  for (std::size_t j = 0; j < jobs; ++j) {
    workers.emplace_back([&] {
      for (std::size_t a = next++; a < antennas; a = next++) {
        try {
          fn(a);
        } catch (...) {
          std::lock_guard<std::mutex> lock(failure_mutex);
          if (!failure) failure = std::current_exception();
        }
      }
    });
  }
  for (auto& w : workers) w.join();
  if (failure) std::rethrow_exception(failure);
}

inline std::vector<EpochTiming> train_command(const fs::path& dataset_path,
                                              const fs::path& models_dir,
                                              const TrainOptions& options,
                                              std::ostream& log) {
  options.train.validate();
  Dataset ds =
      load_dataset_for_run(dataset_path, options.train.ratios, options.train.seed);
  std::error_code ec;
  fs::create_directories(models_dir, ec);
  if (ec) throw IoError("cannot create " + models_dir.string());
  const std::size_t antennas = ds.antenna_count();
  std::vector<std::vector<EpochTiming>> per_antenna(antennas);
  std::mutex log_mutex;
  for_each_antenna(antennas, options.jobs, [&](std::size_t a) {
    AntennaData data = antenna_data(ds, a);
    TrainConfig config = options.train;
    config.seed = antenna_seed(options.train.seed, a);
    ModelGraph model = build_model(options.architecture, ds.num_classes(), config.seed);
    TrainingLog tl = train(model, data.train, data.validation, config);
    save_checkpoint(model, checkpoint_path(models_dir, a));
    for (const auto& e : tl.epochs) {
      const double ms = std::round(e.seconds * 1000.0) / 1000.0;
      per_antenna[a].push_back({a, e.epoch, ms, e.train_loss,
                                e.train_accuracy, e.validation_accuracy});
    }
    std::lock_guard<std::mutex> lock(log_mutex);
    const auto& last = tl.epochs.back();
    log << "antenna " << a << ": " << tl.epochs.size() << " epochs, loss "
        << last.train_loss << ", train acc " << last.train_accuracy
        << ", val acc " << last.validation_accuracy << '\n';
  });
  std::vector<EpochTiming> timings;
  for (const auto& v : per_antenna) timings.insert(timings.end(), v.begin(), v.end());
  write_timings_csv(timings, models_dir / "timings.csv");
  return timings;
}

// ---------------------------------------------------------------------------
// svm-fit

inline std::vector<ModelGraph> load_checkpoints(const fs::path& models_dir,
                                                std::size_t antennas) {
  std::vector<ModelGraph> models;
  for (std::size_t a = 0; a < antennas; ++a) {
    require_file(checkpoint_path(models_dir, a), "checkpoint");
    models.push_back(load_checkpoint(checkpoint_path(models_dir, a)));
  }
  return models;
}

inline std::vector<SvmModel> svm_fit_command(const fs::path& dataset_path,
                                             const fs::path& models_dir,
                                             const SvmConfig& config,
                                             const SplitRatios& ratios,
                                             std::uint64_t split_seed,
                                             std::size_t jobs, std::ostream& log) {
  config.validate();
  Dataset ds = load_dataset_for_run(dataset_path, ratios, split_seed);
  const auto models = load_checkpoints(models_dir, ds.antenna_count());
  log << "C = " << std::fixed << std::setprecision(1) << config.c
      << std::defaultfloat << std::setprecision(6)
      << ", class weighting = " << (config.balanced ? "balanced" : "none") << '\n';
  std::vector<SvmModel> svms(ds.antenna_count());
  std::vector<std::size_t> train_sizes(ds.antenna_count());
  for_each_antenna(ds.antenna_count(), jobs, [&](std::size_t a) {
    AntennaData data = antenna_data(ds, a);
    std::vector<std::size_t> labels;
    for (const auto& w : data.train) labels.push_back(w.label);
    svms[a] = train_multiclass(extract_features(models[a], data.train), labels, config);
    save_svm(svms[a], svm_path(models_dir, a));
    train_sizes[a] = labels.size();
  });
  for (std::size_t a = 0; a < svms.size(); ++a) {
    log << "antenna " << a << ": " << svms[a].machines.size()
        << " binary machines, gamma " << svms[a].gamma << ", support vectors";
    for (const auto& m : svms[a].machines) log << ' ' << m.machine.support_vectors.size();
    log << " (of " << train_sizes[a] << " training windows)\n";
  }
  return svms;
}

// ---------------------------------------------------------------------------
// eval

struct EvalResult {
  std::map<std::string, MetricsReport> reports;  // by mode
};

namespace detail {

struct AntennaScores {
  std::vector<std::size_t> truth;
  std::vector<std::uint32_t> events;
  std::vector<std::size_t> labels;
  std::vector<double> confidences;
  std::vector<std::vector<double>> scores;  // [window][class]
};

inline MetricsReport prefusion_report(const std::string& mode,
                                      const std::string& arch,
                                      const Dataset& ds,
                                      const std::vector<AntennaScores>& per) {
  std::vector<std::size_t> truth, pred;
  std::vector<std::vector<double>> scores;
  std::vector<double> antenna_accuracy;
  for (const auto& a : per) {
    std::size_t hits = 0;
    for (std::size_t i = 0; i < a.truth.size(); ++i) hits += a.truth[i] == a.labels[i];
    antenna_accuracy.push_back(100.0 * hits / a.truth.size());
    truth.insert(truth.end(), a.truth.begin(), a.truth.end());
    pred.insert(pred.end(), a.labels.begin(), a.labels.end());
    scores.insert(scores.end(), a.scores.begin(), a.scores.end());
  }
  MetricsReport r = make_report(mode, arch, ds.class_names, truth, pred);
  r.antenna_accuracy = antenna_accuracy;
  attach_roc(r, truth, scores);
  return r;
}

// ROC stays on the pooled pre-fusion scores; fused labels drive the rest.
inline MetricsReport postfusion_report(const std::string& mode,
                                       const std::string& arch, const Dataset& ds,
                                       const std::vector<AntennaScores>& per) {
  std::vector<AntennaPrediction> streams;
  for (std::size_t a = 0; a < per.size(); ++a) {
    streams.push_back({static_cast<std::uint8_t>(a), per[a].events, per[a].labels,
                       per[a].confidences});
  }
  const auto fused = majority_vote(streams);
  MetricsReport r = make_report(mode, arch, ds.class_names, per[0].truth, fused);
  std::vector<std::size_t> truth;
  std::vector<std::vector<double>> scores;
  for (const auto& a : per) {
    truth.insert(truth.end(), a.truth.begin(), a.truth.end());
    scores.insert(scores.end(), a.scores.begin(), a.scores.end());
  }
  attach_roc(r, truth, scores);
  return r;
}

}  // namespace detail

inline EvalResult eval_command(const fs::path& dataset_path,
                               const fs::path& models_dir, const fs::path& out_dir,
                               const SplitRatios& ratios, std::uint64_t split_seed,
                               std::ostream& log) {
  Dataset ds = load_dataset_for_run(dataset_path, ratios, split_seed);
  const std::size_t antennas = ds.antenna_count();
  const auto models = load_checkpoints(models_dir, antennas);
  bool have_svm = true;
  for (std::size_t a = 0; a < antennas; ++a) {
    have_svm = have_svm && fs::exists(svm_path(models_dir, a));
  }
  const std::string arch = architecture_name(models[0].architecture());
  const std::size_t k = ds.num_classes();

  std::vector<detail::AntennaScores> network(antennas), svm(antennas);
  for (std::size_t a = 0; a < antennas; ++a) {
    AntennaData data = antenna_data(ds, a);
    if (data.test.empty()) throw InputError("empty test split");
    auto& net = network[a];
    for (const auto& w : data.test) {
      net.truth.push_back(w.label);
      net.events.push_back(w.event);
    }
    for (auto& p : predict(models[a], data.test)) {
      net.labels.push_back(p.label);
      net.confidences.push_back(p.probabilities[p.label]);
      net.scores.push_back(std::move(p.probabilities));
    }
    if (!have_svm) continue;
    const SvmModel sm = load_svm(svm_path(models_dir, a));
    auto& s = svm[a];
    s.truth = net.truth;
    s.events = net.events;
    for (const auto& p : svm_predict(sm, extract_features(models[a], data.test))) {
      s.labels.push_back(p.label);
      s.confidences.push_back(p.confidence);
      std::vector<double> row(k, 0.0);
      for (std::size_t c = 0; c < sm.classes.size(); ++c) {
        row[sm.classes[c]] = static_cast<double>(p.votes[c]) / (sm.classes.size() - 1);
      }
      s.scores.push_back(std::move(row));
    }
  }

  std::vector<EpochTiming> timings;
  if (fs::exists(models_dir / "timings.csv")) {
    timings = read_timings_csv(models_dir / "timings.csv");
  }
  EvalResult result;
  auto add = [&](MetricsReport r) {
    r.timings = timings;
    export_report(r, out_dir / r.mode);
    log << std::left << std::setw(20) << r.mode << std::right << std::fixed
        << std::setprecision(2) << " accuracy " << r.metrics.accuracy << "  F1 "
        << r.metrics.macro_f1 << "  recall " << r.metrics.macro_recall
        << "  precision " << r.metrics.macro_precision << std::defaultfloat
        << std::setprecision(6) << '\n';
    result.reports[r.mode] = std::move(r);
  };
  add(detail::prefusion_report("network_prefusion", arch, ds, network));
  add(detail::postfusion_report("network_postfusion", arch, ds, network));
  if (have_svm) {
    add(detail::prefusion_report("svm_prefusion", arch, ds, svm));
    add(detail::postfusion_report("svm_postfusion", arch, ds, svm));
  } else {
    log << "no SVM models found; SVM modes skipped\n";
  }
  return result;
}

// ---------------------------------------------------------------------------
// region-plot

inline RegionGrid region_plot_command(const fs::path& dataset_path,
                                      const fs::path& models_dir,
                                      const fs::path& out_dir, std::size_t antenna,
                                      int resolution, const SplitRatios& ratios,
                                      std::uint64_t split_seed, std::ostream& log) {
  if (resolution <= 0) throw ConfigError("resolution must be positive");
  Dataset ds = load_dataset_for_run(dataset_path, ratios, split_seed);
  if (antenna >= ds.antenna_count()) throw ConfigError("antenna out of range");
  require_file(checkpoint_path(models_dir, antenna), "checkpoint");
  require_file(svm_path(models_dir, antenna), "SVM model");
  const ModelGraph model = load_checkpoint(checkpoint_path(models_dir, antenna));
  const SvmModel full = load_svm(svm_path(models_dir, antenna));
  AntennaData data = antenna_data(ds, antenna);
  std::vector<std::size_t> labels;
  for (const auto& w : data.test) labels.push_back(w.label);
  const FeatureMatrix features = extract_features(model, data.test);
  const PcaModel pca = pca_fit(features, 2);
  const FeatureMatrix projected = pca.transform(features);
  SvmConfig config;
  config.c = full.c;
  config.balanced = full.balanced;
  const SvmModel svm2d = train_multiclass(projected, labels, config);
  RegionGrid grid = decision_region_grid(svm2d, pca, features, labels,
                                         bounds_of(projected), resolution);
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  if (ec) throw IoError("cannot create " + out_dir.string());
  write_region_csvs(grid, out_dir / "region_grid.csv", out_dir / "region_points.csv");
  std::set<std::size_t> distinct(grid.labels.begin(), grid.labels.end());
  log << "grid " << resolution << "x" << resolution << ", " << distinct.size()
      << " distinct labels, explained variance " << pca.explained_variance[0] << ", "
      << pca.explained_variance[1] << '\n';
  return grid;
}

// ---------------------------------------------------------------------------
// arch-check

inline std::string format_shapes(const std::vector<Shape>& shapes) {
  std::string s;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    if (i > 0) s += " / ";
    s += shape_string(shapes[i]);
  }
  return s;
}

// Prints the side-by-side table; true when the build conforms.
inline bool arch_check_command(Architecture arch, std::size_t classes,
                               std::ostream& out) {
  const ModelGraph model = build_model(arch, classes, 0);
  const ParameterReport r = parameter_report(model);
  out << std::left << std::setw(4) << "#" << std::setw(34) << "layer" << std::setw(28)
      << "output shape" << std::setw(28) << "reference shape" << std::right
      << std::setw(9) << "params" << std::setw(9) << "ref" << "  status\n";
  for (std::size_t i = 0; i < r.rows.size(); ++i) {
    const auto& row = r.rows[i];
    out << std::left << std::setw(4) << i << std::setw(34) << row.name << std::setw(28)
        << format_shapes(row.shapes) << std::setw(28)
        << (row.reference_shapes ? format_shapes(*row.reference_shapes) : "")
        << std::right << std::setw(9)
        << (row.has_parameters ? std::to_string(row.parameters) : "")
        << std::setw(9)
        << (row.reference_parameters ? std::to_string(*row.reference_parameters) : "")
        << "  " << (r.compared ? (row.shape_match ? "shape ok" : "SHAPE MISMATCH") : "")
        << (r.compared && row.count_status != CountStatus::kNoParameters
                ? std::string(", ") + count_status_name(row.count_status)
                : std::string())
        << '\n';
  }
  out << "total parameters: " << r.total_parameters
      << " (trainable " << r.trainable_parameters << ")\n";
  if (!r.compared) {
    out << "no reference table for this configuration; nothing compared\n";
    return true;
  }
  out << "shapes: " << r.shape_rows_matched << "/" << r.rows.size()
      << " rows match, " << r.distinct_shapes_matched << "/"
      << r.distinct_reference_shapes << " distinct shapes\n"
      << "counts: " << r.documented_divergences << " documented divergences, "
      << r.mismatches << " mismatches\n";
  return r.conforms();
}

}  // namespace ibis

#endif  // IBIS_PIPELINE_HPP_
