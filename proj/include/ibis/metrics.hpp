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

// Antenna majority voting, confusion matrices, macro metrics, one-vs-rest
// ROC / AUC and report serialization (JSON + flat CSVs).

#ifndef IBIS_METRICS_HPP_
#define IBIS_METRICS_HPP_

#include <nlohmann/json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "ibis/errors.hpp"

namespace ibis {

// ---------------------------------------------------------------------------
// Fusion.

struct AntennaPrediction {
  std::uint8_t antenna = 0;
  std::vector<std::uint32_t> windows;  // window (event) ids, aligned across antennas
  std::vector<std::size_t> labels;
  std::vector<double> confidences;  // in [0, 1]
};

// Most votes wins; ties go to the highest mean confidence among the tied
// labels' voters, then to the lowest class index.
inline std::vector<std::size_t> majority_vote(
    std::span<const AntennaPrediction> antennas) {
  if (antennas.size() < 2) throw InputError("majority vote needs >= 2 antennas");
  const auto& ref = antennas[0];
  for (const auto& a : antennas) {
    if (a.labels.size() != ref.labels.size() ||
        a.confidences.size() != a.labels.size() || a.windows != ref.windows) {
      throw InputError("antenna predictions cover different window sets");
    }
    for (double c : a.confidences) {
      if (!(c >= 0 && c <= 1)) throw InputError("confidence outside [0, 1]");
    }
  }
  if (ref.windows.size() != ref.labels.size()) {
    throw InputError("window ids and labels differ in length");
  }
  std::vector<std::size_t> fused(ref.labels.size());
  for (std::size_t w = 0; w < fused.size(); ++w) {
    std::map<std::size_t, std::pair<std::size_t, double>> tally;  // votes, conf sum
    for (const auto& a : antennas) {
      auto& t = tally[a.labels[w]];
      ++t.first;
      t.second += a.confidences[w];
    }
    std::size_t best = tally.begin()->first;
    std::size_t best_votes = 0;
    double best_conf = -1;
    for (const auto& [label, t] : tally) {  // ascending label order
      const double mean = t.second / static_cast<double>(t.first);
      if (t.first > best_votes || (t.first == best_votes && mean > best_conf)) {
        best = label;
        best_votes = t.first;
        best_conf = mean;
      }
    }
    fused[w] = best;
  }
  return fused;
}

// ---------------------------------------------------------------------------
// Confusion matrix and macro metrics.

struct ConfusionMatrix {
  std::size_t k = 0;
  std::vector<std::size_t> counts;  // row = true class, column = predicted

  std::size_t at(std::size_t truth, std::size_t predicted) const {
    return counts.at(truth * k + predicted);
  }
  std::size_t total() const {
    std::size_t n = 0;
    for (auto c : counts) n += c;
    return n;
  }
  std::size_t row_sum(std::size_t r) const {
    std::size_t n = 0;
    for (std::size_t c = 0; c < k; ++c) n += at(r, c);
    return n;
  }
  std::size_t column_sum(std::size_t c) const {
    std::size_t n = 0;
    for (std::size_t r = 0; r < k; ++r) n += at(r, c);
    return n;
  }
  // Diagonal share of each row in percent; 0 for an empty row.
  std::vector<double> per_class_accuracy() const {
    std::vector<double> out(k, 0.0);
    for (std::size_t r = 0; r < k; ++r) {
      const auto n = row_sum(r);
      if (n > 0) out[r] = 100.0 * static_cast<double>(at(r, r)) / n;
    }
    return out;
  }
  bool operator==(const ConfusionMatrix&) const = default;
};

inline ConfusionMatrix confusion_matrix(std::span<const std::size_t> truth,
                                        std::span<const std::size_t> predicted,
                                        std::size_t k) {
  if (truth.size() != predicted.size()) {
    throw InputError("truth and prediction lengths differ");
  }
  ConfusionMatrix cm{k, std::vector<std::size_t>(k * k, 0)};
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] >= k || predicted[i] >= k) {
      throw InputError("label outside [0, " + std::to_string(k) + ")");
    }
    ++cm.counts[truth[i] * k + predicted[i]];
  }
  return cm;
}

// All values in percent.
struct ClassificationMetrics {
  double accuracy = 0;
  double macro_precision = 0;
  double macro_recall = 0;
  double macro_f1 = 0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
  std::vector<double> class_accuracy;
  // Classes never predicted (precision reported as 0) or never present.
  std::vector<bool> undefined_precision;
  std::vector<bool> undefined_recall;

  bool operator==(const ClassificationMetrics&) const = default;
};

inline ClassificationMetrics metrics_from_confusion(const ConfusionMatrix& cm) {
  const std::size_t total = cm.total();
  if (cm.k == 0 || total == 0) throw InputError("empty confusion matrix");
  ClassificationMetrics m;
  std::size_t trace = 0;
  for (std::size_t c = 0; c < cm.k; ++c) trace += cm.at(c, c);
  m.accuracy = 100.0 * static_cast<double>(trace) / static_cast<double>(total);
  for (std::size_t c = 0; c < cm.k; ++c) {
    const double tp = static_cast<double>(cm.at(c, c));
    const auto col = cm.column_sum(c), row = cm.row_sum(c);
    const double p = col > 0 ? tp / col : 0.0;
    const double r = row > 0 ? tp / row : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    m.precision.push_back(100 * p);
    m.recall.push_back(100 * r);
    m.f1.push_back(100 * f);
    m.undefined_precision.push_back(col == 0);
    m.undefined_recall.push_back(row == 0);
    m.macro_precision += 100 * p / cm.k;
    m.macro_recall += 100 * r / cm.k;
    m.macro_f1 += 100 * f / cm.k;
  }
  m.class_accuracy = cm.per_class_accuracy();
  return m;
}

// ---------------------------------------------------------------------------
// ROC / AUC.

struct RocPoint {
  double fpr = 0;
  double tpr = 0;
  double threshold = 0;  // predict positive when score >= threshold

  bool operator==(const RocPoint&) const = default;
};

// Anchors (0,0) at +inf and (1,1) at -inf around one point per distinct score.
inline std::vector<RocPoint> roc_curve(std::span<const double> scores,
                                       std::span<const int> truth) {
  if (scores.size() != truth.size()) {
    throw InputError("scores and truth differ in length");
  }
  std::size_t pos = 0, neg = 0;
  for (int t : truth) {
    if (t != 0 && t != 1) throw InputError("ROC truth must be 0 or 1");
    (t == 1 ? pos : neg)++;
  }
  if (pos == 0 || neg == 0) {
    throw DegenerateInputError("ROC needs both positive and negative samples");
  }
  std::vector<std::size_t> order(scores.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<RocPoint> curve{{0, 0, inf}};
  std::size_t tp = 0, fp = 0;
  for (std::size_t i = 0; i < order.size();) {
    const double s = scores[order[i]];
    while (i < order.size() && scores[order[i]] == s) {
      (truth[order[i]] == 1 ? tp : fp)++;
      ++i;
    }
    curve.push_back({static_cast<double>(fp) / neg, static_cast<double>(tp) / pos, s});
  }
  curve.push_back({1, 1, -inf});
  return curve;
}

inline double auc(std::span<const RocPoint> curve) {
  double area = 0;
  for (std::size_t i = 1; i < curve.size(); ++i) {
    area += (curve[i].fpr - curve[i - 1].fpr) * (curve[i].tpr + curve[i - 1].tpr) / 2;
  }
  return area;
}

// ---------------------------------------------------------------------------
// Reports.

struct EpochTiming {
  std::size_t antenna = 0;
  std::size_t epoch = 0;
  double seconds = 0;
  double train_loss = 0;
  double train_accuracy = 0;
  double validation_accuracy = 0;

  bool operator==(const EpochTiming&) const = default;
};

inline constexpr int kReportSchemaVersion = 1;

struct MetricsReport {
  std::string mode;
  std::string architecture;
  std::vector<std::string> class_names;
  std::size_t windows = 0;
  ConfusionMatrix confusion;
  ClassificationMetrics metrics;
  std::vector<double> antenna_accuracy;  // percent, pre-fusion modes only
  std::vector<std::vector<RocPoint>> roc;  // per class; empty if undefined
  std::vector<double> auc;                 // per class; NaN if undefined
  std::vector<EpochTiming> timings;
};

inline MetricsReport make_report(std::string mode, std::string architecture,
                                 std::vector<std::string> class_names,
                                 std::span<const std::size_t> truth,
                                 std::span<const std::size_t> predicted) {
  MetricsReport r;
  r.mode = std::move(mode);
  r.architecture = std::move(architecture);
  r.class_names = std::move(class_names);
  r.windows = truth.size();
  r.confusion = confusion_matrix(truth, predicted, r.class_names.size());
  r.metrics = metrics_from_confusion(r.confusion);
  return r;
}

// One-vs-rest curves from per-window class scores ([window][class]).
inline void attach_roc(MetricsReport& r, std::span<const std::size_t> truth,
                       const std::vector<std::vector<double>>& scores) {
  const std::size_t k = r.class_names.size();
  r.roc.assign(k, {});
  r.auc.assign(k, std::nan(""));
  for (std::size_t c = 0; c < k; ++c) {
    std::vector<double> s;
    std::vector<int> t;
    for (std::size_t i = 0; i < truth.size(); ++i) {
      s.push_back(scores.at(i).at(c));
      t.push_back(truth[i] == c ? 1 : 0);
    }
    try {
      r.roc[c] = roc_curve(s, t);
      r.auc[c] = auc(r.roc[c]);
    } catch (const DegenerateInputError&) {
      // class absent from (or the only class in) the evaluated windows
    }
  }
}

namespace detail {

// JSON has no infinities or NaN; encode them as strings.
inline nlohmann::json number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

inline double number(const nlohmann::json& j) {
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    if (s == "nan") return std::nan("");
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw FormatError("unexpected string in numeric field: " + s, 0);
  }
  return j.get<double>();
}

inline nlohmann::json numbers(const std::vector<double>& v) {
  auto a = nlohmann::json::array();
  for (double x : v) a.push_back(number(x));
  return a;
}

inline std::vector<double> numbers(const nlohmann::json& j) {
  std::vector<double> v;
  for (const auto& x : j) v.push_back(number(x));
  return v;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.precision(17);
  return out;
}

}  // namespace detail

inline nlohmann::json report_to_json(const MetricsReport& r) {
  using nlohmann::json;
  json j;
  j["schema_version"] = kReportSchemaVersion;
  j["mode"] = r.mode;
  j["architecture"] = r.architecture;
  j["class_names"] = r.class_names;
  j["windows"] = r.windows;
  j["accuracy"] = detail::number(r.metrics.accuracy);
  j["f1"] = detail::number(r.metrics.macro_f1);
  j["recall"] = detail::number(r.metrics.macro_recall);
  j["precision"] = detail::number(r.metrics.macro_precision);
  j["per_class"] = {
      {"accuracy", detail::numbers(r.metrics.class_accuracy)},
      {"precision", detail::numbers(r.metrics.precision)},
      {"recall", detail::numbers(r.metrics.recall)},
      {"f1", detail::numbers(r.metrics.f1)},
      {"undefined_precision", r.metrics.undefined_precision},
      {"undefined_recall", r.metrics.undefined_recall},
  };
  j["confusion"] = r.confusion.counts;
  j["antenna_accuracy"] = detail::numbers(r.antenna_accuracy);
  j["auc"] = detail::numbers(r.auc);
  json roc = json::array();
  for (const auto& curve : r.roc) {
    json points = json::array();
    for (const auto& p : curve) {
      points.push_back({detail::number(p.fpr), detail::number(p.tpr),
                        detail::number(p.threshold)});
    }
    roc.push_back(points);
  }
  j["roc"] = roc;
  json timings = json::array();
  for (const auto& t : r.timings) {
    timings.push_back({t.antenna, t.epoch, detail::number(t.seconds),
                       detail::number(t.train_loss),
                       detail::number(t.train_accuracy),
                       detail::number(t.validation_accuracy)});
  }
  j["timings"] = timings;
  return j;
}

inline MetricsReport report_from_json(const nlohmann::json& j) {
  try {
    if (j.at("schema_version").get<int>() != kReportSchemaVersion) {
      throw FormatError("unsupported report schema version", 0);
    }
    MetricsReport r;
    r.mode = j.at("mode").get<std::string>();
    r.architecture = j.at("architecture").get<std::string>();
    r.class_names = j.at("class_names").get<std::vector<std::string>>();
    r.windows = j.at("windows").get<std::size_t>();
    r.metrics.accuracy = detail::number(j.at("accuracy"));
    r.metrics.macro_f1 = detail::number(j.at("f1"));
    r.metrics.macro_recall = detail::number(j.at("recall"));
    r.metrics.macro_precision = detail::number(j.at("precision"));
    const auto& pc = j.at("per_class");
    r.metrics.class_accuracy = detail::numbers(pc.at("accuracy"));
    r.metrics.precision = detail::numbers(pc.at("precision"));
    r.metrics.recall = detail::numbers(pc.at("recall"));
    r.metrics.f1 = detail::numbers(pc.at("f1"));
    r.metrics.undefined_precision = pc.at("undefined_precision").get<std::vector<bool>>();
    r.metrics.undefined_recall = pc.at("undefined_recall").get<std::vector<bool>>();
    r.confusion.k = r.class_names.size();
    r.confusion.counts = j.at("confusion").get<std::vector<std::size_t>>();
    if (r.confusion.counts.size() != r.confusion.k * r.confusion.k) {
      throw FormatError("confusion matrix size does not match class count", 0);
    }
    r.antenna_accuracy = detail::numbers(j.at("antenna_accuracy"));
    r.auc = detail::numbers(j.at("auc"));
    for (const auto& curve : j.at("roc")) {
      std::vector<RocPoint> points;
      for (const auto& p : curve) {
        points.push_back({detail::number(p.at(0)), detail::number(p.at(1)),
                          detail::number(p.at(2))});
      }
      r.roc.push_back(std::move(points));
    }
    for (const auto& t : j.at("timings")) {
      r.timings.push_back({t.at(0).get<std::size_t>(), t.at(1).get<std::size_t>(),
                           detail::number(t.at(2)), detail::number(t.at(3)),
                           detail::number(t.at(4)), detail::number(t.at(5))});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what(), 0);
  }
}

inline void write_timings_csv(const std::vector<EpochTiming>& timings,
                              const std::filesystem::path& path) {
  auto out = detail::open_out(path);
  out << "antenna,epoch,seconds,train_loss,train_accuracy,validation_accuracy\n";
  for (const auto& t : timings) {
    // Seconds carry millisecond resolution.
    out << t.antenna << ',' << t.epoch << ',' << std::fixed << std::setprecision(3)
        << t.seconds << std::defaultfloat << std::setprecision(17) << ','
        << t.train_loss << ',' << t.train_accuracy << ',' << t.validation_accuracy
        << '\n';
  }
  if (!out) throw IoError("failed writing " + path.string());
}

inline std::vector<EpochTiming> read_timings_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EpochTiming> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    std::vector<std::string> cells;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (cells.size() != 6) throw FormatError("bad timing row: " + line, 0);
    out.push_back({std::stoul(cells[0]), std::stoul(cells[1]), std::stod(cells[2]),
                   std::stod(cells[3]), std::stod(cells[4]), std::stod(cells[5])});
  }
  return out;
}

// report.json plus confusion.csv, roc_<class>.csv and timings.csv in `dir`.
inline void export_report(const MetricsReport& r, const std::filesystem::path& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  {
    auto out = detail::open_out(dir / "report.json");
    out << report_to_json(r).dump(2) << '\n';
    if (!out) throw IoError("failed writing report.json");
  }
  {
    auto out = detail::open_out(dir / "confusion.csv");
    out << "true\\predicted";
    for (const auto& n : r.class_names) out << ',' << n;
    out << '\n';
    for (std::size_t t = 0; t < r.confusion.k; ++t) {
      out << r.class_names[t];
      for (std::size_t p = 0; p < r.confusion.k; ++p) out << ',' << r.confusion.at(t, p);
      out << '\n';
    }
  }
  for (std::size_t c = 0; c < r.roc.size(); ++c) {
    if (r.roc[c].empty()) continue;
    auto out = detail::open_out(dir / ("roc_" + std::to_string(c) + ".csv"));
    out << "fpr,tpr,threshold\n";
    for (const auto& p : r.roc[c]) {
      out << p.fpr << ',' << p.tpr << ',' << p.threshold << '\n';
    }
  }
  write_timings_csv(r.timings, dir / "timings.csv");
}

inline MetricsReport load_report(const std::filesystem::path& dir) {
  std::ifstream in(dir / "report.json");
  if (!in) throw IoError("cannot open " + (dir / "report.json").string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("malformed report: ") + e.what(), 0);
  }
  return report_from_json(j);
}

}  // namespace ibis

#endif  // IBIS_METRICS_HPP_
