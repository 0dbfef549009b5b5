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

// Kernel SVM post-classifier: SMO for binary problems, one-vs-one multiclass
// with per-pair balanced class weights, PCA and decision-region export.

#ifndef IBIS_SVM_HPP_
#define IBIS_SVM_HPP_

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ibis/binary_io.hpp"
#include "ibis/errors.hpp"

namespace ibis {

using FeatureVector = std::vector<double>;
using FeatureMatrix = std::vector<FeatureVector>;

enum class KernelKind : std::uint8_t { kRbf = 0, kLinear = 1 };

struct SvmConfig {
  double c = 1.0;
  std::optional<double> gamma;  // unset: 1 / (d * Var(X))
  bool balanced = true;
  double tolerance = 1e-3;
  std::size_t max_passes = 10000;  // cap on accepted pair updates
  KernelKind kernel = KernelKind::kRbf;

  void validate() const {
    if (!(c > 0) || !std::isfinite(c)) {
      throw ConfigError("C must be positive, got " + std::to_string(c));
    }
    if (gamma.has_value() && !(*gamma > 0)) {
      throw ConfigError("explicit gamma must be positive");
    }
    if (!(tolerance > 0)) throw ConfigError("KKT tolerance must be positive");
    if (max_passes < 1) throw ConfigError("max_passes must be at least 1");
  }
};

inline double squared_distance(std::span<const double> x,
                               std::span<const double> y) {
  if (x.size() != y.size()) {
    throw InputError("feature length mismatch: " + std::to_string(x.size()) +
                     " vs " + std::to_string(y.size()));
  }
  double d = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d += (x[i] - y[i]) * (x[i] - y[i]);
  return d;
}

inline double rbf_kernel(std::span<const double> x, std::span<const double> y,
                         double gamma) {
  if (!(gamma > 0)) throw ConfigError("gamma must be positive");
  return std::exp(-gamma * squared_distance(x, y));
}

inline double linear_kernel(std::span<const double> x,
                            std::span<const double> y) {
  if (x.size() != y.size()) throw InputError("feature length mismatch");
  double d = 0;
  for (std::size_t i = 0; i < x.size(); ++i) d += x[i] * y[i];
  return d;
}

inline double kernel_value(KernelKind kind, std::span<const double> x,
                           std::span<const double> y, double gamma) {
  return kind == KernelKind::kRbf ? rbf_kernel(x, y, gamma) : linear_kernel(x, y);
}

// 1 / (d * Var) over every entry of the matrix; 1 when the variance is zero.
inline double scale_gamma(const FeatureMatrix& x) {
  if (x.empty() || x[0].empty()) throw InputError("empty feature matrix");
  double sum = 0, sq = 0;
  std::size_t n = 0;
  for (const auto& row : x) {
    for (double v : row) {
      sum += v;
      sq += v * v;
      ++n;
    }
  }
  const double mean = sum / n;
  const double var = std::max(sq / n - mean * mean, 0.0);
  return var > 0 ? 1.0 / (static_cast<double>(x[0].size()) * var) : 1.0;
}

// n_total / (K * count(c)) for each present class c.
inline std::map<std::size_t, double> compute_class_weights(
    std::span<const std::size_t> labels) {
  if (labels.empty()) throw InputError("class weights need at least one label");
  std::map<std::size_t, std::size_t> counts;
  for (std::size_t l : labels) ++counts[l];
  std::map<std::size_t, double> weights;
  const double n = static_cast<double>(labels.size());
  const double k = static_cast<double>(counts.size());
  for (const auto& [label, count] : counts) {
    weights[label] = n / (k * static_cast<double>(count));
  }
  return weights;
}

// ---------------------------------------------------------------------------
// Binary SMO.

struct BinarySvm {
  FeatureMatrix support_vectors;
  std::vector<double> coefficients;  // alpha_i * y_i
  double bias = 0;
  double gamma = 1;
  KernelKind kernel = KernelKind::kRbf;

  double decision(std::span<const double> x) const {
    double f = bias;
    for (std::size_t i = 0; i < support_vectors.size(); ++i) {
      f += coefficients[i] * kernel_value(kernel, support_vectors[i], x, gamma);
    }
    return f;
  }
};

struct SmoResult {
  BinarySvm machine;
  std::vector<double> alpha;  // one per training sample
  std::vector<double> box;    // C * class weight, per sample
  std::vector<double> objective_history;  // dual objective after each update
  std::size_t updates = 0;
  bool converged = false;
};

namespace detail {

inline FeatureMatrix gram_rows(const FeatureMatrix& x, KernelKind kind,
                               double gamma) {
  const std::size_t n = x.size();
  FeatureMatrix k(n, FeatureVector(n));
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = i; j < n; ++j) {
      k[i][j] = k[j][i] = kernel_value(kind, x[i], x[j], gamma);
    }
  }
  return k;
}

}  // namespace detail

// `labels` are +1 / -1; `weights` maps +1 / -1 to the class weight multiplying
// C. `gamma` must already be resolved.
inline SmoResult smo_train_binary(const FeatureMatrix& x,
                                  std::span<const int> labels,
                                  const SvmConfig& config, double gamma,
                                  double weight_positive = 1.0,
                                  double weight_negative = 1.0) {
  config.validate();
  const std::size_t n = x.size();
  if (labels.size() != n) throw InputError("labels and features differ in length");
  bool has_pos = false, has_neg = false;
  for (int y : labels) {
    if (y != 1 && y != -1) throw InputError("binary labels must be +1 or -1");
    has_pos = has_pos || y == 1;
    has_neg = has_neg || y == -1;
  }
  if (!has_pos || !has_neg) {
    throw DegenerateInputError("binary SVM needs both classes present");
  }
  for (const auto& row : x) {
    if (row.size() != x[0].size()) throw InputError("ragged feature matrix");
  }

  const FeatureMatrix k = detail::gram_rows(x, config.kernel, gamma);
  SmoResult r;
  r.alpha.assign(n, 0.0);
  r.box.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    r.box[i] = config.c * (labels[i] == 1 ? weight_positive : weight_negative);
  }
  std::vector<double>& alpha = r.alpha;
  // F_i = sum_j alpha_j y_j K_ij - y_i, i.e. the error E_i without the bias.
  std::vector<double> f(n);
  for (std::size_t i = 0; i < n; ++i) f[i] = -labels[i];

  auto objective = [&] {
    double sum_alpha = 0, quad = 0;
    for (std::size_t i = 0; i < n; ++i) {
      sum_alpha += alpha[i];
      quad += alpha[i] * labels[i] * (f[i] + labels[i]);
    }
    return sum_alpha - 0.5 * quad;
  };
  // Index sets of the two-threshold optimality test.
  auto in_up = [&](std::size_t i) {
    return labels[i] == 1 ? alpha[i] < r.box[i] : alpha[i] > 0;
  };
  auto in_low = [&](std::size_t i) {
    return labels[i] == 1 ? alpha[i] > 0 : alpha[i] < r.box[i];
  };

  auto take_step = [&](std::size_t i, std::size_t j) {
    if (i == j) return false;
    const double yi = labels[i], yj = labels[j];
    const double ai = alpha[i], aj = alpha[j];
    double lo, hi;
    if (yi != yj) {
      lo = std::max(0.0, aj - ai);
      hi = std::min(r.box[j], r.box[i] + aj - ai);
    } else {
      lo = std::max(0.0, ai + aj - r.box[i]);
      hi = std::min(r.box[j], ai + aj);
    }
    if (hi - lo <= 1e-12) return false;
    const double eta = k[i][i] + k[j][j] - 2 * k[i][j];
    double aj_new;
    if (eta > 1e-12) {
      aj_new = std::clamp(aj + yj * (f[i] - f[j]) / eta, lo, hi);
    } else {
      // Flat curvature: the objective is linear along the pair direction.
      aj_new = yj * (f[i] - f[j]) > 0 ? hi : lo;
    }
    if (aj_new - lo < 1e-12) aj_new = lo;
    if (hi - aj_new < 1e-12) aj_new = hi;
    if (std::fabs(aj_new - aj) < 1e-12 * (aj_new + aj + 1e-12)) return false;
    double ai_new = ai + yi * yj * (aj - aj_new);
    if (ai_new < 1e-12) ai_new = 0;
    if (r.box[i] - ai_new < 1e-12) ai_new = r.box[i];
    const double di = ai_new - ai, dj = aj_new - aj;
    for (std::size_t t = 0; t < n; ++t) {
      f[t] += yi * di * k[i][t] + yj * dj * k[j][t];
    }
    alpha[i] = ai_new;
    alpha[j] = aj_new;
    ++r.updates;
    r.objective_history.push_back(objective());
    return true;
  };

  double b_up = 0, b_low = 0;
  std::size_t i_up = 0, i_low = 0;
  auto thresholds = [&] {
    b_up = std::numeric_limits<double>::infinity();
    b_low = -std::numeric_limits<double>::infinity();
    for (std::size_t t = 0; t < n; ++t) {
      if (in_up(t) && f[t] < b_up) {
        b_up = f[t];
        i_up = t;
      }
      if (in_low(t) && f[t] > b_low) {
        b_low = f[t];
        i_low = t;
      }
    }
  };

  // Outer loop: first violator against the current thresholds. Inner: the
  // partner with the largest |E_i - E_j| on the opposite side.
  const double tol2 = 2 * config.tolerance;
  while (true) {
    thresholds();
    if (b_low <= b_up + tol2) {
      r.converged = true;
      break;
    }
    if (r.updates >= config.max_passes) break;
    bool progressed = false;
    for (std::size_t i = 0; i < n && !progressed; ++i) {
      if (in_up(i) && f[i] < b_low - tol2) {
        progressed = take_step(i, i_low);
      } else if (in_low(i) && f[i] > b_up + tol2) {
        progressed = take_step(i, i_up);
      }
    }
    if (!progressed && !take_step(i_up, i_low)) break;
  }
  const double b = -(b_up + b_low) / 2;

  r.machine.bias = b;
  r.machine.gamma = gamma;
  r.machine.kernel = config.kernel;
  for (std::size_t i = 0; i < n; ++i) {
    if (alpha[i] > 0) {
      r.machine.support_vectors.push_back(x[i]);
      r.machine.coefficients.push_back(alpha[i] * labels[i]);
    }
  }
  return r;
}

// Worst KKT violation of a finished problem, recomputed from scratch.
inline double max_kkt_violation(const SmoResult& r, const FeatureMatrix& x,
                                std::span<const int> labels) {
  double worst = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double margin = labels[i] * r.machine.decision(x[i]);
    double v = 0;
    if (r.alpha[i] <= 0) {
      v = std::max(0.0, 1 - margin);
    } else if (r.alpha[i] >= r.box[i]) {
      v = std::max(0.0, margin - 1);
    } else {
      v = std::fabs(margin - 1);
    }
    worst = std::max(worst, v);
  }
  return worst;
}

// ---------------------------------------------------------------------------
// One-vs-one multiclass.

struct PairMachine {
  std::size_t first = 0;   // index into classes; +1 side
  std::size_t second = 0;  // index into classes; -1 side
  BinarySvm machine;
  bool converged = true;
};

struct SvmModel {
  std::vector<std::size_t> classes;
  std::size_t dimension = 0;
  double gamma = 1;
  double c = 1;
  bool balanced = true;
  KernelKind kernel = KernelKind::kRbf;
  std::vector<PairMachine> machines;

  std::size_t support_vector_count() const {
    std::size_t n = 0;
    for (const auto& m : machines) n += m.machine.support_vectors.size();
    return n;
  }

  bool operator==(const SvmModel& o) const {
    if (classes != o.classes || dimension != o.dimension || gamma != o.gamma ||
        c != o.c || balanced != o.balanced || kernel != o.kernel ||
        machines.size() != o.machines.size()) {
      return false;
    }
    for (std::size_t i = 0; i < machines.size(); ++i) {
      const auto& a = machines[i];
      const auto& b = o.machines[i];
      if (a.first != b.first || a.second != b.second ||
          a.machine.bias != b.machine.bias ||
          a.machine.coefficients != b.machine.coefficients ||
          a.machine.support_vectors != b.machine.support_vectors) {
        return false;
      }
    }
    return true;
  }
};

inline SvmModel train_multiclass(const FeatureMatrix& x,
                                 std::span<const std::size_t> labels,
                                 const SvmConfig& config) {
  config.validate();
  if (x.size() != labels.size()) {
    throw InputError("labels and features differ in length");
  }
  if (x.empty()) throw InputError("empty training set");
  SvmModel model;
  model.dimension = x[0].size();
  for (const auto& row : x) {
    if (row.size() != model.dimension) throw InputError("ragged feature matrix");
  }
  std::map<std::size_t, std::size_t> present;
  for (std::size_t l : labels) ++present[l];
  if (present.size() < 2) {
    throw DegenerateInputError("multiclass SVM needs at least two classes");
  }
  for (const auto& [label, count] : present) model.classes.push_back(label);
  model.gamma = config.gamma.value_or(scale_gamma(x));
  model.c = config.c;
  model.balanced = config.balanced;
  model.kernel = config.kernel;

  for (std::size_t a = 0; a < model.classes.size(); ++a) {
    for (std::size_t b = a + 1; b < model.classes.size(); ++b) {
      FeatureMatrix sub;
      std::vector<int> y;
      std::vector<std::size_t> pair_labels;
      for (std::size_t i = 0; i < x.size(); ++i) {
        if (labels[i] == model.classes[a] || labels[i] == model.classes[b]) {
          sub.push_back(x[i]);
          y.push_back(labels[i] == model.classes[a] ? 1 : -1);
          pair_labels.push_back(labels[i]);
        }
      }
      double wp = 1, wn = 1;
      if (config.balanced) {
        const auto w = compute_class_weights(pair_labels);
        wp = w.at(model.classes[a]);
        wn = w.at(model.classes[b]);
      }
      SmoResult r = smo_train_binary(sub, y, config, model.gamma, wp, wn);
      model.machines.push_back({a, b, std::move(r.machine), r.converged});
    }
  }
  return model;
}

struct SvmPrediction {
  std::size_t label = 0;
  std::vector<std::size_t> votes;  // per entry of SvmModel::classes
  double confidence = 0;           // votes for label / (K - 1)
};

inline SvmPrediction svm_predict_one(const SvmModel& model,
                                     std::span<const double> x) {
  if (x.size() != model.dimension) {
    throw InputError("feature dimension " + std::to_string(x.size()) +
                     " does not match SVM dimension " +
                     std::to_string(model.dimension));
  }
  const std::size_t k = model.classes.size();
  SvmPrediction p;
  p.votes.assign(k, 0);
  std::vector<double> strength(k, 0.0);
  for (const auto& m : model.machines) {
    const double f = m.machine.decision(x);
    const std::size_t winner = f > 0 ? m.first : m.second;
    ++p.votes[winner];
    strength[winner] += std::fabs(f);
  }
  std::size_t best = 0;
  for (std::size_t c = 1; c < k; ++c) {
    if (p.votes[c] > p.votes[best] ||
        (p.votes[c] == p.votes[best] && strength[c] > strength[best])) {
      best = c;
    }
  }
  p.label = model.classes[best];
  p.confidence = k > 1 ? static_cast<double>(p.votes[best]) /
                             static_cast<double>(k - 1)
                       : 1.0;
  return p;
}

inline std::vector<SvmPrediction> svm_predict(const SvmModel& model,
                                              const FeatureMatrix& x) {
  std::vector<SvmPrediction> out;
  out.reserve(x.size());
  for (const auto& row : x) out.push_back(svm_predict_one(model, row));
  return out;
}

// ---------------------------------------------------------------------------
// SVM container.
//
//   "IBSV" | u32 version | u8 kernel | u8 balanced | f64 gamma | f64 C
//   u32 dimension | u32 class count | u64 class ids...
//   u32 machine count, each: u32 first | u32 second | u8 converged | f64 bias
//     u32 support vectors | f64 coefficients... | f64 vectors (row-major)...

inline constexpr std::uint32_t kSvmFileVersion = 1;

inline std::vector<std::uint8_t> encode_svm(const SvmModel& m) {
  io::ByteWriter w;
  w.magic("IBSV");
  w.u32(kSvmFileVersion);
  w.u8(static_cast<std::uint8_t>(m.kernel));
  w.u8(m.balanced ? 1 : 0);
  w.f64(m.gamma);
  w.f64(m.c);
  w.u32(static_cast<std::uint32_t>(m.dimension));
  w.u32(static_cast<std::uint32_t>(m.classes.size()));
  for (std::size_t c : m.classes) w.u64(c);
  w.u32(static_cast<std::uint32_t>(m.machines.size()));
  for (const auto& pm : m.machines) {
    w.u32(static_cast<std::uint32_t>(pm.first));
    w.u32(static_cast<std::uint32_t>(pm.second));
    w.u8(pm.converged ? 1 : 0);
    w.f64(pm.machine.bias);
    w.u32(static_cast<std::uint32_t>(pm.machine.support_vectors.size()));
    for (double v : pm.machine.coefficients) w.f64(v);
    for (const auto& sv : pm.machine.support_vectors) {
      for (double v : sv) w.f64(v);
    }
  }
  return w.buffer();
}

inline SvmModel decode_svm(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic("IBSV");
  const std::uint32_t version = r.u32("version");
  if (version != kSvmFileVersion) {
    r.fail("unsupported SVM file version " + std::to_string(version));
  }
  SvmModel m;
  const std::uint8_t kernel = r.u8("kernel");
  if (kernel > 1) r.fail("unknown kernel code");
  m.kernel = static_cast<KernelKind>(kernel);
  m.balanced = r.u8("balanced flag") != 0;
  m.gamma = r.f64("gamma");
  m.c = r.f64("C");
  m.dimension = r.u32("dimension");
  const std::uint32_t k = r.u32("class count");
  if (k > r.remaining() / 8) r.fail("truncated class table");
  for (std::uint32_t i = 0; i < k; ++i) m.classes.push_back(r.u64("class id"));
  const std::uint32_t machines = r.u32("machine count");
  for (std::uint32_t i = 0; i < machines; ++i) {
    PairMachine pm;
    pm.first = r.u32("pair first");
    pm.second = r.u32("pair second");
    if (pm.first >= k || pm.second >= k) r.fail("pair index outside class table");
    pm.converged = r.u8("converged flag") != 0;
    pm.machine.bias = r.f64("bias");
    pm.machine.gamma = m.gamma;
    pm.machine.kernel = m.kernel;
    const std::uint32_t nsv = r.u32("support vector count");
    if (nsv > r.remaining() / (8 * (m.dimension + 1))) {
      r.fail("truncated support vectors");
    }
    pm.machine.coefficients.resize(nsv);
    for (double& v : pm.machine.coefficients) v = r.f64("coefficient");
    pm.machine.support_vectors.assign(nsv, FeatureVector(m.dimension));
    for (auto& sv : pm.machine.support_vectors) {
      for (double& v : sv) v = r.f64("support vector");
    }
    m.machines.push_back(std::move(pm));
  }
  if (!r.at_end()) r.fail("trailing bytes after SVM machines");
  return m;
}

inline void save_svm(const SvmModel& m, const std::filesystem::path& path) {
  io::write_file(path, encode_svm(m));
}

inline SvmModel load_svm(const std::filesystem::path& path) {
  return decode_svm(io::read_file(path));
}

// ---------------------------------------------------------------------------
// PCA.

struct PcaModel {
  FeatureVector mean;
  FeatureMatrix components;  // orthonormal rows
  std::vector<double> explained_variance;

  FeatureVector transform(std::span<const double> x) const {
    if (x.size() != mean.size()) throw InputError("PCA input dimension mismatch");
    FeatureVector z(components.size(), 0.0);
    for (std::size_t c = 0; c < components.size(); ++c) {
      for (std::size_t i = 0; i < x.size(); ++i) {
        z[c] += (x[i] - mean[i]) * components[c][i];
      }
    }
    return z;
  }

  FeatureVector inverse_transform(std::span<const double> z) const {
    if (z.size() != components.size()) {
      throw InputError("PCA code dimension mismatch");
    }
    FeatureVector x = mean;
    for (std::size_t c = 0; c < components.size(); ++c) {
      for (std::size_t i = 0; i < x.size(); ++i) x[i] += z[c] * components[c][i];
    }
    return x;
  }

  FeatureMatrix transform(const FeatureMatrix& x) const {
    FeatureMatrix out;
    out.reserve(x.size());
    for (const auto& row : x) out.push_back(transform(row));
    return out;
  }
};

// Eigen-decomposition of the sample covariance (n - 1 denominator). Each
// component is signed so that its first non-negligible entry is positive.
inline PcaModel pca_fit(const FeatureMatrix& x, std::size_t n_components) {
  if (x.empty()) throw InputError("PCA needs at least one sample");
  const std::size_t n = x.size(), d = x[0].size();
  if (n_components < 1 || n_components > std::min(n, d)) {
    throw ConfigError("n_components must be in [1, " +
                      std::to_string(std::min(n, d)) + "], got " +
                      std::to_string(n_components));
  }
  Eigen::MatrixXd m(n, d);
  for (std::size_t i = 0; i < n; ++i) {
    if (x[i].size() != d) throw InputError("ragged feature matrix");
    for (std::size_t j = 0; j < d; ++j) m(i, j) = x[i][j];
  }
  const Eigen::RowVectorXd mean = m.colwise().mean();
  const Eigen::MatrixXd centered = m.rowwise() - mean;
  const double denom = n > 1 ? static_cast<double>(n - 1) : 1.0;
  const Eigen::MatrixXd cov = (centered.transpose() * centered) / denom;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> solver(cov);
  if (solver.info() != Eigen::Success) throw InputError("PCA eigen-solve failed");

  PcaModel p;
  p.mean.assign(mean.data(), mean.data() + d);
  for (std::size_t c = 0; c < n_components; ++c) {
    const Eigen::Index col = static_cast<Eigen::Index>(d - 1 - c);  // ascending
    Eigen::VectorXd v = solver.eigenvectors().col(col);
    for (Eigen::Index i = 0; i < v.size(); ++i) {
      if (std::fabs(v(i)) > 1e-12) {
        if (v(i) < 0) v = -v;
        break;
      }
    }
    p.components.emplace_back(v.data(), v.data() + d);
    p.explained_variance.push_back(std::max(solver.eigenvalues()(col), 0.0));
  }
  return p;
}

// ---------------------------------------------------------------------------
// Decision regions in a 2-D projection.

struct Bounds {
  double x_min = 0, x_max = 1, y_min = 0, y_max = 1;
};

// Bounding box of 2-D points widened by `margin` of each extent.
inline Bounds bounds_of(const FeatureMatrix& points, double margin = 0.1) {
  if (points.empty()) throw InputError("no points to bound");
  Bounds b{points[0][0], points[0][0], points[0][1], points[0][1]};
  for (const auto& p : points) {
    b.x_min = std::min(b.x_min, p[0]);
    b.x_max = std::max(b.x_max, p[0]);
    b.y_min = std::min(b.y_min, p[1]);
    b.y_max = std::max(b.y_max, p[1]);
  }
  const double dx = std::max(b.x_max - b.x_min, 1e-9) * margin;
  const double dy = std::max(b.y_max - b.y_min, 1e-9) * margin;
  return {b.x_min - dx, b.x_max + dx, b.y_min - dy, b.y_max + dy};
}

struct RegionPoint {
  double x = 0, y = 0;
  std::size_t label = 0;
  std::size_t predicted = 0;
};

struct RegionGrid {
  Bounds bounds;
  int resolution = 0;
  std::vector<double> xs;  // cell centres, row-major with ys
  std::vector<double> ys;
  std::vector<std::size_t> labels;
  std::vector<RegionPoint> points;

  // Index of the grid cell whose centre is nearest to (x, y).
  std::size_t nearest_cell(double x, double y) const {
    const auto clamp_index = [&](double v, double lo, double hi) {
      const double t = (v - lo) / (hi - lo) * resolution;
      return static_cast<std::size_t>(
          std::clamp(std::floor(t), 0.0, static_cast<double>(resolution - 1)));
    };
    const std::size_t col = clamp_index(x, bounds.x_min, bounds.x_max);
    const std::size_t row = clamp_index(y, bounds.y_min, bounds.y_max);
    return row * static_cast<std::size_t>(resolution) + col;
  }
};

// `svm` must be a 2-D machine trained on the PCA projection; `features` are
// the original vectors, projected here for the companion point list.
inline RegionGrid decision_region_grid(const SvmModel& svm, const PcaModel& pca,
                                       const FeatureMatrix& features,
                                       std::span<const std::size_t> labels,
                                       Bounds bounds, int resolution) {
  if (resolution <= 0) {
    throw ConfigError("resolution must be positive, got " +
                      std::to_string(resolution));
  }
  if (pca.components.size() != 2 || svm.dimension != 2) {
    throw ConfigError("decision regions need a 2-component projection");
  }
  if (features.size() != labels.size()) {
    throw InputError("labels and features differ in length");
  }
  RegionGrid g;
  g.bounds = bounds;
  g.resolution = resolution;
  const double sx = (bounds.x_max - bounds.x_min) / resolution;
  const double sy = (bounds.y_max - bounds.y_min) / resolution;
  for (int r = 0; r < resolution; ++r) {
    for (int c = 0; c < resolution; ++c) {
      const double x = bounds.x_min + (c + 0.5) * sx;
      const double y = bounds.y_min + (r + 0.5) * sy;
      const double xy[2] = {x, y};
      g.xs.push_back(x);
      g.ys.push_back(y);
      g.labels.push_back(svm_predict_one(svm, xy).label);
    }
  }
  for (std::size_t i = 0; i < features.size(); ++i) {
    const FeatureVector z = pca.transform(features[i]);
    g.points.push_back({z[0], z[1], labels[i], svm_predict_one(svm, z).label});
  }
  return g;
}

inline void write_region_csvs(const RegionGrid& g,
                              const std::filesystem::path& grid_path,
                              const std::filesystem::path& points_path) {
  std::ofstream grid(grid_path);
  if (!grid) throw IoError("cannot open " + grid_path.string());
  grid.precision(17);
  grid << "x,y,label\n";
  for (std::size_t i = 0; i < g.labels.size(); ++i) {
    grid << g.xs[i] << ',' << g.ys[i] << ',' << g.labels[i] << '\n';
  }
  std::ofstream points(points_path);
  if (!points) throw IoError("cannot open " + points_path.string());
  points.precision(17);
  points << "x,y,label,predicted\n";
  for (const auto& p : g.points) {
    points << p.x << ',' << p.y << ',' << p.label << ',' << p.predicted << '\n';
  }
  if (!grid || !points) throw IoError("failed writing decision-region CSVs");
}

}  // namespace ibis

#endif  // IBIS_SVM_HPP_
