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

// Acceptance run: one PASS/FAIL line per criterion. Exits non-zero if any
// criterion fails. Usage: acceptance [work_dir]

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <iterator>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "ibis/pipeline.hpp"
#include "support/gradcheck.hpp"

namespace {

using namespace ibis;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

// Pinned tolerances.
constexpr double kShapeBudgetSeconds = 5;
constexpr double kGradTolerance = 1e-4;
constexpr int kGradInstances = 20;
constexpr double kGradBudgetSeconds = 60;
constexpr double kKktTolerance = 1e-3;
constexpr double kObjectiveSlack = 1e-12;  // rounding in the O(n) objective update
constexpr double kSmoBudgetSeconds = 30;
constexpr double kAucTolerance = 1e-12;
constexpr double kAucBudgetSeconds = 10;
constexpr double kFusedAccuracyFloor = 95.0;
constexpr std::size_t kAcceptanceEpochs = 30;
constexpr double kEndToEndBudgetSeconds = 20 * 60;

struct Outcome {
  bool pass = false;
  std::string detail;
};

int failures = 0;

void report(int id, const std::string& name, const Outcome& o, double seconds) {
  if (!o.pass) ++failures;
  std::printf("%s %2d %s: %s (%.2f s)\n", o.pass ? "PASS" : "FAIL", id, name.c_str(),
              o.detail.c_str(), seconds);
  std::fflush(stdout);
}

double since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, v);
  return buf;
}

// ---------------------------------------------------------------------------
// 1-2. Architecture oracles.

Outcome shapes_oracle() {
  const ModelGraph model = build_model(Architecture::kIbis, 5, 0);
  const ParameterReport r = parameter_report(model);
  const auto& rows = r.rows;
  const bool ends = !rows.empty() && rows.front().shapes.front() == Shape{32, 32, 3} &&
                    rows.back().shapes.front() == Shape{5};
  std::ostringstream d;
  d << r.shape_rows_matched << "/" << rows.size() << " rows, "
    << r.distinct_shapes_matched << "/" << r.distinct_reference_shapes
    << " distinct shapes, input (32,32,3) to output (5,) " << (ends ? "ok" : "wrong");
  return {r.compared && ends && r.shape_rows_matched == rows.size() &&
              r.distinct_shapes_matched == r.distinct_reference_shapes,
          d.str()};
}

std::size_t array_sum(const ModelGraph& m, const std::vector<std::string>& names) {
  std::size_t total = 0;
  for (const auto& n : names) total += m.array(n).size();
  return total;
}

Outcome count_oracle() {
  const ModelGraph model = build_model(Architecture::kIbis, 5, 0);
  const ParameterReport r = parameter_report(model);
  bool ok = r.compared && r.mismatches == 0 && r.documented_divergences == 3;
  std::ostringstream d;

  // Published counts that must match exactly.
  const std::vector<std::size_t> exact = {78,  125, 873, 45, 12,
                                          24,  20,  36,  16640, 1285};
  std::size_t found = 0;
  for (std::size_t v : exact) {
    bool hit = false;
    for (const auto& row : r.rows) {
      hit = hit || (row.reference_parameters == v && row.parameters == v &&
                    row.count_status == CountStatus::kMatch);
    }
    found += hit;
  }
  ok = ok && found == exact.size();
  d << found << "/" << exact.size() << " published counts matched";

  // Divergent rows: the reported value must equal a direct sum of array sizes.
  const std::size_t first = array_sum(model, {"b1.conv1.w", "b1.conv1.b"});
  const std::size_t head = array_sum(model, {"head.conv.w", "head.conv.b"});
  const std::size_t lstm = array_sum(
      model, {"bilstm.fwd.wx", "bilstm.fwd.wh", "bilstm.fwd.b", "bilstm.bwd.wx",
              "bilstm.bwd.wh", "bilstm.bwd.b"});
  std::size_t flagged = 0;
  for (const auto& row : r.rows) {
    if (row.count_status != CountStatus::kDocumentedDivergence) continue;
    ++flagged;
    const bool direct = row.parameters == first || row.parameters == head ||
                        row.parameters == lstm;
    ok = ok && direct;
  }
  ok = ok && first == 12 && head == 90 && lstm == 36352 && flagged == 3;
  d << "; flagged " << flagged << " divergences, summed arrays " << first << " vs 3, "
    << head << " vs 84, " << lstm << " vs 45568";

  std::size_t trainable = 0;
  for (const Tensor& t : model.parameters()) trainable += t.size();
  ok = ok && trainable == r.trainable_parameters;
  d << "; trainable " << trainable;
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 3. Autodiff against central differences.

Outcome gradient_oracle() {
  using testing::check_gradients;
  using testing::random_tensor;
  using Builder = std::function<testing::GradCheckResult(std::mt19937_64&)>;
  auto dim = [](std::mt19937_64& rng, std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  auto lstm_params = [&](std::size_t d, std::size_t u, std::mt19937_64& rng) {
    return LstmParams{random_tensor({d, 4 * u}, rng, 0.5),
                      random_tensor({u, 4 * u}, rng, 0.5),
                      random_tensor({4 * u}, rng, 0.5)};
  };
  // Each primitive's output is contracted with fixed random weights to a scalar.
  std::vector<std::pair<std::string, Builder>> ops = {
      {"add",
       [&](auto& rng) {
         Shape s{dim(rng, 1, 3), dim(rng, 1, 4)};
         Tensor a = random_tensor(s, rng), b = random_tensor(s, rng),
                p = random_tensor(s, rng);
         return check_gradients(
             [&](GradTape* t) { return weighted_sum(add(a, b, t), p, t); }, {a, b});
       }},
      {"sum",
       [&](auto& rng) {
         Tensor a = random_tensor({dim(rng, 1, 4), dim(rng, 1, 4)}, rng);
         return check_gradients([&](GradTape* t) { return sum(a, t); }, {a});
       }},
      {"weighted_sum",
       [&](auto& rng) {
         Shape s{dim(rng, 1, 5)};
         Tensor a = random_tensor(s, rng), w = random_tensor(s, rng);
         // The weights operand is a constant.
         return check_gradients([&](GradTape* t) { return weighted_sum(a, w, t); },
                                {a});
       }},
      {"reshape",
       [&](auto& rng) {
         const std::size_t r = dim(rng, 1, 3), c = dim(rng, 1, 4);
         Tensor a = random_tensor({r, c}, rng), p = random_tensor({c, r}, rng);
         return check_gradients(
             [&](GradTape* t) { return weighted_sum(reshape(a, {c, r}, t), p, t); },
             {a});
       }},
      {"conv2d",
       [&](auto& rng) {
         const std::size_t k = dim(rng, 1, 3), stride = dim(rng, 1, 2);
         const std::size_t h = k + dim(rng, 0, 3), w = k + dim(rng, 0, 3);
         const std::size_t ci = dim(rng, 1, 3), co = dim(rng, 1, 3);
         Tensor x = random_tensor({dim(rng, 1, 2), h, w, ci}, rng);
         Tensor wt = random_tensor({k, k, ci, co}, rng), b = random_tensor({co}, rng);
         Tensor probe = conv2d(x, wt, b, stride);
         Tensor p = random_tensor(probe.shape(), rng);
         return check_gradients(
             [&](GradTape* t) { return weighted_sum(conv2d(x, wt, b, stride, t), p, t); },
             {x, wt, b});
       }},
      {"batchnorm",
       [&](auto& rng) {
         const std::size_t c = dim(rng, 1, 3);
         Tensor x = random_tensor({dim(rng, 2, 3), dim(rng, 1, 3), dim(rng, 1, 3), c}, rng);
         Tensor g = random_tensor({c}, rng), b = random_tensor({c}, rng);
         Tensor mean = random_tensor({c}, rng, 0.2);
         Tensor var = Tensor::full({c}, 0.5 + dim(rng, 0, 10) / 10.0);
         Tensor p = random_tensor(x.shape(), rng);
         const Mode mode = dim(rng, 0, 1) ? Mode::kTrain : Mode::kInfer;
         return check_gradients(
             [&](GradTape* t) {
               return weighted_sum(
                   batchnorm(x, g, b, mean, var, {mode, kBatchNormMomentum,
                                                  kBatchNormEpsilon}, t),
                   p, t);
             },
             {x, g, b});
       }},
      {"activation",
       [&](auto& rng) {
         const auto kind = static_cast<ActivationKind>(dim(rng, 0, 2));
         Shape s{dim(rng, 1, 3), dim(rng, 1, 5)};
         Tensor x = random_tensor(s, rng, 3.0), p = random_tensor(s, rng);
         return check_gradients(
             [&](GradTape* t) { return weighted_sum(activation(x, kind, t), p, t); },
             {x});
       }},
      {"softmax",
       [&](auto& rng) {
         Shape s{dim(rng, 1, 3), dim(rng, 2, 6)};
         Tensor x = random_tensor(s, rng, 2.0), p = random_tensor(s, rng);
         return check_gradients(
             [&](GradTape* t) { return weighted_sum(softmax(x, t), p, t); }, {x});
       }},
      {"maxpool2d",
       [&](auto& rng) {
         Tensor x = random_tensor(
             {dim(rng, 1, 2), dim(rng, 2, 6), dim(rng, 2, 6), dim(rng, 1, 3)}, rng);
         Tensor p = random_tensor(maxpool2d(x).shape(), rng);
         return check_gradients(
             [&](GradTape* t) { return weighted_sum(maxpool2d(x, t), p, t); }, {x});
       }},
      {"pad_spatial",
       [&](auto& rng) {
         const std::size_t h = dim(rng, 1, 4), w = dim(rng, 1, 4);
         const std::size_t ph = h + dim(rng, 0, 2), pw = w + dim(rng, 0, 2);
         Tensor x = random_tensor({1, h, w, dim(rng, 1, 3)}, rng);
         Tensor p = random_tensor(pad_spatial(x, ph, pw).shape(), rng);
         return check_gradients(
             [&](GradTape* t) { return weighted_sum(pad_spatial(x, ph, pw, t), p, t); },
             {x});
       }},
      {"concat",
       [&](auto& rng) {
         const std::size_t h = dim(rng, 1, 3), w = dim(rng, 1, 3);
         Tensor a = random_tensor({1, h, w, dim(rng, 1, 3)}, rng);
         Tensor b = random_tensor({1, h, w, dim(rng, 1, 3)}, rng);
         Tensor p = random_tensor(concat({a, b}, 3).shape(), rng);
         return check_gradients(
             [&](GradTape* t) { return weighted_sum(concat({a, b}, 3, t), p, t); },
             {a, b});
       }},
      {"dropout",
       [&](auto& rng) {
         Shape s{dim(rng, 1, 3), dim(rng, 2, 8)};
         Tensor x = random_tensor(s, rng), p = random_tensor(s, rng);
         const std::uint64_t mask_seed = rng();
         return check_gradients(
             [&](GradTape* t) {
               std::mt19937_64 mask(mask_seed);
               return weighted_sum(dropout(x, kDropoutRate, Mode::kTrain, mask, t), p, t);
             },
             {x});
       }},
      {"lstm_direction",
       [&](auto& rng) {
         const std::size_t d = dim(rng, 1, 3), u = dim(rng, 1, 3);
         const auto dir = dim(rng, 0, 1) ? Direction::kForward : Direction::kBackward;
         Tensor seq = random_tensor({dim(rng, 1, 2), dim(rng, 1, 4), d}, rng);
         LstmParams lp = lstm_params(d, u, rng);
         Tensor p = random_tensor(lstm_direction(seq, lp, dir).shape(), rng);
         return check_gradients(
             [&](GradTape* t) {
               return weighted_sum(lstm_direction(seq, lp, dir, t), p, t);
             },
             {seq, lp.input_weights, lp.recurrent_weights, lp.bias});
       }},
      {"bilstm",
       [&](auto& rng) {
         const std::size_t d = dim(rng, 1, 3), u = dim(rng, 1, 2);
         Tensor seq = random_tensor({1, dim(rng, 1, 4), d}, rng);
         LstmParams f = lstm_params(d, u, rng), b = lstm_params(d, u, rng);
         Tensor p = random_tensor(bilstm(seq, f, b).shape(), rng);
         return check_gradients(
             [&](GradTape* t) { return weighted_sum(bilstm(seq, f, b, t), p, t); },
             {seq, f.input_weights, f.recurrent_weights, f.bias, b.input_weights,
              b.recurrent_weights, b.bias});
       }},
      {"additive_attention",
       [&](auto& rng) {
         const std::size_t f = dim(rng, 1, 4);
         Tensor seq = random_tensor({dim(rng, 1, 2), dim(rng, 1, 5), f}, rng);
         AttentionParams ap{random_tensor({f, f}, rng), random_tensor({f}, rng),
                            random_tensor({f}, rng)};
         Tensor p = random_tensor(additive_attention(seq, ap).shape(), rng);
         return check_gradients(
             [&](GradTape* t) { return weighted_sum(additive_attention(seq, ap, t), p, t); },
             {seq, ap.weights, ap.bias, ap.context});
       }},
      {"global_avg_pool_1d",
       [&](auto& rng) {
         Tensor seq = random_tensor({dim(rng, 1, 2), dim(rng, 1, 5), dim(rng, 1, 3)}, rng);
         Tensor p = random_tensor(global_avg_pool_1d(seq).shape(), rng);
         return check_gradients(
             [&](GradTape* t) { return weighted_sum(global_avg_pool_1d(seq, t), p, t); },
             {seq});
       }},
      {"global_avg_pool_2d",
       [&](auto& rng) {
         Tensor x = random_tensor(
             {dim(rng, 1, 2), dim(rng, 1, 4), dim(rng, 1, 4), dim(rng, 1, 3)}, rng);
         Tensor p = random_tensor(global_avg_pool_2d(x).shape(), rng);
         return check_gradients(
             [&](GradTape* t) { return weighted_sum(global_avg_pool_2d(x, t), p, t); },
             {x});
       }},
      {"dense",
       [&](auto& rng) {
         const std::size_t n = dim(rng, 1, 3), f = dim(rng, 1, 5), k = dim(rng, 1, 4);
         Tensor x = random_tensor({n, f}, rng), w = random_tensor({f, k}, rng),
                b = random_tensor({k}, rng), p = random_tensor({n, k}, rng);
         return check_gradients(
             [&](GradTape* t) { return weighted_sum(dense(x, w, b, t), p, t); },
             {x, w, b});
       }},
      {"cross_entropy",
       [&](auto& rng) {
         const std::size_t n = dim(rng, 1, 4), k = dim(rng, 2, 6);
         Tensor logits = random_tensor({n, k}, rng, 2.0);
         std::vector<std::size_t> labels(n);
         for (auto& l : labels) l = dim(rng, 0, k - 1);
         return check_gradients(
             [&](GradTape* t) { return cross_entropy(logits, labels, t); }, {logits});
       }},
  };

  double worst = 0;
  std::string worst_op;
  std::size_t entries = 0;
  bool finite = true;
  for (std::size_t o = 0; o < ops.size(); ++o) {
    std::mt19937_64 rng(1000 + o);
    for (int i = 0; i < kGradInstances; ++i) {
      const auto r = ops[o].second(rng);
      finite = finite && r.all_finite;
      entries += r.checked;
      if (r.max_relative_error >= worst) {
        worst = r.max_relative_error;
        worst_op = ops[o].first;
      }
    }
  }
  std::ostringstream d;
  d << ops.size() << " primitives x " << kGradInstances << " instances, " << entries
    << " entries, max relative error " << fmt("%.2e", worst) << " (" << worst_op
    << ")";
  return {finite && worst <= kGradTolerance, d.str()};
}

// ---------------------------------------------------------------------------
// 4. SMO.

Outcome smo_oracle() {
  bool ok = true;
  double worst_kkt = 0, worst_drop = 0;
  std::size_t updates = 0;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    std::mt19937_64 rng(500 + seed);
    std::normal_distribution<double> noise(0.0, 1.0);
    const std::size_t d = 2 + seed % 4;
    FeatureMatrix x;
    std::vector<int> y;
    for (std::size_t i = 0; i < 40; ++i) {
      const int label = i % 2 ? 1 : -1;
      FeatureVector v(d);
      for (double& e : v) e = noise(rng) + 0.6 * label;
      x.push_back(std::move(v));
      y.push_back(label);
    }
    SvmConfig config;
    const SmoResult r = smo_train_binary(x, y, config, scale_gamma(x));
    const double kkt = max_kkt_violation(r, x, y);
    worst_kkt = std::max(worst_kkt, kkt);
    ok = ok && r.converged && kkt <= kKktTolerance;
    for (std::size_t i = 1; i < r.objective_history.size(); ++i) {
      worst_drop =
          std::max(worst_drop, r.objective_history[i - 1] - r.objective_history[i]);
    }
    updates += r.updates;
  }
  ok = ok && worst_drop <= kObjectiveSlack;

  const FeatureMatrix xor_x = {{0, 0}, {1, 1}, {0, 1}, {1, 0}};
  const std::vector<int> xor_y = {1, 1, -1, -1};
  auto hits = [&](const SmoResult& r) {
    int h = 0;
    for (int i = 0; i < 4; ++i) h += (r.machine.decision(xor_x[i]) > 0) == (xor_y[i] > 0);
    return h;
  };
  SvmConfig config;
  const int rbf = hits(smo_train_binary(xor_x, xor_y, config, 1.0));
  config.kernel = KernelKind::kLinear;
  const int lin = hits(smo_train_binary(xor_x, xor_y, config, 1.0));
  ok = ok && rbf == 4 && lin <= 3;
  std::ostringstream d;
  d << "10 problems, max KKT violation " << fmt("%.2e", worst_kkt)
    << ", max objective drop " << fmt("%.1e", worst_drop) << " over " << updates
    << " updates; XOR rbf " << rbf << "/4, linear " << lin << "/4";
  return {ok, d.str()};
}

// ---------------------------------------------------------------------------
// 5. AUC.

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& t) {
  double wins = 0;
  double pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (t[i] != 1) continue;
    for (std::size_t j = 0; j < s.size(); ++j) {
      if (t[j] != 0) continue;
      pairs += 1;
      wins += s[i] > s[j] ? 1.0 : (s[i] == s[j] ? 0.5 : 0.0);
    }
  }
  return wins / pairs;
}

Outcome auc_oracle() {
  std::mt19937_64 rng(77);
  double worst = 0;
  for (int set = 0; set < 50; ++set) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 200)(rng);
    // Coarse scores on some sets force ties.
    const int levels = set % 3 == 0 ? 5 : 1000000;
    std::vector<double> s(n);
    std::vector<int> t(n);
    for (std::size_t i = 0; i < n; ++i) {
      t[i] = static_cast<int>(rng() % 2);
      s[i] = static_cast<double>(rng() % levels) / levels + 0.1 * t[i];
    }
    t[0] = 0;
    t[1] = 1;
    worst = std::max(worst, std::fabs(auc(roc_curve(s, t)) - pairwise_auc(s, t)));
  }
  return {worst <= kAucTolerance,
          "50 sets, max |trapezoid - pairwise| " + fmt("%.2e", worst)};
}

// ---------------------------------------------------------------------------
// 6-8. End-to-end run on the default dataset.

double spread(const std::vector<double>& per_class) {
  const auto [lo, hi] = std::minmax_element(per_class.begin(), per_class.end());
  return *hi - *lo;
}

double mean(const std::vector<double>& v) {
  return std::accumulate(v.begin(), v.end(), 0.0) / v.size();
}

double mean_epoch_seconds(const std::vector<EpochTiming>& t) {
  double s = 0;
  for (const auto& e : t) s += e.seconds;
  return s / t.size();
}

struct Run {
  EvalResult eval;
  std::vector<EpochTiming> timings;
};

Run run_pipeline(const fs::path& data, const fs::path& dir, Architecture arch,
                 std::size_t epochs, bool svm, std::size_t jobs, std::ostream& log) {
  TrainOptions options;
  options.architecture = arch;
  options.train.epochs = epochs;
  options.train.seed = 7;
  options.jobs = jobs;
  Run run;
  run.timings = train_command(data, dir / "models", options, log);
  if (svm) svm_fit_command(data, dir / "models", SvmConfig{}, {}, 7, jobs, log);
  run.eval = eval_command(data, dir / "models", dir / "reports", {}, 7, log);
  return run;
}

std::string per_class_string(const std::vector<double>& v) {
  std::ostringstream s;
  for (std::size_t i = 0; i < v.size(); ++i) s << (i ? "/" : "") << fmt("%.1f", v[i]);
  return s.str();
}

// ---------------------------------------------------------------------------
// 9. Class weighting on an imbalanced binary problem.

Outcome balanced_weighting() {
  std::mt19937_64 rng(91);
  std::normal_distribution<double> noise(0.0, 1.0);
  auto sample = [&](std::size_t majority, std::size_t minority, FeatureMatrix& x,
                    std::vector<std::size_t>& y) {
    for (std::size_t i = 0; i < majority + minority; ++i) {
      const std::size_t label = i < majority ? 0 : 1;
      const double shift = label ? 1.5 : 0.0;
      x.push_back({noise(rng) + shift, noise(rng) + shift});
      y.push_back(label);
    }
  };
  FeatureMatrix train_x, test_x;
  std::vector<std::size_t> train_y, test_y;
  sample(180, 20, train_x, train_y);
  sample(900, 100, test_x, test_y);
  auto minority_recall = [&](bool balanced) {
    SvmConfig config;
    config.balanced = balanced;
    const SvmModel m = train_multiclass(train_x, train_y, config);
    std::size_t hit = 0, total = 0;
    const auto preds = svm_predict(m, test_x);
    for (std::size_t i = 0; i < test_y.size(); ++i) {
      if (test_y[i] != 1) continue;
      ++total;
      hit += preds[i].label == 1;
    }
    return 100.0 * hit / total;
  };
  const double with = minority_recall(true), without = minority_recall(false);
  return {with > without, "9:1 train set, minority recall balanced " +
                              fmt("%.1f%%", with) + " vs unbalanced " +
                              fmt("%.1f%%", without)};
}

// ---------------------------------------------------------------------------
// 10. Determinism of the command chain.

nlohmann::json without_timings(const fs::path& report) {
  std::ifstream in(report);
  nlohmann::json j = nlohmann::json::parse(in);
  j.erase("timings");
  return j;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

Outcome determinism(const fs::path& root, std::size_t jobs) {
  SynthConfig synth;
  synth.windows_per_class = 20;
  synth.seed = 7;
  std::ostringstream log;
  std::vector<fs::path> dirs = {root / "run_a", root / "run_b"};
  for (const auto& dir : dirs) {
    fs::create_directories(dir);
    synth_command(synth, {}, dir / "data.ibds", log);
    run_pipeline(dir / "data.ibds", dir, Architecture::kIbis, 3, true, jobs, log);
  }
  bool ok = slurp(dirs[0] / "data.ibds") == slurp(dirs[1] / "data.ibds");
  std::size_t compared = 0;
  for (const auto& entry : fs::recursive_directory_iterator(dirs[0] / "reports")) {
    if (!entry.is_regular_file()) continue;
    const auto rel = fs::relative(entry.path(), dirs[0]);
    const auto other = dirs[1] / rel;
    ++compared;
    if (entry.path().filename() == "report.json") {
      ok = ok && without_timings(entry.path()) == without_timings(other);
    } else if (entry.path().filename() != "timings.csv") {
      ok = ok && slurp(entry.path()) == slurp(other);
    }
  }
  for (std::size_t a = 0; a < kAntennas; ++a) {
    ok = ok && slurp(checkpoint_path(dirs[0] / "models", a)) ==
                   slurp(checkpoint_path(dirs[1] / "models", a));
    ok = ok && slurp(svm_path(dirs[0] / "models", a)) ==
                   slurp(svm_path(dirs[1] / "models", a));
  }
  return {ok && compared > 0, "two runs (20 windows/class, 3 epochs), " +
                                  std::to_string(compared) +
                                  " report files, checkpoints and SVM files compared"};
}

}  // namespace

int main(int argc, char** argv) {
  const fs::path root =
      argc > 1 ? fs::path(argv[1]) : fs::temp_directory_path() / "ibis_acceptance";
  fs::remove_all(root);
  fs::create_directories(root);
  const std::size_t jobs = std::max(1u, std::thread::hardware_concurrency());

  auto timed = [](int id, const std::string& name, const std::function<Outcome()>& fn,
                  double budget) {
    const auto t0 = Clock::now();
    Outcome o;
    try {
      o = fn();
    } catch (const std::exception& e) {
      o = {false, std::string("threw: ") + e.what()};
    }
    const double s = since(t0);
    if (budget > 0 && s > budget) {
      o.pass = false;
      o.detail += "; over the " + fmt("%.0f", budget) + " s budget";
    }
    report(id, name, o, s);
  };

  timed(1, "architecture shapes", shapes_oracle, kShapeBudgetSeconds);
  timed(2, "parameter counts", count_oracle, 0);
  timed(3, "autodiff gradients", gradient_oracle, kGradBudgetSeconds);
  timed(4, "SMO solver", smo_oracle, kSmoBudgetSeconds);
  timed(5, "AUC oracle", auc_oracle, kAucBudgetSeconds);

  // Default dataset, both architectures, reduced epochs.
  std::ostringstream log;
  Run ibis_run, base_run;
  bool ran = false;
  std::string run_error;
  const auto t0 = Clock::now();
  try {
    SynthConfig synth;  // 5 classes, 100 windows/class/antenna, seed 7
    synth_command(synth, {}, root / "data.ibds", log);
    ibis_run = run_pipeline(root / "data.ibds", root / "ibis", Architecture::kIbis,
                            kAcceptanceEpochs, true, jobs, log);
    base_run = run_pipeline(root / "data.ibds", root / "inception",
                            Architecture::kInception, kAcceptanceEpochs, false, jobs, log);
    ran = true;
  } catch (const std::exception& e) {
    run_error = std::string("end-to-end run threw: ") + e.what();
  }
  const double e2e = since(t0);
  {
    std::ofstream(root / "pipeline.log") << log.str();
  }

  if (!ran) {
    for (int id : {6, 7, 8}) report(id, "end-to-end", {false, run_error}, e2e);
  } else {
    const auto& fused = ibis_run.eval.reports.at("svm_postfusion");
    const auto& svm_pre = ibis_run.eval.reports.at("svm_prefusion");
    const auto& base_pre = base_run.eval.reports.at("network_prefusion");
    const auto& base_post = base_run.eval.reports.at("network_postfusion");
    // Both systems are compared after antenna fusion; per-window figures are
    // printed for reference.
    const double ibis_spread = spread(fused.metrics.class_accuracy);
    const double base_spread = spread(base_post.metrics.class_accuracy);
    const bool a = fused.metrics.accuracy >= kFusedAccuracyFloor;
    const bool b = fused.metrics.accuracy > base_post.metrics.accuracy;
    const bool c = ibis_spread < base_spread;
    std::ostringstream d;
    d << "(a) fused IBIS+SVM " << fmt("%.2f%%", fused.metrics.accuracy) << " >= 95 "
      << (a ? "ok" : "no") << "; (b) fused IBIS+SVM "
      << fmt("%.2f%%", fused.metrics.accuracy) << " vs inception "
      << fmt("%.2f%%", base_post.metrics.accuracy) << " " << (b ? "ok" : "no")
      << " [per-window " << fmt("%.2f", svm_pre.metrics.accuracy) << " vs "
      << fmt("%.2f", base_pre.metrics.accuracy) << "]; (c) per-class spread "
      << fmt("%.2f", ibis_spread) << " (" << per_class_string(fused.metrics.class_accuracy)
      << ") vs " << fmt("%.2f", base_spread) << " ("
      << per_class_string(base_post.metrics.class_accuracy) << ") "
      << (c ? "ok" : "no") << " [per-window "
      << fmt("%.2f", spread(svm_pre.metrics.class_accuracy)) << " vs "
      << fmt("%.2f", spread(base_pre.metrics.class_accuracy)) << "]; "
      << kAcceptanceEpochs << " epochs";
    Outcome six{a && b && c && e2e <= kEndToEndBudgetSeconds, d.str()};
    if (e2e > kEndToEndBudgetSeconds) six.detail += "; over the 20 min budget";
    report(6, "end-to-end direction", six, e2e);

    const double pre_mean = mean(svm_pre.antenna_accuracy);
    const auto& net_pre = ibis_run.eval.reports.at("network_prefusion");
    const auto& net_post = ibis_run.eval.reports.at("network_postfusion");
    std::ostringstream d7;
    d7 << "IBIS+SVM fused " << fmt("%.2f", fused.metrics.accuracy)
       << " vs mean of antennas " << fmt("%.2f", pre_mean) << " ("
       << per_class_string(svm_pre.antenna_accuracy) << "); network-only fused "
       << fmt("%.2f", net_post.metrics.accuracy) << " vs "
       << fmt("%.2f", mean(net_pre.antenna_accuracy));
    report(7, "fusion", {fused.metrics.accuracy >= pre_mean, d7.str()}, 0);

    const double ibis_epoch = mean_epoch_seconds(ibis_run.timings);
    const double base_epoch = mean_epoch_seconds(base_run.timings);
    report(8, "epoch cost ordering",
           {ibis_epoch > base_epoch, "mean epoch ibis " + fmt("%.3f s", ibis_epoch) +
                                         " vs inception " + fmt("%.3f s", base_epoch)},
           0);
  }

  timed(9, "balanced weighting", balanced_weighting, 0);
  timed(10, "determinism", [&] { return determinism(root / "determinism", jobs); }, 0);

  std::printf("%s: %d failing criteria\n", failures ? "FAIL" : "PASS", failures);
  return failures ? 1 : 0;
}
