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

// The Inception + BiLSTM + attention network, its Inception-only baseline,
// training, inference, checkpoints and the layer-table conformance report.
//
// Trunk (both architectures), input (32,32,3):
//   Normalization (frozen per-channel mean / variance)
//   Inception block x2:
//     1x1 conv (3) -> BN -> swish
//     2x2 conv (6) -> BN -> swish
//       branch A: 2x2 conv (5) -> BN -> swish -> maxpool
//       branch B: 4x4 conv (9) -> BN -> swish -> maxpool -> zero-pad to A
//     concat -> 14 channels
//   Dropout(0.5) -> 1x1 conv (6) -> BN -> swish            (6,6,6)
// IBIS head:
//   Reshape (36,6) -> BiLSTM(64) -> tanh -> attention
//   concat(mean_t BiLSTM, mean_t attention) = 256 features
//   Dropout(0.5) -> Dense(K)
// Inception baseline head:
//   global average pool (6,) -> Dropout(0.5) -> Dense(K)

#ifndef IBIS_MODEL_HPP_
#define IBIS_MODEL_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ibis/binary_io.hpp"
#include "ibis/errors.hpp"
#include "ibis/synth.hpp"
#include "ibis/tensor.hpp"

namespace ibis {

enum class Architecture : std::uint8_t { kIbis = 0, kInception = 1 };

inline const char* architecture_name(Architecture a) {
  return a == Architecture::kIbis ? "ibis" : "inception";
}

inline Architecture parse_architecture(const std::string& s) {
  if (s == "ibis") return Architecture::kIbis;
  if (s == "inception") return Architecture::kInception;
  throw ConfigError("unknown architecture \"" + s +
                    "\"; expected ibis or inception");
}

// One row of the layer table. `arrays` names the stored arrays (trainable
// parameters and normalization state) owned by the row.
struct LayerSpec {
  std::string name;
  std::string kind;
  std::vector<std::string> arrays;

  bool operator==(const LayerSpec&) const = default;
};

inline constexpr double kBatchNormMomentum = 0.99;
inline constexpr double kBatchNormEpsilon = 1e-3;
inline constexpr double kNormalizationVarianceFloor = 1e-7;
inline constexpr double kDropoutRate = 0.5;
inline constexpr std::size_t kLstmUnits = 64;

struct ForwardResult {
  Tensor logits;    // [B, K]
  Tensor features;  // [B, 256] for IBIS, [B, 6] for the baseline
};

// Output shapes recorded per layer-table row (batch axis removed).
struct ShapeTrace {
  std::vector<std::vector<Shape>> rows;
};

class ModelGraph {
 public:
  ModelGraph() = default;

  Architecture architecture() const { return architecture_; }
  std::size_t num_classes() const { return num_classes_; }
  std::uint64_t seed() const { return seed_; }
  const std::vector<LayerSpec>& layers() const { return layers_; }
  bool normalization_adapted() const { return adapted_; }

  const Tensor& array(const std::string& name) const {
    auto it = arrays_.find(name);
    if (it == arrays_.end()) throw UsageError("no array named " + name);
    return it->second;
  }
  const std::map<std::string, Tensor>& arrays() const { return arrays_; }

  // Trainable parameters in a fixed order.
  std::vector<Tensor> parameters() const {
    std::vector<Tensor> out;
    for (const auto& name : trainable_) out.push_back(arrays_.at(name));
    return out;
  }
  const std::vector<std::string>& parameter_names() const { return trainable_; }

  std::size_t feature_dim() const {
    return architecture_ == Architecture::kIbis ? 4 * kLstmUnits : 6;
  }

  // Number of conv layers, each followed by its own batch normalization.
  std::size_t conv_bn_pairs() const {
    std::size_t n = 0;
    for (std::size_t i = 0; i + 1 < layers_.size(); ++i) {
      if (layers_[i].kind == "conv2d" && layers_[i + 1].kind == "batchnorm") ++n;
    }
    return n;
  }

  ForwardResult forward(const Tensor& batch, Mode mode, std::mt19937_64* rng,
                        GradTape* tape = nullptr,
                        ShapeTrace* trace = nullptr) const;

  // Internal mutation hooks used by construction, adaptation and loading.
  std::map<std::string, Tensor>& mutable_arrays() { return arrays_; }
  void set_adapted(bool v) { adapted_ = v; }

 private:
  friend ModelGraph build_model(Architecture, std::size_t, std::uint64_t);

  Architecture architecture_ = Architecture::kIbis;
  std::size_t num_classes_ = 5;
  std::uint64_t seed_ = 0;
  bool adapted_ = false;
  std::vector<LayerSpec> layers_;
  std::map<std::string, Tensor> arrays_;
  std::vector<std::string> trainable_;
};

namespace detail {

class ModelBuilder {
 public:
  ModelBuilder(std::vector<LayerSpec>& layers,
               std::map<std::string, Tensor>& arrays,
               std::vector<std::string>& trainable, std::uint64_t seed)
      : layers_(layers), arrays_(arrays), trainable_(trainable), rng_(seed) {}

  void plain(std::string name, std::string kind) {
    layers_.push_back({std::move(name), std::move(kind), {}});
  }

  void normalization() {
    arrays_["norm.mean"] = Tensor::zeros({kWindowChannels});
    arrays_["norm.var"] = Tensor::full({kWindowChannels}, 1.0);
    layers_.push_back({"Normalization", "normalization", {"norm.mean", "norm.var"}});
  }

  // He-style uniform weights, zero bias.
  void conv(const std::string& id, std::size_t out, std::size_t k,
            std::size_t in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(k * k * in));
    add_trainable(id + ".w", uniform({k, k, in, out}, limit));
    add_trainable(id + ".b", Tensor::zeros({out}));
    layers_.push_back({"Conv2D(" + std::to_string(out) + "x" +
                           std::to_string(k) + "x" + std::to_string(in) + ")",
                       "conv2d",
                       {id + ".w", id + ".b"}});
  }

  void batchnorm(const std::string& id, std::size_t channels) {
    add_trainable(id + ".gamma", Tensor::full({channels}, 1.0));
    add_trainable(id + ".beta", Tensor::zeros({channels}));
    arrays_[id + ".mean"] = Tensor::zeros({channels});
    arrays_[id + ".var"] = Tensor::full({channels}, 1.0);
    layers_.push_back({"BatchNormalization", "batchnorm",
                       {id + ".gamma", id + ".beta", id + ".mean", id + ".var"}});
  }

  // Uniform +-1/sqrt(fan_in) weights, zero bias except forget gate = 1.
  void lstm_direction(const std::string& id, std::size_t dim, std::size_t units,
                      std::vector<std::string>& names) {
    add_trainable(id + ".wx", uniform({dim, 4 * units}, 1.0 / std::sqrt(dim)));
    add_trainable(id + ".wh",
                  uniform({units, 4 * units}, 1.0 / std::sqrt(units)));
    Tensor bias = Tensor::zeros({4 * units});
    for (std::size_t u = 0; u < units; ++u) bias.data()[units + u] = 1.0;
    add_trainable(id + ".b", bias);
    names.insert(names.end(), {id + ".wx", id + ".wh", id + ".b"});
  }

  void bilstm(std::size_t dim, std::size_t units) {
    std::vector<std::string> names;
    lstm_direction("bilstm.fwd", dim, units, names);
    lstm_direction("bilstm.bwd", dim, units, names);
    layers_.push_back({"Bidirectional LSTM (" + std::to_string(units) + " units)",
                       "bilstm", names});
  }

  void attention(std::size_t features) {
    const double limit = 1.0 / std::sqrt(static_cast<double>(features));
    add_trainable("attention.w", uniform({features, features}, limit));
    add_trainable("attention.b", Tensor::zeros({features}));
    add_trainable("attention.u", uniform({features}, limit));
    layers_.push_back(
        {"Attention", "attention", {"attention.w", "attention.b", "attention.u"}});
  }

  void dense(std::size_t in, std::size_t classes) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in));
    add_trainable("dense.w", uniform({in, classes}, limit));
    add_trainable("dense.b", Tensor::zeros({classes}));
    layers_.push_back({"Dense (" + std::to_string(classes) + " classes)", "dense",
                       {"dense.w", "dense.b"}});
  }

 private:
  Tensor uniform(Shape shape, double limit) {
    std::uniform_real_distribution<double> dist(-limit, limit);
    std::vector<double> data(shape_volume(shape));
    for (double& v : data) v = dist(rng_);
    return Tensor(std::move(shape), std::move(data));
  }

  void add_trainable(const std::string& name, Tensor t) {
    t.set_requires_grad(true);
    arrays_[name] = t;
    trainable_.push_back(name);
  }

  std::vector<LayerSpec>& layers_;
  std::map<std::string, Tensor>& arrays_;
  std::vector<std::string>& trainable_;
  std::mt19937_64 rng_;
};

}  // namespace detail

inline ModelGraph build_model(Architecture architecture, std::size_t num_classes,
                              std::uint64_t seed) {
  if (num_classes != 5 && num_classes != 8) {
    throw ConfigError("num_classes must be one of {5, 8}, got " +
                      std::to_string(num_classes));
  }
  ModelGraph m;
  m.architecture_ = architecture;
  m.num_classes_ = num_classes;
  m.seed_ = seed;
  detail::ModelBuilder b(m.layers_, m.arrays_, m.trainable_, seed);

  b.plain("Input Layer", "input");
  b.normalization();
  std::size_t channels = kWindowChannels;
  for (const char* block : {"b1", "b2"}) {
    const std::string p = block;
    b.conv(p + ".conv1", 3, 1, channels);
    b.batchnorm(p + ".bn1", 3);
    b.plain("Activation (swish)", "activation");
    b.conv(p + ".conv2", 6, 2, 3);
    b.batchnorm(p + ".bn2", 6);
    b.plain("Activation (swish)", "activation");
    b.conv(p + ".conv3", 5, 2, 6);
    b.batchnorm(p + ".bn3", 5);
    b.conv(p + ".conv4", 9, 4, 6);
    b.batchnorm(p + ".bn4", 9);
    b.plain("Activation (swish)", "activation");
    b.plain("MaxPooling2D(2x2)", "maxpool");
    b.plain("Concatenate", "concat");
    channels = 14;
  }
  b.plain("Dropout(0.5)", "dropout");
  b.conv("head.conv", 6, 1, 14);
  b.batchnorm("head.bn", 6);
  b.plain("Activation (swish)", "activation");
  if (architecture == Architecture::kIbis) {
    b.plain("Reshape", "reshape");
    b.bilstm(6, kLstmUnits);
    b.plain("Activation (tanh)", "activation");
    b.attention(2 * kLstmUnits);
    b.plain("GlobalAvgPooling1D (RNN)", "gap1d");
    b.plain("GlobalAvgPooling1D (Attention)", "gap1d");
    b.plain("Concatenate", "concat");
    b.plain("Dropout(0.5)", "dropout");
    b.dense(4 * kLstmUnits, num_classes);
  } else {
    b.plain("GlobalAvgPooling2D", "gap2d");
    b.plain("Dropout(0.5)", "dropout");
    b.dense(6, num_classes);
  }
  return m;
}

inline ModelGraph build_ibis(std::size_t num_classes, std::uint64_t seed) {
  return build_model(Architecture::kIbis, num_classes, seed);
}

// ---------------------------------------------------------------------------

inline ForwardResult ModelGraph::forward(const Tensor& batch, Mode mode,
                                         std::mt19937_64* rng, GradTape* tape,
                                         ShapeTrace* trace) const {
  if (batch.rank() != 4 || batch.dim(1) != kWindowTime ||
      batch.dim(2) != kWindowBins || batch.dim(3) != kWindowChannels) {
    throw InputError("model input must be [B,32,32,3], got " +
                     shape_string(batch.shape()));
  }
  if (mode == Mode::kTrain && rng == nullptr) {
    throw UsageError("train-mode forward needs a random generator for dropout");
  }
  const std::size_t n = batch.dim(0);
  auto record = [&](std::initializer_list<Tensor> outs) {
    if (trace == nullptr) return;
    std::vector<Shape> shapes;
    for (const Tensor& t : outs) {
      shapes.emplace_back(t.shape().begin() + 1, t.shape().end());
    }
    trace->rows.push_back(std::move(shapes));
  };
  auto p = [&](const std::string& name) -> const Tensor& { return array(name); };
  const BatchNormOptions bn_options{mode, kBatchNormMomentum, kBatchNormEpsilon};
  auto conv_bn = [&](const Tensor& x, const std::string& conv,
                     const std::string& bn) {
    Tensor c = conv2d(x, p(conv + ".w"), p(conv + ".b"), 1, tape);
    record({c});
    Tensor running_mean = p(bn + ".mean"), running_var = p(bn + ".var");
    Tensor y = batchnorm(c, p(bn + ".gamma"), p(bn + ".beta"), running_mean,
                         running_var, bn_options, tape);
    record({y});
    return y;
  };
  auto swish = [&](const Tensor& x) {
    return activation(x, ActivationKind::kSwish, tape);
  };
  // Dropout draws nothing in inference mode, so the generator is optional.
  std::mt19937_64 unused_rng(0);
  std::mt19937_64& drop_rng = rng != nullptr ? *rng : unused_rng;

  record({batch});
  // Frozen input normalization, not differentiated.
  std::vector<double> normalized(batch.data().begin(), batch.data().end());
  {
    const auto mean = p("norm.mean").data();
    const auto var = p("norm.var").data();
    double inv[kWindowChannels];
    for (std::size_t c = 0; c < kWindowChannels; ++c) {
      inv[c] = 1.0 / std::sqrt(std::max(var[c], kNormalizationVarianceFloor));
    }
    for (std::size_t i = 0; i < normalized.size(); ++i) {
      const std::size_t c = i % kWindowChannels;
      normalized[i] = (normalized[i] - mean[c]) * inv[c];
    }
  }
  Tensor x(batch.shape(), std::move(normalized));
  record({x});

  for (const char* block : {"b1", "b2"}) {
    const std::string b = block;
    Tensor y = conv_bn(x, b + ".conv1", b + ".bn1");
    y = swish(y);
    record({y});
    Tensor stem = conv_bn(y, b + ".conv2", b + ".bn2");
    stem = swish(stem);
    record({stem});
    Tensor branch_a = conv_bn(stem, b + ".conv3", b + ".bn3");
    Tensor branch_b = conv_bn(stem, b + ".conv4", b + ".bn4");
    branch_a = swish(branch_a);
    branch_b = swish(branch_b);
    record({branch_a, branch_b});
    Tensor pool_a = maxpool2d(branch_a, tape);
    Tensor pool_b = maxpool2d(branch_b, tape);
    pool_b = pad_spatial(pool_b, pool_a.dim(1), pool_a.dim(2), tape);
    record({pool_a, pool_b});
    x = concat({pool_a, pool_b}, 3, tape);
    record({x});
  }
  x = dropout(x, kDropoutRate, mode, drop_rng, tape);
  record({x});
  x = conv_bn(x, "head.conv", "head.bn");
  x = swish(x);
  record({x});

  ForwardResult result;
  if (architecture_ == Architecture::kIbis) {
    const std::size_t steps = x.dim(1) * x.dim(2);
    Tensor seq = reshape(x, {n, steps, x.dim(3)}, tape);
    record({seq});
    LstmParams fwd{p("bilstm.fwd.wx"), p("bilstm.fwd.wh"), p("bilstm.fwd.b")};
    LstmParams bwd{p("bilstm.bwd.wx"), p("bilstm.bwd.wh"), p("bilstm.bwd.b")};
    Tensor hidden = bilstm(seq, fwd, bwd, tape);
    record({hidden});
    hidden = activation(hidden, ActivationKind::kTanh, tape);
    record({hidden});
    AttentionParams att{p("attention.w"), p("attention.b"), p("attention.u")};
    Tensor attended = additive_attention(hidden, att, tape);
    record({attended});
    Tensor pooled_rnn = global_avg_pool_1d(hidden, tape);
    record({pooled_rnn});
    Tensor pooled_att = global_avg_pool_1d(attended, tape);
    record({pooled_att});
    result.features = concat({pooled_rnn, pooled_att}, 1, tape);
    record({result.features});
  } else {
    result.features = global_avg_pool_2d(x, tape);
    record({result.features});
  }
  Tensor dropped = dropout(result.features, kDropoutRate, mode, drop_rng, tape);
  record({dropped});
  result.logits = dense(dropped, p("dense.w"), p("dense.b"), tape);
  record({result.logits});
  return result;
}

// ---------------------------------------------------------------------------
// Batching helpers.

inline void check_window(const DopplerWindow& w) {
  if (w.values.size() != kWindowVolume) {
    throw InputError("window must hold 32x32x3 values, got " +
                     std::to_string(w.values.size()));
  }
}

inline Tensor windows_to_tensor(std::span<const DopplerWindow* const> windows) {
  std::vector<double> data;
  data.reserve(windows.size() * kWindowVolume);
  for (const DopplerWindow* w : windows) {
    check_window(*w);
    data.insert(data.end(), w->values.begin(), w->values.end());
  }
  return Tensor({windows.size(), kWindowTime, kWindowBins, kWindowChannels},
                std::move(data));
}

inline std::vector<const DopplerWindow*> pointers(
    std::span<const DopplerWindow> windows) {
  std::vector<const DopplerWindow*> out;
  out.reserve(windows.size());
  for (const auto& w : windows) out.push_back(&w);
  return out;
}

// Per-channel statistics over the training windows only; frozen afterwards.
inline void adapt_normalization(ModelGraph& model,
                                std::span<const DopplerWindow> training) {
  if (training.empty()) {
    throw InputError("normalization needs a non-empty training set");
  }
  if (training.size() < 2) {
    throw InputError("normalization needs at least 2 training windows");
  }
  double sum[kWindowChannels] = {}, sq[kWindowChannels] = {};
  std::size_t count = 0;
  for (const auto& w : training) {
    check_window(w);
    for (std::size_t i = 0; i < kWindowVolume; ++i) {
      sum[i % kWindowChannels] += w.values[i];
    }
    count += kWindowVolume / kWindowChannels;
  }
  double mean[kWindowChannels];
  for (std::size_t c = 0; c < kWindowChannels; ++c) mean[c] = sum[c] / count;
  for (const auto& w : training) {
    for (std::size_t i = 0; i < kWindowVolume; ++i) {
      const double d = w.values[i] - mean[i % kWindowChannels];
      sq[i % kWindowChannels] += d * d;
    }
  }
  auto& arrays = model.mutable_arrays();
  auto m = arrays.at("norm.mean").data();
  auto v = arrays.at("norm.var").data();
  for (std::size_t c = 0; c < kWindowChannels; ++c) {
    m[c] = mean[c];
    v[c] = sq[c] / count;
  }
  model.set_adapted(true);
}

// ---------------------------------------------------------------------------
// Training.

struct TrainConfig {
  std::size_t epochs = 100;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  SplitRatios ratios;

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs must be at least 1");
    if (batch_size < 1) throw ConfigError("batch size must be at least 1");
    if (!(learning_rate > 0)) throw ConfigError("learning rate must be positive");
    const double total = ratios.train + ratios.validation + ratios.test;
    if (std::fabs(total - 1.0) > 1e-9) {
      throw ConfigError("split ratios must sum to 1");
    }
  }
};

struct EpochRecord {
  std::size_t epoch = 0;
  double seconds = 0;
  double train_loss = 0;
  double train_accuracy = 0;      // running accuracy of train-mode passes
  double validation_accuracy = 0; // NaN when there is no validation set
};

struct TrainingLog {
  std::vector<EpochRecord> epochs;
};

struct Prediction {
  std::size_t label = 0;
  std::vector<double> probabilities;
};

inline std::vector<Prediction> predict(const ModelGraph& model,
                                       std::span<const DopplerWindow> windows,
                                       std::size_t chunk = 64);

inline double accuracy_of(const ModelGraph& model,
                          std::span<const DopplerWindow> windows) {
  if (windows.empty()) return std::nan("");
  const auto preds = predict(model, windows);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < windows.size(); ++i) {
    hits += preds[i].label == windows[i].label;
  }
  return static_cast<double>(hits) / static_cast<double>(windows.size());
}

// Runs exactly config.epochs epochs (no early stopping). Batches are
// reshuffled every epoch from config.seed; the last batch may be short.
inline TrainingLog train(ModelGraph& model, std::span<const DopplerWindow> training,
                         std::span<const DopplerWindow> validation,
                         const TrainConfig& config) {
  config.validate();
  if (training.empty()) throw InputError("empty training set");
  if (config.batch_size > training.size()) {
    throw ConfigError("batch size " + std::to_string(config.batch_size) +
                      " exceeds training set size " +
                      std::to_string(training.size()));
  }
  for (const auto& w : training) {
    if (w.label >= model.num_classes()) {
      throw InputError("training label outside the model's class range");
    }
  }
  if (!model.normalization_adapted()) adapt_normalization(model, training);

  std::vector<Tensor> params = model.parameters();
  AdamState adam(AdamConfig{config.learning_rate, 0.9, 0.999, 1e-8});
  std::mt19937_64 rng(config.seed);
  std::vector<std::size_t> order(training.size());
  std::iota(order.begin(), order.end(), 0);

  TrainingLog log;
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), rng);
    double loss_sum = 0;
    std::size_t hits = 0;
    for (std::size_t begin = 0; begin < order.size();
         begin += config.batch_size) {
      const std::size_t end = std::min(order.size(), begin + config.batch_size);
      std::vector<const DopplerWindow*> batch;
      std::vector<std::size_t> labels;
      for (std::size_t i = begin; i < end; ++i) {
        batch.push_back(&training[order[i]]);
        labels.push_back(training[order[i]].label);
      }
      for (Tensor& p : params) p.zero_grad();
      GradTape tape;
      ForwardResult out =
          model.forward(windows_to_tensor(batch), Mode::kTrain, &rng, &tape);
      Tensor loss = cross_entropy(out.logits, labels, &tape);
      backward(loss, tape);
      adam.update(params);

      loss_sum += loss.item() * static_cast<double>(labels.size());
      const std::size_t k = model.num_classes();
      for (std::size_t r = 0; r < labels.size(); ++r) {
        const auto row = out.logits.data().subspan(r * k, k);
        const auto best =
            static_cast<std::size_t>(std::max_element(row.begin(), row.end()) -
                                     row.begin());
        hits += best == labels[r];
      }
    }
    EpochRecord rec;
    rec.epoch = epoch + 1;
    rec.train_loss = loss_sum / static_cast<double>(training.size());
    rec.train_accuracy =
        static_cast<double>(hits) / static_cast<double>(training.size());
    rec.validation_accuracy = accuracy_of(model, validation);
    const auto stop = std::chrono::steady_clock::now();
    rec.seconds = std::max(std::chrono::duration<double>(stop - start).count(),
                           1e-9);
    log.epochs.push_back(rec);
  }
  return log;
}

// ---------------------------------------------------------------------------
// Inference.

inline std::vector<Prediction> predict(const ModelGraph& model,
                                       std::span<const DopplerWindow> windows,
                                       std::size_t chunk) {
  std::vector<Prediction> out;
  out.reserve(windows.size());
  const auto ptrs = pointers(windows);
  for (std::size_t begin = 0; begin < ptrs.size(); begin += chunk) {
    const std::size_t end = std::min(ptrs.size(), begin + chunk);
    std::span<const DopplerWindow* const> part(ptrs.data() + begin, end - begin);
    ForwardResult res = model.forward(windows_to_tensor(part), Mode::kInfer, nullptr);
    Tensor probs = softmax(res.logits);
    const std::size_t k = model.num_classes();
    for (std::size_t r = 0; r < part.size(); ++r) {
      Prediction p;
      p.probabilities.assign(probs.data().begin() + r * k,
                             probs.data().begin() + (r + 1) * k);
      p.label = static_cast<std::size_t>(
          std::max_element(p.probabilities.begin(), p.probabilities.end()) -
          p.probabilities.begin());
      out.push_back(std::move(p));
    }
  }
  return out;
}

// Penultimate representation (input of the final dropout + dense).
inline std::vector<std::vector<double>> extract_features(
    const ModelGraph& model, std::span<const DopplerWindow> windows,
    std::size_t chunk = 64) {
  std::vector<std::vector<double>> out;
  out.reserve(windows.size());
  const auto ptrs = pointers(windows);
  const std::size_t d = model.feature_dim();
  for (std::size_t begin = 0; begin < ptrs.size(); begin += chunk) {
    const std::size_t end = std::min(ptrs.size(), begin + chunk);
    std::span<const DopplerWindow* const> part(ptrs.data() + begin, end - begin);
    ForwardResult res = model.forward(windows_to_tensor(part), Mode::kInfer, nullptr);
    for (std::size_t r = 0; r < part.size(); ++r) {
      out.emplace_back(res.features.data().begin() + r * d,
                       res.features.data().begin() + (r + 1) * d);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer-table conformance.

struct ReferenceRow {
  const char* name;
  std::vector<Shape> shapes;
  std::optional<std::size_t> parameters;
};

// The published 5-class layer table, row for row.
inline const std::vector<ReferenceRow>& reference_layer_table() {
  static const std::vector<ReferenceRow> rows = [] {
    std::vector<ReferenceRow> r;
    r.push_back({"Input Layer", {{32, 32, 3}}, std::nullopt});
    r.push_back({"Normalization", {{32, 32, 3}}, std::nullopt});
    auto block = [&](Shape stem_in, Shape s1, Shape s2, Shape a, Shape b,
                     Shape pooled, Shape cat, std::size_t first_conv_params,
                     std::size_t cin) {
      (void)stem_in;
      r.push_back({cin == 3 ? "Conv2D(3x1x3)" : "Conv2D(3x1x14)", {s1},
                   first_conv_params});
      r.push_back({"BatchNormalization", {s1}, 12});
      r.push_back({"Activation (swish)", {s1}, std::nullopt});
      r.push_back({"Conv2D(6x2x3)", {s2}, 78});
      r.push_back({"BatchNormalization", {s2}, 24});
      r.push_back({"Activation (swish)", {s2}, std::nullopt});
      r.push_back({"Conv2D(5x2x6)", {a}, 125});
      r.push_back({"BatchNormalization", {a}, 20});
      r.push_back({"Conv2D(9x4x6)", {b}, 873});
      r.push_back({"BatchNormalization", {b}, 36});
      r.push_back({"Activation (swish)", {a, b}, std::nullopt});
      r.push_back({"MaxPooling2D(2x2)", {pooled}, std::nullopt});
      r.push_back({"Concatenate", {cat}, std::nullopt});
    };
    block({32, 32, 3}, {32, 32, 3}, {31, 31, 6}, {30, 30, 5}, {28, 28, 9},
          {15, 15, 5}, {15, 15, 14}, 3, 3);
    block({15, 15, 14}, {15, 15, 3}, {14, 14, 6}, {13, 13, 5}, {11, 11, 9},
          {6, 6, 5}, {6, 6, 14}, 45, 14);
    r.push_back({"Dropout(0.5)", {{6, 6, 14}}, std::nullopt});
    r.push_back({"Conv2D(6x1x14)", {{6, 6, 6}}, 84});
    r.push_back({"BatchNormalization", {{6, 6, 6}}, 24});
    r.push_back({"Activation (swish)", {{6, 6, 6}}, std::nullopt});
    r.push_back({"Reshape", {{36, 6}}, std::nullopt});
    r.push_back({"Bidirectional LSTM (64 units)", {{36, 128}}, 45568});
    r.push_back({"Activation (tanh)", {{36, 128}}, std::nullopt});
    r.push_back({"Attention", {{36, 128}}, 16640});
    r.push_back({"GlobalAvgPooling1D (RNN)", {{128}}, std::nullopt});
    r.push_back({"GlobalAvgPooling1D (Attention)", {{128}}, std::nullopt});
    r.push_back({"Concatenate", {{256}}, std::nullopt});
    r.push_back({"Dropout(0.5)", {{256}}, std::nullopt});
    r.push_back({"Dense (5 classes)", {{5}}, 1285});
    return r;
  }();
  return rows;
}

// Rows whose published count disagrees with the stored arrays for a known
// reason: the two 1x1 convs are printed without (or with a miscounted) bias,
// and the BiLSTM count implies a 24-feature input instead of the printed 6.
inline bool is_documented_divergence(std::size_t row) {
  return row == 2 || row == 29 || row == 33;
}

enum class CountStatus { kNoParameters, kMatch, kDocumentedDivergence, kMismatch };

inline const char* count_status_name(CountStatus s) {
  switch (s) {
    case CountStatus::kNoParameters: return "-";
    case CountStatus::kMatch: return "match";
    case CountStatus::kDocumentedDivergence: return "divergent (documented)";
    case CountStatus::kMismatch: return "MISMATCH";
  }
  return "?";
}

struct ReportRow {
  std::string name;
  std::vector<Shape> shapes;
  std::size_t parameters = 0;  // summed from stored arrays
  bool has_parameters = false;
  // Filled only when the model is comparable to the reference table.
  std::optional<std::vector<Shape>> reference_shapes;
  std::optional<std::size_t> reference_parameters;
  bool shape_match = true;
  CountStatus count_status = CountStatus::kNoParameters;
};

struct ParameterReport {
  std::vector<ReportRow> rows;
  std::size_t total_parameters = 0;
  std::size_t trainable_parameters = 0;
  bool compared = false;
  std::size_t shape_rows_matched = 0;
  std::size_t distinct_shapes_matched = 0;
  std::size_t distinct_reference_shapes = 0;
  std::size_t documented_divergences = 0;
  std::size_t mismatches = 0;

  bool conforms() const {
    return compared && shape_rows_matched == rows.size() && mismatches == 0;
  }
};

inline ShapeTrace trace_shapes(const ModelGraph& model) {
  ShapeTrace trace;
  Tensor probe = Tensor::zeros({1, kWindowTime, kWindowBins, kWindowChannels});
  model.forward(probe, Mode::kInfer, nullptr, nullptr, &trace);
  return trace;
}

// Counts come from the stored arrays. The IBIS 5-class model is compared row
// by row with the reference table.
inline ParameterReport parameter_report(const ModelGraph& model) {
  ParameterReport report;
  const ShapeTrace trace = trace_shapes(model);
  if (trace.rows.size() != model.layers().size()) {
    throw UsageError("shape trace does not align with the layer table");
  }
  for (std::size_t i = 0; i < model.layers().size(); ++i) {
    const LayerSpec& layer = model.layers()[i];
    ReportRow row;
    row.name = layer.name;
    row.shapes = trace.rows[i];
    for (const auto& name : layer.arrays) {
      if (layer.kind == "normalization") continue;  // statistics, not weights
      row.parameters += model.array(name).size();
      row.has_parameters = true;
    }
    report.total_parameters += row.parameters;
    report.rows.push_back(std::move(row));
  }
  for (const Tensor& p : model.parameters()) report.trainable_parameters += p.size();

  const auto& ref = reference_layer_table();
  report.compared = model.architecture() == Architecture::kIbis &&
                    model.num_classes() == 5 && ref.size() == report.rows.size();
  if (!report.compared) return report;

  std::vector<Shape> distinct_ref, distinct_hit;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    ReportRow& row = report.rows[i];
    row.reference_shapes = ref[i].shapes;
    row.reference_parameters = ref[i].parameters;
    row.shape_match = true;
    for (const Shape& s : ref[i].shapes) {
      const bool found =
          std::find(row.shapes.begin(), row.shapes.end(), s) != row.shapes.end();
      row.shape_match = row.shape_match && found;
      if (std::find(distinct_ref.begin(), distinct_ref.end(), s) ==
          distinct_ref.end()) {
        distinct_ref.push_back(s);
      }
      if (found && std::find(distinct_hit.begin(), distinct_hit.end(), s) ==
                       distinct_hit.end()) {
        distinct_hit.push_back(s);
      }
    }
    report.shape_rows_matched += row.shape_match;
    if (!ref[i].parameters.has_value() && !row.has_parameters) {
      row.count_status = CountStatus::kNoParameters;
    } else if (ref[i].parameters.has_value() &&
               *ref[i].parameters == row.parameters) {
      row.count_status = CountStatus::kMatch;
    } else if (is_documented_divergence(i)) {
      row.count_status = CountStatus::kDocumentedDivergence;
      ++report.documented_divergences;
    } else {
      row.count_status = CountStatus::kMismatch;
      ++report.mismatches;
    }
  }
  report.distinct_reference_shapes = distinct_ref.size();
  report.distinct_shapes_matched = distinct_hit.size();
  return report;
}

// ---------------------------------------------------------------------------
// Checkpoint container.
//
//   "IBCK" | u32 version | u8 architecture | u32 classes | u64 seed
//   u8 adapted
//   u32 layer count, each: name, kind, u16 array count, array names
//   u32 array count, each: name, u8 trainable, u32 rank, u64 dims..., f64 data

inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::vector<std::uint8_t> encode_checkpoint(const ModelGraph& model) {
  io::ByteWriter w;
  w.magic("IBCK");
  w.u32(kCheckpointVersion);
  w.u8(static_cast<std::uint8_t>(model.architecture()));
  w.u32(static_cast<std::uint32_t>(model.num_classes()));
  w.u64(model.seed());
  w.u8(model.normalization_adapted() ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(model.layers().size()));
  for (const auto& layer : model.layers()) {
    w.short_string(layer.name);
    w.short_string(layer.kind);
    w.u16(static_cast<std::uint16_t>(layer.arrays.size()));
    for (const auto& a : layer.arrays) w.short_string(a);
  }
  const auto& names = model.parameter_names();
  w.u32(static_cast<std::uint32_t>(model.arrays().size()));
  for (const auto& [name, t] : model.arrays()) {
    w.short_string(name);
    w.u8(std::find(names.begin(), names.end(), name) != names.end() ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (std::size_t d : t.shape()) w.u64(d);
    for (double v : t.data()) w.f64(v);
  }
  return w.buffer();
}

// Rebuilds the architecture from the stored seed and overwrites every array;
// the stored layer table must match the rebuilt one exactly.
inline ModelGraph decode_checkpoint(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic("IBCK");
  const std::uint32_t version = r.u32("version");
  if (version != kCheckpointVersion) {
    r.fail("unsupported checkpoint version " + std::to_string(version));
  }
  const std::uint8_t arch = r.u8("architecture");
  if (arch > 1) r.fail("unknown architecture code");
  const std::uint32_t classes = r.u32("class count");
  const std::uint64_t seed = r.u64("seed");
  const bool adapted = r.u8("adapted flag") != 0;
  ModelGraph model;
  try {
    model = build_model(static_cast<Architecture>(arch), classes, seed);
  } catch (const ConfigError& e) {
    r.fail(e.what());
  }
  const std::uint32_t n_layers = r.u32("layer count");
  std::vector<LayerSpec> layers(n_layers);
  for (auto& layer : layers) {
    layer.name = r.short_string("layer name");
    layer.kind = r.short_string("layer kind");
    const std::uint16_t n = r.u16("layer array count");
    for (std::uint16_t i = 0; i < n; ++i) {
      layer.arrays.push_back(r.short_string("layer array name"));
    }
  }
  if (layers != model.layers()) r.fail("layer table does not match architecture");
  const std::uint32_t n_arrays = r.u32("array count");
  if (n_arrays != model.arrays().size()) r.fail("array count mismatch");
  auto& arrays = model.mutable_arrays();
  for (std::uint32_t i = 0; i < n_arrays; ++i) {
    const std::string name = r.short_string("array name");
    r.u8("trainable flag");
    auto it = arrays.find(name);
    if (it == arrays.end()) r.fail("unknown array " + name);
    const std::uint32_t rank = r.u32("rank");
    Shape shape(rank);
    for (auto& d : shape) d = r.u64("dimension");
    if (shape != it->second.shape()) r.fail("shape mismatch for " + name);
    auto data = it->second.data();
    if (r.remaining() / 8 < data.size()) r.fail("truncated payload in " + name);
    for (double& v : data) v = r.f64("array data");
  }
  if (!r.at_end()) r.fail("trailing bytes after arrays");
  model.set_adapted(adapted);
  return model;
}

inline void save_checkpoint(const ModelGraph& model,
                            const std::filesystem::path& path) {
  io::write_file(path, encode_checkpoint(model));
}

inline ModelGraph load_checkpoint(const std::filesystem::path& path) {
  return decode_checkpoint(io::read_file(path));
}

}  // namespace ibis

#endif  // IBIS_MODEL_HPP_
