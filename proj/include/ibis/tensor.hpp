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

// Dense float64 tensors with a tape-based reverse-mode autodiff engine.
//
// Tensors are cheap handles onto shared storage. Operations take an optional
// GradTape*; when a tape is supplied and at least one input requires a
// gradient, the operation appends its backward rule to the tape and the
// output is marked as requiring a gradient. backward() replays the tape in
// reverse, accumulating into every reachable tensor's grad buffer.
//
// Layout conventions (row-major, channels last):
//   images     [B, H, W, C]  or unbatched [H, W, C]
//   sequences  [B, T, F]     or unbatched [T, F]
//   vectors    [B, F]        or unbatched [F]

#ifndef IBIS_TENSOR_HPP_
#define IBIS_TENSOR_HPP_

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <limits>
#include <memory>
#include <numeric>
#include <random>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "ibis/errors.hpp"

namespace ibis {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_volume(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

inline std::string shape_string(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ", ";
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> data, bool requires_grad = false)
      : storage_(std::make_shared<Storage>()) {
    for (std::size_t d : shape) {
      if (d == 0) throw DimensionError("tensor dimensions must be positive");
    }
    if (shape_volume(shape) != data.size()) {
      throw DimensionError("data length " + std::to_string(data.size()) +
                           " does not match shape " + shape_string(shape));
    }
    storage_->shape = std::move(shape);
    storage_->data = std::move(data);
    storage_->requires_grad = requires_grad;
  }

  static Tensor zeros(Shape shape, bool requires_grad = false) {
    const std::size_t n = shape_volume(shape);
    return Tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
  }

  static Tensor full(Shape shape, double value, bool requires_grad = false) {
    const std::size_t n = shape_volume(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value),
                  requires_grad);
  }

  static Tensor scalar(double value, bool requires_grad = false) {
    return Tensor({1}, {value}, requires_grad);
  }

  bool defined() const { return storage_ != nullptr; }
  const Shape& shape() const { return storage_->shape; }
  std::size_t rank() const { return storage_->shape.size(); }
  std::size_t dim(std::size_t axis) const { return storage_->shape.at(axis); }
  std::size_t size() const { return storage_->data.size(); }

  std::span<double> data() { return storage_->data; }
  std::span<const double> data() const { return storage_->data; }
  double operator[](std::size_t i) const { return storage_->data[i]; }
  double item() const {
    if (size() != 1) throw UsageError("item() on a non-scalar tensor");
    return storage_->data[0];
  }

  bool requires_grad() const { return storage_->requires_grad; }
  void set_requires_grad(bool value) const { storage_->requires_grad = value; }

  bool has_grad() const { return !storage_->grad.empty(); }
  std::span<const double> grad() const { return storage_->grad; }
  // Gradient buffers belong to the shared storage, so handles (including
  // const ones captured by backward rules) may write them. Allocates a zero
  // buffer on first use.
  std::span<double> mutable_grad() const {
    if (storage_->grad.empty()) storage_->grad.assign(size(), 0.0);
    return storage_->grad;
  }
  void zero_grad() const {
    if (!storage_->grad.empty()) {
      std::fill(storage_->grad.begin(), storage_->grad.end(), 0.0);
    }
  }

  // Deep copy of shape and data; the copy neither shares storage nor carries
  // a gradient.
  Tensor clone() const { return Tensor(shape(), storage_->data, false); }

  bool same_storage(const Tensor& other) const {
    return storage_ == other.storage_;
  }

 private:
  struct Storage {
    Shape shape;
    std::vector<double> data;
    std::vector<double> grad;
    bool requires_grad = false;
  };
  std::shared_ptr<Storage> storage_;
};

// Ordered record of backward rules. Confined to one thread.
class GradTape {
 public:
  void record(std::function<void()> backward_rule) {
    entries_.push_back(std::move(backward_rule));
  }
  std::size_t size() const { return entries_.size(); }
  bool empty() const { return entries_.empty(); }
  void clear() { entries_.clear(); }

  // Runs recorded rules newest-first and clears the tape.
  void replay_reverse() {
    for (auto it = entries_.rbegin(); it != entries_.rend(); ++it) (*it)();
    entries_.clear();
  }

 private:
  std::vector<std::function<void()>> entries_;
};

// Seeds d(loss)/d(loss) = 1 and propagates through the tape. Gradients
// accumulate into existing buffers; callers zero parameter grads between
// steps.
inline void backward(Tensor& loss, GradTape& tape) {
  if (loss.size() != 1) {
    throw UsageError("backward() requires a scalar loss, got shape " +
                     shape_string(loss.shape()));
  }
  loss.mutable_grad()[0] += 1.0;
  tape.replay_reverse();
}

enum class Mode { kTrain, kInfer };

enum class ActivationKind { kSwish, kTanh, kSigmoid };

namespace detail {

inline bool tracking(GradTape* tape, std::initializer_list<const Tensor*> in) {
  if (tape == nullptr) return false;
  for (const Tensor* t : in) {
    if (t != nullptr && t->defined() && t->requires_grad()) return true;
  }
  return false;
}

inline double sigmoid(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// Splits a channels-last image tensor into (batch, H, W, C).
struct ImageDims {
  std::size_t batch, height, width, channels;
  bool batched;
};

inline ImageDims image_dims(const Tensor& t, const char* op) {
  if (t.rank() == 3) return {1, t.dim(0), t.dim(1), t.dim(2), false};
  if (t.rank() == 4) return {t.dim(0), t.dim(1), t.dim(2), t.dim(3), true};
  throw DimensionError(std::string(op) + " expects [H,W,C] or [B,H,W,C], got " +
                       shape_string(t.shape()));
}

inline Shape image_shape(const ImageDims& d, std::size_t h, std::size_t w,
                         std::size_t c) {
  if (d.batched) return {d.batch, h, w, c};
  return {h, w, c};
}

struct SeqDims {
  std::size_t batch, steps, features;
  bool batched;
};

inline SeqDims seq_dims(const Tensor& t, const char* op) {
  if (t.rank() == 2) return {1, t.dim(0), t.dim(1), false};
  if (t.rank() == 3) return {t.dim(0), t.dim(1), t.dim(2), true};
  throw DimensionError(std::string(op) + " expects [T,F] or [B,T,F], got " +
                       shape_string(t.shape()));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise helpers used by tests and the loss plumbing.

inline Tensor add(const Tensor& a, const Tensor& b, GradTape* tape = nullptr) {
  if (a.shape() != b.shape()) {
    throw DimensionError("add: shapes " + shape_string(a.shape()) + " and " +
                         shape_string(b.shape()) + " differ");
  }
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a[i] + b[i];
  Tensor result(a.shape(), std::move(out));
  if (detail::tracking(tape, {&a, &b})) {
    result.set_requires_grad(true);
    tape->record([a, b, result]() mutable {
      if (!result.has_grad()) return;
      auto g = result.grad();
      if (a.requires_grad()) {
        auto ga = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (b.requires_grad()) {
        auto gb = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
      }
    });
  }
  return result;
}

inline Tensor sum(const Tensor& x, GradTape* tape = nullptr) {
  double total = 0;
  for (double v : x.data()) total += v;
  Tensor result = Tensor::scalar(total);
  if (detail::tracking(tape, {&x})) {
    result.set_requires_grad(true);
    tape->record([x, result]() mutable {
      if (!result.has_grad()) return;
      const double g = result.grad()[0];
      for (double& gx : x.mutable_grad()) gx += g;
    });
  }
  return result;
}

// Sum of x weighted elementwise by a constant tensor; the usual projection
// for turning a tensor-valued op into a scalar for gradient checks.
inline Tensor weighted_sum(const Tensor& x, const Tensor& weights,
                           GradTape* tape = nullptr) {
  if (x.size() != weights.size()) {
    throw DimensionError("weighted_sum: size mismatch");
  }
  double total = 0;
  for (std::size_t i = 0; i < x.size(); ++i) total += x[i] * weights[i];
  Tensor result = Tensor::scalar(total);
  if (detail::tracking(tape, {&x})) {
    result.set_requires_grad(true);
    tape->record([x, weights, result]() mutable {
      if (!result.has_grad()) return;
      const double g = result.grad()[0];
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += g * weights[i];
    });
  }
  return result;
}

inline Tensor reshape(const Tensor& x, Shape shape, GradTape* tape = nullptr) {
  if (shape_volume(shape) != x.size()) {
    throw DimensionError("reshape: cannot view " + shape_string(x.shape()) +
                         " as " + shape_string(shape));
  }
  Tensor result(std::move(shape), {x.data().begin(), x.data().end()});
  if (detail::tracking(tape, {&x})) {
    result.set_requires_grad(true);
    tape->record([x, result]() mutable {
      if (!result.has_grad()) return;
      auto g = result.grad();
      auto gx = x.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Convolution: valid padding, square kernel, weights laid out [k,k,Cin,Cout].

inline Tensor conv2d(const Tensor& input, const Tensor& weights,
                     const Tensor& bias, std::size_t stride,
                     GradTape* tape = nullptr) {
  const auto in = detail::image_dims(input, "conv2d");
  if (weights.rank() != 4 || weights.dim(0) != weights.dim(1)) {
    throw DimensionError("conv2d: weights must be [k,k,Cin,Cout], got " +
                         shape_string(weights.shape()));
  }
  const std::size_t k = weights.dim(0);
  const std::size_t cin = weights.dim(2);
  const std::size_t cout = weights.dim(3);
  if (cin != in.channels) {
    throw DimensionError("conv2d: input has " + std::to_string(in.channels) +
                         " channels but weights expect " +
                         std::to_string(cin));
  }
  if (bias.defined() && bias.size() != cout) {
    throw DimensionError("conv2d: bias length must equal Cout");
  }
  if (stride == 0) throw ConfigError("conv2d: stride must be positive");
  if (in.height < k || in.width < k) {
    throw DimensionError("conv2d: input " + shape_string(input.shape()) +
                         " smaller than kernel " + std::to_string(k));
  }
  const std::size_t oh = (in.height - k) / stride + 1;
  const std::size_t ow = (in.width - k) / stride + 1;

  std::vector<double> out(in.batch * oh * ow * cout, 0.0);
  const double* x = input.data().data();
  const double* w = weights.data().data();
  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        double* o = &out[((b * oh + oy) * ow + ox) * cout];
        if (bias.defined()) {
          for (std::size_t co = 0; co < cout; ++co) o[co] = bias[co];
        }
        for (std::size_t ky = 0; ky < k; ++ky) {
          const std::size_t iy = oy * stride + ky;
          for (std::size_t kx = 0; kx < k; ++kx) {
            const std::size_t ix = ox * stride + kx;
            const double* xi =
                &x[((b * in.height + iy) * in.width + ix) * in.channels];
            const double* wk = &w[(ky * k + kx) * cin * cout];
            for (std::size_t ci = 0; ci < cin; ++ci) {
              const double xv = xi[ci];
              const double* wc = wk + ci * cout;
              for (std::size_t co = 0; co < cout; ++co) o[co] += xv * wc[co];
            }
          }
        }
      }
    }
  }

  Tensor result(detail::image_shape(in, oh, ow, cout), std::move(out));
  if (detail::tracking(tape, {&input, &weights, &bias})) {
    result.set_requires_grad(true);
    tape->record([input, weights, bias, result, in, k, stride, oh, ow, cin,
                  cout]() mutable {
      if (!result.has_grad()) return;
      const double* g = result.grad().data();
      const double* x = input.data().data();
      const double* w = weights.data().data();
      double* gx = input.requires_grad() ? input.mutable_grad().data() : nullptr;
      double* gw =
          weights.requires_grad() ? weights.mutable_grad().data() : nullptr;
      if (bias.defined() && bias.requires_grad()) {
        auto gb = bias.mutable_grad();
        for (std::size_t p = 0; p < in.batch * oh * ow; ++p) {
          for (std::size_t co = 0; co < cout; ++co) gb[co] += g[p * cout + co];
        }
      }
      if (gx == nullptr && gw == nullptr) return;
      for (std::size_t b = 0; b < in.batch; ++b) {
        for (std::size_t oy = 0; oy < oh; ++oy) {
          for (std::size_t ox = 0; ox < ow; ++ox) {
            const double* go = &g[((b * oh + oy) * ow + ox) * cout];
            for (std::size_t ky = 0; ky < k; ++ky) {
              const std::size_t iy = oy * stride + ky;
              for (std::size_t kx = 0; kx < k; ++kx) {
                const std::size_t ix = ox * stride + kx;
                const std::size_t xoff =
                    ((b * in.height + iy) * in.width + ix) * in.channels;
                const std::size_t woff = (ky * k + kx) * cin * cout;
                for (std::size_t ci = 0; ci < cin; ++ci) {
                  const double* wc = &w[woff + ci * cout];
                  if (gx != nullptr) {
                    double acc = 0;
                    for (std::size_t co = 0; co < cout; ++co) {
                      acc += go[co] * wc[co];
                    }
                    gx[xoff + ci] += acc;
                  }
                  if (gw != nullptr) {
                    const double xv = x[xoff + ci];
                    double* gwc = &gw[woff + ci * cout];
                    for (std::size_t co = 0; co < cout; ++co) {
                      gwc[co] += xv * go[co];
                    }
                  }
                }
              }
            }
          }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Batch normalization over every axis but the last.

struct BatchNormOptions {
  Mode mode = Mode::kTrain;
  double momentum = 0.99;
  double epsilon = 1e-3;
};

// In train mode, normalizes with biased batch statistics and folds them into
// the running estimates as running = momentum*running + (1-momentum)*batch.
inline Tensor batchnorm(const Tensor& input, const Tensor& gamma,
                        const Tensor& beta, Tensor& running_mean,
                        Tensor& running_var, const BatchNormOptions& options,
                        GradTape* tape = nullptr) {
  if (!(options.epsilon > 0)) {
    throw ConfigError("batchnorm: epsilon must be positive");
  }
  if (input.rank() < 1) throw DimensionError("batchnorm: empty shape");
  const std::size_t channels = input.shape().back();
  if (gamma.size() != channels || beta.size() != channels ||
      running_mean.size() != channels || running_var.size() != channels) {
    throw DimensionError("batchnorm: parameter length must equal channel dim " +
                         std::to_string(channels));
  }
  const std::size_t rows = input.size() / channels;
  const double* x = input.data().data();

  std::vector<double> mean(channels, 0.0), var(channels, 0.0);
  if (options.mode == Mode::kTrain) {
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < channels; ++c) mean[c] += x[r * channels + c];
    }
    for (double& m : mean) m /= static_cast<double>(rows);
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < channels; ++c) {
        const double d = x[r * channels + c] - mean[c];
        var[c] += d * d;
      }
    }
    for (double& v : var) v /= static_cast<double>(rows);
    auto rm = running_mean.data();
    auto rv = running_var.data();
    for (std::size_t c = 0; c < channels; ++c) {
      rm[c] = options.momentum * rm[c] + (1 - options.momentum) * mean[c];
      rv[c] = options.momentum * rv[c] + (1 - options.momentum) * var[c];
    }
  } else {
    std::copy(running_mean.data().begin(), running_mean.data().end(),
              mean.begin());
    std::copy(running_var.data().begin(), running_var.data().end(),
              var.begin());
  }

  std::vector<double> inv_std(channels);
  for (std::size_t c = 0; c < channels; ++c) {
    inv_std[c] = 1.0 / std::sqrt(var[c] + options.epsilon);
  }
  std::vector<double> normalized(input.size());
  std::vector<double> out(input.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < channels; ++c) {
      const std::size_t i = r * channels + c;
      normalized[i] = (x[i] - mean[c]) * inv_std[c];
      out[i] = gamma[c] * normalized[i] + beta[c];
    }
  }

  Tensor result(input.shape(), std::move(out));
  if (detail::tracking(tape, {&input, &gamma, &beta})) {
    result.set_requires_grad(true);
    const bool batch_stats = options.mode == Mode::kTrain;
    tape->record([input, gamma, beta, result, normalized = std::move(normalized),
                  inv_std = std::move(inv_std), rows, channels,
                  batch_stats]() mutable {
      if (!result.has_grad()) return;
      const double* g = result.grad().data();
      std::vector<double> sum_g(channels, 0.0), sum_gn(channels, 0.0);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t i = r * channels + c;
          sum_g[c] += g[i];
          sum_gn[c] += g[i] * normalized[i];
        }
      }
      if (gamma.requires_grad()) {
        auto gg = gamma.mutable_grad();
        for (std::size_t c = 0; c < channels; ++c) gg[c] += sum_gn[c];
      }
      if (beta.requires_grad()) {
        auto gb = beta.mutable_grad();
        for (std::size_t c = 0; c < channels; ++c) gb[c] += sum_g[c];
      }
      if (!input.requires_grad()) return;
      auto gx = input.mutable_grad();
      const double n = static_cast<double>(rows);
      for (std::size_t r = 0; r < rows; ++r) {
        for (std::size_t c = 0; c < channels; ++c) {
          const std::size_t i = r * channels + c;
          if (batch_stats) {
            gx[i] += gamma[c] * inv_std[c] *
                     (g[i] - sum_g[c] / n - normalized[i] * sum_gn[c] / n);
          } else {
            gx[i] += gamma[c] * inv_std[c] * g[i];
          }
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------

inline Tensor activation(const Tensor& input, ActivationKind kind,
                         GradTape* tape = nullptr) {
  std::vector<double> out(input.size());
  const auto x = input.data();
  switch (kind) {
    case ActivationKind::kSwish:
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = x[i] * detail::sigmoid(x[i]);
      }
      break;
    case ActivationKind::kTanh:
      for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(x[i]);
      break;
    case ActivationKind::kSigmoid:
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = detail::sigmoid(x[i]);
      }
      break;
  }
  Tensor result(input.shape(), std::move(out));
  if (detail::tracking(tape, {&input})) {
    result.set_requires_grad(true);
    tape->record([input, result, kind]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      const auto x = input.data();
      const auto y = result.data();
      auto gx = input.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) {
        double d = 0;
        switch (kind) {
          case ActivationKind::kSwish: {
            const double s = detail::sigmoid(x[i]);
            d = s + x[i] * s * (1 - s);
            break;
          }
          case ActivationKind::kTanh:
            d = 1 - y[i] * y[i];
            break;
          case ActivationKind::kSigmoid:
            d = y[i] * (1 - y[i]);
            break;
        }
        gx[i] += g[i] * d;
      }
    });
  }
  return result;
}

// Softmax over the last axis with max subtraction.
inline Tensor softmax(const Tensor& input, GradTape* tape = nullptr) {
  const std::size_t k = input.shape().back();
  const std::size_t rows = input.size() / k;
  std::vector<double> out(input.size());
  const auto x = input.data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = &x[r * k];
    double* yr = &out[r * k];
    const double mx = *std::max_element(xr, xr + k);
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) {
      yr[j] = std::exp(xr[j] - mx);
      z += yr[j];
    }
    for (std::size_t j = 0; j < k; ++j) yr[j] /= z;
  }
  Tensor result(input.shape(), std::move(out));
  if (detail::tracking(tape, {&input})) {
    result.set_requires_grad(true);
    tape->record([input, result, k, rows]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      const auto y = result.data();
      auto gx = input.mutable_grad();
      for (std::size_t r = 0; r < rows; ++r) {
        double dot = 0;
        for (std::size_t j = 0; j < k; ++j) dot += g[r * k + j] * y[r * k + j];
        for (std::size_t j = 0; j < k; ++j) {
          gx[r * k + j] += y[r * k + j] * (g[r * k + j] - dot);
        }
      }
    });
  }
  return result;
}

// 2x2 window, stride 2; trailing odd rows/columns are dropped. Gradient goes
// to the first maximal element in row-major window order.
inline Tensor maxpool2d(const Tensor& input, GradTape* tape = nullptr) {
  const auto in = detail::image_dims(input, "maxpool2d");
  if (in.height < 2 || in.width < 2) {
    throw DimensionError("maxpool2d: input must be at least 2x2");
  }
  const std::size_t oh = in.height / 2, ow = in.width / 2, c = in.channels;
  std::vector<double> out(in.batch * oh * ow * c);
  std::vector<std::size_t> argmax(out.size());
  const auto x = input.data();
  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::size_t oy = 0; oy < oh; ++oy) {
      for (std::size_t ox = 0; ox < ow; ++ox) {
        for (std::size_t ch = 0; ch < c; ++ch) {
          std::size_t best = 0;
          double best_value = -std::numeric_limits<double>::infinity();
          for (std::size_t dy = 0; dy < 2; ++dy) {
            for (std::size_t dx = 0; dx < 2; ++dx) {
              const std::size_t i =
                  ((b * in.height + 2 * oy + dy) * in.width + 2 * ox + dx) * c +
                  ch;
              if (x[i] > best_value) {
                best_value = x[i];
                best = i;
              }
            }
          }
          const std::size_t o = ((b * oh + oy) * ow + ox) * c + ch;
          out[o] = best_value;
          argmax[o] = best;
        }
      }
    }
  }
  Tensor result(detail::image_shape(in, oh, ow, c), std::move(out));
  if (detail::tracking(tape, {&input})) {
    result.set_requires_grad(true);
    tape->record([input, result, argmax = std::move(argmax)]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto gx = input.mutable_grad();
      for (std::size_t o = 0; o < g.size(); ++o) gx[argmax[o]] += g[o];
    });
  }
  return result;
}

// Zero-pads the trailing rows and columns of an image up to (height, width).
inline Tensor pad_spatial(const Tensor& input, std::size_t height,
                          std::size_t width, GradTape* tape = nullptr) {
  const auto in = detail::image_dims(input, "pad_spatial");
  if (height < in.height || width < in.width) {
    throw DimensionError("pad_spatial: target smaller than input");
  }
  const std::size_t c = in.channels;
  std::vector<double> out(in.batch * height * width * c, 0.0);
  const auto x = input.data();
  auto index_of = [&](std::size_t b, std::size_t y, std::size_t xx) {
    return ((b * height + y) * width + xx) * c;
  };
  for (std::size_t b = 0; b < in.batch; ++b) {
    for (std::size_t y = 0; y < in.height; ++y) {
      for (std::size_t xx = 0; xx < in.width; ++xx) {
        std::copy_n(&x[((b * in.height + y) * in.width + xx) * c], c,
                    &out[index_of(b, y, xx)]);
      }
    }
  }
  Tensor result(detail::image_shape(in, height, width, c), std::move(out));
  if (detail::tracking(tape, {&input})) {
    result.set_requires_grad(true);
    tape->record([input, result, in, height, width]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto gx = input.mutable_grad();
      const std::size_t c = in.channels;
      for (std::size_t b = 0; b < in.batch; ++b) {
        for (std::size_t y = 0; y < in.height; ++y) {
          for (std::size_t xx = 0; xx < in.width; ++xx) {
            const std::size_t src = ((b * height + y) * width + xx) * c;
            const std::size_t dst = ((b * in.height + y) * in.width + xx) * c;
            for (std::size_t ch = 0; ch < c; ++ch) gx[dst + ch] += g[src + ch];
          }
        }
      }
    });
  }
  return result;
}

inline Tensor concat(const std::vector<Tensor>& inputs, std::size_t axis,
                     GradTape* tape = nullptr) {
  if (inputs.empty()) throw DimensionError("concat: no inputs");
  const Shape& first = inputs.front().shape();
  if (axis >= first.size()) throw DimensionError("concat: axis out of range");
  Shape out_shape = first;
  out_shape[axis] = 0;
  for (const Tensor& t : inputs) {
    if (t.rank() != first.size()) {
      throw DimensionError("concat: rank mismatch");
    }
    for (std::size_t d = 0; d < first.size(); ++d) {
      if (d != axis && t.dim(d) != first[d]) {
        throw DimensionError("concat: " + shape_string(t.shape()) + " vs " +
                             shape_string(first) + " off axis " +
                             std::to_string(axis));
      }
    }
    out_shape[axis] += t.dim(axis);
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < axis; ++d) outer *= first[d];
  for (std::size_t d = axis + 1; d < first.size(); ++d) inner *= first[d];
  const std::size_t out_axis = out_shape[axis];

  std::vector<double> out(shape_volume(out_shape));
  std::size_t offset = 0;
  for (const Tensor& t : inputs) {
    const std::size_t span = t.dim(axis) * inner;
    const auto x = t.data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(&x[o * span], span, &out[o * out_axis * inner + offset]);
    }
    offset += span;
  }
  Tensor result(std::move(out_shape), std::move(out));
  bool any = false;
  for (const Tensor& t : inputs) any = any || t.requires_grad();
  if (tape != nullptr && any) {
    result.set_requires_grad(true);
    tape->record([inputs, result, axis, outer, inner, out_axis]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      std::size_t offset = 0;
      for (const Tensor& t : inputs) {
        const std::size_t span = t.dim(axis) * inner;
        if (t.requires_grad()) {
          auto gx = t.mutable_grad();
          for (std::size_t o = 0; o < outer; ++o) {
            for (std::size_t i = 0; i < span; ++i) {
              gx[o * span + i] += g[o * out_axis * inner + offset + i];
            }
          }
        }
        offset += span;
      }
    });
  }
  return result;
}

// Inverted dropout: survivors are scaled by 1/(1-rate) in train mode.
inline Tensor dropout(const Tensor& input, double rate, Mode mode,
                      std::mt19937_64& rng, GradTape* tape = nullptr) {
  if (!(rate >= 0 && rate < 1)) {
    throw ConfigError("dropout: rate must lie in [0, 1)");
  }
  if (mode == Mode::kInfer || rate == 0) {
    return reshape(input, input.shape(), tape);
  }
  std::bernoulli_distribution keep(1 - rate);
  const double scale = 1.0 / (1 - rate);
  std::vector<double> mask(input.size());
  for (double& m : mask) m = keep(rng) ? scale : 0.0;
  std::vector<double> out(input.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = input[i] * mask[i];
  Tensor result(input.shape(), std::move(out));
  if (detail::tracking(tape, {&input})) {
    result.set_requires_grad(true);
    tape->record([input, result, mask = std::move(mask)]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto gx = input.mutable_grad();
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * mask[i];
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Recurrent layers.

// Gate blocks are laid out [input, forget, cell, output] along the 4U axis.
struct LstmParams {
  Tensor input_weights;      // [D, 4U]
  Tensor recurrent_weights;  // [U, 4U]
  Tensor bias;               // [4U]

  std::size_t units() const { return recurrent_weights.dim(0); }
  std::size_t input_dim() const { return input_weights.dim(0); }
  std::size_t parameter_count() const {
    return input_weights.size() + recurrent_weights.size() + bias.size();
  }
  std::vector<Tensor> tensors() const {
    return {input_weights, recurrent_weights, bias};
  }
};

enum class Direction { kForward, kBackward };

inline std::size_t lstm_parameter_count(std::size_t input_dim,
                                        std::size_t units) {
  return 4 * units * (input_dim + units + 1);
}

// Runs one LSTM direction from zero state. The backward direction consumes
// the sequence from the last step to the first and writes each hidden state
// back at its original time index.
inline Tensor lstm_direction(const Tensor& seq, const LstmParams& params,
                             Direction direction, GradTape* tape = nullptr) {
  const auto sd = detail::seq_dims(seq, "lstm_direction");
  const std::size_t units = params.units();
  const std::size_t g4 = 4 * units;
  if (params.input_weights.rank() != 2 || params.input_dim() != sd.features ||
      params.input_weights.dim(1) != g4 || params.recurrent_weights.rank() != 2 ||
      params.recurrent_weights.dim(1) != g4 || params.bias.size() != g4) {
    throw DimensionError("lstm_direction: parameter shapes do not match input " +
                         shape_string(seq.shape()));
  }
  const std::size_t steps = sd.steps, batch = sd.batch, dim = sd.features;
  auto time_at = [&](std::size_t k) {
    return direction == Direction::kForward ? k : steps - 1 - k;
  };

  // Per (batch, step): activated gates [4U], cell state, tanh(cell).
  std::vector<double> gates(batch * steps * g4);
  std::vector<double> cells(batch * steps * units);
  std::vector<double> cell_tanh(batch * steps * units);
  std::vector<double> out(batch * steps * units);

  const double* x = seq.data().data();
  const double* wx = params.input_weights.data().data();
  const double* wh = params.recurrent_weights.data().data();
  const double* bias = params.bias.data().data();
  std::vector<double> z(g4);
  for (std::size_t b = 0; b < batch; ++b) {
    const double* h_prev = nullptr;
    const double* c_prev = nullptr;
    for (std::size_t k = 0; k < steps; ++k) {
      const std::size_t t = time_at(k);
      std::copy_n(bias, g4, z.data());
      const double* xt = &x[(b * steps + t) * dim];
      for (std::size_t d = 0; d < dim; ++d) {
        const double xv = xt[d];
        const double* row = &wx[d * g4];
        for (std::size_t j = 0; j < g4; ++j) z[j] += xv * row[j];
      }
      if (h_prev != nullptr) {
        for (std::size_t u = 0; u < units; ++u) {
          const double hv = h_prev[u];
          const double* row = &wh[u * g4];
          for (std::size_t j = 0; j < g4; ++j) z[j] += hv * row[j];
        }
      }
      const std::size_t slot = b * steps + k;
      double* gt = &gates[slot * g4];
      double* ct = &cells[slot * units];
      double* tt = &cell_tanh[slot * units];
      double* ht = &out[(b * steps + t) * units];
      for (std::size_t u = 0; u < units; ++u) {
        const double ig = detail::sigmoid(z[u]);
        const double fg = detail::sigmoid(z[units + u]);
        const double cg = std::tanh(z[2 * units + u]);
        const double og = detail::sigmoid(z[3 * units + u]);
        gt[u] = ig;
        gt[units + u] = fg;
        gt[2 * units + u] = cg;
        gt[3 * units + u] = og;
        ct[u] = (c_prev != nullptr ? fg * c_prev[u] : 0.0) + ig * cg;
        tt[u] = std::tanh(ct[u]);
        ht[u] = og * tt[u];
      }
      h_prev = ht;
      c_prev = ct;
    }
  }

  Shape out_shape = sd.batched ? Shape{batch, steps, units} : Shape{steps, units};
  Tensor result(std::move(out_shape), std::move(out));
  const Tensor& wxt = params.input_weights;
  const Tensor& wht = params.recurrent_weights;
  const Tensor& bt = params.bias;
  if (detail::tracking(tape, {&seq, &wxt, &wht, &bt})) {
    result.set_requires_grad(true);
    tape->record([seq, params, result, gates = std::move(gates),
                  cells = std::move(cells), cell_tanh = std::move(cell_tanh),
                  batch, steps, dim, units, direction]() mutable {
      if (!result.has_grad()) return;
      const std::size_t g4 = 4 * units;
      auto time_at = [&](std::size_t k) {
        return direction == Direction::kForward ? k : steps - 1 - k;
      };
      const double* g = result.grad().data();
      const double* h = result.data().data();
      const double* x = seq.data().data();
      const double* wx = params.input_weights.data().data();
      const double* wh = params.recurrent_weights.data().data();
      double* gx = seq.requires_grad() ? seq.mutable_grad().data() : nullptr;
      double* gwx = params.input_weights.requires_grad()
                        ? params.input_weights.mutable_grad().data()
                        : nullptr;
      double* gwh = params.recurrent_weights.requires_grad()
                        ? params.recurrent_weights.mutable_grad().data()
                        : nullptr;
      double* gb =
          params.bias.requires_grad() ? params.bias.mutable_grad().data() : nullptr;

      std::vector<double> dh_next(units), dc_next(units), dz(g4);
      for (std::size_t b = 0; b < batch; ++b) {
        std::fill(dh_next.begin(), dh_next.end(), 0.0);
        std::fill(dc_next.begin(), dc_next.end(), 0.0);
        for (std::size_t k = steps; k-- > 0;) {
          const std::size_t t = time_at(k);
          const std::size_t slot = b * steps + k;
          const double* gt = &gates[slot * g4];
          const double* tt = &cell_tanh[slot * units];
          const double* c_prev = k > 0 ? &cells[(slot - 1) * units] : nullptr;
          const double* h_prev =
              k > 0 ? &h[(b * steps + time_at(k - 1)) * units] : nullptr;
          const double* go = &g[(b * steps + t) * units];
          for (std::size_t u = 0; u < units; ++u) {
            const double ig = gt[u], fg = gt[units + u], cg = gt[2 * units + u],
                         og = gt[3 * units + u];
            const double dh = go[u] + dh_next[u];
            const double d_o = dh * tt[u];
            const double dc = dh * og * (1 - tt[u] * tt[u]) + dc_next[u];
            const double di = dc * cg;
            const double dg = dc * ig;
            const double df = c_prev != nullptr ? dc * c_prev[u] : 0.0;
            dc_next[u] = dc * fg;
            dz[u] = di * ig * (1 - ig);
            dz[units + u] = df * fg * (1 - fg);
            dz[2 * units + u] = dg * (1 - cg * cg);
            dz[3 * units + u] = d_o * og * (1 - og);
          }
          if (gb != nullptr) {
            for (std::size_t j = 0; j < g4; ++j) gb[j] += dz[j];
          }
          const double* xt = &x[(b * steps + t) * dim];
          for (std::size_t d = 0; d < dim; ++d) {
            const double* row = &wx[d * g4];
            if (gx != nullptr) {
              double acc = 0;
              for (std::size_t j = 0; j < g4; ++j) acc += dz[j] * row[j];
              gx[(b * steps + t) * dim + d] += acc;
            }
            if (gwx != nullptr) {
              double* grow = &gwx[d * g4];
              const double xv = xt[d];
              for (std::size_t j = 0; j < g4; ++j) grow[j] += xv * dz[j];
            }
          }
          for (std::size_t u = 0; u < units; ++u) {
            const double* row = &wh[u * g4];
            double acc = 0;
            for (std::size_t j = 0; j < g4; ++j) acc += dz[j] * row[j];
            dh_next[u] = acc;
            if (gwh != nullptr && h_prev != nullptr) {
              double* grow = &gwh[u * g4];
              const double hv = h_prev[u];
              for (std::size_t j = 0; j < g4; ++j) grow[j] += hv * dz[j];
            }
          }
        }
      }
    });
  }
  return result;
}

// Forward and backward directions with independent parameters, concatenated
// per time step as [forward | backward].
inline Tensor bilstm(const Tensor& seq, const LstmParams& forward,
                     const LstmParams& backward, GradTape* tape = nullptr) {
  const auto sd = detail::seq_dims(seq, "bilstm");
  if (sd.steps == 0) throw InputError("bilstm: empty sequence");
  Tensor fwd = lstm_direction(seq, forward, Direction::kForward, tape);
  Tensor bwd = lstm_direction(seq, backward, Direction::kBackward, tape);
  return concat({fwd, bwd}, seq.rank() - 1, tape);
}

struct AttentionParams {
  Tensor weights;  // [F, F]
  Tensor bias;     // [F]
  Tensor context;  // [F]

  std::size_t parameter_count() const {
    return weights.size() + bias.size() + context.size();
  }
  std::vector<Tensor> tensors() const { return {weights, bias, context}; }
};

// Additive attention: score_t = context . tanh(h_t W + b), alpha = softmax over
// t, output row t = alpha_t * h_t. When `alphas` is non-null it receives the
// attention weights [B*T].
inline Tensor additive_attention(const Tensor& seq, const AttentionParams& p,
                                 GradTape* tape = nullptr,
                                 std::vector<double>* alphas = nullptr) {
  const auto sd = detail::seq_dims(seq, "additive_attention");
  const std::size_t steps = sd.steps, f = sd.features, batch = sd.batch;
  if (p.weights.rank() != 2 || p.weights.dim(0) != f || p.weights.dim(1) != f ||
      p.bias.size() != f || p.context.size() != f) {
    throw DimensionError("additive_attention: parameters must be [F,F],[F],[F]");
  }
  const double* h = seq.data().data();
  const double* w = p.weights.data().data();
  std::vector<double> hidden(batch * steps * f);  // tanh(h W + b)
  std::vector<double> alpha(batch * steps);
  std::vector<double> out(seq.size());
  for (std::size_t b = 0; b < batch; ++b) {
    double* ab = &alpha[b * steps];
    for (std::size_t t = 0; t < steps; ++t) {
      const double* ht = &h[(b * steps + t) * f];
      double* a = &hidden[(b * steps + t) * f];
      std::copy_n(p.bias.data().data(), f, a);
      for (std::size_t i = 0; i < f; ++i) {
        const double hv = ht[i];
        const double* row = &w[i * f];
        for (std::size_t j = 0; j < f; ++j) a[j] += hv * row[j];
      }
      double score = 0;
      for (std::size_t j = 0; j < f; ++j) {
        a[j] = std::tanh(a[j]);
        score += p.context[j] * a[j];
      }
      ab[t] = score;
    }
    const double mx = *std::max_element(ab, ab + steps);
    double z = 0;
    for (std::size_t t = 0; t < steps; ++t) {
      ab[t] = std::exp(ab[t] - mx);
      z += ab[t];
    }
    for (std::size_t t = 0; t < steps; ++t) {
      ab[t] /= z;
      for (std::size_t j = 0; j < f; ++j) {
        out[(b * steps + t) * f + j] = ab[t] * h[(b * steps + t) * f + j];
      }
    }
  }
  if (alphas != nullptr) *alphas = alpha;

  Tensor result(seq.shape(), std::move(out));
  if (detail::tracking(tape, {&seq, &p.weights, &p.bias, &p.context})) {
    result.set_requires_grad(true);
    tape->record([seq, p, result, hidden = std::move(hidden),
                  alpha = std::move(alpha), batch, steps, f]() mutable {
      if (!result.has_grad()) return;
      const double* g = result.grad().data();
      const double* h = seq.data().data();
      const double* w = p.weights.data().data();
      double* gh = seq.requires_grad() ? seq.mutable_grad().data() : nullptr;
      double* gw = p.weights.requires_grad() ? p.weights.mutable_grad().data()
                                             : nullptr;
      double* gbias =
          p.bias.requires_grad() ? p.bias.mutable_grad().data() : nullptr;
      double* gu =
          p.context.requires_grad() ? p.context.mutable_grad().data() : nullptr;
      std::vector<double> dalpha(steps), dz(f);
      for (std::size_t b = 0; b < batch; ++b) {
        const double* ab = &alpha[b * steps];
        double weighted = 0;
        for (std::size_t t = 0; t < steps; ++t) {
          double dot = 0;
          for (std::size_t j = 0; j < f; ++j) {
            dot += g[(b * steps + t) * f + j] * h[(b * steps + t) * f + j];
          }
          dalpha[t] = dot;
          weighted += ab[t] * dot;
        }
        for (std::size_t t = 0; t < steps; ++t) {
          const std::size_t row = (b * steps + t) * f;
          const double de = ab[t] * (dalpha[t] - weighted);
          const double* a = &hidden[row];
          for (std::size_t j = 0; j < f; ++j) {
            if (gu != nullptr) gu[j] += de * a[j];
            dz[j] = de * p.context[j] * (1 - a[j] * a[j]);
          }
          if (gbias != nullptr) {
            for (std::size_t j = 0; j < f; ++j) gbias[j] += dz[j];
          }
          for (std::size_t i = 0; i < f; ++i) {
            const double* wrow = &w[i * f];
            if (gh != nullptr) {
              double acc = ab[t] * g[row + i];
              for (std::size_t j = 0; j < f; ++j) acc += wrow[j] * dz[j];
              gh[row + i] += acc;
            }
            if (gw != nullptr) {
              double* gwrow = &gw[i * f];
              const double hv = h[row + i];
              for (std::size_t j = 0; j < f; ++j) gwrow[j] += hv * dz[j];
            }
          }
        }
      }
    });
  }
  return result;
}

// Mean over the time axis: [B,T,F] -> [B,F], [T,F] -> [F].
inline Tensor global_avg_pool_1d(const Tensor& seq, GradTape* tape = nullptr) {
  const auto sd = detail::seq_dims(seq, "global_avg_pool_1d");
  const std::size_t steps = sd.steps, f = sd.features;
  std::vector<double> out(sd.batch * f, 0.0);
  const auto x = seq.data();
  for (std::size_t b = 0; b < sd.batch; ++b) {
    for (std::size_t t = 0; t < steps; ++t) {
      for (std::size_t j = 0; j < f; ++j) {
        out[b * f + j] += x[(b * steps + t) * f + j];
      }
    }
    for (std::size_t j = 0; j < f; ++j) out[b * f + j] /= steps;
  }
  Shape shape = sd.batched ? Shape{sd.batch, f} : Shape{f};
  Tensor result(std::move(shape), std::move(out));
  if (detail::tracking(tape, {&seq})) {
    result.set_requires_grad(true);
    tape->record([seq, result, sd]() mutable {
      if (!result.has_grad()) return;
      const auto g = result.grad();
      auto gx = seq.mutable_grad();
      const double scale = 1.0 / static_cast<double>(sd.steps);
      for (std::size_t b = 0; b < sd.batch; ++b) {
        for (std::size_t t = 0; t < sd.steps; ++t) {
          for (std::size_t j = 0; j < sd.features; ++j) {
            gx[(b * sd.steps + t) * sd.features + j] +=
                g[b * sd.features + j] * scale;
          }
        }
      }
    });
  }
  return result;
}

// Mean over both spatial axes: [B,H,W,C] -> [B,C].
inline Tensor global_avg_pool_2d(const Tensor& input, GradTape* tape = nullptr) {
  const auto in = detail::image_dims(input, "global_avg_pool_2d");
  Shape seq_shape{in.batch, in.height * in.width, in.channels};
  Tensor as_seq = reshape(input, seq_shape, tape);
  Tensor pooled = global_avg_pool_1d(as_seq, tape);
  if (in.batched) return pooled;
  return reshape(pooled, {in.channels}, tape);
}

// Affine map: [B,F] x [F,K] + [K] -> [B,K]; [F] -> [K].
inline Tensor dense(const Tensor& input, const Tensor& weights,
                    const Tensor& bias, GradTape* tape = nullptr) {
  if (weights.rank() != 2) throw DimensionError("dense: weights must be [F,K]");
  const std::size_t f = weights.dim(0), k = weights.dim(1);
  if (input.shape().back() != f || (input.rank() != 1 && input.rank() != 2)) {
    throw DimensionError("dense: input " + shape_string(input.shape()) +
                         " incompatible with weights " +
                         shape_string(weights.shape()));
  }
  if (bias.size() != k) throw DimensionError("dense: bias length must be K");
  const std::size_t batch = input.size() / f;
  std::vector<double> out(batch * k);
  const double* x = input.data().data();
  const double* w = weights.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    double* o = &out[b * k];
    std::copy_n(bias.data().data(), k, o);
    for (std::size_t i = 0; i < f; ++i) {
      const double xv = x[b * f + i];
      const double* row = &w[i * k];
      for (std::size_t j = 0; j < k; ++j) o[j] += xv * row[j];
    }
  }
  Shape shape = input.rank() == 2 ? Shape{batch, k} : Shape{k};
  Tensor result(std::move(shape), std::move(out));
  if (detail::tracking(tape, {&input, &weights, &bias})) {
    result.set_requires_grad(true);
    tape->record([input, weights, bias, result, batch, f, k]() mutable {
      if (!result.has_grad()) return;
      const double* g = result.grad().data();
      const double* x = input.data().data();
      const double* w = weights.data().data();
      double* gx = input.requires_grad() ? input.mutable_grad().data() : nullptr;
      double* gw =
          weights.requires_grad() ? weights.mutable_grad().data() : nullptr;
      double* gb = bias.requires_grad() ? bias.mutable_grad().data() : nullptr;
      for (std::size_t b = 0; b < batch; ++b) {
        const double* go = &g[b * k];
        if (gb != nullptr) {
          for (std::size_t j = 0; j < k; ++j) gb[j] += go[j];
        }
        for (std::size_t i = 0; i < f; ++i) {
          const double* row = &w[i * k];
          if (gx != nullptr) {
            double acc = 0;
            for (std::size_t j = 0; j < k; ++j) acc += go[j] * row[j];
            gx[b * f + i] += acc;
          }
          if (gw != nullptr) {
            const double xv = x[b * f + i];
            double* grow = &gw[i * k];
            for (std::size_t j = 0; j < k; ++j) grow[j] += xv * go[j];
          }
        }
      }
    });
  }
  return result;
}

inline std::size_t dense_parameter_count(std::size_t in_features,
                                         std::size_t classes) {
  return classes * (in_features + 1);
}

// Mean negative log-likelihood of softmax(logits) at the true labels.
inline Tensor cross_entropy(const Tensor& logits,
                            std::span<const std::size_t> labels,
                            GradTape* tape = nullptr) {
  const std::size_t k = logits.shape().back();
  const std::size_t batch = logits.size() / k;
  if (labels.size() != batch) {
    throw InputError("cross_entropy: " + std::to_string(labels.size()) +
                     " labels for a batch of " + std::to_string(batch));
  }
  for (std::size_t label : labels) {
    if (label >= k) {
      throw InputError("cross_entropy: label " + std::to_string(label) +
                       " outside [0, " + std::to_string(k) + ")");
    }
  }
  const auto x = logits.data();
  std::vector<double> probs(logits.size());
  double loss = 0;
  for (std::size_t b = 0; b < batch; ++b) {
    const double* xr = &x[b * k];
    const double mx = *std::max_element(xr, xr + k);
    double z = 0;
    for (std::size_t j = 0; j < k; ++j) {
      probs[b * k + j] = std::exp(xr[j] - mx);
      z += probs[b * k + j];
    }
    for (std::size_t j = 0; j < k; ++j) probs[b * k + j] /= z;
    loss -= (xr[labels[b]] - mx) - std::log(z);
  }
  Tensor result = Tensor::scalar(loss / static_cast<double>(batch));
  if (detail::tracking(tape, {&logits})) {
    result.set_requires_grad(true);
    std::vector<std::size_t> owned(labels.begin(), labels.end());
    tape->record([logits, result, probs = std::move(probs),
                  owned = std::move(owned), batch, k]() mutable {
      if (!result.has_grad()) return;
      const double g = result.grad()[0] / static_cast<double>(batch);
      auto gx = logits.mutable_grad();
      for (std::size_t b = 0; b < batch; ++b) {
        for (std::size_t j = 0; j < k; ++j) {
          const double target = j == owned[b] ? 1.0 : 0.0;
          gx[b * k + j] += g * (probs[b * k + j] - target);
        }
      }
    });
  }
  return result;
}

// ---------------------------------------------------------------------------
// Adam.

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(AdamConfig config) : config_(config) {}

  const AdamConfig& config() const { return config_; }
  std::int64_t step() const { return step_; }
  std::span<const double> first_moment(std::size_t param) const {
    return first_.at(param);
  }
  std::span<const double> second_moment(std::size_t param) const {
    return second_.at(param);
  }

  // Bias-corrected update of every parameter from its grad buffer; a
  // parameter without a grad buffer is treated as having zero gradient.
  void update(std::span<Tensor> params) {
    if (first_.empty()) {
      for (const Tensor& p : params) {
        first_.emplace_back(p.size(), 0.0);
        second_.emplace_back(p.size(), 0.0);
      }
    }
    if (first_.size() != params.size()) {
      throw UsageError("AdamState: parameter list changed between steps");
    }
    ++step_;
    const double c1 = 1 - std::pow(config_.beta1, static_cast<double>(step_));
    const double c2 = 1 - std::pow(config_.beta2, static_cast<double>(step_));
    for (std::size_t p = 0; p < params.size(); ++p) {
      Tensor& param = params[p];
      if (first_[p].size() != param.size()) {
        throw UsageError("AdamState: moment length does not match parameter");
      }
      auto value = param.data();
      auto grad = param.grad();
      auto& m = first_[p];
      auto& v = second_[p];
      for (std::size_t i = 0; i < value.size(); ++i) {
        const double gi = grad.empty() ? 0.0 : grad[i];
        m[i] = config_.beta1 * m[i] + (1 - config_.beta1) * gi;
        v[i] = config_.beta2 * v[i] + (1 - config_.beta2) * gi * gi;
        const double m_hat = m[i] / c1;
        const double v_hat = v[i] / c2;
        value[i] -= config_.learning_rate * m_hat /
                    (std::sqrt(v_hat) + config_.epsilon);
      }
    }
  }

 private:
  AdamConfig config_;
  std::int64_t step_ = 0;
  std::vector<std::vector<double>> first_;
  std::vector<std::vector<double>> second_;
};

inline void adam_step(std::span<Tensor> params, AdamState& state) {
  state.update(params);
}

}  // namespace ibis

#endif  // IBIS_TENSOR_HPP_
