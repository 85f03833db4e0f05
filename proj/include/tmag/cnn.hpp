#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <cstring>
#include <numeric>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "tmag/config.hpp"
#include "tmag/error.hpp"
#include "tmag/rng.hpp"
#include "tmag/tma.hpp"

namespace tmag {

/// conv(kxk, valid) -> ReLU -> maxpool(p) -> conv(kxk, valid) -> ReLU -> maxpool(p)
///   -> fc1 -> ReLU -> fc2 -> ReLU -> out -> softmax
/// pool == 1 disables pooling.
struct CnnArchitecture {
  std::size_t input_rows = 0;
  std::size_t input_cols = 0;
  std::size_t conv1_filters = 8;
  std::size_t conv2_filters = 16;
  std::size_t kernel = 3;
  std::size_t pool = 2;
  std::size_t fc1_units = 100;
  std::size_t fc2_units = 20;
  std::size_t classes = 5;

  bool operator==(const CnnArchitecture&) const = default;

  static CnnArchitecture for_maps(std::size_t rows, std::size_t cols, const CnnSettings& s, std::size_t classes) {
    CnnArchitecture a{rows, cols, s.conv1_filters, s.conv2_filters, s.kernel, s.pool, s.fc1_units, s.fc2_units, classes};
    a.validate();
    return a;
  }

  std::size_t input_size() const noexcept { return input_rows * input_cols; }
  std::size_t conv1_rows() const noexcept { return input_rows + 1 - kernel; }
  std::size_t conv1_cols() const noexcept { return input_cols + 1 - kernel; }
  std::size_t pool1_rows() const noexcept { return conv1_rows() / pool; }
  std::size_t pool1_cols() const noexcept { return conv1_cols() / pool; }
  std::size_t conv2_rows() const noexcept { return pool1_rows() + 1 - kernel; }
  std::size_t conv2_cols() const noexcept { return pool1_cols() + 1 - kernel; }
  std::size_t pool2_rows() const noexcept { return conv2_rows() / pool; }
  std::size_t pool2_cols() const noexcept { return conv2_cols() / pool; }
  std::size_t flat_size() const noexcept { return conv2_filters * pool2_rows() * pool2_cols(); }

  void validate() const {
    if (input_rows == 0 || input_cols == 0) throw StructuralError("input dimensions must be positive");
    if (conv1_filters == 0 || conv2_filters == 0 || fc1_units == 0 || fc2_units == 0)
      throw StructuralError("layer widths must be positive");
    if (classes < 1) throw StructuralError("at least one class is required");
    if (kernel == 0 || pool == 0) throw StructuralError("kernel and pool sizes must be positive");
    if (input_rows < kernel || input_cols < kernel) throw StructuralError("input smaller than the kernel");
    if (pool1_rows() < kernel || pool1_cols() < kernel)
      throw StructuralError("first pooling output too small for the second convolution");
    if (pool2_rows() == 0 || pool2_cols() == 0) throw StructuralError("second pooling output is empty");
  }

  std::size_t parameter_count() const noexcept {
    const std::size_t k2 = kernel * kernel;
    return conv1_filters * k2 + conv1_filters + conv2_filters * conv1_filters * k2 + conv2_filters +
           fc1_units * flat_size() + fc1_units + fc2_units * fc1_units + fc2_units + classes * fc2_units + classes;
  }
};

/// All trainable tensors, in serialization order.
struct CnnParameters {
  static constexpr std::size_t kTensorCount = 10;
  static constexpr std::array<std::string_view, kTensorCount> kNames = {
      "conv1.weight", "conv1.bias", "conv2.weight", "conv2.bias", "fc1.weight",
      "fc1.bias",     "fc2.weight", "fc2.bias",     "out.weight", "out.bias"};

  std::vector<double> conv1_w, conv1_b;  // [C1][k][k], [C1]
  std::vector<double> conv2_w, conv2_b;  // [C2][C1][k][k], [C2]
  std::vector<double> fc1_w, fc1_b;      // [F1][flat], [F1]
  std::vector<double> fc2_w, fc2_b;      // [F2][F1], [F2]
  std::vector<double> out_w, out_b;      // [G][F2], [G]

  CnnParameters() = default;
  explicit CnnParameters(const CnnArchitecture& a) { resize(a); }

  void resize(const CnnArchitecture& a) {
    const std::size_t k2 = a.kernel * a.kernel;
    conv1_w.assign(a.conv1_filters * k2, 0.0);
    conv1_b.assign(a.conv1_filters, 0.0);
    conv2_w.assign(a.conv2_filters * a.conv1_filters * k2, 0.0);
    conv2_b.assign(a.conv2_filters, 0.0);
    fc1_w.assign(a.fc1_units * a.flat_size(), 0.0);
    fc1_b.assign(a.fc1_units, 0.0);
    fc2_w.assign(a.fc2_units * a.fc1_units, 0.0);
    fc2_b.assign(a.fc2_units, 0.0);
    out_w.assign(a.classes * a.fc2_units, 0.0);
    out_b.assign(a.classes, 0.0);
  }

  std::array<std::vector<double>*, kTensorCount> tensors() {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b, &out_w, &out_b};
  }
  std::array<const std::vector<double>*, kTensorCount> tensors() const {
    return {&conv1_w, &conv1_b, &conv2_w, &conv2_b, &fc1_w, &fc1_b, &fc2_w, &fc2_b, &out_w, &out_b};
  }

  void zero() {
    for (auto* t : tensors()) std::fill(t->begin(), t->end(), 0.0);
  }

  bool all_finite() const {
    for (const auto* t : tensors())
      for (double v : *t)
        if (!std::isfinite(v)) return false;
    return true;
  }

  bool operator==(const CnnParameters&) const = default;
};

/// He-uniform weights (limit sqrt(6 / fan_in)), zero biases.
inline CnnParameters initialize_parameters(const CnnArchitecture& a, std::uint64_t seed) {
  CnnParameters p(a);
  Rng rng(seed);
  const auto fill = [&rng](std::vector<double>& w, std::size_t fan_in) {
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (double& v : w) v = rng.uniform(-limit, limit);
  };
  const std::size_t k2 = a.kernel * a.kernel;
  fill(p.conv1_w, k2);
  fill(p.conv2_w, a.conv1_filters * k2);
  fill(p.fc1_w, a.flat_size());
  fill(p.fc2_w, a.fc1_units);
  fill(p.out_w, a.fc2_units);
  return p;
}

struct TrainingMetadata {
  std::uint64_t seed = 0;
  std::size_t epochs = 0;
  double learning_rate = 0.0;
  std::size_t batch_size = 0;
  double final_loss = 0.0;
  std::vector<double> epoch_losses;

  bool operator==(const TrainingMetadata&) const = default;
};

struct CnnModel {
  CnnArchitecture arch;
  CnnParameters params;
  std::optional<NormalizationBounds> bounds;
  /// Class index -> gesture.
  std::vector<GestureLabel> labels;
  TrainingMetadata meta;

  bool ready() const noexcept { return bounds.has_value() && labels.size() == arch.classes; }

  std::size_t class_of(int gesture_id) const noexcept {
    for (std::size_t i = 0; i < labels.size(); ++i)
      if (labels[i].id == gesture_id) return i;
    return static_cast<std::size_t>(-1);
  }

  bool operator==(const CnnModel&) const = default;
};

struct TrainingExample {
  TmaMap map;  // normalized
  int label = 0;
};

/// Scratch buffers for one forward/backward pass. Reused across calls so the
/// inference path does not allocate.
class CnnWorkspace {
 public:
  CnnWorkspace() = default;
  explicit CnnWorkspace(const CnnArchitecture& a) { resize(a); }

  void resize(const CnnArchitecture& a) {
    if (a == arch_ && !a1.empty()) return;
    a.validate();
    arch_ = a;
    a1.assign(a.conv1_filters * a.conv1_rows() * a.conv1_cols(), 0.0);
    p1.assign(a.conv1_filters * a.pool1_rows() * a.pool1_cols(), 0.0);
    p1_arg.assign(p1.size(), 0);
    a2.assign(a.conv2_filters * a.conv2_rows() * a.conv2_cols(), 0.0);
    p2.assign(a.flat_size(), 0.0);
    p2_arg.assign(p2.size(), 0);
    h1.assign(a.fc1_units, 0.0);
    h2.assign(a.fc2_units, 0.0);
    logits.assign(a.classes, 0.0);
    probs.assign(a.classes, 0.0);
    da1.assign(a1.size(), 0.0);
    dp1.assign(p1.size(), 0.0);
    da2.assign(a2.size(), 0.0);
    dp2.assign(p2.size(), 0.0);
    dh1.assign(h1.size(), 0.0);
    dh2.assign(h2.size(), 0.0);
    dlogits.assign(a.classes, 0.0);
  }

  const CnnArchitecture& arch() const noexcept { return arch_; }

  // Post-activation buffers; ReLU masks are recovered from a > 0.
  std::vector<double> a1, p1, a2, p2, h1, h2, logits, probs;
  std::vector<std::uint32_t> p1_arg, p2_arg;
  std::vector<double> da1, dp1, da2, dp2, dh1, dh2, dlogits;

 private:
  CnnArchitecture arch_{};
};

namespace detail {

inline double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
#pragma omp simd reduction(+ : acc)
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline void axpy(double alpha, const double* x, double* y, std::size_t n) {
#pragma omp simd
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

/// out[f] = bias[f] + sum_c w[f][c] (*) in[c], valid cross-correlation.
inline void conv_forward(const double* in, std::size_t channels, std::size_t rows, std::size_t cols, const double* w,
                         const double* bias, std::size_t filters, std::size_t k, double* out) {
  const std::size_t orow = rows + 1 - k, ocol = cols + 1 - k;
  for (std::size_t f = 0; f < filters; ++f) {
    double* o = out + f * orow * ocol;
    std::fill(o, o + orow * ocol, bias[f]);
    for (std::size_t c = 0; c < channels; ++c) {
      const double* x = in + c * rows * cols;
      for (std::size_t u = 0; u < k; ++u)
        for (std::size_t v = 0; v < k; ++v) {
          const double wv = w[((f * channels + c) * k + u) * k + v];
          for (std::size_t i = 0; i < orow; ++i) axpy(wv, x + (i + u) * cols + v, o + i * ocol, ocol);
        }
    }
  }
}

/// Accumulates weight/bias gradients and (optionally) the input gradient.
inline void conv_backward(const double* in, std::size_t channels, std::size_t rows, std::size_t cols, const double* w,
                          std::size_t filters, std::size_t k, const double* dout, double* gw, double* gb,
                          double* din) {
  const std::size_t orow = rows + 1 - k, ocol = cols + 1 - k;
  for (std::size_t f = 0; f < filters; ++f) {
    const double* d = dout + f * orow * ocol;
    double bsum = 0.0;
#pragma omp simd reduction(+ : bsum)
    for (std::size_t i = 0; i < orow * ocol; ++i) bsum += d[i];
    gb[f] += bsum;
    for (std::size_t c = 0; c < channels; ++c) {
      const double* x = in + c * rows * cols;
      for (std::size_t u = 0; u < k; ++u)
        for (std::size_t v = 0; v < k; ++v) {
          const std::size_t wi = ((f * channels + c) * k + u) * k + v;
          double acc = 0.0;
          for (std::size_t i = 0; i < orow; ++i) acc += dot(d + i * ocol, x + (i + u) * cols + v, ocol);
          gw[wi] += acc;
          if (din) {
            const double wv = w[wi];
            double* dx = din + c * rows * cols;
            for (std::size_t i = 0; i < orow; ++i) axpy(wv, d + i * ocol, dx + (i + u) * cols + v, ocol);
          }
        }
    }
  }
}

inline void relu(double* x, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) x[i] = x[i] > 0.0 ? x[i] : 0.0;
}

/// Non-overlapping p x p max pooling with floor semantics; records the flat
/// input index of each winner (first maximum on ties).
inline void pool_forward(const double* in, std::size_t channels, std::size_t rows, std::size_t cols, std::size_t p,
                         double* out, std::uint32_t* arg) {
  const std::size_t orow = rows / p, ocol = cols / p;
  for (std::size_t c = 0; c < channels; ++c)
    for (std::size_t i = 0; i < orow; ++i)
      for (std::size_t j = 0; j < ocol; ++j) {
        std::size_t best = (c * rows + i * p) * cols + j * p;
        for (std::size_t u = 0; u < p; ++u)
          for (std::size_t v = 0; v < p; ++v) {
            const std::size_t idx = (c * rows + i * p + u) * cols + j * p + v;
            if (in[idx] > in[best]) best = idx;
          }
        const std::size_t o = (c * orow + i) * ocol + j;
        out[o] = in[best];
        arg[o] = static_cast<std::uint32_t>(best);
      }
}

inline void dense_forward(const double* w, const double* b, const double* x, std::size_t in, std::size_t out,
                          double* y) {
  for (std::size_t o = 0; o < out; ++o) y[o] = b[o] + dot(w + o * in, x, in);
}

inline void softmax(const double* logits, double* probs, std::size_t n) {
  const double mx = *std::max_element(logits, logits + n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    probs[i] = std::exp(logits[i] - mx);
    sum += probs[i];
  }
  for (std::size_t i = 0; i < n; ++i) probs[i] /= sum;
}

}  // namespace detail

/// Runs the network on a normalized input (row-major input_rows x input_cols).
/// Returns the class probabilities held in `ws`.
inline std::span<const double> forward(const CnnArchitecture& a, const CnnParameters& p, std::span<const double> input,
                                       CnnWorkspace& ws) {
  if (input.size() != a.input_size())
    throw StructuralError("input has " + std::to_string(input.size()) + " values, network expects " +
                          std::to_string(a.input_size()));
  ws.resize(a);
  using namespace detail;
  const std::size_t k = a.kernel;
  conv_forward(input.data(), 1, a.input_rows, a.input_cols, p.conv1_w.data(), p.conv1_b.data(), a.conv1_filters, k,
               ws.a1.data());
  relu(ws.a1.data(), ws.a1.size());
  pool_forward(ws.a1.data(), a.conv1_filters, a.conv1_rows(), a.conv1_cols(), a.pool, ws.p1.data(), ws.p1_arg.data());
  conv_forward(ws.p1.data(), a.conv1_filters, a.pool1_rows(), a.pool1_cols(), p.conv2_w.data(), p.conv2_b.data(),
               a.conv2_filters, k, ws.a2.data());
  relu(ws.a2.data(), ws.a2.size());
  pool_forward(ws.a2.data(), a.conv2_filters, a.conv2_rows(), a.conv2_cols(), a.pool, ws.p2.data(), ws.p2_arg.data());
  dense_forward(p.fc1_w.data(), p.fc1_b.data(), ws.p2.data(), a.flat_size(), a.fc1_units, ws.h1.data());
  relu(ws.h1.data(), ws.h1.size());
  dense_forward(p.fc2_w.data(), p.fc2_b.data(), ws.h1.data(), a.fc1_units, a.fc2_units, ws.h2.data());
  relu(ws.h2.data(), ws.h2.size());
  dense_forward(p.out_w.data(), p.out_b.data(), ws.h2.data(), a.fc2_units, a.classes, ws.logits.data());
  softmax(ws.logits.data(), ws.probs.data(), a.classes);
  return ws.probs;
}

inline std::vector<double> forward(const CnnModel& model, const TmaMap& normalized) {
  if (normalized.rows() != model.arch.input_rows || normalized.cols != model.arch.input_cols)
    throw StructuralError("map is " + std::to_string(normalized.rows()) + "x" + std::to_string(normalized.cols) +
                          ", network expects " + std::to_string(model.arch.input_rows) + "x" +
                          std::to_string(model.arch.input_cols));
  CnnWorkspace ws(model.arch);
  auto probs = forward(model.arch, model.params, normalized.data, ws);
  return {probs.begin(), probs.end()};
}

/// Cross-entropy of one example; adds `scale` times its gradient into `grads`.
/// Expects `ws` to be fresh from forward() on the same input.
inline double backward(const CnnArchitecture& a, const CnnParameters& p, std::span<const double> input,
                       std::size_t target, double scale, CnnWorkspace& ws, CnnParameters& grads) {
  using namespace detail;
  // -log softmax[target] as logsumexp(logits) - logits[target]
  const double mx = *std::max_element(ws.logits.begin(), ws.logits.end());
  double se = 0.0;
  for (double z : ws.logits) se += std::exp(z - mx);
  const double loss = mx + std::log(se) - ws.logits[target];

  for (std::size_t c = 0; c < a.classes; ++c) ws.dlogits[c] = scale * (ws.probs[c] - (c == target ? 1.0 : 0.0));

  // out layer
  std::fill(ws.dh2.begin(), ws.dh2.end(), 0.0);
  for (std::size_t o = 0; o < a.classes; ++o) {
    const double g = ws.dlogits[o];
    grads.out_b[o] += g;
    axpy(g, ws.h2.data(), grads.out_w.data() + o * a.fc2_units, a.fc2_units);
    axpy(g, p.out_w.data() + o * a.fc2_units, ws.dh2.data(), a.fc2_units);
  }
  for (std::size_t i = 0; i < a.fc2_units; ++i)
    if (!(ws.h2[i] > 0.0)) ws.dh2[i] = 0.0;

  // fc2
  std::fill(ws.dh1.begin(), ws.dh1.end(), 0.0);
  for (std::size_t o = 0; o < a.fc2_units; ++o) {
    const double g = ws.dh2[o];
    if (g == 0.0) continue;
    grads.fc2_b[o] += g;
    axpy(g, ws.h1.data(), grads.fc2_w.data() + o * a.fc1_units, a.fc1_units);
    axpy(g, p.fc2_w.data() + o * a.fc1_units, ws.dh1.data(), a.fc1_units);
  }
  for (std::size_t i = 0; i < a.fc1_units; ++i)
    if (!(ws.h1[i] > 0.0)) ws.dh1[i] = 0.0;

  // fc1
  const std::size_t flat = a.flat_size();
  std::fill(ws.dp2.begin(), ws.dp2.end(), 0.0);
  for (std::size_t o = 0; o < a.fc1_units; ++o) {
    const double g = ws.dh1[o];
    if (g == 0.0) continue;
    grads.fc1_b[o] += g;
    axpy(g, ws.p2.data(), grads.fc1_w.data() + o * flat, flat);
    axpy(g, p.fc1_w.data() + o * flat, ws.dp2.data(), flat);
  }

  // pool2 + relu
  std::fill(ws.da2.begin(), ws.da2.end(), 0.0);
  for (std::size_t i = 0; i < ws.dp2.size(); ++i) ws.da2[ws.p2_arg[i]] += ws.dp2[i];
  for (std::size_t i = 0; i < ws.da2.size(); ++i)
    if (!(ws.a2[i] > 0.0)) ws.da2[i] = 0.0;

  // conv2
  std::fill(ws.dp1.begin(), ws.dp1.end(), 0.0);
  conv_backward(ws.p1.data(), a.conv1_filters, a.pool1_rows(), a.pool1_cols(), p.conv2_w.data(), a.conv2_filters,
                a.kernel, ws.da2.data(), grads.conv2_w.data(), grads.conv2_b.data(), ws.dp1.data());

  // pool1 + relu
  std::fill(ws.da1.begin(), ws.da1.end(), 0.0);
  for (std::size_t i = 0; i < ws.dp1.size(); ++i) ws.da1[ws.p1_arg[i]] += ws.dp1[i];
  for (std::size_t i = 0; i < ws.da1.size(); ++i)
    if (!(ws.a1[i] > 0.0)) ws.da1[i] = 0.0;

  // conv1, input gradient not needed
  conv_backward(input.data(), 1, a.input_rows, a.input_cols, p.conv1_w.data(), a.conv1_filters, a.kernel,
                ws.da1.data(), grads.conv1_w.data(), grads.conv1_b.data(), nullptr);

  return loss;
}

struct LossAndGradients {
  double loss = 0.0;
  CnnParameters gradients;
};

/// Mean categorical cross-entropy over `batch` and its exact gradient.
inline LossAndGradients loss_and_gradients(const CnnModel& model, std::span<const TrainingExample> batch) {
  if (batch.empty()) throw DataError("empty batch");
  LossAndGradients out{0.0, CnnParameters(model.arch)};
  CnnWorkspace ws(model.arch);
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (const auto& ex : batch) {
    const std::size_t cls = model.class_of(ex.label);
    if (cls >= model.arch.classes) throw DataError("label " + std::to_string(ex.label) + " is not in the class table");
    if (ex.map.data.size() != model.arch.input_size()) throw StructuralError("example map does not match the network");
    forward(model.arch, model.params, ex.map.data, ws);
    out.loss += backward(model.arch, model.params, ex.map.data, cls, scale, ws, out.gradients);
  }
  out.loss *= scale;
  return out;
}

struct TrainingSettings {
  double learning_rate = 0.001;
  std::size_t epochs = 15;
  std::size_t batch_size = 32;
  std::uint64_t seed = 0;
};

namespace detail {

inline std::uint64_t example_hash(const TrainingExample& ex) {
  std::uint64_t h = mix64(static_cast<std::uint64_t>(static_cast<std::int64_t>(ex.label)));
  for (double v : ex.map.data) {
    std::uint64_t bits;
    static_assert(sizeof bits == sizeof v);
    std::memcpy(&bits, &v, sizeof v);
    h = mix64(h ^ bits);
  }
  return h;
}

}  // namespace detail

/// Plain mini-batch SGD on mean cross-entropy. Examples are first put in a
/// content-defined order, then shuffled each epoch from the seed, so the result
/// does not depend on the order of `dataset`.
inline CnnModel train(std::span<const TrainingExample> dataset, const CnnArchitecture& arch,
                      const std::vector<GestureLabel>& labels, const TrainingSettings& settings) {
  arch.validate();
  if (labels.size() != arch.classes)
    throw DataError("label table has " + std::to_string(labels.size()) + " entries for " +
                    std::to_string(arch.classes) + " classes");
  if (settings.batch_size == 0) throw ParameterError("batch size must be positive");
  if (!(settings.learning_rate > 0.0)) throw ParameterError("learning rate must be positive");

  CnnModel model;
  model.arch = arch;
  model.labels = labels;
  model.params = initialize_parameters(arch, derive_seed(settings.seed, "init"));
  model.meta = {settings.seed, settings.epochs, settings.learning_rate, settings.batch_size, 0.0, {}};

  std::vector<std::size_t> targets(dataset.size());
  std::vector<std::size_t> per_class(arch.classes, 0);
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const std::size_t cls = model.class_of(dataset[i].label);
    if (cls >= arch.classes) throw DataError("label " + std::to_string(dataset[i].label) + " is not in the class table");
    if (dataset[i].map.data.size() != arch.input_size()) throw StructuralError("example map does not match the network");
    targets[i] = cls;
    ++per_class[cls];
  }
  for (std::size_t c = 0; c < arch.classes; ++c)
    if (per_class[c] == 0) throw DataError("no training examples for gesture " + std::to_string(labels[c].id));

  std::vector<std::uint64_t> hashes(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) hashes[i] = detail::example_hash(dataset[i]);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t x, std::size_t y) {
    if (targets[x] != targets[y]) return targets[x] < targets[y];
    if (hashes[x] != hashes[y]) return hashes[x] < hashes[y];
    return dataset[x].map.end_index < dataset[y].map.end_index;
  });

  Rng shuffler(derive_seed(settings.seed, "shuffle"));
  CnnWorkspace ws(arch);
  CnnParameters grads(arch);
  for (std::size_t epoch = 0; epoch < settings.epochs; ++epoch) {
    shuffler.shuffle(order.begin(), order.end());
    double epoch_loss = 0.0;
    for (std::size_t start = 0; start < order.size(); start += settings.batch_size) {
      const std::size_t end = std::min(order.size(), start + settings.batch_size);
      const double scale = 1.0 / static_cast<double>(end - start);
      grads.zero();
      for (std::size_t b = start; b < end; ++b) {
        const auto& ex = dataset[order[b]];
        forward(arch, model.params, ex.map.data, ws);
        epoch_loss += backward(arch, model.params, ex.map.data, targets[order[b]], scale, ws, grads);
      }
      auto dst = model.params.tensors();
      auto src = std::as_const(grads).tensors();
      for (std::size_t t = 0; t < CnnParameters::kTensorCount; ++t)
        detail::axpy(-settings.learning_rate, src[t]->data(), dst[t]->data(), dst[t]->size());
    }
    model.meta.epoch_losses.push_back(epoch_loss / static_cast<double>(order.size()));
  }
  if (!model.meta.epoch_losses.empty()) model.meta.final_loss = model.meta.epoch_losses.back();
  return model;
}

struct Classification {
  int gesture = 0;
  double confidence = 0.0;
  std::size_t class_index = 0;
};

/// Index of the largest probability; lowest index wins ties.
inline std::size_t argmax(std::span<const double> probs) {
  std::size_t best = 0;
  for (std::size_t i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

/// Low-latency classifier over raw TMA maps: applies the model's stored
/// normalization, runs the network and picks the top class. Not thread-safe;
/// use one instance per thread (the model itself may be shared).
class Classifier {
 public:
  explicit Classifier(const CnnModel& model) : model_(&model), ws_(model.arch), input_(model.arch.input_size()) {
    if (!model.ready()) throw UsageError("model is not trained (missing normalization bounds or label table)");
  }

  Classification predict(const TmaMap& raw) {
    const auto& a = model_->arch;
    if (raw.rows() != a.input_rows || raw.cols != a.input_cols)
      throw StructuralError("map is " + std::to_string(raw.rows()) + "x" + std::to_string(raw.cols) +
                            ", network expects " + std::to_string(a.input_rows) + "x" + std::to_string(a.input_cols));
    const NormalizationBounds& b = *model_->bounds;
    const std::size_t split = raw.channels * raw.cols;
    const double s1 = b.first_order_max - b.first_order_min;
    const double s2 = b.second_order_max - b.second_order_min;
    for (std::size_t i = 0; i < split; ++i) input_[i] = std::clamp((raw.data[i] - b.first_order_min) / s1, 0.0, 1.0);
    for (std::size_t i = split; i < raw.data.size(); ++i)
      input_[i] = std::clamp((raw.data[i] - b.second_order_min) / s2, 0.0, 1.0);
    const auto probs = forward(a, model_->params, input_, ws_);
    const std::size_t best = argmax(probs);
    return {model_->labels[best].id, probs[best], best};
  }

  std::span<const double> last_probabilities() const noexcept { return ws_.probs; }

 private:
  const CnnModel* model_;
  CnnWorkspace ws_;
  std::vector<double> input_;
};

inline Classification predict(const CnnModel& model, const TmaMap& raw) {
  Classifier c(model);
  return c.predict(raw);
}

}  // namespace tmag
