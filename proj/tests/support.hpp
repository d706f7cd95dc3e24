/*
 * Copyright 2026 The prunekit Authors.
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

// Helpers shared by the unit tests and the acceptance binary: random small
// architectures, dead-filter construction, independent oracles.

#ifndef PRUNEKIT_TESTS_SUPPORT_HPP_
#define PRUNEKIT_TESTS_SUPPORT_HPP_

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "prunekit/engine.hpp"
#include "prunekit/model_graph.hpp"
#include "prunekit/storage.hpp"

namespace prunekit::testing {

// A plain conv stack in the CNN14 mould, with randomized widths, kernel
// sizes, conv biases, pooling placement and head depth.
inline ModelSpec random_small_spec(std::mt19937_64& rng) {
  auto pick = [&](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  ModelSpec spec;
  spec.input_shape = {pick(4, 12), pick(4, 10)};
  spec.class_count = pick(1, 5);
  spec.layers.push_back(LayerSpec::input_bn("bn0", spec.input_shape.freq));

  const std::size_t convs = pick(1, 4);
  std::size_t channels = 1;
  std::size_t t = spec.input_shape.time, f = spec.input_shape.freq;
  for (std::size_t i = 1; i <= convs; ++i) {
    const std::string name = "C" + std::to_string(i);
    const std::size_t width = pick(2, 6);
    const std::size_t kernel = std::array<std::size_t, 3>{1, 3, 5}[pick(0, 2)];
    spec.layers.push_back(LayerSpec::conv2d(name, channels, width, kernel, pick(0, 1) == 1));
    spec.layers.push_back(LayerSpec::batch_norm(name + ".bn", width));
    spec.layers.push_back(LayerSpec::relu(name + ".relu"));
    spec.conv_index[name] = name;
    channels = width;
    if (i < convs && t >= 4 && f >= 4 && pick(0, 1) == 1) {
      spec.layers.push_back(LayerSpec::avg_pool(name + ".pool"));
      t /= 2;
      f /= 2;
    }
  }
  spec.layers.push_back(LayerSpec::global_pool("global_pool"));
  std::size_t features = channels;
  if (pick(0, 1) == 1) {
    const std::size_t hidden = pick(2, 8);
    spec.layers.push_back(LayerSpec::dense("fc1", features, hidden));
    spec.layers.push_back(LayerSpec::relu("fc1.relu"));
    features = hidden;
  }
  spec.layers.push_back(LayerSpec::dense("fc_out", features, spec.class_count));
  spec.layers.push_back(LayerSpec::sigmoid("output"));
  return spec;
}

// Random BN statistics and affine terms, so eval-mode BN is not an identity.
inline void perturb_norm_layers(const ModelSpec& spec, Checkpoint& weights,
                                std::mt19937_64& rng) {
  std::uniform_real_distribution<float> shift(-0.5f, 0.5f);
  std::uniform_real_distribution<float> scale(0.5f, 1.5f);
  for (const auto& layer : spec.layers) {
    if (layer.kind != LayerKind::kBatchNorm && layer.kind != LayerKind::kInputBN) {
      continue;
    }
    for (auto& v : weights.at(layer.name + ".gamma").data()) v = scale(rng);
    for (auto& v : weights.at(layer.name + ".beta").data()) v = shift(rng);
    for (auto& v : weights.at(layer.name + ".running_mean").data()) v = shift(rng);
    for (auto& v : weights.at(layer.name + ".running_var").data()) v = scale(rng);
  }
  for (auto& nt : weights.tensors()) {
    if (nt.name.ends_with(".bias")) {
      for (auto& v : nt.tensor.data()) v = shift(rng);
    }
  }
}

// Filter `filter` of `conv` outputs zero after its ReLU for every input:
// zero kernel and bias, BN gamma 0, BN beta negative.
inline void make_dead_filter(const ModelSpec& spec, Checkpoint& weights,
                             const std::string& conv, std::size_t filter) {
  const LayerSpec& layer = spec.layer(conv);
  Tensor& w = weights.at(conv + ".weight");
  const std::size_t row = layer.in_channels * layer.kernel * layer.kernel;
  std::fill_n(w.data().begin() + static_cast<std::ptrdiff_t>(filter * row), row, 0.0f);
  if (Tensor* b = weights.find(conv + ".bias")) (*b)[filter] = 0.0f;
  weights.at(conv + ".bn.gamma")[filter] = 0.0f;
  weights.at(conv + ".bn.beta")[filter] = -0.25f;
}

inline Tensor random_tensor(const Shape& shape, std::mt19937_64& rng,
                            float lo = -1.0f, float hi = 1.0f) {
  Tensor t(shape);
  std::uniform_real_distribution<float> u(lo, hi);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

inline Tensor random_targets(std::size_t batch, std::size_t classes,
                             std::mt19937_64& rng) {
  Tensor t({batch, classes});
  std::bernoulli_distribution b(0.5);
  for (auto& v : t.data()) v = b(rng) ? 1.0f : 0.0f;
  return t;
}

// Threshold-enumeration oracle for average precision: for every distinct
// score, taken as a threshold from the highest down, count by a full scan the
// items at or above it; each threshold contributes (recall gained) times the
// precision there. Terms are formed as gain * tp / selected and summed in
// threshold order before the final division, so a correct implementation
// matches bit for bit.
inline double brute_force_ap(const std::vector<double>& scores,
                             const std::vector<float>& labels) {
  std::vector<double> thresholds(scores);
  std::sort(thresholds.begin(), thresholds.end(), std::greater<>());
  thresholds.erase(std::unique(thresholds.begin(), thresholds.end()), thresholds.end());
  std::size_t positives = 0;
  for (float l : labels) positives += l > 0.5f ? 1 : 0;
  double sum = 0.0;
  std::size_t prev_tp = 0;
  for (double th : thresholds) {
    std::size_t tp = 0, selected = 0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      if (scores[i] >= th) {
        ++selected;
        if (labels[i] > 0.5f) ++tp;
      }
    }
    if (tp > prev_tp) {
      sum += static_cast<double>(tp - prev_tp) * static_cast<double>(tp) /
             static_cast<double>(selected);
    }
    prev_tp = tp;
  }
  return sum / static_cast<double>(positives);
}

struct TensorGradError {
  std::string name;
  double analytic_norm = 0.0;
  double error_norm = 0.0;
};

struct GradCheck {
  // ||a - n|| / max(||a||, ||n||) over the concatenation of every trainable
  // tensor, a = analytic, n = central difference.
  double relative = 0.0;
  std::vector<TensorGradError> tensors;
  std::size_t checked = 0;
  std::size_t unresolved = 0;  // scalars excluded: every probe crossed a kink
};

// ReLU on/off pattern and global-pool winners of one forward pass; central
// differences are only meaningful while this stays fixed.
template <typename T>
std::vector<std::uint8_t> activation_pattern(Network<T>& net, const BasicTensor<T>& input,
                                             Mode mode) {
  ForwardTrace<T> trace;
  net.forward(input, mode, &trace);
  std::vector<std::uint8_t> pattern;
  const auto& layers = net.spec().layers;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].kind == LayerKind::kReLU) {
      for (T v : trace.outputs[i].data()) pattern.push_back(v > T(0));
    }
  }
  for (const auto& winners : trace.argmax) {
    for (std::size_t w : winners) pattern.push_back(static_cast<std::uint8_t>(w));
  }
  return pattern;
}

// Five-point central differences,
//   (-L(x+2h) + 8 L(x+h) - 8 L(x-h) + L(x-2h)) / 12h,
// for every trainable scalar of `net`, against its analytic backward pass.
// Probes must keep the activation pattern of the unperturbed point. When a
// ReLU or max kink lies on one side only, the second-order one-sided
// difference on the clean side is used instead; when both sides cross, the
// step is quartered (at most twice). A scalar that never gets a clean side
// has no usable derivative at that resolution and is excluded (counted in
// `unresolved`).
template <typename T>
GradCheck finite_difference_check(Network<T>& net, const BasicTensor<T>& input,
                                  const BasicTensor<T>& targets, Mode mode, double step) {
  net.set_update_running_stats(false);
  const LossAndGradients<T> analytic = net.backward(input, targets, mode);
  const auto base_pattern = activation_pattern(net, input, mode);
  const double base_loss = net.loss(input, targets, mode);
  GradCheck result;
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  for (const auto& [name, grad] : analytic.gradients) {
    BasicTensor<T>& param = net.params().at(name);
    TensorGradError te{name, 0.0, 0.0};
    for (std::size_t i = 0; i < param.size(); ++i) {
      const T saved = param[i];
      double h = step, numeric = 0.0;
      bool stable = false;
      for (int attempt = 0; attempt < 3 && !stable; ++attempt, h /= 4) {
        double probe[4];
        bool clean[4];
        const double offsets[4] = {2 * h, h, -h, -2 * h};
        for (int k = 0; k < 4; ++k) {
          param[i] = static_cast<T>(saved + offsets[k]);
          probe[k] = net.loss(input, targets, mode);
          clean[k] = activation_pattern(net, input, mode) == base_pattern;
        }
        if (clean[0] && clean[1] && clean[2] && clean[3]) {
          numeric = (-probe[0] + 8 * probe[1] - 8 * probe[2] + probe[3]) / (12 * h);
          stable = true;
        } else if (clean[0] && clean[1]) {
          numeric = (-3 * base_loss + 4 * probe[1] - probe[0]) / (2 * h);
          stable = true;
        } else if (clean[2] && clean[3]) {
          numeric = (3 * base_loss - 4 * probe[2] + probe[3]) / (2 * h);
          stable = true;
        }
      }
      param[i] = saved;
      ++result.checked;
      if (!stable) {
        ++result.unresolved;
        continue;
      }
      const double a = static_cast<double>(grad[i]);
      te.error_norm += (a - numeric) * (a - numeric);
      te.analytic_norm += a * a;
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
    }
    te.error_norm = std::sqrt(te.error_norm);
    te.analytic_norm = std::sqrt(te.analytic_norm);
    result.tensors.push_back(te);
  }
  result.relative = std::sqrt(diff2) / std::sqrt(std::max({a2, n2, 1e-300}));
  return result;
}

// Small fully-featured model (conv biases, two BN stages, pooling, hidden
// dense layer), under 5k trainable parameters.
inline ModelSpec gradient_check_spec() {
  ModelSpec spec;
  spec.input_shape = {8, 8};
  spec.class_count = 3;
  spec.layers = {
      LayerSpec::input_bn("bn0", 8),
      LayerSpec::conv2d("C1", 1, 4, 3, true),
      LayerSpec::batch_norm("C1.bn", 4),
      LayerSpec::relu("C1.relu"),
      LayerSpec::avg_pool("C1.pool"),
      LayerSpec::conv2d("C2", 4, 6, 3),
      LayerSpec::batch_norm("C2.bn", 6),
      LayerSpec::relu("C2.relu"),
      LayerSpec::global_pool("global_pool"),
      LayerSpec::dense("fc1", 6, 5),
      LayerSpec::relu("fc1.relu"),
      LayerSpec::dense("fc_out", 5, 3),
      LayerSpec::sigmoid("output"),
  };
  spec.conv_index = {{"C1", "C1"}, {"C2", "C2"}};
  return spec;
}

}  // namespace prunekit::testing

#endif  // PRUNEKIT_TESTS_SUPPORT_HPP_
