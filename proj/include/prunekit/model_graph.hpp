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

#ifndef PRUNEKIT_MODEL_GRAPH_HPP_
#define PRUNEKIT_MODEL_GRAPH_HPP_

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace prunekit {

enum class LayerKind {
  kInputBN,
  kConv2d,
  kBatchNorm,
  kReLU,
  kAvgPool,
  kGlobalPool,
  kDense,
  kSigmoid,
};

std::string_view layer_kind_name(LayerKind kind);
std::optional<LayerKind> parse_layer_kind(std::string_view name);

inline constexpr double kDefaultBatchNormEpsilon = 1e-5;

// One node of a plain feed-forward CNN. Only the fields belonging to `kind`
// are meaningful; the rest stay zero. Convolutions are always square, stride
// 1, zero "same" padding; pooling is always a 2x2 window with stride 2.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::kReLU;

  // Conv2d
  std::size_t in_channels = 0;
  std::size_t out_channels = 0;
  std::size_t kernel = 0;

  // Conv2d and Dense
  bool has_bias = false;

  // BatchNorm (channels) and InputBN (bins, normalizes the frequency axis)
  std::size_t channels = 0;
  std::size_t bins = 0;
  double epsilon = kDefaultBatchNormEpsilon;

  // Dense
  std::size_t in_features = 0;
  std::size_t out_features = 0;

  bool operator==(const LayerSpec&) const = default;

  static LayerSpec input_bn(std::string name, std::size_t bins);
  static LayerSpec conv2d(std::string name, std::size_t in_channels,
                          std::size_t out_channels, std::size_t kernel,
                          bool has_bias = false);
  static LayerSpec batch_norm(std::string name, std::size_t channels);
  static LayerSpec relu(std::string name);
  static LayerSpec avg_pool(std::string name);
  static LayerSpec global_pool(std::string name);
  static LayerSpec dense(std::string name, std::size_t in_features,
                         std::size_t out_features, bool has_bias = true);
  static LayerSpec sigmoid(std::string name);
};

struct InputShape {
  std::size_t time = 0;
  std::size_t freq = 0;

  bool operator==(const InputShape&) const = default;
};

struct ModelSpec {
  std::vector<LayerSpec> layers;
  InputShape input_shape;
  std::size_t class_count = 0;
  // Preset labels (C1..C12 for CNN14) mapped to Conv2d layer names.
  std::map<std::string, std::string> conv_index;

  bool operator==(const ModelSpec&) const = default;

  std::optional<std::size_t> find(std::string_view layer_name) const;
  const LayerSpec& layer(std::string_view layer_name) const;
  // Names of all Conv2d layers in graph order.
  std::vector<std::string> conv_layer_names() const;
};

// Activation shape between layers. After GlobalPool the activation is a flat
// feature vector of `channels` entries and time/freq are zero.
struct ActivationShape {
  std::size_t channels = 0;
  std::size_t time = 0;
  std::size_t freq = 0;
  bool flat = false;

  std::size_t element_count() const {
    return flat ? channels : channels * time * freq;
  }
  bool operator==(const ActivationShape&) const = default;
};

// Output shape of every layer at the spec's input_shape. Throws Error with
// kShapeMismatch on inconsistent channel chains and kZeroExtent when pooling
// exhausts a spatial dimension.
std::vector<ActivationShape> infer_shapes(const ModelSpec& spec);
std::vector<ActivationShape> infer_shapes(const ModelSpec& spec,
                                          InputShape input);

// All invariant violations, empty iff the spec is valid.
std::vector<std::string> validate(const ModelSpec& spec);

ModelSpec build_cnn14_preset();

struct ToyPresetOptions {
  InputShape input_shape{100, 64};
  std::size_t class_count = 4;
  std::vector<std::size_t> conv_widths{8, 8, 16, 16};
  std::size_t hidden_features = 16;
};

// Small CNN14-shaped network for desk-scale experiments: one conv per block,
// an AvgPool after every block but the last, then the CNN14 head.
ModelSpec build_toy_preset(const ToyPresetOptions& options = {});

// Architecture file (UTF-8 JSON). Throws Error(kParse) on malformed input.
std::string to_json(const ModelSpec& spec, int indent = 2);
ModelSpec model_from_json(std::string_view text);
// Compact form with sorted keys; the basis of model fingerprints.
std::string canonical_json(const ModelSpec& spec);

ModelSpec load_model(const std::string& path);
void save_model(const ModelSpec& spec, const std::string& path);

}  // namespace prunekit

#endif  // PRUNEKIT_MODEL_GRAPH_HPP_
