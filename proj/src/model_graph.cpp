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

#include "prunekit/model_graph.hpp"

#include <array>
#include <functional>
#include <set>
#include <utility>

#include <json.hpp>

#include "prunekit/error.hpp"
#include "prunekit/file_util.hpp"

namespace prunekit {
namespace {

using nlohmann::json;

constexpr std::array<std::pair<LayerKind, std::string_view>, 8> kKindNames{{
    {LayerKind::kInputBN, "InputBN"},
    {LayerKind::kConv2d, "Conv2d"},
    {LayerKind::kBatchNorm, "BatchNorm"},
    {LayerKind::kReLU, "ReLU"},
    {LayerKind::kAvgPool, "AvgPool"},
    {LayerKind::kGlobalPool, "GlobalPool"},
    {LayerKind::kDense, "Dense"},
    {LayerKind::kSigmoid, "Sigmoid"},
}};

std::string shape_string(const ActivationShape& s) {
  if (s.flat) return "(" + std::to_string(s.channels) + ")";
  return "(" + std::to_string(s.channels) + "," + std::to_string(s.time) +
         "," + std::to_string(s.freq) + ")";
}

// Walks the graph once, reporting each problem through `report`. When a layer
// is inconsistent the walk adopts the layer's declared output so later layers
// are still checked.
std::vector<ActivationShape> walk_shapes(
    const ModelSpec& spec, InputShape input,
    const std::function<void(ErrorCode, const std::string&)>& report) {
  std::vector<ActivationShape> shapes;
  shapes.reserve(spec.layers.size());
  ActivationShape cur{1, input.time, input.freq, false};
  if (input.time == 0 || input.freq == 0) {
    report(ErrorCode::kZeroExtent, "input shape has zero extent");
  }
  for (const LayerSpec& l : spec.layers) {
    const std::string where = "layer '" + l.name + "': ";
    auto need_spatial = [&] {
      if (cur.flat) {
        report(ErrorCode::kShapeMismatch,
               where + "expects a feature map, got flat features " +
                   shape_string(cur));
      }
    };
    switch (l.kind) {
      case LayerKind::kInputBN:
        need_spatial();
        if (l.bins != cur.freq) {
          report(ErrorCode::kShapeMismatch,
                 where + "bins " + std::to_string(l.bins) +
                     " != frequency extent " + std::to_string(cur.freq));
        }
        break;
      case LayerKind::kConv2d:
        need_spatial();
        if (l.in_channels != cur.channels) {
          report(ErrorCode::kShapeMismatch,
                 where + "in_channels " + std::to_string(l.in_channels) +
                     " != producer channels " + std::to_string(cur.channels));
        }
        cur = {l.out_channels, cur.time, cur.freq, false};
        break;
      case LayerKind::kBatchNorm:
        need_spatial();
        if (l.channels != cur.channels) {
          report(ErrorCode::kShapeMismatch,
                 where + "channels " + std::to_string(l.channels) +
                     " != producer channels " + std::to_string(cur.channels));
        }
        cur.channels = l.channels;
        break;
      case LayerKind::kReLU:
      case LayerKind::kSigmoid:
        break;
      case LayerKind::kAvgPool:
        need_spatial();
        cur.time /= 2;
        cur.freq /= 2;
        if (cur.time == 0 || cur.freq == 0) {
          report(ErrorCode::kZeroExtent, where + "pooling exhausts a dimension");
        }
        break;
      case LayerKind::kGlobalPool:
        need_spatial();
        cur = {cur.channels, 0, 0, true};
        break;
      case LayerKind::kDense:
        if (!cur.flat) {
          report(ErrorCode::kShapeMismatch,
                 where + "Dense needs flat features, got " + shape_string(cur));
        }
        if (l.in_features != cur.channels) {
          report(ErrorCode::kShapeMismatch,
                 where + "in_features " + std::to_string(l.in_features) +
                     " != producer features " + std::to_string(cur.channels));
        }
        cur = {l.out_features, 0, 0, true};
        break;
    }
    shapes.push_back(cur);
  }
  return shapes;
}

json layer_to_json(const LayerSpec& l) {
  json j;
  j["name"] = l.name;
  j["kind"] = std::string(layer_kind_name(l.kind));
  switch (l.kind) {
    case LayerKind::kInputBN:
      j["bins"] = l.bins;
      j["epsilon"] = l.epsilon;
      break;
    case LayerKind::kConv2d:
      j["in_channels"] = l.in_channels;
      j["out_channels"] = l.out_channels;
      j["kernel"] = l.kernel;
      j["padding"] = "same";
      j["stride"] = 1;
      j["has_bias"] = l.has_bias;
      break;
    case LayerKind::kBatchNorm:
      j["channels"] = l.channels;
      j["epsilon"] = l.epsilon;
      break;
    case LayerKind::kAvgPool:
      j["window"] = 2;
      j["stride"] = 2;
      break;
    case LayerKind::kDense:
      j["in_features"] = l.in_features;
      j["out_features"] = l.out_features;
      j["has_bias"] = l.has_bias;
      break;
    case LayerKind::kReLU:
    case LayerKind::kGlobalPool:
    case LayerKind::kSigmoid:
      break;
  }
  return j;
}

template <typename T>
T required(const json& j, const char* key, const std::string& ctx) {
  if (!j.contains(key)) {
    throw Error(ErrorCode::kParse, ctx + ": missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse,
                ctx + ": bad field '" + key + "': " + e.what());
  }
}

LayerSpec layer_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorCode::kParse, "layer is not an object");
  LayerSpec l;
  l.name = required<std::string>(j, "name", "layer");
  const std::string ctx = "layer '" + l.name + "'";
  const auto kind = parse_layer_kind(required<std::string>(j, "kind", ctx));
  if (!kind) throw Error(ErrorCode::kParse, ctx + ": unknown kind");
  l.kind = *kind;
  switch (l.kind) {
    case LayerKind::kInputBN:
      l.bins = required<std::size_t>(j, "bins", ctx);
      l.epsilon = j.value("epsilon", kDefaultBatchNormEpsilon);
      break;
    case LayerKind::kConv2d:
      l.in_channels = required<std::size_t>(j, "in_channels", ctx);
      l.out_channels = required<std::size_t>(j, "out_channels", ctx);
      l.kernel = required<std::size_t>(j, "kernel", ctx);
      l.has_bias = j.value("has_bias", false);
      if (j.value("padding", std::string("same")) != "same" ||
          j.value("stride", 1) != 1) {
        throw Error(ErrorCode::kParse,
                    ctx + ": only padding \"same\" with stride 1 is supported");
      }
      break;
    case LayerKind::kBatchNorm:
      l.channels = required<std::size_t>(j, "channels", ctx);
      l.epsilon = j.value("epsilon", kDefaultBatchNormEpsilon);
      break;
    case LayerKind::kAvgPool:
      if (j.value("window", 2) != 2 || j.value("stride", 2) != 2) {
        throw Error(ErrorCode::kParse, ctx + ": only 2x2/2 pooling is supported");
      }
      break;
    case LayerKind::kDense:
      l.in_features = required<std::size_t>(j, "in_features", ctx);
      l.out_features = required<std::size_t>(j, "out_features", ctx);
      l.has_bias = j.value("has_bias", true);
      break;
    case LayerKind::kReLU:
    case LayerKind::kGlobalPool:
    case LayerKind::kSigmoid:
      break;
  }
  return l;
}

json model_to_json(const ModelSpec& spec) {
  json j;
  j["layers"] = json::array();
  for (const auto& l : spec.layers) j["layers"].push_back(layer_to_json(l));
  j["input_shape"] = {spec.input_shape.time, spec.input_shape.freq};
  j["class_count"] = spec.class_count;
  j["conv_index"] = spec.conv_index;
  return j;
}

}  // namespace

std::string_view layer_kind_name(LayerKind kind) {
  for (const auto& [k, name] : kKindNames) {
    if (k == kind) return name;
  }
  return "?";
}

std::optional<LayerKind> parse_layer_kind(std::string_view name) {
  for (const auto& [k, n] : kKindNames) {
    if (n == name) return k;
  }
  return std::nullopt;
}

LayerSpec LayerSpec::input_bn(std::string name, std::size_t bins) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::kInputBN;
  l.bins = bins;
  return l;
}

LayerSpec LayerSpec::conv2d(std::string name, std::size_t in_channels,
                            std::size_t out_channels, std::size_t kernel,
                            bool has_bias) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::kConv2d;
  l.in_channels = in_channels;
  l.out_channels = out_channels;
  l.kernel = kernel;
  l.has_bias = has_bias;
  return l;
}

LayerSpec LayerSpec::batch_norm(std::string name, std::size_t channels) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::kBatchNorm;
  l.channels = channels;
  return l;
}

LayerSpec LayerSpec::relu(std::string name) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::kReLU;
  return l;
}

LayerSpec LayerSpec::avg_pool(std::string name) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::kAvgPool;
  return l;
}

LayerSpec LayerSpec::global_pool(std::string name) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::kGlobalPool;
  return l;
}

LayerSpec LayerSpec::dense(std::string name, std::size_t in_features,
                           std::size_t out_features, bool has_bias) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::kDense;
  l.in_features = in_features;
  l.out_features = out_features;
  l.has_bias = has_bias;
  return l;
}

LayerSpec LayerSpec::sigmoid(std::string name) {
  LayerSpec l;
  l.name = std::move(name);
  l.kind = LayerKind::kSigmoid;
  return l;
}

std::optional<std::size_t> ModelSpec::find(std::string_view layer_name) const {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].name == layer_name) return i;
  }
  return std::nullopt;
}

const LayerSpec& ModelSpec::layer(std::string_view layer_name) const {
  const auto idx = find(layer_name);
  if (!idx) {
    throw Error(ErrorCode::kUnknownLayer,
                "no layer named '" + std::string(layer_name) + "'");
  }
  return layers[*idx];
}

std::vector<std::string> ModelSpec::conv_layer_names() const {
  std::vector<std::string> names;
  for (const auto& l : layers) {
    if (l.kind == LayerKind::kConv2d) names.push_back(l.name);
  }
  return names;
}

std::vector<ActivationShape> infer_shapes(const ModelSpec& spec) {
  return infer_shapes(spec, spec.input_shape);
}

std::vector<ActivationShape> infer_shapes(const ModelSpec& spec,
                                          InputShape input) {
  return walk_shapes(spec, input, [](ErrorCode code, const std::string& msg) {
    throw Error(code, msg);
  });
}

std::vector<std::string> validate(const ModelSpec& spec) {
  std::vector<std::string> violations;
  std::set<std::string> seen;
  for (const auto& l : spec.layers) {
    if (l.name.empty()) violations.push_back("empty layer name");
    if (!seen.insert(l.name).second) {
      violations.push_back("duplicate name '" + l.name + "'");
    }
    const std::string where = "layer '" + l.name + "': ";
    switch (l.kind) {
      case LayerKind::kConv2d:
        if (l.kernel < 1) violations.push_back(where + "kernel must be >= 1");
        if (l.in_channels < 1 || l.out_channels < 1) {
          violations.push_back(where + "channels must be >= 1");
        }
        break;
      case LayerKind::kBatchNorm:
        if (l.channels < 1) violations.push_back(where + "channels must be >= 1");
        if (!(l.epsilon >= 0.0)) violations.push_back(where + "negative epsilon");
        break;
      case LayerKind::kInputBN:
        if (l.bins < 1) violations.push_back(where + "bins must be >= 1");
        if (!(l.epsilon >= 0.0)) violations.push_back(where + "negative epsilon");
        break;
      case LayerKind::kDense:
        if (l.in_features < 1 || l.out_features < 1) {
          violations.push_back(where + "features must be >= 1");
        }
        break;
      default:
        break;
    }
  }

  // A BatchNorm normalizes the maps of the Conv2d directly before it.
  for (std::size_t i = 1; i < spec.layers.size(); ++i) {
    const auto& bn = spec.layers[i];
    const auto& prev = spec.layers[i - 1];
    if (bn.kind == LayerKind::kBatchNorm && prev.kind == LayerKind::kConv2d &&
        bn.channels != prev.out_channels) {
      violations.push_back("layer '" + bn.name + "': BatchNorm channels " +
                           std::to_string(bn.channels) +
                           " != preceding conv out_channels " +
                           std::to_string(prev.out_channels));
    }
  }

  const auto shapes = walk_shapes(
      spec, spec.input_shape,
      [&](ErrorCode, const std::string& msg) { violations.push_back(msg); });

  if (spec.layers.empty() || spec.layers.back().kind != LayerKind::kSigmoid) {
    violations.push_back("final layer must be Sigmoid");
  } else if (!shapes.back().flat || shapes.back().channels != spec.class_count) {
    violations.push_back("final output does not have class_count = " +
                         std::to_string(spec.class_count) + " features");
  }
  if (spec.class_count < 1) violations.push_back("class_count must be >= 1");

  for (const auto& [label, target] : spec.conv_index) {
    const auto idx = spec.find(target);
    if (!idx || spec.layers[*idx].kind != LayerKind::kConv2d) {
      violations.push_back("conv_index '" + label + "' does not name a Conv2d");
    }
  }
  return violations;
}

ModelSpec build_cnn14_preset() {
  ModelSpec spec;
  spec.input_shape = {1000, 64};
  spec.class_count = 527;
  spec.layers.push_back(LayerSpec::input_bn("bn0", 64));
  constexpr std::array<std::size_t, 6> kWidths{64, 128, 256, 512, 1024, 2048};
  std::size_t in = 1;
  int conv_number = 1;
  for (std::size_t block = 0; block < kWidths.size(); ++block) {
    for (int j = 0; j < 2; ++j) {
      const std::string name = "C" + std::to_string(conv_number++);
      spec.layers.push_back(LayerSpec::conv2d(name, in, kWidths[block], 3));
      spec.layers.push_back(LayerSpec::batch_norm(name + ".bn", kWidths[block]));
      spec.layers.push_back(LayerSpec::relu(name + ".relu"));
      spec.conv_index[name] = name;
      in = kWidths[block];
    }
    if (block + 1 < kWidths.size()) {
      spec.layers.push_back(
          LayerSpec::avg_pool("block" + std::to_string(block + 1) + ".pool"));
    }
  }
  spec.layers.push_back(LayerSpec::global_pool("global_pool"));
  spec.layers.push_back(LayerSpec::dense("fc1", 2048, 2048));
  spec.layers.push_back(LayerSpec::relu("fc1.relu"));
  spec.layers.push_back(LayerSpec::dense("fc_audioset", 2048, 527));
  spec.layers.push_back(LayerSpec::sigmoid("output"));
  return spec;
}

ModelSpec build_toy_preset(const ToyPresetOptions& options) {
  ModelSpec spec;
  spec.input_shape = options.input_shape;
  spec.class_count = options.class_count;
  spec.layers.push_back(LayerSpec::input_bn("bn0", options.input_shape.freq));
  std::size_t in = 1;
  for (std::size_t i = 0; i < options.conv_widths.size(); ++i) {
    const std::string name = "C" + std::to_string(i + 1);
    const std::size_t width = options.conv_widths[i];
    spec.layers.push_back(LayerSpec::conv2d(name, in, width, 3));
    spec.layers.push_back(LayerSpec::batch_norm(name + ".bn", width));
    spec.layers.push_back(LayerSpec::relu(name + ".relu"));
    if (i + 1 < options.conv_widths.size()) {
      spec.layers.push_back(LayerSpec::avg_pool(name + ".pool"));
    }
    spec.conv_index[name] = name;
    in = width;
  }
  spec.layers.push_back(LayerSpec::global_pool("global_pool"));
  spec.layers.push_back(LayerSpec::dense("fc1", in, options.hidden_features));
  spec.layers.push_back(LayerSpec::relu("fc1.relu"));
  spec.layers.push_back(
      LayerSpec::dense("fc_out", options.hidden_features, options.class_count));
  spec.layers.push_back(LayerSpec::sigmoid("output"));
  return spec;
}

std::string to_json(const ModelSpec& spec, int indent) {
  return model_to_json(spec).dump(indent);
}

std::string canonical_json(const ModelSpec& spec) {
  return model_to_json(spec).dump();
}

ModelSpec model_from_json(std::string_view text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorCode::kParse, std::string("architecture JSON: ") + e.what());
  }
  if (!j.is_object() || !j.contains("layers") || !j["layers"].is_array()) {
    throw Error(ErrorCode::kParse, "architecture JSON needs a 'layers' array");
  }
  ModelSpec spec;
  for (const auto& lj : j["layers"]) spec.layers.push_back(layer_from_json(lj));
  const auto shape =
      required<std::vector<std::size_t>>(j, "input_shape", "architecture");
  if (shape.size() != 2) {
    throw Error(ErrorCode::kParse, "input_shape must be [time, freq]");
  }
  spec.input_shape = {shape[0], shape[1]};
  spec.class_count = required<std::size_t>(j, "class_count", "architecture");
  if (j.contains("conv_index")) {
    spec.conv_index =
        required<std::map<std::string, std::string>>(j, "conv_index", "architecture");
  }
  return spec;
}

ModelSpec load_model(const std::string& path) {
  return model_from_json(read_text_file(path));
}

void save_model(const ModelSpec& spec, const std::string& path) {
  write_file_atomic(path, to_json(spec) + "\n");
}

}  // namespace prunekit
