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

#include "prunekit/importance.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <json.hpp>

#include "prunekit/engine.hpp"
#include "prunekit/error.hpp"

namespace prunekit {
namespace {

using nlohmann::ordered_json;

// Calibration samples go through the network a few at a time so CNN14-sized
// maps stay bounded in memory.
constexpr std::size_t kCalibrationChunk = 8;

Tensor slice_batch(const Tensor& batch, std::size_t begin, std::size_t end) {
  const std::size_t per = batch.size() / batch.dim(0);
  std::vector<float> data(batch.data().begin() + static_cast<std::ptrdiff_t>(begin * per),
                          batch.data().begin() + static_cast<std::ptrdiff_t>(end * per));
  Shape shape = batch.shape();
  shape[0] = end - begin;
  return Tensor(shape, std::move(data));
}

// Sums |activation| per filter for every requested layer; fixed order:
// sample, then time, then frequency.
std::vector<std::vector<double>> activation_sums(
    const ModelSpec& spec, const Checkpoint& weights,
    const std::vector<std::string>& conv_layers, const Tensor& calibration,
    std::vector<double>& positions) {
  if (calibration.rank() != 4 || calibration.dim(0) == 0) {
    throw Error(ErrorCode::kEmptyCalibration, "calibration batch is empty");
  }
  Network<float> net(spec, weights);
  std::vector<std::size_t> taps;
  for (const auto& name : conv_layers) taps.push_back(post_activation_layer(spec, name));

  std::vector<std::vector<double>> sums(conv_layers.size());
  positions.assign(conv_layers.size(), 0.0);
  for (std::size_t begin = 0; begin < calibration.dim(0); begin += kCalibrationChunk) {
    const std::size_t end = std::min(calibration.dim(0), begin + kCalibrationChunk);
    const auto maps = net.capture(slice_batch(calibration, begin, end), Mode::kEval, taps);
    for (std::size_t li = 0; li < maps.size(); ++li) {
      const Tensor& m = maps[li];
      const std::size_t filters = m.dim(1), plane = m.dim(2) * m.dim(3);
      sums[li].resize(filters, 0.0);
      for (std::size_t b = 0; b < m.dim(0); ++b) {
        for (std::size_t n = 0; n < filters; ++n) {
          const float* p = &m.at(b, n, 0, 0);
          double s = 0.0;
          for (std::size_t i = 0; i < plane; ++i) s += std::abs(static_cast<double>(p[i]));
          sums[li][n] += s;
        }
      }
      positions[li] += static_cast<double>(m.dim(0) * plane);
    }
  }
  return sums;
}

}  // namespace

std::string_view criterion_name(Criterion criterion) {
  return criterion == Criterion::kWeightNorm ? "weight_l1" : "activation_energy";
}

Criterion parse_criterion(std::string_view name) {
  if (name == "weight_l1") return Criterion::kWeightNorm;
  if (name == "activation_energy") return Criterion::kActivationEnergy;
  throw Error(ErrorCode::kInvalidArgument,
              "unknown criterion '" + std::string(name) +
                  "' (expected weight_l1 or activation_energy)");
}

const LayerRanking& ImportanceReport::layer(std::string_view name) const {
  for (const auto& l : layers) {
    if (l.layer == name) return l;
  }
  throw Error(ErrorCode::kUnknownLayer,
              "importance report has no layer '" + std::string(name) + "'");
}

std::vector<double> score_weight_norm(const Tensor& weights) {
  if (weights.rank() != 4) {
    throw Error(ErrorCode::kShapeMismatch, "filter bank must be (n, c, k, k)");
  }
  const std::size_t n = weights.dim(0), per = weights.size() / n;
  std::vector<double> scores(n, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < per; ++j) {
      scores[i] += std::abs(static_cast<double>(weights[i * per + j]));
    }
  }
  return scores;
}

std::vector<double> score_activation_energy(const ModelSpec& spec,
                                            const Checkpoint& weights,
                                            const std::string& conv_layer,
                                            const Tensor& calibration) {
  std::vector<double> positions;
  auto sums = activation_sums(spec, weights, {conv_layer}, calibration, positions);
  for (double& s : sums[0]) s /= positions[0];
  return sums[0];
}

LayerRanking rank(std::span<const double> scores, const std::string& layer) {
  LayerRanking r{layer, {}};
  r.ranked.reserve(scores.size());
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (!std::isfinite(scores[i]) || scores[i] < 0.0) {
      throw Error(ErrorCode::kInvalidScore,
                  "layer '" + layer + "' filter " + std::to_string(i) +
                      " has score " + std::to_string(scores[i]));
    }
    r.ranked.push_back({i, scores[i]});
  }
  std::sort(r.ranked.begin(), r.ranked.end(), [](const auto& a, const auto& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
  return r;
}

ImportanceReport score_model(const ModelSpec& spec, const Checkpoint& weights,
                             Criterion criterion,
                             const std::vector<std::string>& layers,
                             const Tensor* calibration) {
  std::vector<std::string> targets = layers.empty() ? spec.conv_layer_names() : layers;
  for (const auto& name : targets) {
    const auto idx = spec.find(name);
    if (!idx || spec.layers[*idx].kind != LayerKind::kConv2d) {
      throw Error(ErrorCode::kUnknownLayer, "'" + name + "' is not a Conv2d layer");
    }
  }
  ImportanceReport report;
  report.criterion = std::string(criterion_name(criterion));
  if (criterion == Criterion::kWeightNorm) {
    for (const auto& name : targets) {
      const auto scores = score_weight_norm(weights.at(name + ".weight"));
      report.layers.push_back(rank(scores, name));
    }
    return report;
  }
  if (calibration == nullptr) {
    throw Error(ErrorCode::kEmptyCalibration,
                "activation_energy needs calibration data");
  }
  std::vector<double> positions;
  auto sums = activation_sums(spec, weights, targets, *calibration, positions);
  for (std::size_t i = 0; i < targets.size(); ++i) {
    for (double& s : sums[i]) s /= positions[i];
    report.layers.push_back(rank(sums[i], targets[i]));
  }
  report.calibration_fingerprint = tensor_fingerprint(*calibration);
  return report;
}

std::string importance_to_json(const ImportanceReport& report) {
  ordered_json j;
  j["criterion"] = report.criterion;
  j["calibration_fingerprint"] = report.calibration_fingerprint;
  j["layers"] = ordered_json::object();
  for (const auto& l : report.layers) {
    ordered_json rows = ordered_json::array();
    for (const auto& fs : l.ranked) rows.push_back({fs.index, fs.score});
    j["layers"][l.layer] = std::move(rows);
  }
  return j.dump(2) + "\n";
}

ImportanceReport importance_from_json(const std::string& text) {
  ImportanceReport report;
  try {
    const ordered_json j = ordered_json::parse(text);
    report.criterion = j.at("criterion").get<std::string>();
    report.calibration_fingerprint = j.value("calibration_fingerprint", "");
    for (const auto& [name, rows] : j.at("layers").items()) {
      LayerRanking r{name, {}};
      for (const auto& row : rows) {
        r.ranked.push_back({row.at(0).get<std::size_t>(), row.at(1).get<double>()});
      }
      report.layers.push_back(std::move(r));
    }
  } catch (const ordered_json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("importance report: ") + e.what());
  }
  for (const auto& l : report.layers) {
    std::vector<bool> seen(l.ranked.size(), false);
    for (const auto& fs : l.ranked) {
      if (fs.index >= seen.size() || seen[fs.index]) {
        throw Error(ErrorCode::kParse, "importance report layer '" + l.layer +
                                           "' is not a permutation of filters");
      }
      seen[fs.index] = true;
    }
  }
  return report;
}

}  // namespace prunekit
