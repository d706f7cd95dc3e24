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

#ifndef PRUNEKIT_IMPORTANCE_HPP_
#define PRUNEKIT_IMPORTANCE_HPP_

#include <cstddef>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "prunekit/model_graph.hpp"
#include "prunekit/storage.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

enum class Criterion {
  kWeightNorm,        // l1 norm of each filter, data-free
  kActivationEnergy,  // mean |post-activation map| over calibration data
};

std::string_view criterion_name(Criterion criterion);
Criterion parse_criterion(std::string_view name);

struct FilterScore {
  std::size_t index = 0;
  double score = 0.0;

  bool operator==(const FilterScore&) const = default;
};

// Filters of one conv layer, most important first.
struct LayerRanking {
  std::string layer;
  std::vector<FilterScore> ranked;

  bool operator==(const LayerRanking&) const = default;
};

struct ImportanceReport {
  std::string criterion;
  std::string calibration_fingerprint;  // empty for data-free criteria
  std::vector<LayerRanking> layers;

  const LayerRanking& layer(std::string_view name) const;
  bool operator==(const ImportanceReport&) const = default;
};

// weights: (n, c, k, k). Returns sum |F_i| per filter.
std::vector<double> score_weight_norm(const Tensor& weights);

// Mean absolute post-activation response of every filter of `conv_layer`
// over calibration (batch, 1, time, freq), with eval-mode batch norm.
// Throws kEmptyCalibration, kMissingWeights, kUnknownLayer.
std::vector<double> score_activation_energy(const ModelSpec& spec,
                                            const Checkpoint& weights,
                                            const std::string& conv_layer,
                                            const Tensor& calibration);

// Descending by score, ties by ascending index. Throws kInvalidScore on
// NaN/Inf or negative scores.
LayerRanking rank(std::span<const double> scores, const std::string& layer);

// Scores each listed conv layer independently (all conv layers when
// `layers` is empty). `calibration` is required for kActivationEnergy.
ImportanceReport score_model(const ModelSpec& spec, const Checkpoint& weights,
                             Criterion criterion,
                             const std::vector<std::string>& layers,
                             const Tensor* calibration);

std::string importance_to_json(const ImportanceReport& report);
ImportanceReport importance_from_json(const std::string& text);

}  // namespace prunekit

#endif  // PRUNEKIT_IMPORTANCE_HPP_
