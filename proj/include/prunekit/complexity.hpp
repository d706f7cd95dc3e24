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

#ifndef PRUNEKIT_COMPLEXITY_HPP_
#define PRUNEKIT_COMPLEXITY_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "prunekit/model_graph.hpp"

namespace prunekit {

// Counts for one layer at batch size 1 and the spec's input_shape.
// `other_ops` counts elementwise work (norm, activation, pooling) that is
// excluded from the headline MAC total.
struct LayerComplexity {
  std::string name;
  LayerKind kind = LayerKind::kReLU;
  std::uint64_t params = 0;         // trainable
  std::uint64_t running_stats = 0;  // BN running mean/var, not trainable
  std::uint64_t macs = 0;
  std::uint64_t other_ops = 0;
};

struct ComplexityReport {
  std::vector<LayerComplexity> layers;
  bool has_params = false;
  bool has_macs = false;
  std::uint64_t total_params = 0;
  std::uint64_t total_running_stats = 0;
  std::uint64_t total_macs = 0;
  std::uint64_t total_other_ops = 0;
};

// Conv2d: k*k*c*n (+n bias); BatchNorm/InputBN: 2 per channel;
// Dense: in*out (+out bias).
ComplexityReport count_params(const ModelSpec& spec);
// Conv2d: out_time*out_freq*k*k*c*n; Dense: in*out. Throws kZeroExtent.
ComplexityReport count_macs(const ModelSpec& spec);
// Both metrics in one report.
ComplexityReport analyze(const ModelSpec& spec);

// (reference - candidate) / reference, in percent. 0 when reference is 0.
double reduction_percent(std::uint64_t reference, std::uint64_t candidate);

struct LayerDelta {
  std::string name;
  std::uint64_t baseline_params = 0;
  std::uint64_t candidate_params = 0;
  std::uint64_t baseline_macs = 0;
  std::uint64_t candidate_macs = 0;
  double param_reduction = 0.0;  // percent
  double mac_reduction = 0.0;    // percent
};

struct DeltaReport {
  std::vector<LayerDelta> layers;
  bool has_params = false;
  bool has_macs = false;
  std::uint64_t baseline_params = 0;
  std::uint64_t candidate_params = 0;
  std::uint64_t baseline_macs = 0;
  std::uint64_t candidate_macs = 0;
  double param_reduction = 0.0;
  double mac_reduction = 0.0;
};

// Layers are matched by name; a layer missing from the candidate counts as
// zero. Throws kInvalidArgument when the reports carry different metrics.
DeltaReport compare(const ComplexityReport& baseline,
                    const ComplexityReport& candidate);

// Fraction of total trainable parameters held by the named layers.
double parameter_share(const ComplexityReport& report,
                       const std::vector<std::string>& layer_names);

std::string report_to_csv(const ComplexityReport& report);
std::string report_to_json(const ComplexityReport& report);
std::string delta_to_csv(const DeltaReport& delta);
std::string delta_to_json(const DeltaReport& delta);

}  // namespace prunekit

#endif  // PRUNEKIT_COMPLEXITY_HPP_
