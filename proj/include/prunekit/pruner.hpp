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

#ifndef PRUNEKIT_PRUNER_HPP_
#define PRUNEKIT_PRUNER_HPP_

#include <cstddef>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "prunekit/complexity.hpp"
#include "prunekit/importance.hpp"
#include "prunekit/model_graph.hpp"
#include "prunekit/storage.hpp"

namespace prunekit {

struct PlanProvenance {
  std::map<std::string, double> ratios;
  std::string criterion;
  std::string report_fingerprint;

  bool operator==(const PlanProvenance&) const = default;
};

// Filters to remove, per conv layer; index lists are sorted and unique.
struct PrunePlan {
  std::map<std::string, std::vector<std::size_t>> targets;
  PlanProvenance provenance;

  bool empty() const;
  bool operator==(const PrunePlan&) const = default;
};

// floor(p * n), computed so that exact products such as 0.3 * 10 are not
// lost to binary rounding.
std::size_t filters_to_remove(double ratio, std::size_t filters);

// Selects the floor(p * n) lowest-ranked filters of each target layer.
// Throws kUnknownLayer and kRatioOutOfRange (p outside [0, 1)).
PrunePlan make_plan(const ImportanceReport& report,
                    const std::map<std::string, double>& ratios);

// The same ratio for every listed layer.
std::map<std::string, double> uniform_ratios(const std::vector<std::string>& layers,
                                             double ratio);

// The last half of a spec's conv layers (C7..C12 for CNN14).
std::vector<std::string> default_prune_layers(const ModelSpec& spec);

// Throws kPlanSpecMismatch / kWouldEmptyLayer when the plan does not fit.
void check_plan(const ModelSpec& spec, const PrunePlan& plan);

// Removes the planned filters, their batch-norm channels and the matching
// input slices of the next consumer (the next conv, or the Dense layer fed by
// GlobalPool). Inputs are not modified.
std::pair<ModelSpec, Checkpoint> apply_plan(const ModelSpec& spec,
                                            const Checkpoint& weights,
                                            const PrunePlan& plan);

// Rewrites the pruned-model widths only; no weights involved.
ModelSpec apply_plan_to_spec(const ModelSpec& spec, const PrunePlan& plan);

// Expresses "apply `first`, then `second`" as one plan against the
// original numbering.
PrunePlan compose_plans(const ModelSpec& spec, const PrunePlan& first,
                        const PrunePlan& second);

struct PruneSummary {
  DeltaReport delta;
  std::string text;  // human-readable, with a per-conv width table
};

PruneSummary prune_report(const ModelSpec& before, const ModelSpec& after);

std::string plan_to_json(const PrunePlan& plan);
PrunePlan plan_from_json(const std::string& text);

}  // namespace prunekit

#endif  // PRUNEKIT_PRUNER_HPP_
