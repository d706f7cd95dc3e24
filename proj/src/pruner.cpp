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

#include "prunekit/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <optional>

#include <json.hpp>

#include "prunekit/error.hpp"
#include "prunekit/hash.hpp"

namespace prunekit {
namespace {

using nlohmann::ordered_json;
using Keep = std::optional<std::vector<std::size_t>>;

std::vector<std::size_t> complement(std::size_t n,
                                    const std::vector<std::size_t>& removed) {
  std::vector<std::size_t> keep;
  keep.reserve(n - removed.size());
  std::size_t r = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (r < removed.size() && removed[r] == i) {
      ++r;
    } else {
      keep.push_back(i);
    }
  }
  return keep;
}

std::size_t kept_count(const Keep& keep, std::size_t all) {
  return keep ? keep->size() : all;
}

std::size_t source_index(const Keep& keep, std::size_t i) {
  return keep ? (*keep)[i] : i;
}

Keep keep_for(const LayerSpec& conv, const PrunePlan& plan) {
  const auto it = plan.targets.find(conv.name);
  if (it == plan.targets.end() || it->second.empty()) return std::nullopt;
  return complement(conv.out_channels, it->second);
}

Tensor slice_vector(const Tensor& v, const Keep& keep) {
  if (!keep) return v;
  Tensor out({keep->size()});
  for (std::size_t i = 0; i < keep->size(); ++i) out[i] = v[(*keep)[i]];
  return out;
}

Tensor slice_filters(const Tensor& w, const Keep& keep_out, const Keep& keep_in) {
  const std::size_t n = kept_count(keep_out, w.dim(0));
  const std::size_t c = kept_count(keep_in, w.dim(1));
  const std::size_t k = w.dim(2);
  Tensor out({n, c, k, k});
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < c; ++j) {
      for (std::size_t y = 0; y < k; ++y) {
        for (std::size_t x = 0; x < k; ++x) {
          out.at(i, j, y, x) = w.at(source_index(keep_out, i), source_index(keep_in, j), y, x);
        }
      }
    }
  }
  return out;
}

Tensor slice_dense_inputs(const Tensor& w, const Keep& keep_in) {
  if (!keep_in) return w;
  const std::size_t outf = w.dim(0);
  Tensor out({outf, keep_in->size()});
  for (std::size_t o = 0; o < outf; ++o) {
    for (std::size_t i = 0; i < keep_in->size(); ++i) out.at(o, i) = w.at(o, (*keep_in)[i]);
  }
  return out;
}

// Shared walk for apply_plan and apply_plan_to_spec; `weights` may be null.
std::pair<ModelSpec, Checkpoint> rewire(const ModelSpec& spec,
                                        const Checkpoint* weights,
                                        const PrunePlan& plan) {
  ModelSpec out = spec;
  Checkpoint ck;
  auto copy = [&](const std::string& name, Tensor t) {
    if (weights) ck.set(name, std::move(t));
  };
  auto src = [&](const std::string& name) -> const Tensor& { return weights->at(name); };

  Keep channels;  // surviving channels of the current activation
  for (std::size_t li = 0; li < out.layers.size(); ++li) {
    LayerSpec& l = out.layers[li];
    const LayerSpec& orig = spec.layers[li];
    switch (l.kind) {
      case LayerKind::kInputBN:
        if (weights) {
          for (const char* p : {".gamma", ".beta", ".running_mean", ".running_var"}) {
            copy(l.name + p, src(l.name + p));
          }
        }
        break;
      case LayerKind::kConv2d: {
        const Keep keep_out = keep_for(orig, plan);
        l.in_channels = kept_count(channels, orig.in_channels);
        l.out_channels = kept_count(keep_out, orig.out_channels);
        if (weights) {
          copy(l.name + ".weight", slice_filters(src(l.name + ".weight"), keep_out, channels));
          if (l.has_bias) copy(l.name + ".bias", slice_vector(src(l.name + ".bias"), keep_out));
        }
        channels = keep_out;
        break;
      }
      case LayerKind::kBatchNorm:
        l.channels = kept_count(channels, orig.channels);
        if (weights) {
          for (const char* p : {".gamma", ".beta", ".running_mean", ".running_var"}) {
            copy(l.name + p, slice_vector(src(l.name + p), channels));
          }
        }
        break;
      case LayerKind::kDense:
        l.in_features = kept_count(channels, orig.in_features);
        if (weights) {
          copy(l.name + ".weight", slice_dense_inputs(src(l.name + ".weight"), channels));
          if (l.has_bias) copy(l.name + ".bias", src(l.name + ".bias"));
        }
        channels.reset();
        break;
      case LayerKind::kReLU:
      case LayerKind::kAvgPool:
      case LayerKind::kGlobalPool:
      case LayerKind::kSigmoid:
        break;
    }
  }
  return {std::move(out), std::move(ck)};
}

std::string fmt_pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v == 0.0 ? 0.0 : -v);
  return buf;
}

}  // namespace

bool PrunePlan::empty() const {
  return std::all_of(targets.begin(), targets.end(),
                     [](const auto& kv) { return kv.second.empty(); });
}

std::size_t filters_to_remove(double ratio, std::size_t filters) {
  const double product = ratio * static_cast<double>(filters);
  return static_cast<std::size_t>(std::floor(product * (1.0 + 1e-12)));
}

PrunePlan make_plan(const ImportanceReport& report,
                    const std::map<std::string, double>& ratios) {
  PrunePlan plan;
  plan.provenance.ratios = ratios;
  plan.provenance.criterion = report.criterion;
  plan.provenance.report_fingerprint = sha256_hex(importance_to_json(report));
  for (const auto& [layer, ratio] : ratios) {
    if (!(ratio >= 0.0 && ratio < 1.0)) {
      throw Error(ErrorCode::kRatioOutOfRange,
                  "ratio " + std::to_string(ratio) + " for '" + layer +
                      "' is outside [0, 1)");
    }
    const LayerRanking& ranking = report.layer(layer);
    const std::size_t n = ranking.ranked.size();
    const std::size_t k = filters_to_remove(ratio, n);
    if (k >= n) {
      throw Error(ErrorCode::kWouldEmptyLayer,
                  "ratio " + std::to_string(ratio) + " removes every filter of '" +
                      layer + "'");
    }
    std::vector<std::size_t> removed;
    for (std::size_t i = n - k; i < n; ++i) removed.push_back(ranking.ranked[i].index);
    std::sort(removed.begin(), removed.end());
    plan.targets[layer] = std::move(removed);
  }
  return plan;
}

std::map<std::string, double> uniform_ratios(const std::vector<std::string>& layers,
                                             double ratio) {
  std::map<std::string, double> out;
  for (const auto& l : layers) out[l] = ratio;
  return out;
}

std::vector<std::string> default_prune_layers(const ModelSpec& spec) {
  const auto convs = spec.conv_layer_names();
  return {convs.begin() + static_cast<std::ptrdiff_t>(convs.size() - convs.size() / 2),
          convs.end()};
}

void check_plan(const ModelSpec& spec, const PrunePlan& plan) {
  for (const auto& [layer, indices] : plan.targets) {
    const auto idx = spec.find(layer);
    if (!idx || spec.layers[*idx].kind != LayerKind::kConv2d) {
      throw Error(ErrorCode::kPlanSpecMismatch,
                  "plan targets '" + layer + "', which is not a Conv2d of the model");
    }
    const std::size_t n = spec.layers[*idx].out_channels;
    for (std::size_t i = 0; i < indices.size(); ++i) {
      if (indices[i] >= n) {
        throw Error(ErrorCode::kPlanSpecMismatch,
                    "plan index " + std::to_string(indices[i]) + " out of range for '" +
                        layer + "' with " + std::to_string(n) + " filters");
      }
      if (i > 0 && indices[i] <= indices[i - 1]) {
        throw Error(ErrorCode::kPlanSpecMismatch,
                    "plan indices for '" + layer + "' must be sorted and unique");
      }
    }
    if (indices.size() >= n) {
      throw Error(ErrorCode::kWouldEmptyLayer,
                  "plan removes every filter of '" + layer + "'");
    }
  }
}

std::pair<ModelSpec, Checkpoint> apply_plan(const ModelSpec& spec,
                                            const Checkpoint& weights,
                                            const PrunePlan& plan) {
  check_plan(spec, plan);
  check_binding(spec, weights);
  if (plan.empty()) return {spec, weights};
  auto result = rewire(spec, &weights, plan);
  // Re-order into the canonical layout of the new spec.
  std::vector<NamedTensor> ordered;
  for (const auto& slot : parameter_layout(result.first)) {
    ordered.push_back({slot.name, result.second.at(slot.name)});
  }
  result.second = Checkpoint(std::move(ordered));
  return result;
}

ModelSpec apply_plan_to_spec(const ModelSpec& spec, const PrunePlan& plan) {
  check_plan(spec, plan);
  return rewire(spec, nullptr, plan).first;
}

PrunePlan compose_plans(const ModelSpec& spec, const PrunePlan& first,
                        const PrunePlan& second) {
  check_plan(spec, first);
  check_plan(apply_plan_to_spec(spec, first), second);
  PrunePlan merged = first;
  for (const auto& [layer, later] : second.targets) {
    const std::size_t n = spec.layer(layer).out_channels;
    const auto it = first.targets.find(layer);
    const std::vector<std::size_t> survivors =
        complement(n, it == first.targets.end() ? std::vector<std::size_t>{} : it->second);
    auto& removed = merged.targets[layer];
    for (std::size_t i : later) removed.push_back(survivors[i]);
    std::sort(removed.begin(), removed.end());
  }
  merged.provenance = {};
  return merged;
}

PruneSummary prune_report(const ModelSpec& before, const ModelSpec& after) {
  PruneSummary s;
  s.delta = compare(analyze(before), analyze(after));
  std::string text = "params " + fmt_pct(s.delta.param_reduction) + "%, MACs " +
                     fmt_pct(s.delta.mac_reduction) + "%\n";
  text += "total params " + std::to_string(s.delta.baseline_params) + " -> " +
          std::to_string(s.delta.candidate_params) + "\n";
  text += "total MACs   " + std::to_string(s.delta.baseline_macs) + " -> " +
          std::to_string(s.delta.candidate_macs) + "\n";
  char line[160];
  std::snprintf(line, sizeof line, "%-10s %9s %9s %12s %12s\n", "layer", "width_was",
                "width_now", "params_was", "params_now");
  text += line;
  for (const auto& l : before.layers) {
    if (l.kind != LayerKind::kConv2d) continue;
    const LayerSpec& a = after.layer(l.name);
    const auto& d = *std::find_if(s.delta.layers.begin(), s.delta.layers.end(),
                                  [&](const auto& ld) { return ld.name == l.name; });
    std::snprintf(line, sizeof line, "%-10s %9zu %9zu %12llu %12llu\n", l.name.c_str(),
                  l.out_channels, a.out_channels,
                  static_cast<unsigned long long>(d.baseline_params),
                  static_cast<unsigned long long>(d.candidate_params));
    text += line;
  }
  s.text = std::move(text);
  return s;
}

std::string plan_to_json(const PrunePlan& plan) {
  ordered_json j;
  j["targets"] = ordered_json::object();
  for (const auto& [layer, indices] : plan.targets) j["targets"][layer] = indices;
  j["provenance"] = {{"ratios", plan.provenance.ratios},
                     {"criterion", plan.provenance.criterion},
                     {"report_fingerprint", plan.provenance.report_fingerprint}};
  return j.dump(2) + "\n";
}

PrunePlan plan_from_json(const std::string& text) {
  PrunePlan plan;
  try {
    const ordered_json j = ordered_json::parse(text);
    for (const auto& [layer, indices] : j.at("targets").items()) {
      auto v = indices.get<std::vector<std::size_t>>();
      std::sort(v.begin(), v.end());
      plan.targets[layer] = std::move(v);
    }
    if (j.contains("provenance")) {
      const auto& p = j["provenance"];
      if (p.contains("ratios")) {
        plan.provenance.ratios = p["ratios"].get<std::map<std::string, double>>();
      }
      plan.provenance.criterion = p.value("criterion", "");
      plan.provenance.report_fingerprint = p.value("report_fingerprint", "");
    }
  } catch (const ordered_json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("prune plan: ") + e.what());
  }
  return plan;
}

}  // namespace prunekit
