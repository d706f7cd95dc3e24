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

#include "prunekit/complexity.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include <json.hpp>

#include "prunekit/error.hpp"

namespace prunekit {
namespace {

using nlohmann::ordered_json;

LayerComplexity layer_params(const LayerSpec& l) {
  LayerComplexity lc{l.name, l.kind};
  switch (l.kind) {
    case LayerKind::kConv2d:
      lc.params = static_cast<std::uint64_t>(l.kernel) * l.kernel * l.in_channels *
                  l.out_channels;
      if (l.has_bias) lc.params += l.out_channels;
      break;
    case LayerKind::kBatchNorm:
      lc.params = 2 * static_cast<std::uint64_t>(l.channels);
      lc.running_stats = 2 * static_cast<std::uint64_t>(l.channels);
      break;
    case LayerKind::kInputBN:
      lc.params = 2 * static_cast<std::uint64_t>(l.bins);
      lc.running_stats = 2 * static_cast<std::uint64_t>(l.bins);
      break;
    case LayerKind::kDense:
      lc.params = static_cast<std::uint64_t>(l.in_features) * l.out_features;
      if (l.has_bias) lc.params += l.out_features;
      break;
    default:
      break;
  }
  return lc;
}

void fill_macs(const ModelSpec& spec, std::vector<LayerComplexity>& layers) {
  const auto shapes = infer_shapes(spec);
  ActivationShape in{1, spec.input_shape.time, spec.input_shape.freq, false};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const LayerSpec& l = spec.layers[i];
    const ActivationShape& out = shapes[i];
    LayerComplexity& lc = layers[i];
    switch (l.kind) {
      case LayerKind::kConv2d:
        lc.macs = static_cast<std::uint64_t>(out.time) * out.freq * l.kernel *
                  l.kernel * l.in_channels * l.out_channels;
        break;
      case LayerKind::kDense:
        lc.macs = static_cast<std::uint64_t>(l.in_features) * l.out_features;
        break;
      default:
        lc.other_ops = in.element_count();
        break;
    }
    in = out;
  }
}

void total_up(ComplexityReport& r) {
  r.total_params = r.total_running_stats = r.total_macs = r.total_other_ops = 0;
  for (const auto& l : r.layers) {
    r.total_params += l.params;
    r.total_running_stats += l.running_stats;
    r.total_macs += l.macs;
    r.total_other_ops += l.other_ops;
  }
}

double round1(double v) { return std::round(v * 10.0) / 10.0; }

std::string percent_string(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

}  // namespace

ComplexityReport count_params(const ModelSpec& spec) {
  ComplexityReport r;
  r.has_params = true;
  for (const auto& l : spec.layers) r.layers.push_back(layer_params(l));
  total_up(r);
  return r;
}

ComplexityReport count_macs(const ModelSpec& spec) {
  ComplexityReport r;
  r.has_macs = true;
  for (const auto& l : spec.layers) r.layers.push_back({l.name, l.kind});
  fill_macs(spec, r.layers);
  total_up(r);
  return r;
}

ComplexityReport analyze(const ModelSpec& spec) {
  ComplexityReport r = count_params(spec);
  r.has_macs = true;
  fill_macs(spec, r.layers);
  total_up(r);
  return r;
}

double reduction_percent(std::uint64_t reference, std::uint64_t candidate) {
  if (reference == 0) return 0.0;
  return 100.0 * (static_cast<double>(reference) - static_cast<double>(candidate)) /
         static_cast<double>(reference);
}

DeltaReport compare(const ComplexityReport& baseline,
                    const ComplexityReport& candidate) {
  if (baseline.has_params != candidate.has_params ||
      baseline.has_macs != candidate.has_macs) {
    throw Error(ErrorCode::kInvalidArgument,
                "compared reports must carry the same metrics");
  }
  DeltaReport d;
  d.has_params = baseline.has_params;
  d.has_macs = baseline.has_macs;
  for (const auto& b : baseline.layers) {
    LayerDelta ld{b.name};
    ld.baseline_params = b.params;
    ld.baseline_macs = b.macs;
    const auto it = std::find_if(candidate.layers.begin(), candidate.layers.end(),
                                 [&](const auto& c) { return c.name == b.name; });
    if (it != candidate.layers.end()) {
      ld.candidate_params = it->params;
      ld.candidate_macs = it->macs;
    }
    ld.param_reduction = reduction_percent(ld.baseline_params, ld.candidate_params);
    ld.mac_reduction = reduction_percent(ld.baseline_macs, ld.candidate_macs);
    d.layers.push_back(std::move(ld));
  }
  d.baseline_params = baseline.total_params;
  d.candidate_params = candidate.total_params;
  d.baseline_macs = baseline.total_macs;
  d.candidate_macs = candidate.total_macs;
  d.param_reduction = reduction_percent(d.baseline_params, d.candidate_params);
  d.mac_reduction = reduction_percent(d.baseline_macs, d.candidate_macs);
  return d;
}

double parameter_share(const ComplexityReport& report,
                       const std::vector<std::string>& layer_names) {
  if (report.total_params == 0) return 0.0;
  std::uint64_t share = 0;
  for (const auto& l : report.layers) {
    if (std::find(layer_names.begin(), layer_names.end(), l.name) !=
        layer_names.end()) {
      share += l.params;
    }
  }
  return static_cast<double>(share) / static_cast<double>(report.total_params);
}

std::string report_to_csv(const ComplexityReport& report) {
  std::string out = "layer,kind,params,macs\n";
  for (const auto& l : report.layers) {
    out += l.name + "," + std::string(layer_kind_name(l.kind)) + "," +
           std::to_string(l.params) + "," + std::to_string(l.macs) + "\n";
  }
  out += "total,," + std::to_string(report.total_params) + "," +
         std::to_string(report.total_macs) + "\n";
  return out;
}

std::string report_to_json(const ComplexityReport& report) {
  ordered_json j;
  j["layers"] = ordered_json::array();
  for (const auto& l : report.layers) {
    j["layers"].push_back({{"layer", l.name},
                           {"kind", std::string(layer_kind_name(l.kind))},
                           {"params", l.params},
                           {"running_stats", l.running_stats},
                           {"macs", l.macs},
                           {"other_ops", l.other_ops}});
  }
  j["totals"] = {{"params", report.total_params},
                 {"running_stats", report.total_running_stats},
                 {"macs", report.total_macs},
                 {"other_ops", report.total_other_ops}};
  return j.dump(2) + "\n";
}

std::string delta_to_csv(const DeltaReport& delta) {
  std::string out =
      "layer,baseline_params,candidate_params,param_reduction_pct,"
      "baseline_macs,candidate_macs,mac_reduction_pct\n";
  auto row = [&](const std::string& name, std::uint64_t bp, std::uint64_t cp,
                 double pr, std::uint64_t bm, std::uint64_t cm, double mr) {
    out += name + "," + std::to_string(bp) + "," + std::to_string(cp) + "," +
           percent_string(pr) + "," + std::to_string(bm) + "," +
           std::to_string(cm) + "," + percent_string(mr) + "\n";
  };
  for (const auto& l : delta.layers) {
    row(l.name, l.baseline_params, l.candidate_params, l.param_reduction,
        l.baseline_macs, l.candidate_macs, l.mac_reduction);
  }
  row("total", delta.baseline_params, delta.candidate_params,
      delta.param_reduction, delta.baseline_macs, delta.candidate_macs,
      delta.mac_reduction);
  return out;
}

std::string delta_to_json(const DeltaReport& delta) {
  ordered_json j;
  j["layers"] = ordered_json::array();
  for (const auto& l : delta.layers) {
    j["layers"].push_back({{"layer", l.name},
                           {"baseline_params", l.baseline_params},
                           {"candidate_params", l.candidate_params},
                           {"param_reduction_pct", round1(l.param_reduction)},
                           {"baseline_macs", l.baseline_macs},
                           {"candidate_macs", l.candidate_macs},
                           {"mac_reduction_pct", round1(l.mac_reduction)}});
  }
  j["totals"] = {{"baseline_params", delta.baseline_params},
                 {"candidate_params", delta.candidate_params},
                 {"param_reduction_pct", round1(delta.param_reduction)},
                 {"baseline_macs", delta.baseline_macs},
                 {"candidate_macs", delta.candidate_macs},
                 {"mac_reduction_pct", round1(delta.mac_reduction)}};
  return j.dump(2) + "\n";
}

}  // namespace prunekit
