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

#include "prunekit/metrics.hpp"

#include <algorithm>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "prunekit/error.hpp"

namespace prunekit {

double average_precision(std::span<const double> scores,
                         std::span<const float> labels) {
  if (scores.size() != labels.size()) {
    throw Error(ErrorCode::kShapeMismatch, "scores and labels differ in length");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return a < b;
  });
  std::size_t positives = 0;
  for (float l : labels) positives += l > 0.5f ? 1 : 0;
  if (positives == 0) throw Error(ErrorCode::kNoPositives, "no positive labels");

  double sum = 0.0;
  std::size_t seen = 0, hits = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t group_hits = 0, j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      group_hits += labels[order[j]] > 0.5f ? 1 : 0;
      ++j;
    }
    seen += j - i;
    hits += group_hits;
    if (group_hits > 0) {
      sum += static_cast<double>(group_hits) * static_cast<double>(hits) /
             static_cast<double>(seen);
    }
    i = j;
  }
  return sum / static_cast<double>(positives);
}

EvalResult mean_average_precision(const Tensor& scores, const Tensor& labels) {
  if (scores.rank() != 2 || scores.shape() != labels.shape()) {
    throw Error(ErrorCode::kShapeMismatch,
                "scores " + shape_to_string(scores.shape()) + " and labels " +
                    shape_to_string(labels.shape()) + " must be equal (samples, classes)");
  }
  const std::size_t n = scores.dim(0), classes = scores.dim(1);
  EvalResult r;
  r.ap.resize(classes);
  double total = 0.0;
  std::size_t scored = 0;
  std::vector<double> col(n);
  std::vector<float> lab(n);
  for (std::size_t k = 0; k < classes; ++k) {
    bool any = false;
    for (std::size_t i = 0; i < n; ++i) {
      col[i] = static_cast<double>(scores.at(i, k));
      lab[i] = labels.at(i, k);
      any = any || lab[i] > 0.5f;
    }
    if (!any) {
      ++r.skipped_classes;
      continue;
    }
    r.ap[k] = average_precision(col, lab);
    total += *r.ap[k];
    ++scored;
  }
  if (scored == 0) {
    throw Error(ErrorCode::kAllClassesEmpty, "no class has a positive label");
  }
  r.map = total / static_cast<double>(scored);
  return r;
}

std::string eval_to_csv(const EvalResult& result) {
  std::string out = "class,ap\n";
  char buf[64];
  for (std::size_t k = 0; k < result.ap.size(); ++k) {
    if (result.ap[k]) {
      std::snprintf(buf, sizeof buf, "%zu,%.6f\n", k, *result.ap[k]);
    } else {
      std::snprintf(buf, sizeof buf, "%zu,\n", k);
    }
    out += buf;
  }
  return out;
}

std::string eval_to_json(const EvalResult& result) {
  nlohmann::ordered_json j;
  j["map"] = result.map;
  j["classes"] = result.ap.size();
  j["scored_classes"] = result.ap.size() - result.skipped_classes;
  j["skipped_classes"] = result.skipped_classes;
  return j.dump(2) + "\n";
}

}  // namespace prunekit
