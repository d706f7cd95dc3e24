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

#ifndef PRUNEKIT_METRICS_HPP_
#define PRUNEKIT_METRICS_HPP_

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "prunekit/tensor.hpp"

namespace prunekit {

// Non-interpolated average precision over the descending-score sweep.
// Items with equal scores form one group: recall and precision advance once
// per group. Labels > 0.5 are positives. Throws kNoPositives and
// kShapeMismatch.
double average_precision(std::span<const double> scores,
                         std::span<const float> labels);

struct EvalResult {
  std::vector<std::optional<double>> ap;  // nullopt for all-negative classes
  double map = 0.0;
  std::size_t skipped_classes = 0;
};

// scores and labels are (samples, classes). Classes without positives are
// skipped and counted. Throws kAllClassesEmpty, kShapeMismatch.
EvalResult mean_average_precision(const Tensor& scores, const Tensor& labels);

std::string eval_to_csv(const EvalResult& result);   // class,ap
std::string eval_to_json(const EvalResult& result);  // summary

}  // namespace prunekit

#endif  // PRUNEKIT_METRICS_HPP_
