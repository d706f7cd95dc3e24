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

#ifndef PRUNEKIT_TRAINER_HPP_
#define PRUNEKIT_TRAINER_HPP_

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "prunekit/engine.hpp"
#include "prunekit/metrics.hpp"
#include "prunekit/model_graph.hpp"
#include "prunekit/storage.hpp"

namespace prunekit {

enum class OptimizerKind { kSgdMomentum, kAdam };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kAdam;
  double momentum = 0.9;  // SGD only
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct MaskingConfig {
  std::size_t time_masks = 0;
  std::size_t max_time_width = 0;
  std::size_t freq_masks = 0;
  std::size_t max_freq_width = 0;
};

// Defaults are desk-scale placeholders, not a tuned large-scale recipe.
struct TrainConfig {
  std::size_t iterations = 200;
  std::size_t batch_size = 16;
  double learning_rate = 1e-3;
  OptimizerConfig optimizer;
  double mixup_alpha = 0.0;  // 0 disables mixup
  MaskingConfig masking;
  std::uint64_t seed = 0;
  Mode bn_mode = Mode::kTrain;
  std::size_t eval_every = 0;  // 0: every max(1, iterations / 50)
  std::size_t eval_batch = 32;
};

void validate_config(const TrainConfig& config);
std::string config_to_json(const TrainConfig& config);
// Missing keys keep their defaults.
TrainConfig config_from_json(const std::string& text);

struct TrainLogEntry {
  std::size_t iteration = 0;
  double loss = 0.0;  // mean training loss since the previous entry
  double map = 0.0;   // held-out mAP after this iteration

  bool operator==(const TrainLogEntry&) const = default;
};

struct TrainLog {
  std::vector<TrainLogEntry> entries;
  double wall_seconds = 0.0;
  TrainConfig config;
};

std::string train_log_to_csv(const TrainLog& log);  // iteration,loss,map

struct MixedBatch {
  Tensor inputs;   // (batch, 1, time, freq)
  Tensor targets;  // (batch, classes)
};

// Mixes sample i with sample partner[i] using weight lambda[i] on sample i.
MixedBatch mixup_with(const Tensor& inputs, const Tensor& targets,
                      std::span<const double> lambda,
                      std::span<const std::size_t> partner);

// Draws one lambda ~ Beta(alpha, alpha) per sample and a shuffled pairing.
// alpha == 0 returns the batch unchanged without consuming randomness.
MixedBatch mixup(const Tensor& inputs, const Tensor& targets, double alpha,
                 std::mt19937_64& rng);

// Zeroes up to `time_masks` time stripes and `freq_masks` frequency stripes
// per sample, each of width uniform in [0, max width].
Tensor spec_mask(const Tensor& inputs, const MaskingConfig& masking,
                 std::mt19937_64& rng);

// Eval-mode class probabilities for every clip, (clips, classes).
Tensor predict(Network<float>& net, const Dataset& dataset,
               std::size_t batch_size = 32);
EvalResult evaluate(const ModelSpec& spec, const Checkpoint& weights,
                    const Dataset& dataset, std::size_t batch_size = 32);

struct FinetuneResult {
  Checkpoint weights;
  TrainLog log;
};

// Minimizes mean BCE on `train`, logging held-out mAP at fixed intervals.
// Single-threaded runs are bit-reproducible for a given seed.
// Throws kEmptyDataset, kDivergedLoss.
FinetuneResult finetune(const ModelSpec& spec, const Checkpoint& weights,
                        const Dataset& train, const Dataset& heldout,
                        const TrainConfig& config);

}  // namespace prunekit

#endif  // PRUNEKIT_TRAINER_HPP_
