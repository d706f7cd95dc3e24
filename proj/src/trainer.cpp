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

#include "prunekit/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>

#include <json.hpp>

#include "prunekit/error.hpp"

namespace prunekit {
namespace {

using nlohmann::ordered_json;

double sample_beta(double alpha, std::mt19937_64& rng) {
  std::gamma_distribution<double> gamma(alpha, 1.0);
  const double x = gamma(rng);
  const double y = gamma(rng);
  if (x + y == 0.0) return 0.5;
  return x / (x + y);
}

class Optimizer {
 public:
  Optimizer(const OptimizerConfig& config, double lr) : config_(config), lr_(lr) {}

  void step(ParamMap<float>& params, const ParamMap<float>& grads) {
    ++t_;
    for (const auto& [name, g] : grads) {
      Tensor& p = params.at(name);
      auto& m = first_[name];
      if (m.empty()) m.assign(p.size(), 0.0);
      if (config_.kind == OptimizerKind::kSgdMomentum) {
        for (std::size_t i = 0; i < p.size(); ++i) {
          m[i] = config_.momentum * m[i] + static_cast<double>(g[i]);
          p[i] = static_cast<float>(static_cast<double>(p[i]) - lr_ * m[i]);
        }
        continue;
      }
      auto& v = second_[name];
      if (v.empty()) v.assign(p.size(), 0.0);
      const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
      const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double gi = static_cast<double>(g[i]);
        m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
        v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
        const double update = (m[i] / c1) / (std::sqrt(v[i] / c2) + config_.epsilon);
        p[i] = static_cast<float>(static_cast<double>(p[i]) - lr_ * update);
      }
    }
  }

 private:
  OptimizerConfig config_;
  double lr_;
  std::size_t t_ = 0;
  std::map<std::string, std::vector<double>> first_;
  std::map<std::string, std::vector<double>> second_;
};

// Epoch-wise shuffled sampling without replacement.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch) : order_(n), batch_(std::min(batch, n)) {
    std::iota(order_.begin(), order_.end(), std::size_t{0});
    pos_ = n;
  }

  std::vector<std::size_t> next(std::mt19937_64& rng) {
    std::vector<std::size_t> out;
    while (out.size() < batch_) {
      if (pos_ == order_.size()) {
        std::shuffle(order_.begin(), order_.end(), rng);
        pos_ = 0;
      }
      out.push_back(order_[pos_++]);
    }
    return out;
  }

 private:
  std::vector<std::size_t> order_;
  std::size_t batch_;
  std::size_t pos_;
};

}  // namespace

void validate_config(const TrainConfig& config) {
  if (config.batch_size < 1) {
    throw Error(ErrorCode::kInvalidArgument, "batch_size must be >= 1");
  }
  if (!(config.learning_rate > 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "learning_rate must be > 0");
  }
  if (!(config.mixup_alpha >= 0.0)) {
    throw Error(ErrorCode::kInvalidArgument, "mixup_alpha must be >= 0");
  }
}

std::string config_to_json(const TrainConfig& c) {
  ordered_json j;
  j["iterations"] = c.iterations;
  j["batch_size"] = c.batch_size;
  j["learning_rate"] = c.learning_rate;
  j["optimizer"] = {
      {"kind", c.optimizer.kind == OptimizerKind::kAdam ? "adam" : "sgd"},
      {"momentum", c.optimizer.momentum},
      {"beta1", c.optimizer.beta1},
      {"beta2", c.optimizer.beta2},
      {"epsilon", c.optimizer.epsilon}};
  j["mixup_alpha"] = c.mixup_alpha;
  j["masking"] = {{"time_masks", c.masking.time_masks},
                  {"max_time_width", c.masking.max_time_width},
                  {"freq_masks", c.masking.freq_masks},
                  {"max_freq_width", c.masking.max_freq_width}};
  j["seed"] = c.seed;
  j["bn_mode"] = c.bn_mode == Mode::kTrain ? "train" : "eval";
  j["eval_every"] = c.eval_every;
  j["eval_batch"] = c.eval_batch;
  return j.dump(2) + "\n";
}

TrainConfig config_from_json(const std::string& text) {
  TrainConfig c;
  try {
    const ordered_json j = ordered_json::parse(text);
    c.iterations = j.value("iterations", c.iterations);
    c.batch_size = j.value("batch_size", c.batch_size);
    c.learning_rate = j.value("learning_rate", c.learning_rate);
    if (j.contains("optimizer")) {
      const auto& o = j["optimizer"];
      const std::string kind = o.value("kind", std::string("adam"));
      if (kind == "adam") {
        c.optimizer.kind = OptimizerKind::kAdam;
      } else if (kind == "sgd") {
        c.optimizer.kind = OptimizerKind::kSgdMomentum;
      } else {
        throw Error(ErrorCode::kParse, "optimizer.kind must be adam or sgd");
      }
      c.optimizer.momentum = o.value("momentum", c.optimizer.momentum);
      c.optimizer.beta1 = o.value("beta1", c.optimizer.beta1);
      c.optimizer.beta2 = o.value("beta2", c.optimizer.beta2);
      c.optimizer.epsilon = o.value("epsilon", c.optimizer.epsilon);
    }
    c.mixup_alpha = j.value("mixup_alpha", c.mixup_alpha);
    if (j.contains("masking")) {
      const auto& m = j["masking"];
      c.masking.time_masks = m.value("time_masks", c.masking.time_masks);
      c.masking.max_time_width = m.value("max_time_width", c.masking.max_time_width);
      c.masking.freq_masks = m.value("freq_masks", c.masking.freq_masks);
      c.masking.max_freq_width = m.value("max_freq_width", c.masking.max_freq_width);
    }
    c.seed = j.value("seed", c.seed);
    const std::string mode = j.value("bn_mode", std::string("train"));
    if (mode != "train" && mode != "eval") {
      throw Error(ErrorCode::kParse, "bn_mode must be train or eval");
    }
    c.bn_mode = mode == "train" ? Mode::kTrain : Mode::kEval;
    c.eval_every = j.value("eval_every", c.eval_every);
    c.eval_batch = j.value("eval_batch", c.eval_batch);
  } catch (const ordered_json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("train config: ") + e.what());
  }
  validate_config(c);
  return c;
}

std::string train_log_to_csv(const TrainLog& log) {
  std::string out = "iteration,loss,map\n";
  char buf[96];
  for (const auto& e : log.entries) {
    std::snprintf(buf, sizeof buf, "%zu,%.9g,%.9g\n", e.iteration, e.loss, e.map);
    out += buf;
  }
  return out;
}

MixedBatch mixup_with(const Tensor& inputs, const Tensor& targets,
                      std::span<const double> lambda,
                      std::span<const std::size_t> partner) {
  const std::size_t batch = inputs.dim(0);
  if (targets.dim(0) != batch || lambda.size() != batch || partner.size() != batch) {
    throw Error(ErrorCode::kShapeMismatch, "mixup arguments disagree on batch size");
  }
  MixedBatch out{Tensor(inputs.shape()), Tensor(targets.shape())};
  const std::size_t per_in = inputs.size() / batch, per_t = targets.size() / batch;
  for (std::size_t i = 0; i < batch; ++i) {
    const double l = lambda[i];
    const std::size_t j = partner[i];
    for (std::size_t e = 0; e < per_in; ++e) {
      out.inputs[i * per_in + e] = static_cast<float>(
          l * inputs[i * per_in + e] + (1.0 - l) * inputs[j * per_in + e]);
    }
    for (std::size_t e = 0; e < per_t; ++e) {
      out.targets[i * per_t + e] = static_cast<float>(
          l * targets[i * per_t + e] + (1.0 - l) * targets[j * per_t + e]);
    }
  }
  return out;
}

MixedBatch mixup(const Tensor& inputs, const Tensor& targets, double alpha,
                 std::mt19937_64& rng) {
  if (alpha < 0.0) throw Error(ErrorCode::kInvalidArgument, "mixup alpha < 0");
  if (alpha == 0.0) return {inputs, targets};
  const std::size_t batch = inputs.dim(0);
  std::vector<std::size_t> partner(batch);
  std::iota(partner.begin(), partner.end(), std::size_t{0});
  std::shuffle(partner.begin(), partner.end(), rng);
  std::vector<double> lambda(batch);
  for (double& l : lambda) l = sample_beta(alpha, rng);
  return mixup_with(inputs, targets, lambda, partner);
}

Tensor spec_mask(const Tensor& inputs, const MaskingConfig& masking,
                 std::mt19937_64& rng) {
  Tensor out = inputs;
  if ((masking.time_masks == 0 || masking.max_time_width == 0) &&
      (masking.freq_masks == 0 || masking.max_freq_width == 0)) {
    return out;
  }
  const std::size_t batch = out.dim(0), channels = out.dim(1);
  const std::size_t time = out.dim(2), freq = out.dim(3);
  auto stripe = [&](std::size_t extent, std::size_t max_width) {
    std::uniform_int_distribution<std::size_t> wd(0, std::min(max_width, extent));
    const std::size_t w = wd(rng);
    std::uniform_int_distribution<std::size_t> sd(0, extent - w);
    const std::size_t s = sd(rng);
    return std::pair{s, w};
  };
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t m = 0; m < masking.time_masks && masking.max_time_width > 0; ++m) {
      const auto [s, w] = stripe(time, masking.max_time_width);
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t t = s; t < s + w; ++t) {
          for (std::size_t f = 0; f < freq; ++f) out.at(b, c, t, f) = 0.0f;
        }
      }
    }
    for (std::size_t m = 0; m < masking.freq_masks && masking.max_freq_width > 0; ++m) {
      const auto [s, w] = stripe(freq, masking.max_freq_width);
      for (std::size_t c = 0; c < channels; ++c) {
        for (std::size_t t = 0; t < time; ++t) {
          for (std::size_t f = s; f < s + w; ++f) out.at(b, c, t, f) = 0.0f;
        }
      }
    }
  }
  return out;
}

Tensor predict(Network<float>& net, const Dataset& dataset, std::size_t batch_size) {
  if (dataset.empty()) throw Error(ErrorCode::kEmptyDataset, "dataset is empty");
  const std::size_t classes = net.spec().class_count;
  Tensor scores({dataset.size(), classes});
  batch_size = std::max<std::size_t>(1, batch_size);
  for (std::size_t begin = 0; begin < dataset.size(); begin += batch_size) {
    const std::size_t end = std::min(dataset.size(), begin + batch_size);
    std::vector<std::size_t> idx(end - begin);
    std::iota(idx.begin(), idx.end(), begin);
    const Tensor probs = net.forward(make_input_batch(dataset, idx), Mode::kEval);
    std::copy(probs.data().begin(), probs.data().end(),
              scores.data().begin() + static_cast<std::ptrdiff_t>(begin * classes));
  }
  return scores;
}

EvalResult evaluate(const ModelSpec& spec, const Checkpoint& weights,
                    const Dataset& dataset, std::size_t batch_size) {
  Network<float> net(spec, weights);
  const Tensor scores = predict(net, dataset, batch_size);
  std::vector<std::size_t> all(dataset.size());
  std::iota(all.begin(), all.end(), std::size_t{0});
  return mean_average_precision(scores, make_target_batch(dataset, all));
}

FinetuneResult finetune(const ModelSpec& spec, const Checkpoint& weights,
                        const Dataset& train, const Dataset& heldout,
                        const TrainConfig& config) {
  validate_config(config);
  if (train.empty()) throw Error(ErrorCode::kEmptyDataset, "training set is empty");
  if (heldout.empty()) throw Error(ErrorCode::kEmptyDataset, "held-out set is empty");
  if (train.class_count != spec.class_count || heldout.class_count != spec.class_count) {
    throw Error(ErrorCode::kShapeMismatch,
                "dataset label width does not match the model's class_count");
  }
  const auto start = std::chrono::steady_clock::now();
  FinetuneResult result{weights, {}};
  result.log.config = config;
  if (config.iterations == 0) return result;

  Network<float> net(spec, weights);
  Optimizer optimizer(config.optimizer, config.learning_rate);
  std::mt19937_64 rng(config.seed);
  BatchSampler sampler(train.size(), config.batch_size);
  const std::size_t every =
      config.eval_every > 0 ? config.eval_every : std::max<std::size_t>(1, config.iterations / 50);
  std::vector<std::size_t> held(heldout.size());
  std::iota(held.begin(), held.end(), std::size_t{0});
  const Tensor held_targets = make_target_batch(heldout, held);

  double loss_sum = 0.0;
  std::size_t loss_count = 0;
  for (std::size_t it = 1; it <= config.iterations; ++it) {
    const auto idx = sampler.next(rng);
    Tensor inputs = make_input_batch(train, idx);
    Tensor targets = make_target_batch(train, idx);
    if (config.mixup_alpha > 0.0) {
      auto mixed = mixup(inputs, targets, config.mixup_alpha, rng);
      inputs = std::move(mixed.inputs);
      targets = std::move(mixed.targets);
    }
    inputs = spec_mask(inputs, config.masking, rng);

    auto lg = net.backward(inputs, targets, config.bn_mode);
    optimizer.step(net.params(), lg.gradients);
    loss_sum += lg.loss;
    ++loss_count;

    if (it % every == 0 || it == config.iterations) {
      const Tensor scores = predict(net, heldout, config.eval_batch);
      const EvalResult eval = mean_average_precision(scores, held_targets);
      result.log.entries.push_back(
          {it, loss_sum / static_cast<double>(loss_count), eval.map});
      loss_sum = 0.0;
      loss_count = 0;
    }
  }
  result.weights = net.to_checkpoint();
  result.log.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return result;
}

}  // namespace prunekit
