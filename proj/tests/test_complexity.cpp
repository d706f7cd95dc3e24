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

#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include <json.hpp>

#include "prunekit/complexity.hpp"
#include "prunekit/engine.hpp"
#include "prunekit/pruner.hpp"
#include "prunekit/storage.hpp"
#include "support.hpp"

using namespace prunekit;

namespace {

// Removes the first floor(ratio * n) filters of each listed conv.
ModelSpec prune_uniform(const ModelSpec& spec, const std::vector<std::string>& layers,
                        double ratio) {
  PrunePlan plan;
  for (const auto& name : layers) {
    const std::size_t k = filters_to_remove(ratio, spec.layer(name).out_channels);
    std::vector<std::size_t> idx(k);
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (k) plan.targets[name] = idx;
  }
  return apply_plan_to_spec(spec, plan);
}

const std::vector<std::string> kLastSix{"C7", "C8", "C9", "C10", "C11", "C12"};

}  // namespace

TEST_CASE("CNN14 trainable parameter total") {
  const auto start = std::chrono::steady_clock::now();
  const ComplexityReport r = count_params(build_cnn14_preset());
  CHECK(r.total_params == 80'753'615u);
  CHECK(std::chrono::steady_clock::now() - start < std::chrono::seconds(1));
  CHECK(r.has_params);
  CHECK_FALSE(r.has_macs);
}

TEST_CASE("single-layer parameter counts") {
  ModelSpec conv;
  conv.input_shape = {16, 16};
  conv.layers = {LayerSpec::conv2d("C", 256, 512, 3)};
  CHECK(count_params(conv).total_params == 1'179'648u);

  const ComplexityReport cnn = count_params(build_cnn14_preset());
  const auto it = std::find_if(cnn.layers.begin(), cnn.layers.end(),
                               [](const LayerComplexity& l) { return l.name == "fc_audioset"; });
  REQUIRE(it != cnn.layers.end());
  CHECK(it->params == 1'079'823u);
}

TEST_CASE("CNN14 MAC total and per-layer examples") {
  const ComplexityReport r = count_macs(build_cnn14_preset());
  CHECK(r.total_macs == 20'039'530'496u);
  CHECK(r.total_macs >= 19'000'000'000u);
  CHECK(r.total_macs <= 22'000'000'000u);
  for (const auto& l : r.layers) {
    if (l.name == "C1") CHECK(l.macs == 36'864'000u);
    if (l.name == "fc_audioset") CHECK(l.macs == 1'079'296u);
  }
}

TEST_CASE("totals equal the per-layer sums") {
  const ComplexityReport r = analyze(build_cnn14_preset());
  std::uint64_t p = 0, m = 0;
  for (const auto& l : r.layers) {
    p += l.params;
    m += l.macs;
  }
  CHECK(p == r.total_params);
  CHECK(m == r.total_macs);
}

TEST_CASE("reductions after uniform pruning of the last six convs") {
  const ModelSpec base = build_cnn14_preset();
  struct Row {
    double ratio;
    std::uint64_t params;
    std::uint64_t macs;
    double param_pct;
    double mac_pct;
  };
  const std::vector<Row> rows{{0.25, 47'408'591u, 15'639'574'528u, 41.3, 22.0},
                              {0.50, 23'205'839u, 12'412'188'672u, 71.3, 38.1},
                              {0.75, 8'145'359u, 10'357'372'928u, 89.9, 48.3}};
  for (const Row& row : rows) {
    const ModelSpec pruned = prune_uniform(base, kLastSix, row.ratio);
    const DeltaReport d = compare(analyze(base), analyze(pruned));
    CHECK(d.candidate_params == row.params);
    CHECK(d.candidate_macs == row.macs);
    CHECK(std::round(d.param_reduction * 10) / 10 == doctest::Approx(row.param_pct));
    CHECK(std::round(d.mac_reduction * 10) / 10 == doctest::Approx(row.mac_pct));
  }
  const ModelSpec half = prune_uniform(base, kLastSix, 0.5);
  CHECK(half.layer("fc1").in_features == 1024);
  CHECK(half.layer("fc1").out_features == 2048);
}

TEST_CASE("comparing a report with itself gives zero deltas") {
  const ComplexityReport r = analyze(build_cnn14_preset());
  const DeltaReport d = compare(r, r);
  CHECK(d.param_reduction == 0.0);
  CHECK(d.mac_reduction == 0.0);
  for (const auto& l : d.layers) {
    CHECK(l.param_reduction == 0.0);
    CHECK(l.mac_reduction == 0.0);
  }
  CHECK_THROWS_AS(compare(count_params(build_cnn14_preset()), count_macs(build_cnn14_preset())),
                  Error);
}

TEST_CASE("the last six convs hold most of the parameters") {
  const ComplexityReport r = count_params(build_cnn14_preset());
  const double convs = parameter_share(r, kLastSix);
  CHECK(convs >= 0.90);
  CHECK(convs == doctest::Approx(0.9203).epsilon(1e-3));
  std::vector<std::string> with_fc = kLastSix;
  with_fc.push_back("fc1");
  CHECK(parameter_share(r, with_fc) == doctest::Approx(0.9723).epsilon(1e-3));
}

TEST_CASE("analyzer agrees with materialized weights and instrumented forward") {
  std::mt19937_64 rng(99);
  for (int trial = 0; trial < 10; ++trial) {
    const ModelSpec spec = testing::random_small_spec(rng);
    const ComplexityReport r = analyze(spec);
    const Checkpoint w = init_random(spec, trial);
    CHECK(r.total_params + r.total_running_stats == w.element_count());
    std::uint64_t trainable = 0;
    for (const auto& slot : parameter_layout(spec)) {
      if (slot.trainable) trainable += element_count(slot.shape);
    }
    CHECK(r.total_params == trainable);

    Network<float> net(spec, w);
    OpCounter counter;
    net.forward(Tensor({1, 1, spec.input_shape.time, spec.input_shape.freq}, 0.5f),
                Mode::kEval, nullptr, &counter);
    CHECK(counter.macs == r.total_macs);
  }
}

TEST_CASE("pruning any filter strictly lowers both totals") {
  std::mt19937_64 rng(4);
  const ModelSpec base = build_toy_preset();
  const ComplexityReport before = analyze(base);
  for (const auto& conv : base.conv_layer_names()) {
    const std::size_t n = base.layer(conv).out_channels;
    PrunePlan plan;
    plan.targets[conv] = {std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)};
    const ComplexityReport after = analyze(apply_plan_to_spec(base, plan));
    CHECK(after.total_params < before.total_params);
    CHECK(after.total_macs < before.total_macs);
  }
}

TEST_CASE("report formats") {
  const ComplexityReport r = analyze(build_toy_preset());
  const std::string csv = report_to_csv(r);
  CHECK(csv.rfind("layer,kind,params,macs\n", 0) == 0);
  CHECK(csv.find("\ntotal,,") != std::string::npos);
  const auto j = nlohmann::json::parse(report_to_json(r));
  CHECK(j["totals"]["params"].get<std::uint64_t>() == r.total_params);

  const DeltaReport d = compare(r, analyze(prune_uniform(build_toy_preset(), {"C3", "C4"}, 0.5)));
  const std::string dcsv = delta_to_csv(d);
  CHECK(dcsv.find("total") != std::string::npos);
  CHECK(reduction_percent(200, 150) == doctest::Approx(25.0));
}
