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

#include <random>

#include "prunekit/error.hpp"
#include "prunekit/metrics.hpp"
#include "support.hpp"

using namespace prunekit;

namespace {

double ap(std::vector<double> s, std::vector<float> l) { return average_precision(s, l); }

}  // namespace

TEST_CASE("average precision examples") {
  CHECK(ap({0.9, 0.1}, {1, 0}) == 1.0);
  CHECK(ap({0.9, 0.1}, {0, 1}) == 0.5);
  CHECK(ap({0.3, 0.2, 0.1}, {1, 0, 1}) == doctest::Approx(5.0 / 6.0));
}

TEST_CASE("tied scores are scored as one group") {
  // Both items share a score: precision at the single threshold is 1/2.
  CHECK(ap({0.5, 0.5}, {1, 0}) == 0.5);
  CHECK(ap({0.5, 0.5}, {0, 1}) == 0.5);
  CHECK(ap({0.7, 0.5, 0.5, 0.1}, {0, 1, 1, 0}) == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("average precision input errors") {
  CHECK_THROWS_AS(ap({0.1, 0.2}, {0, 0}), Error);
  try {
    ap({0.1}, {0, 1});
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
  }
}

TEST_CASE("formula equals threshold enumeration exactly") {
  std::mt19937_64 rng(2024);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(1, 100)(rng);
    const int levels = std::uniform_int_distribution<int>(2, 50)(rng);
    std::vector<double> s(n);
    std::vector<float> l(n);
    std::uniform_int_distribution<int> level(0, levels - 1);
    std::bernoulli_distribution pos(0.3);
    for (std::size_t i = 0; i < n; ++i) {
      s[i] = level(rng) / static_cast<double>(levels);
      l[i] = pos(rng) ? 1.0f : 0.0f;
    }
    l[std::uniform_int_distribution<std::size_t>(0, n - 1)(rng)] = 1.0f;
    CHECK(average_precision(s, l) == testing::brute_force_ap(s, l));
  }
}

TEST_CASE("AP is invariant under strictly increasing score transforms") {
  std::mt19937_64 rng(77);
  std::normal_distribution<double> g;
  std::bernoulli_distribution pos(0.4);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> s(40), t(40);
    std::vector<float> l(40);
    for (std::size_t i = 0; i < 40; ++i) {
      s[i] = std::round(g(rng) * 4) / 4;
      t[i] = std::exp(3 * s[i]) - 7;
      l[i] = pos(rng);
    }
    l[0] = 1;
    CHECK(average_precision(s, l) == average_precision(t, l));
  }
}

TEST_CASE("mean average precision examples") {
  SUBCASE("perfect predictor") {
    Tensor scores({3, 2}, {0.9f, 0.1f, 0.2f, 0.8f, 0.7f, 0.6f});
    Tensor labels({3, 2}, {1, 0, 0, 1, 1, 1});
    CHECK(mean_average_precision(scores, labels).map == 1.0);
  }
  SUBCASE("one perfect class and one at 0.5") {
    Tensor scores({2, 2}, {0.9f, 0.9f, 0.1f, 0.1f});
    Tensor labels({2, 2}, {1, 0, 0, 1});
    const EvalResult r = mean_average_precision(scores, labels);
    CHECK(*r.ap[0] == 1.0);
    CHECK(*r.ap[1] == 0.5);
    CHECK(r.map == 0.75);
  }
  SUBCASE("all-negative class is skipped") {
    Tensor scores({2, 3}, {0.9f, 0.5f, 0.9f, 0.1f, 0.5f, 0.1f});
    Tensor labels({2, 3}, {1, 0, 0, 0, 0, 1});
    const EvalResult r = mean_average_precision(scores, labels);
    CHECK_FALSE(r.ap[1].has_value());
    CHECK(r.skipped_classes == 1);
    CHECK(r.map == doctest::Approx((1.0 + 0.5) / 2));
    const std::string csv = eval_to_csv(r);
    CHECK(csv.rfind("class,ap\n", 0) == 0);
    CHECK(csv.find("\n1,\n") != std::string::npos);
  }
  SUBCASE("every class empty") {
    try {
      mean_average_precision(Tensor({2, 2}, 0.5f), Tensor({2, 2}, 0.0f));
      FAIL("expected AllClassesEmpty");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kAllClassesEmpty);
    }
  }
}

TEST_CASE("mAP of shuffled labels sits near the class prior") {
  std::mt19937_64 rng(31);
  const std::size_t n = 1000, k = 5;
  Tensor scores({n, k}), labels({n, k});
  std::uniform_real_distribution<float> u;
  std::bernoulli_distribution pos(0.3);
  for (std::size_t i = 0; i < n * k; ++i) {
    scores[i] = u(rng);
    labels[i] = pos(rng);
  }
  const EvalResult r = mean_average_precision(scores, labels);
  CHECK(std::abs(r.map - 0.3) <= 0.1);
}
