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

#include <cmath>
#include <numeric>
#include <random>
#include <thread>

#include "prunekit/engine.hpp"
#include "prunekit/error.hpp"
#include "prunekit/parallel.hpp"
#include "support.hpp"

using namespace prunekit;
using prunekit::testing::random_tensor;

namespace {

// Independent convolution oracle in double precision: zero padding,
// stride 1, explicit loops.
BasicTensor<double> oracle_conv(const Tensor& x, const Tensor& w, const Tensor* bias) {
  const std::size_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const std::size_t N = w.dim(0), K = w.dim(2);
  const long pad = static_cast<long>(K / 2);
  BasicTensor<double> y({B, N, H, W});
  for (std::size_t b = 0; b < B; ++b)
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t t = 0; t < H; ++t)
        for (std::size_t f = 0; f < W; ++f) {
          double acc = bias ? (*bias)[n] : 0.0;
          for (std::size_t c = 0; c < C; ++c)
            for (std::size_t i = 0; i < K; ++i)
              for (std::size_t j = 0; j < K; ++j) {
                const long tt = static_cast<long>(t + i) - pad;
                const long ff = static_cast<long>(f + j) - pad;
                if (tt < 0 || ff < 0 || tt >= static_cast<long>(H) || ff >= static_cast<long>(W)) continue;
                acc += static_cast<double>(x.at(b, c, tt, ff)) * w.at(n, c, i, j);
              }
          y.at(b, n, t, f) = acc;
        }
  return y;
}

}  // namespace

TEST_CASE("conv of a 2x2 map with an all-ones 3x3 kernel sums every element") {
  Tensor x({1, 1, 2, 2}, {1, 2, 3, 4});
  Tensor w({1, 1, 3, 3}, 1.0f);
  Tensor y = ops::conv2d_forward(x, w, static_cast<const Tensor*>(nullptr));
  CHECK(y.shape() == Shape{1, 1, 2, 2});
  for (float v : y.data()) CHECK(v == 10.0f);
  CHECK(ops::conv2d_forward_direct(x, w, static_cast<const Tensor*>(nullptr)) == y);
}

TEST_CASE("identity kernel returns its input, zero kernel returns zeros") {
  std::mt19937_64 rng(7);
  Tensor x = random_tensor({2, 1, 5, 6}, rng);
  Tensor id({1, 1, 3, 3}, 0.0f);
  id.at(0, 0, 1, 1) = 1.0f;
  CHECK(ops::conv2d_forward(x, id, static_cast<const Tensor*>(nullptr)) == x);

  Tensor zero({3, 1, 3, 3}, 0.0f);
  Tensor y = ops::conv2d_forward(x, zero, static_cast<const Tensor*>(nullptr));
  for (float v : y.data()) CHECK(v == 0.0f);
}

TEST_CASE("production conv is bit-identical to the direct form and close to the oracle") {
  std::mt19937_64 rng(11);
  for (std::size_t threads : {0u, 3u}) {
    set_thread_count(threads);
    for (int trial = 0; trial < 12; ++trial) {
      const std::size_t k = std::array<std::size_t, 3>{1, 3, 5}[trial % 3];
      const std::size_t c = 1 + trial % 4, n = 1 + (trial * 7) % 5;
      const std::size_t h = 3 + trial % 5, w_extent = 4 + trial % 3;
      Tensor x = random_tensor({2, c, h, w_extent}, rng);
      Tensor w = random_tensor({n, c, k, k}, rng);
      Tensor b = random_tensor({n}, rng);
      const Tensor* bias = trial % 2 ? &b : nullptr;
      OpCounter counter;
      const Tensor direct = ops::conv2d_forward_direct(x, w, bias, &counter);
      const Tensor fast = ops::conv2d_forward(x, w, bias);
      CHECK(direct == fast);
      CHECK(counter.macs == x.dim(0) * x.dim(2) * x.dim(3) * n * c * k * k);
      const auto oracle = oracle_conv(x, w, bias);
      for (std::size_t i = 0; i < oracle.size(); ++i) {
        CHECK(std::abs(fast[i] - oracle[i]) <= 1e-5 * (1.0 + std::abs(oracle[i])));
      }
    }
  }
  set_thread_count(0);
}

TEST_CASE("conv is linear in its input") {
  std::mt19937_64 rng(3);
  Tensor x1 = random_tensor({2, 3, 6, 5}, rng), x2 = random_tensor({2, 3, 6, 5}, rng);
  Tensor w = random_tensor({4, 3, 3, 3}, rng);
  const float a = 1.75f;
  Tensor mix(x1.shape());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = a * x1[i] + x2[i];
  const Tensor* none = nullptr;
  const Tensor lhs = ops::conv2d_forward(mix, w, none);
  const Tensor y1 = ops::conv2d_forward(x1, w, none), y2 = ops::conv2d_forward(x2, w, none);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < lhs.size(); ++i) {
    const double rhs = a * y1[i] + y2[i];
    num += (lhs[i] - rhs) * (lhs[i] - rhs);
    den += rhs * rhs;
  }
  CHECK(std::sqrt(num / den) < 1e-5);
}

TEST_CASE("permuting filters permutes output channels") {
  std::mt19937_64 rng(5);
  Tensor x = random_tensor({2, 2, 5, 5}, rng);
  Tensor w = random_tensor({4, 2, 3, 3}, rng), b = random_tensor({4}, rng);
  const std::vector<std::size_t> perm{2, 0, 3, 1};
  Tensor wp(w.shape()), bp(b.shape());
  const std::size_t row = 2 * 9;
  for (std::size_t n = 0; n < 4; ++n) {
    std::copy_n(w.data().begin() + perm[n] * row, row, wp.data().begin() + n * row);
    bp[n] = b[perm[n]];
  }
  const Tensor y = ops::conv2d_forward(x, w, &b), yp = ops::conv2d_forward(x, wp, &bp);
  for (std::size_t bi = 0; bi < 2; ++bi)
    for (std::size_t n = 0; n < 4; ++n)
      for (std::size_t t = 0; t < 5; ++t)
        for (std::size_t f = 0; f < 5; ++f) CHECK(yp.at(bi, n, t, f) == y.at(bi, perm[n], t, f));
}

TEST_CASE("batch norm examples") {
  std::mt19937_64 rng(9);
  Tensor x = random_tensor({2, 3, 4, 4}, rng);
  SUBCASE("unit statistics reproduce the input up to the epsilon scale") {
    Tensor g({3}, 1.0f), be({3}, 0.0f), m({3}, 0.0f), v({3}, 1.0f);
    Tensor y = ops::batch_norm_forward(x, g, be, m, v, 1e-5, 1, Mode::kEval, false,
                                       static_cast<ops::NormCache<float>*>(nullptr));
    const double scale = 1.0 / std::sqrt(1.0 + 1e-5);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(std::abs(y[i] - x[i] * scale) <= 1e-6);
  }
  SUBCASE("gamma 0 and beta -1 give a constant") {
    for (Mode mode : {Mode::kEval, Mode::kTrain}) {
      Tensor g({3}, 0.0f), be({3}, -1.0f), m({3}, 0.3f), v({3}, 2.0f);
      Tensor y = ops::batch_norm_forward(x, g, be, m, v, 1e-5, 1, mode, false,
                                         static_cast<ops::NormCache<float>*>(nullptr));
      for (float val : y.data()) CHECK(val == -1.0f);
    }
  }
  SUBCASE("gamma 2, mean 1, var 1, eps 0 maps 3 to 4") {
    Tensor one({1, 1, 1, 1}, 3.0f);
    Tensor g({1}, 2.0f), be({1}, 0.0f), m({1}, 1.0f), v({1}, 1.0f);
    Tensor y = ops::batch_norm_forward(one, g, be, m, v, 0.0, 1, Mode::kEval, false,
                                       static_cast<ops::NormCache<float>*>(nullptr));
    CHECK(y[0] == 4.0f);
  }
  SUBCASE("non-positive running variance is rejected") {
    Tensor g({3}, 1.0f), be({3}, 0.0f), m({3}, 0.0f), v({3}, 1.0f);
    v[1] = 0.0f;
    try {
      ops::batch_norm_forward(x, g, be, m, v, 1e-5, 1, Mode::kEval, false,
                              static_cast<ops::NormCache<float>*>(nullptr));
      FAIL("expected NonPositiveVariance");
    } catch (const Error& e) {
      CHECK(e.code() == ErrorCode::kNonPositiveVariance);
    }
  }
  SUBCASE("train mode normalizes with batch statistics and folds them into running ones") {
    Tensor g({3}, 1.0f), be({3}, 0.0f), m({3}, 0.0f), v({3}, 1.0f);
    Tensor y = ops::batch_norm_forward(x, g, be, m, v, 0.0, 1, Mode::kTrain, true,
                                       static_cast<ops::NormCache<float>*>(nullptr));
    const std::size_t per = 2 * 16;
    for (std::size_t c = 0; c < 3; ++c) {
      double mean = 0, sq = 0, xm = 0, xv = 0;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 4; ++t)
          for (std::size_t f = 0; f < 4; ++f) {
            mean += y.at(b, c, t, f);
            sq += y.at(b, c, t, f) * y.at(b, c, t, f);
            xm += x.at(b, c, t, f);
          }
      xm /= per;
      for (std::size_t b = 0; b < 2; ++b)
        for (std::size_t t = 0; t < 4; ++t)
          for (std::size_t f = 0; f < 4; ++f) xv += (x.at(b, c, t, f) - xm) * (x.at(b, c, t, f) - xm);
      CHECK(std::abs(mean / per) < 1e-6);
      CHECK(std::abs(sq / per - 1.0) < 1e-4);
      CHECK(m[c] == doctest::Approx(0.1 * xm).epsilon(1e-5));
      CHECK(v[c] == doctest::Approx(0.9 + 0.1 * xv / (per - 1)).epsilon(1e-5));
    }
  }
}

TEST_CASE("pointwise and pooling examples") {
  Tensor r = ops::relu(Tensor({2}, {-1.0f, 2.0f}));
  CHECK(r == Tensor({2}, {0.0f, 2.0f}));

  Tensor p = ops::avgpool2x2(Tensor({1, 1, 2, 2}, {1, 2, 3, 4}));
  CHECK(p.shape() == Shape{1, 1, 1, 1});
  CHECK(p[0] == 2.5f);
  Tensor odd = ops::avgpool2x2(Tensor({1, 1, 3, 5}, 1.0f));
  CHECK(odd.shape() == Shape{1, 1, 1, 2});

  CHECK(ops::sigmoid(Tensor({1}, 0.0f))[0] == 0.5f);
  Tensor s = ops::sigmoid(Tensor({2}, {-200.0f, 200.0f}));
  CHECK(s[0] >= 0.0f);
  CHECK(s[1] <= 1.0f);
  CHECK(std::isfinite(s[0]));
}

TEST_CASE("global pool adds the time mean and time max of the frequency mean") {
  // Frequency means per time step: 1, 4, 2.
  Tensor x({1, 1, 3, 2}, {0, 2, 3, 5, 2, 2});
  std::vector<std::size_t> argmax;
  Tensor y = ops::global_pool(x, &argmax);
  CHECK(y.shape() == Shape{1, 1});
  CHECK(y[0] == doctest::Approx(7.0 / 3.0 + 4.0));
  CHECK(argmax == std::vector<std::size_t>{1});

  std::mt19937_64 rng(2);
  Tensor z = random_tensor({2, 3, 6, 4}, rng);
  Tensor shuffled(z.shape());
  const std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
  for (std::size_t b = 0; b < 2; ++b)
    for (std::size_t c = 0; c < 3; ++c)
      for (std::size_t t = 0; t < 6; ++t)
        for (std::size_t f = 0; f < 4; ++f) shuffled.at(b, c, t, f) = z.at(b, c, perm[t], f);
  const Tensor a = ops::global_pool(z), b = ops::global_pool(shuffled);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == doctest::Approx(b[i]).epsilon(1e-6));
}

TEST_CASE("dense layer and its MAC count") {
  Tensor x({2, 3}, {1, 2, 3, -1, 0, 1});
  Tensor w({2, 3}, {1, 0, -1, 2, 2, 2});
  Tensor b({2}, {0.5f, -1.0f});
  OpCounter counter;
  Tensor y = ops::dense_forward(x, w, &b, &counter);
  CHECK(y == Tensor({2, 2}, {-1.5f, 11.0f, -1.5f, -1.0f}));
  CHECK(counter.macs == 2 * 3 * 2);
}

TEST_CASE("single sigmoid unit with target 1 at output 0.5 has logit gradient -0.5") {
  Tensor grad;
  const double loss = ops::bce_with_logits(Tensor({1, 1}, 0.0f), Tensor({1, 1}, 1.0f), &grad);
  CHECK(loss == doctest::Approx(std::log(2.0)));
  CHECK(grad[0] == -0.5f);
}

TEST_CASE("toy two-layer model matches a hand computation") {
  // bn0 (identity stats) -> 1x1 conv (w=2, b=-1) -> ReLU -> global pool ->
  // dense 1->2 (w={1,-1}, b={0,0.5}) -> sigmoid.
  ModelSpec spec;
  spec.input_shape = {2, 2};
  spec.class_count = 2;
  spec.layers = {LayerSpec::input_bn("bn0", 2),
                 LayerSpec::conv2d("C1", 1, 1, 1, true),
                 LayerSpec::relu("C1.relu"),
                 LayerSpec::global_pool("global_pool"),
                 LayerSpec::dense("fc", 1, 2),
                 LayerSpec::sigmoid("output")};
  spec.layers[0].epsilon = 0.0;
  spec.conv_index = {{"C1", "C1"}};
  Checkpoint w = init_random(spec, 1);
  w.at("bn0.gamma").fill(1.0f);
  w.at("bn0.beta").fill(0.0f);
  w.at("bn0.running_mean").fill(0.0f);
  w.at("bn0.running_var").fill(1.0f);
  w.at("C1.weight").fill(2.0f);
  w.at("C1.bias").fill(-1.0f);
  w.at("fc.weight") = Tensor({2, 1}, {1.0f, -1.0f});
  w.at("fc.bias") = Tensor({2}, {0.0f, 0.5f});
  Network<float> net(spec, w);
  // Input [[0,1],[2,3]] -> conv [[-1,1],[3,5]] -> relu [[0,1],[3,5]]
  // freq means 0.5, 4 -> mean 2.25 + max 4 = 6.25.
  Tensor y = net.forward(Tensor({1, 1, 2, 2}, {0, 1, 2, 3}), Mode::kEval);
  CHECK(y[0] == doctest::Approx(1.0 / (1.0 + std::exp(-6.25))));
  CHECK(y[1] == doctest::Approx(1.0 / (1.0 + std::exp(6.25 - 0.5))));
}

TEST_CASE("identical inputs in one batch give identical rows, and reruns are bitwise equal") {
  const ModelSpec spec = build_toy_preset();
  const Checkpoint w = init_random(spec, 4);
  Network<float> net(spec, w);
  std::mt19937_64 rng(1);
  Tensor one = random_tensor({1, 1, 100, 64}, rng);
  Tensor two({2, 1, 100, 64});
  std::copy(one.data().begin(), one.data().end(), two.data().begin());
  std::copy(one.data().begin(), one.data().end(), two.data().begin() + one.size());
  const Tensor y = net.forward(two, Mode::kEval);
  for (std::size_t k = 0; k < spec.class_count; ++k) CHECK(y.at(0, k) == y.at(1, k));
  CHECK(net.forward(two, Mode::kEval) == y);
  set_thread_count(4);
  CHECK(net.forward(two, Mode::kEval) == y);
  set_thread_count(0);
}

TEST_CASE("input with the wrong frequency extent is rejected") {
  const ModelSpec spec = build_toy_preset();
  Network<float> net(spec, init_random(spec, 1));
  try {
    net.forward(Tensor({1, 1, 100, 32}), Mode::kEval);
    FAIL("expected ShapeMismatch");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kShapeMismatch);
  }
}

TEST_CASE("targets equal to the outputs give zero output-layer gradient") {
  const ModelSpec spec = testing::gradient_check_spec();
  Network<float> net(spec, init_random(spec, 3));
  std::mt19937_64 rng(8);
  Tensor x = random_tensor({3, 1, 8, 8}, rng);
  Tensor probs = net.forward(x, Mode::kEval);
  const auto g = net.backward(x, probs, Mode::kEval);
  for (float v : g.gradients.at("fc_out.bias").data()) CHECK(std::abs(v) < 1e-7);
}

TEST_CASE("analytic gradients match central differences") {
  const ModelSpec spec = testing::gradient_check_spec();
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::mt19937_64 rng(seed);
    Checkpoint w = init_random(spec, seed);
    testing::perturb_norm_layers(spec, w, rng);
    Tensor x = random_tensor({2, 1, 8, 8}, rng);
    Tensor y = testing::random_targets(2, 3, rng);
    for (Mode mode : {Mode::kEval, Mode::kTrain}) {
      Network<double> shadow(spec, w);
      const auto g64 = testing::finite_difference_check(shadow, x.cast<double>(),
                                                        y.cast<double>(), mode, 1e-4);
      CHECK(g64.relative < 1e-6);
      CHECK(g64.unresolved * 100 <= g64.checked);

      Network<float> net(spec, w);
      const auto g32 = testing::finite_difference_check(net, x, y, mode, 1e-2);
      CHECK(g32.relative < 1e-3);
      CHECK(g32.unresolved * 100 <= g32.checked);
    }
  }
}

TEST_CASE("32-bit and 64-bit analytic gradients agree") {
  const ModelSpec spec = testing::gradient_check_spec();
  std::mt19937_64 rng(12);
  Checkpoint w = init_random(spec, 12);
  testing::perturb_norm_layers(spec, w, rng);
  Tensor x = random_tensor({4, 1, 8, 8}, rng);
  Tensor y = testing::random_targets(4, 3, rng);
  Network<float> f(spec, w);
  Network<double> d(spec, w);
  const auto gf = f.backward(x, y, Mode::kTrain);
  const auto gd = d.backward(x.cast<double>(), y.cast<double>(), Mode::kTrain);
  CHECK(gf.loss == doctest::Approx(gd.loss).epsilon(1e-6));
  for (const auto& [name, g] : gd.gradients) {
    double err = 0, norm = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      err += std::pow(gf.gradients.at(name)[i] - g[i], 2);
      norm += g[i] * g[i];
    }
    INFO(name);
    CHECK(std::sqrt(err) <= 1e-5 * std::max(1.0, std::sqrt(norm)));
  }
}

TEST_CASE("CNN14 forward on a full-size clip yields 527 probabilities in (0,1)") {
  const ModelSpec spec = build_cnn14_preset();
  Network<float> net(spec, init_random(spec, 0));
  std::mt19937_64 rng(6);
  Tensor x = random_tensor({1, 1, 1000, 64}, rng, -3.0f, 3.0f);
  set_thread_count(std::max<std::size_t>(1, std::thread::hardware_concurrency()));
  const Tensor y = net.forward(x, Mode::kEval);
  set_thread_count(0);
  CHECK(y.shape() == Shape{1, 527});
  for (float v : y.data()) {
    CHECK(v > 0.0f);
    CHECK(v < 1.0f);
  }
}
