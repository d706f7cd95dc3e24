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

#include "prunekit/engine.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "prunekit/error.hpp"
#include "prunekit/parallel.hpp"

namespace prunekit {
namespace ops {
namespace {

void require(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::kShapeMismatch, what);
}

template <typename T>
void check_conv_shapes(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                       const BasicTensor<T>* bias) {
  require(input.rank() == 4, "conv2d input must be rank 4, got " +
                                 shape_to_string(input.shape()));
  require(weight.rank() == 4 && weight.dim(2) == weight.dim(3),
          "conv2d filters must be (n, c, k, k)");
  require(input.dim(1) == weight.dim(1),
          "conv2d input has " + std::to_string(input.dim(1)) +
              " channels, filters expect " + std::to_string(weight.dim(1)));
  require(weight.dim(2) % 2 == 1, "same padding needs an odd kernel");
  if (bias) {
    require(bias->rank() == 1 && bias->dim(0) == weight.dim(0),
            "conv2d bias must have one entry per filter");
  }
}

// Channel-axis geometry of a rank-4 tensor: element (o, c, r) lives at
// (o * channels + c) * inner + r.
struct AxisView {
  std::size_t outer, channels, inner;
};

AxisView axis_view(const Shape& shape, std::size_t axis) {
  AxisView v{1, shape.at(axis), 1};
  for (std::size_t i = 0; i < axis; ++i) v.outer *= shape[i];
  for (std::size_t i = axis + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

}  // namespace

template <typename T>
BasicTensor<T> conv2d_forward_direct(const BasicTensor<T>& input,
                                     const BasicTensor<T>& weight,
                                     const BasicTensor<T>* bias,
                                     OpCounter* counter) {
  check_conv_shapes(input, weight, bias);
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t time = input.dim(2), freq = input.dim(3);
  const std::size_t filters = weight.dim(0), k = weight.dim(2);
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const std::size_t patch_len = channels * k * k;
  BasicTensor<T> out({batch, filters, time, freq});
  std::vector<T> patches(freq * patch_len);
  const T* w = weight.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < time; ++t) {
      // Gather the patches of output row t.
      for (std::size_t f = 0; f < freq; ++f) {
        T* patch = &patches[f * patch_len];
        std::size_t i = 0;
        for (std::size_t c = 0; c < channels; ++c) {
          for (std::size_t ky = 0; ky < k; ++ky) {
            const auto ti = static_cast<std::ptrdiff_t>(t + ky) - pad;
            for (std::size_t kx = 0; kx < k; ++kx, ++i) {
              const auto fi = static_cast<std::ptrdiff_t>(f + kx) - pad;
              const bool inside = ti >= 0 && ti < static_cast<std::ptrdiff_t>(time) &&
                                  fi >= 0 && fi < static_cast<std::ptrdiff_t>(freq);
              patch[i] = inside ? input.at(b, c, static_cast<std::size_t>(ti),
                                           static_cast<std::size_t>(fi))
                                : T(0);
            }
          }
        }
      }
      for (std::size_t n = 0; n < filters; ++n) {
        const T* filter = w + n * patch_len;
        for (std::size_t f = 0; f < freq; ++f) {
          const T* patch = &patches[f * patch_len];
          T sum = T(0);
          for (std::size_t i = 0; i < patch_len; ++i) {
            sum += patch[i] * filter[i];
            if (counter) ++counter->macs;
          }
          if (bias) sum += (*bias)[n];
          out.at(b, n, t, f) = sum;
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input,
                              const BasicTensor<T>& weight,
                              const BasicTensor<T>* bias) {
  check_conv_shapes(input, weight, bias);
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t time = input.dim(2), freq = input.dim(3);
  const std::size_t filters = weight.dim(0), k = weight.dim(2);
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto T_ = static_cast<std::ptrdiff_t>(time);
  const auto F_ = static_cast<std::ptrdiff_t>(freq);
  BasicTensor<T> out({batch, filters, time, freq});
  parallel_for(batch * filters, [&](std::size_t job) {
    const std::size_t b = job / filters, n = job % filters;
    T* plane = &out.at(b, n, 0, 0);
    for (std::size_t c = 0; c < channels; ++c) {
      const T* src = &input.at(b, c, 0, 0);
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t dt = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -dt);
        const std::ptrdiff_t t1 = std::min(T_, T_ - dt);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t df = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::ptrdiff_t f0 = std::max<std::ptrdiff_t>(0, -df);
          const std::ptrdiff_t f1 = std::min(F_, F_ - df);
          const T wv = weight.at(n, c, ky, kx);
          for (std::ptrdiff_t t = t0; t < t1; ++t) {
            T* dst = plane + t * F_;
            const T* row = src + (t + dt) * F_ + df;
            for (std::ptrdiff_t f = f0; f < f1; ++f) dst[f] += row[f] * wv;
          }
        }
      }
    }
    if (bias) {
      const T bv = (*bias)[n];
      for (std::size_t i = 0; i < time * freq; ++i) plane[i] += bv;
    }
  });
  return out;
}

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight, bool has_bias,
                             const BasicTensor<T>& grad_output) {
  check_conv_shapes<T>(input, weight, nullptr);
  const std::size_t batch = input.dim(0), channels = input.dim(1);
  const std::size_t time = input.dim(2), freq = input.dim(3);
  const std::size_t filters = weight.dim(0), k = weight.dim(2);
  require(grad_output.shape() == Shape{batch, filters, time, freq},
          "conv2d grad_output shape mismatch");
  const auto pad = static_cast<std::ptrdiff_t>(k / 2);
  const auto T_ = static_cast<std::ptrdiff_t>(time);
  const auto F_ = static_cast<std::ptrdiff_t>(freq);

  ConvGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(weight.shape()),
                 std::nullopt};

  // d input: each (b, c) plane gathers from every filter, n-major.
  parallel_for(batch * channels, [&](std::size_t job) {
    const std::size_t b = job / channels, c = job % channels;
    T* plane = &g.input.at(b, c, 0, 0);
    for (std::size_t n = 0; n < filters; ++n) {
      const T* dy = &grad_output.at(b, n, 0, 0);
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t dt = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -dt);
        const std::ptrdiff_t t1 = std::min(T_, T_ - dt);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t df = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::ptrdiff_t f0 = std::max<std::ptrdiff_t>(0, -df);
          const std::ptrdiff_t f1 = std::min(F_, F_ - df);
          const T wv = weight.at(n, c, ky, kx);
          for (std::ptrdiff_t t = t0; t < t1; ++t) {
            T* dst = plane + (t + dt) * F_ + df;
            const T* src = dy + t * F_;
            for (std::ptrdiff_t f = f0; f < f1; ++f) dst[f] += src[f] * wv;
          }
        }
      }
    }
  });

  // d weight: each filter owns its rows; sums run b, t, f in order.
  parallel_for(filters, [&](std::size_t n) {
    for (std::size_t c = 0; c < channels; ++c) {
      for (std::size_t ky = 0; ky < k; ++ky) {
        const std::ptrdiff_t dt = static_cast<std::ptrdiff_t>(ky) - pad;
        const std::ptrdiff_t t0 = std::max<std::ptrdiff_t>(0, -dt);
        const std::ptrdiff_t t1 = std::min(T_, T_ - dt);
        for (std::size_t kx = 0; kx < k; ++kx) {
          const std::ptrdiff_t df = static_cast<std::ptrdiff_t>(kx) - pad;
          const std::ptrdiff_t f0 = std::max<std::ptrdiff_t>(0, -df);
          const std::ptrdiff_t f1 = std::min(F_, F_ - df);
          T sum = T(0);
          for (std::size_t b = 0; b < batch; ++b) {
            const T* dy = &grad_output.at(b, n, 0, 0);
            const T* x = &input.at(b, c, 0, 0);
            for (std::ptrdiff_t t = t0; t < t1; ++t) {
              const T* dy_row = dy + t * F_;
              const T* x_row = x + (t + dt) * F_ + df;
              for (std::ptrdiff_t f = f0; f < f1; ++f) sum += dy_row[f] * x_row[f];
            }
          }
          g.weight.at(n, c, ky, kx) = sum;
        }
      }
    }
  });

  if (has_bias) {
    BasicTensor<T> db({filters});
    for (std::size_t n = 0; n < filters; ++n) {
      T sum = T(0);
      for (std::size_t b = 0; b < batch; ++b) {
        const T* dy = &grad_output.at(b, n, 0, 0);
        for (std::size_t i = 0; i < time * freq; ++i) sum += dy[i];
      }
      db[n] = sum;
    }
    g.bias = std::move(db);
  }
  return g;
}

template <typename T>
BasicTensor<T> batch_norm_forward(const BasicTensor<T>& input,
                                  const BasicTensor<T>& gamma,
                                  const BasicTensor<T>& beta,
                                  BasicTensor<T>& running_mean,
                                  BasicTensor<T>& running_var, double epsilon,
                                  std::size_t axis, Mode mode,
                                  bool update_running, NormCache<T>* cache) {
  require(input.rank() == 4, "batch norm input must be rank 4");
  const AxisView v = axis_view(input.shape(), axis);
  const std::size_t ch = v.channels;
  require(gamma.size() == ch && beta.size() == ch && running_mean.size() == ch &&
              running_var.size() == ch,
          "batch norm parameters do not match " + std::to_string(ch) +
              " channels");

  std::vector<double> mean(ch), inv_std(ch);
  if (mode == Mode::kEval) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double var = static_cast<double>(running_var[c]);
      if (!(var > 0.0)) {
        throw Error(ErrorCode::kNonPositiveVariance,
                    "running variance of channel " + std::to_string(c) +
                        " is not positive");
      }
      mean[c] = static_cast<double>(running_mean[c]);
      inv_std[c] = 1.0 / std::sqrt(var + epsilon);
    }
  } else {
    const double count = static_cast<double>(v.outer * v.inner);
    std::vector<double> sum(ch, 0.0), sq(ch, 0.0);
    const T* x = input.data().data();
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t c = 0; c < ch; ++c) {
        const T* p = x + (o * ch + c) * v.inner;
        double s = 0.0;
        for (std::size_t r = 0; r < v.inner; ++r) s += static_cast<double>(p[r]);
        sum[c] += s;
      }
    }
    for (std::size_t c = 0; c < ch; ++c) mean[c] = sum[c] / count;
    for (std::size_t o = 0; o < v.outer; ++o) {
      for (std::size_t c = 0; c < ch; ++c) {
        const T* p = x + (o * ch + c) * v.inner;
        double s = 0.0;
        for (std::size_t r = 0; r < v.inner; ++r) {
          const double d = static_cast<double>(p[r]) - mean[c];
          s += d * d;
        }
        sq[c] += s;
      }
    }
    for (std::size_t c = 0; c < ch; ++c) {
      const double var = sq[c] / count;
      if (!(var + epsilon > 0.0)) {
        throw Error(ErrorCode::kNonPositiveVariance,
                    "batch variance of channel " + std::to_string(c) +
                        " is zero and epsilon is zero");
      }
      inv_std[c] = 1.0 / std::sqrt(var + epsilon);
      if (update_running) {
        const double unbiased = count > 1 ? var * count / (count - 1) : var;
        running_mean[c] = static_cast<T>(kBatchNormMomentum * running_mean[c] +
                                         (1.0 - kBatchNormMomentum) * mean[c]);
        running_var[c] = static_cast<T>(kBatchNormMomentum * running_var[c] +
                                        (1.0 - kBatchNormMomentum) * unbiased);
      }
    }
  }

  BasicTensor<T> out(input.shape());
  const T* x = input.data().data();
  T* y = out.data().data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t c = 0; c < ch; ++c) {
      const T scale = static_cast<T>(static_cast<double>(gamma[c]) * inv_std[c]);
      const T shift = static_cast<T>(static_cast<double>(beta[c]) -
                                     mean[c] * static_cast<double>(gamma[c]) *
                                         inv_std[c]);
      const std::size_t base = (o * ch + c) * v.inner;
      for (std::size_t r = 0; r < v.inner; ++r) y[base + r] = x[base + r] * scale + shift;
    }
  }
  if (cache) {
    cache->mean = std::move(mean);
    cache->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
NormGrads<T> batch_norm_backward(const BasicTensor<T>& input,
                                 const BasicTensor<T>& gamma,
                                 const NormCache<T>& cache, std::size_t axis,
                                 Mode mode, const BasicTensor<T>& grad_output) {
  require(grad_output.shape() == input.shape(), "batch norm grad shape mismatch");
  const AxisView v = axis_view(input.shape(), axis);
  const std::size_t ch = v.channels;
  const T* x = input.data().data();
  const T* dy = grad_output.data().data();

  std::vector<double> sum_dy(ch, 0.0), sum_dy_xhat(ch, 0.0);
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t c = 0; c < ch; ++c) {
      const std::size_t base = (o * ch + c) * v.inner;
      for (std::size_t r = 0; r < v.inner; ++r) {
        const double xhat = (static_cast<double>(x[base + r]) - cache.mean[c]) *
                            cache.inv_std[c];
        sum_dy[c] += static_cast<double>(dy[base + r]);
        sum_dy_xhat[c] += static_cast<double>(dy[base + r]) * xhat;
      }
    }
  }

  NormGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>({ch}),
                 BasicTensor<T>({ch})};
  for (std::size_t c = 0; c < ch; ++c) {
    g.gamma[c] = static_cast<T>(sum_dy_xhat[c]);
    g.beta[c] = static_cast<T>(sum_dy[c]);
  }
  const double count = static_cast<double>(v.outer * v.inner);
  T* dx = g.input.data().data();
  for (std::size_t o = 0; o < v.outer; ++o) {
    for (std::size_t c = 0; c < ch; ++c) {
      const double scale = static_cast<double>(gamma[c]) * cache.inv_std[c];
      const std::size_t base = (o * ch + c) * v.inner;
      for (std::size_t r = 0; r < v.inner; ++r) {
        if (mode == Mode::kEval) {
          dx[base + r] = static_cast<T>(static_cast<double>(dy[base + r]) * scale);
        } else {
          const double xhat = (static_cast<double>(x[base + r]) - cache.mean[c]) *
                              cache.inv_std[c];
          dx[base + r] = static_cast<T>(
              scale * (static_cast<double>(dy[base + r]) - sum_dy[c] / count -
                       xhat * sum_dy_xhat[c] / count));
        }
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (T& v : out.data()) v = v > T(0) ? v : T(0);
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& output,
                             const BasicTensor<T>& grad_output) {
  require(output.shape() == grad_output.shape(), "relu grad shape mismatch");
  BasicTensor<T> g(output.shape());
  for (std::size_t i = 0; i < g.size(); ++i) {
    g[i] = output[i] > T(0) ? grad_output[i] : T(0);
  }
  return g;
}

template <typename T>
BasicTensor<T> avgpool2x2(const BasicTensor<T>& input) {
  require(input.rank() == 4, "avgpool input must be rank 4");
  const std::size_t time = input.dim(2) / 2, freq = input.dim(3) / 2;
  if (time == 0 || freq == 0) {
    throw Error(ErrorCode::kZeroExtent, "avgpool2x2 on a map smaller than 2x2");
  }
  BasicTensor<T> out({input.dim(0), input.dim(1), time, freq});
  for (std::size_t b = 0; b < input.dim(0); ++b) {
    for (std::size_t c = 0; c < input.dim(1); ++c) {
      for (std::size_t t = 0; t < time; ++t) {
        for (std::size_t f = 0; f < freq; ++f) {
          const T s = input.at(b, c, 2 * t, 2 * f) + input.at(b, c, 2 * t, 2 * f + 1) +
                      input.at(b, c, 2 * t + 1, 2 * f) +
                      input.at(b, c, 2 * t + 1, 2 * f + 1);
          out.at(b, c, t, f) = s * T(0.25);
        }
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> avgpool2x2_backward(const Shape& input_shape,
                                   const BasicTensor<T>& grad_output) {
  BasicTensor<T> g(input_shape);
  for (std::size_t b = 0; b < grad_output.dim(0); ++b) {
    for (std::size_t c = 0; c < grad_output.dim(1); ++c) {
      for (std::size_t t = 0; t < grad_output.dim(2); ++t) {
        for (std::size_t f = 0; f < grad_output.dim(3); ++f) {
          const T v = grad_output.at(b, c, t, f) * T(0.25);
          g.at(b, c, 2 * t, 2 * f) = v;
          g.at(b, c, 2 * t, 2 * f + 1) = v;
          g.at(b, c, 2 * t + 1, 2 * f) = v;
          g.at(b, c, 2 * t + 1, 2 * f + 1) = v;
        }
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> global_pool(const BasicTensor<T>& input,
                           std::vector<std::size_t>* argmax) {
  require(input.rank() == 4, "global_pool input must be rank 4");
  const std::size_t batch = input.dim(0), ch = input.dim(1);
  const std::size_t time = input.dim(2), freq = input.dim(3);
  if (time == 0 || freq == 0) {
    throw Error(ErrorCode::kZeroExtent, "global_pool on an empty map");
  }
  BasicTensor<T> out({batch, ch});
  if (argmax) argmax->assign(batch * ch, 0);
  std::vector<T> row_mean(time);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      for (std::size_t t = 0; t < time; ++t) {
        const T* row = &input.at(b, c, t, 0);
        T s = T(0);
        for (std::size_t f = 0; f < freq; ++f) s += row[f];
        row_mean[t] = s / static_cast<T>(freq);
      }
      T total = T(0);
      std::size_t best = 0;
      for (std::size_t t = 0; t < time; ++t) {
        total += row_mean[t];
        if (row_mean[t] > row_mean[best]) best = t;
      }
      out.at(b, c) = total / static_cast<T>(time) + row_mean[best];
      if (argmax) (*argmax)[b * ch + c] = best;
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> global_pool_backward(const Shape& input_shape,
                                    const std::vector<std::size_t>& argmax,
                                    const BasicTensor<T>& grad_output) {
  const std::size_t batch = input_shape[0], ch = input_shape[1];
  const std::size_t time = input_shape[2], freq = input_shape[3];
  require(grad_output.shape() == Shape{batch, ch}, "global_pool grad shape mismatch");
  BasicTensor<T> g(input_shape);
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t c = 0; c < ch; ++c) {
      const T go = grad_output.at(b, c);
      for (std::size_t t = 0; t < time; ++t) {
        T d = go / static_cast<T>(time);
        if (t == argmax[b * ch + c]) d += go;
        d /= static_cast<T>(freq);
        T* row = &g.at(b, c, t, 0);
        for (std::size_t f = 0; f < freq; ++f) row[f] = d;
      }
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight,
                             const BasicTensor<T>* bias, OpCounter* counter) {
  require(input.rank() == 2 && weight.rank() == 2 && input.dim(1) == weight.dim(1),
          "dense input " + shape_to_string(input.shape()) +
              " does not match weight " + shape_to_string(weight.shape()));
  const std::size_t batch = input.dim(0), in = weight.dim(1), outf = weight.dim(0);
  if (bias) require(bias->size() == outf, "dense bias size mismatch");
  BasicTensor<T> out({batch, outf});
  for (std::size_t b = 0; b < batch; ++b) {
    const T* x = &input.at(b, 0);
    for (std::size_t o = 0; o < outf; ++o) {
      const T* w = &weight.at(o, 0);
      T s = T(0);
      for (std::size_t i = 0; i < in; ++i) s += x[i] * w[i];
      if (bias) s += (*bias)[o];
      out.at(b, o) = s;
    }
  }
  if (counter) counter->macs += batch * in * outf;
  return out;
}

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight, bool has_bias,
                             const BasicTensor<T>& grad_output) {
  const std::size_t batch = input.dim(0), in = weight.dim(1), outf = weight.dim(0);
  require(grad_output.shape() == Shape{batch, outf}, "dense grad shape mismatch");
  DenseGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(weight.shape()),
                  std::nullopt};
  for (std::size_t b = 0; b < batch; ++b) {
    T* dx = &g.input.at(b, 0);
    for (std::size_t o = 0; o < outf; ++o) {
      const T dy = grad_output.at(b, o);
      const T* w = &weight.at(o, 0);
      for (std::size_t i = 0; i < in; ++i) dx[i] += dy * w[i];
    }
  }
  for (std::size_t o = 0; o < outf; ++o) {
    T* dw = &g.weight.at(o, 0);
    for (std::size_t b = 0; b < batch; ++b) {
      const T dy = grad_output.at(b, o);
      const T* x = &input.at(b, 0);
      for (std::size_t i = 0; i < in; ++i) dw[i] += dy * x[i];
    }
  }
  if (has_bias) {
    BasicTensor<T> db({outf});
    for (std::size_t o = 0; o < outf; ++o) {
      T s = T(0);
      for (std::size_t b = 0; b < batch; ++b) s += grad_output.at(b, o);
      db[o] = s;
    }
    g.bias = std::move(db);
  }
  return g;
}

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input) {
  BasicTensor<T> out = input;
  for (T& v : out.data()) {
    if (v >= T(0)) {
      v = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T(1) + e);
    }
  }
  return out;
}

template <typename T>
double bce_with_logits(const BasicTensor<T>& logits,
                       const BasicTensor<T>& targets,
                       BasicTensor<T>* grad_logits) {
  require(logits.shape() == targets.shape(),
          "targets " + shape_to_string(targets.shape()) +
              " do not match outputs " + shape_to_string(logits.shape()));
  const double n = static_cast<double>(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double z = static_cast<double>(logits[i]);
    const double y = static_cast<double>(targets[i]);
    total += std::max(z, 0.0) - z * y + std::log1p(std::exp(-std::abs(z)));
  }
  if (grad_logits) {
    *grad_logits = sigmoid(logits);
    for (std::size_t i = 0; i < logits.size(); ++i) {
      (*grad_logits)[i] = static_cast<T>(
          (static_cast<double>((*grad_logits)[i]) - static_cast<double>(targets[i])) / n);
    }
  }
  return total / n;
}

#define PRUNEKIT_INSTANTIATE_OPS(T)                                            \
  template BasicTensor<T> conv2d_forward_direct(                               \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*,     \
      OpCounter*);                                                             \
  template BasicTensor<T> conv2d_forward(                                      \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>*);    \
  template ConvGrads<T> conv2d_backward(const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&, bool,           \
                                        const BasicTensor<T>&);                \
  template BasicTensor<T> batch_norm_forward(                                  \
      const BasicTensor<T>&, const BasicTensor<T>&, const BasicTensor<T>&,     \
      BasicTensor<T>&, BasicTensor<T>&, double, std::size_t, Mode, bool,       \
      NormCache<T>*);                                                          \
  template NormGrads<T> batch_norm_backward(                                   \
      const BasicTensor<T>&, const BasicTensor<T>&, const NormCache<T>&,       \
      std::size_t, Mode, const BasicTensor<T>&);                               \
  template BasicTensor<T> relu(const BasicTensor<T>&);                         \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&);                \
  template BasicTensor<T> avgpool2x2(const BasicTensor<T>&);                   \
  template BasicTensor<T> avgpool2x2_backward(const Shape&,                    \
                                              const BasicTensor<T>&);          \
  template BasicTensor<T> global_pool(const BasicTensor<T>&,                   \
                                      std::vector<std::size_t>*);              \
  template BasicTensor<T> global_pool_backward(                                \
      const Shape&, const std::vector<std::size_t>&, const BasicTensor<T>&);   \
  template BasicTensor<T> dense_forward(const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&,                 \
                                        const BasicTensor<T>*, OpCounter*);    \
  template DenseGrads<T> dense_backward(const BasicTensor<T>&,                 \
                                        const BasicTensor<T>&, bool,           \
                                        const BasicTensor<T>&);                \
  template BasicTensor<T> sigmoid(const BasicTensor<T>&);                      \
  template double bce_with_logits(const BasicTensor<T>&,                       \
                                  const BasicTensor<T>&, BasicTensor<T>*);

PRUNEKIT_INSTANTIATE_OPS(float)
PRUNEKIT_INSTANTIATE_OPS(double)
#undef PRUNEKIT_INSTANTIATE_OPS

}  // namespace ops

namespace {

std::size_t norm_axis(LayerKind kind) {
  return kind == LayerKind::kInputBN ? 3 : 1;
}

}  // namespace

template <typename T>
Network<T>::Network(ModelSpec spec, const Checkpoint& weights)
    : spec_(std::move(spec)) {
  check_binding(spec_, weights);
  for (const auto& nt : weights.tensors()) {
    params_.emplace(nt.name, nt.tensor.template cast<T>());
  }
}

template <typename T>
const BasicTensor<T>& Network<T>::param(const std::string& name) const {
  const auto it = params_.find(name);
  if (it == params_.end()) {
    throw Error(ErrorCode::kMissingWeights, "no parameter '" + name + "'");
  }
  return it->second;
}

template <typename T>
BasicTensor<T>& Network<T>::param(const std::string& name) {
  const auto it = params_.find(name);
  if (it == params_.end()) {
    throw Error(ErrorCode::kMissingWeights, "no parameter '" + name + "'");
  }
  return it->second;
}

template <typename T>
BasicTensor<T> Network<T>::forward(const BasicTensor<T>& input, Mode mode,
                                   ForwardTrace<T>* trace,
                                   OpCounter* counter) {
  return forward_layers(input, mode, trace, counter, spec_.layers.size());
}

template <typename T>
BasicTensor<T> Network<T>::forward_layers(const BasicTensor<T>& input,
                                          Mode mode, ForwardTrace<T>* trace,
                                          OpCounter* counter,
                                          std::size_t stop_before,
                                          std::vector<std::pair<std::size_t, BasicTensor<T>*>>*
                                              captures) {
  if (input.rank() != 4 || input.dim(1) != 1) {
    throw Error(ErrorCode::kShapeMismatch,
                "network input must be (batch, 1, time, freq), got " +
                    shape_to_string(input.shape()));
  }
  // Validates the time/freq extents against the graph before any compute.
  infer_shapes(spec_, {input.dim(2), input.dim(3)});

  if (trace) {
    trace->mode = mode;
    trace->input = input;
    trace->outputs.assign(spec_.layers.size(), {});
    trace->norm.assign(spec_.layers.size(), {});
    trace->argmax.assign(spec_.layers.size(), {});
  }
  BasicTensor<T> cur = input;
  for (std::size_t i = 0; i < stop_before; ++i) {
    const LayerSpec& l = spec_.layers[i];
    BasicTensor<T> next;
    switch (l.kind) {
      case LayerKind::kInputBN:
      case LayerKind::kBatchNorm: {
        ops::NormCache<T> cache;
        next = ops::batch_norm_forward(
            cur, param(l.name + ".gamma"), param(l.name + ".beta"),
            param(l.name + ".running_mean"), param(l.name + ".running_var"),
            l.epsilon, norm_axis(l.kind), mode,
            mode == Mode::kTrain && update_running_, trace ? &cache : nullptr);
        if (trace) trace->norm[i] = std::move(cache);
        break;
      }
      case LayerKind::kConv2d: {
        const BasicTensor<T>* bias = l.has_bias ? &param(l.name + ".bias") : nullptr;
        next = counter ? ops::conv2d_forward_direct(cur, param(l.name + ".weight"),
                                                    bias, counter)
                       : ops::conv2d_forward(cur, param(l.name + ".weight"), bias);
        break;
      }
      case LayerKind::kReLU:
        next = ops::relu(cur);
        break;
      case LayerKind::kAvgPool:
        next = ops::avgpool2x2(cur);
        break;
      case LayerKind::kGlobalPool:
        next = ops::global_pool(cur, trace ? &trace->argmax[i] : nullptr);
        break;
      case LayerKind::kDense: {
        const BasicTensor<T>* bias = l.has_bias ? &param(l.name + ".bias") : nullptr;
        next = ops::dense_forward(cur, param(l.name + ".weight"), bias, counter);
        break;
      }
      case LayerKind::kSigmoid:
        next = ops::sigmoid(cur);
        break;
    }
    if (trace) trace->outputs[i] = next;
    if (captures) {
      for (auto& [layer, dst] : *captures) {
        if (layer == i) *dst = next;
      }
    }
    cur = std::move(next);
  }
  return cur;
}

template <typename T>
LossAndGradients<T> Network<T>::backward(const BasicTensor<T>& input,
                                         const BasicTensor<T>& targets,
                                         Mode mode) {
  const std::size_t n_layers = spec_.layers.size();
  if (n_layers < 2 || spec_.layers.back().kind != LayerKind::kSigmoid) {
    throw Error(ErrorCode::kInvalidSpec, "backward needs a final Sigmoid layer");
  }
  ForwardTrace<T> trace;
  forward(input, mode, &trace);
  const BasicTensor<T>& logits = trace.outputs[n_layers - 2];

  LossAndGradients<T> result;
  BasicTensor<T> grad;
  result.loss = ops::bce_with_logits(logits, targets, &grad);
  if (!std::isfinite(result.loss)) {
    throw Error(ErrorCode::kDivergedLoss, "loss is not finite");
  }

  for (std::size_t idx = n_layers - 1; idx-- > 0;) {
    const LayerSpec& l = spec_.layers[idx];
    const BasicTensor<T>& layer_in = idx == 0 ? trace.input : trace.outputs[idx - 1];
    switch (l.kind) {
      case LayerKind::kInputBN:
      case LayerKind::kBatchNorm: {
        auto g = ops::batch_norm_backward(layer_in, param(l.name + ".gamma"),
                                          trace.norm[idx], norm_axis(l.kind),
                                          mode, grad);
        result.gradients[l.name + ".gamma"] = std::move(g.gamma);
        result.gradients[l.name + ".beta"] = std::move(g.beta);
        grad = std::move(g.input);
        break;
      }
      case LayerKind::kConv2d: {
        auto g = ops::conv2d_backward(layer_in, param(l.name + ".weight"),
                                      l.has_bias, grad);
        result.gradients[l.name + ".weight"] = std::move(g.weight);
        if (g.bias) result.gradients[l.name + ".bias"] = std::move(*g.bias);
        grad = std::move(g.input);
        break;
      }
      case LayerKind::kReLU:
        grad = ops::relu_backward(trace.outputs[idx], grad);
        break;
      case LayerKind::kAvgPool:
        grad = ops::avgpool2x2_backward(layer_in.shape(), grad);
        break;
      case LayerKind::kGlobalPool:
        grad = ops::global_pool_backward(layer_in.shape(), trace.argmax[idx], grad);
        break;
      case LayerKind::kDense: {
        auto g = ops::dense_backward(layer_in, param(l.name + ".weight"),
                                     l.has_bias, grad);
        result.gradients[l.name + ".weight"] = std::move(g.weight);
        if (g.bias) result.gradients[l.name + ".bias"] = std::move(*g.bias);
        grad = std::move(g.input);
        break;
      }
      case LayerKind::kSigmoid:
        // Only the final Sigmoid is supported; it is fused into the loss.
        throw Error(ErrorCode::kInvalidSpec,
                    "Sigmoid is only supported as the final layer");
    }
  }
  return result;
}

template <typename T>
double Network<T>::loss(const BasicTensor<T>& input,
                        const BasicTensor<T>& targets, Mode mode) {
  const std::size_t n_layers = spec_.layers.size();
  if (n_layers < 2 || spec_.layers.back().kind != LayerKind::kSigmoid) {
    throw Error(ErrorCode::kInvalidSpec, "loss needs a final Sigmoid layer");
  }
  const BasicTensor<T> logits =
      forward_layers(input, mode, nullptr, nullptr, n_layers - 1);
  return ops::bce_with_logits(logits, targets);
}

template <typename T>
std::vector<BasicTensor<T>> Network<T>::capture(
    const BasicTensor<T>& input, Mode mode,
    const std::vector<std::size_t>& layers) {
  std::vector<BasicTensor<T>> out(layers.size());
  std::vector<std::pair<std::size_t, BasicTensor<T>*>> captures;
  std::size_t stop = 0;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i] >= spec_.layers.size()) {
      throw Error(ErrorCode::kUnknownLayer, "capture index out of range");
    }
    captures.emplace_back(layers[i], &out[i]);
    stop = std::max(stop, layers[i] + 1);
  }
  forward_layers(input, mode, nullptr, nullptr, stop, &captures);
  return out;
}

template <typename T>
Checkpoint Network<T>::to_checkpoint() const {
  std::vector<NamedTensor> tensors;
  for (const auto& slot : parameter_layout(spec_)) {
    tensors.push_back({slot.name, param(slot.name).template cast<float>()});
  }
  return Checkpoint(std::move(tensors));
}

template class Network<float>;
template class Network<double>;

std::size_t post_activation_layer(const ModelSpec& spec,
                                  const std::string& conv_name) {
  const auto idx = spec.find(conv_name);
  if (!idx || spec.layers[*idx].kind != LayerKind::kConv2d) {
    throw Error(ErrorCode::kUnknownLayer,
                "'" + conv_name + "' is not a Conv2d layer");
  }
  std::size_t i = *idx;
  if (i + 1 < spec.layers.size() &&
      spec.layers[i + 1].kind == LayerKind::kBatchNorm) {
    ++i;
  }
  if (i + 1 < spec.layers.size() && spec.layers[i + 1].kind == LayerKind::kReLU) {
    ++i;
  }
  return i;
}

}  // namespace prunekit
