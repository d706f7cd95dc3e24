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

#ifndef PRUNEKIT_ENGINE_HPP_
#define PRUNEKIT_ENGINE_HPP_

#include <cstdint>
#include <map>
#include <utility>
#include <optional>
#include <string>
#include <vector>

#include "prunekit/model_graph.hpp"
#include "prunekit/storage.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

enum class Mode { kTrain, kEval };

inline constexpr double kBatchNormMomentum = 0.9;

// Counts multiply-accumulates performed by the instrumented kernels.
struct OpCounter {
  std::uint64_t macs = 0;
};

namespace ops {

// Reference "same"-padded stride-1 convolution: for every output element the
// (c x k x k) input patch is gathered (zeros outside the map) and dotted with
// the filter, then the bias is added. Counts one MAC per patch element.
template <typename T>
BasicTensor<T> conv2d_forward_direct(const BasicTensor<T>& input,
                                     const BasicTensor<T>& weight,
                                     const BasicTensor<T>* bias,
                                     OpCounter* counter = nullptr);

// Production convolution. Accumulates each output element over (c, ky, kx)
// in the same order as the direct form, so results are bit-identical to it.
template <typename T>
BasicTensor<T> conv2d_forward(const BasicTensor<T>& input,
                              const BasicTensor<T>& weight,
                              const BasicTensor<T>* bias);

template <typename T>
struct ConvGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  std::optional<BasicTensor<T>> bias;
};

template <typename T>
ConvGrads<T> conv2d_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight, bool has_bias,
                             const BasicTensor<T>& grad_output);

// Batch statistics kept from a train-mode forward for the backward pass.
template <typename T>
struct NormCache {
  std::vector<double> mean;
  std::vector<double> inv_std;
};

// Per-channel normalization along `axis` of a rank-4 tensor (1 for
// BatchNorm, 3 for the frequency-wise input normalization). Train mode uses
// batch statistics and folds them into the running ones with momentum
// kBatchNormMomentum when `update_running` is set.
template <typename T>
BasicTensor<T> batch_norm_forward(const BasicTensor<T>& input,
                                  const BasicTensor<T>& gamma,
                                  const BasicTensor<T>& beta,
                                  BasicTensor<T>& running_mean,
                                  BasicTensor<T>& running_var, double epsilon,
                                  std::size_t axis, Mode mode,
                                  bool update_running, NormCache<T>* cache);

template <typename T>
struct NormGrads {
  BasicTensor<T> input;
  BasicTensor<T> gamma;
  BasicTensor<T> beta;
};

template <typename T>
NormGrads<T> batch_norm_backward(const BasicTensor<T>& input,
                                 const BasicTensor<T>& gamma,
                                 const NormCache<T>& cache, std::size_t axis,
                                 Mode mode, const BasicTensor<T>& grad_output);

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& output,
                             const BasicTensor<T>& grad_output);

template <typename T>
BasicTensor<T> avgpool2x2(const BasicTensor<T>& input);
template <typename T>
BasicTensor<T> avgpool2x2_backward(const Shape& input_shape,
                                   const BasicTensor<T>& grad_output);

// Mean over frequency, then mean-over-time plus max-over-time. Output is
// (batch, channels); `argmax` receives the winning time index per (b, c).
template <typename T>
BasicTensor<T> global_pool(const BasicTensor<T>& input,
                           std::vector<std::size_t>* argmax = nullptr);
template <typename T>
BasicTensor<T> global_pool_backward(const Shape& input_shape,
                                    const std::vector<std::size_t>& argmax,
                                    const BasicTensor<T>& grad_output);

// Weight is (out, in), input (batch, in).
template <typename T>
BasicTensor<T> dense_forward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight,
                             const BasicTensor<T>* bias,
                             OpCounter* counter = nullptr);

template <typename T>
struct DenseGrads {
  BasicTensor<T> input;
  BasicTensor<T> weight;
  std::optional<BasicTensor<T>> bias;
};

template <typename T>
DenseGrads<T> dense_backward(const BasicTensor<T>& input,
                             const BasicTensor<T>& weight, bool has_bias,
                             const BasicTensor<T>& grad_output);

template <typename T>
BasicTensor<T> sigmoid(const BasicTensor<T>& input);

// Mean binary cross-entropy over every (sample, class) entry, evaluated from
// logits. `grad_logits`, when given, receives d(loss)/d(logit).
template <typename T>
double bce_with_logits(const BasicTensor<T>& logits,
                       const BasicTensor<T>& targets,
                       BasicTensor<T>* grad_logits = nullptr);

}  // namespace ops

template <typename T>
using ParamMap = std::map<std::string, BasicTensor<T>>;

// Per-layer outputs of one forward pass plus what backward needs.
template <typename T>
struct ForwardTrace {
  Mode mode = Mode::kEval;
  BasicTensor<T> input;
  std::vector<BasicTensor<T>> outputs;
  std::vector<ops::NormCache<T>> norm;
  std::vector<std::vector<std::size_t>> argmax;
};

template <typename T>
struct LossAndGradients {
  double loss = 0.0;
  ParamMap<T> gradients;  // trainable tensors only, keyed like the checkpoint
};

// A ModelSpec bound to its parameters. T = float is the production path;
// T = double runs the same formulas for verification.
template <typename T>
class Network {
 public:
  // Throws kMissingWeights / kShapeMismatch when `weights` does not bind
  // `spec` exactly.
  Network(ModelSpec spec, const Checkpoint& weights);

  const ModelSpec& spec() const { return spec_; }
  const ParamMap<T>& params() const { return params_; }
  ParamMap<T>& params() { return params_; }

  // Input is (batch, 1, time, freq); output (batch, class_count)
  // probabilities. Train mode updates BN running statistics unless disabled.
  BasicTensor<T> forward(const BasicTensor<T>& input, Mode mode,
                         ForwardTrace<T>* trace = nullptr,
                         OpCounter* counter = nullptr);

  // Mean BCE on (input, targets) and exact gradients of every trainable
  // parameter. Requires a final Sigmoid layer.
  LossAndGradients<T> backward(const BasicTensor<T>& input,
                               const BasicTensor<T>& targets, Mode mode);

  double loss(const BasicTensor<T>& input, const BasicTensor<T>& targets,
              Mode mode);

  // Outputs of the listed layers only, running no further than the last one.
  std::vector<BasicTensor<T>> capture(const BasicTensor<T>& input, Mode mode,
                                      const std::vector<std::size_t>& layers);

  void set_update_running_stats(bool update) { update_running_ = update; }

  Checkpoint to_checkpoint() const;

 private:
  const BasicTensor<T>& param(const std::string& name) const;
  BasicTensor<T>& param(const std::string& name);
  BasicTensor<T> forward_layers(const BasicTensor<T>& input, Mode mode,
                                ForwardTrace<T>* trace, OpCounter* counter,
                                std::size_t stop_before,
                                std::vector<std::pair<std::size_t, BasicTensor<T>*>>*
                                    captures = nullptr);

  ModelSpec spec_;
  ParamMap<T> params_;
  bool update_running_ = true;
};

extern template class Network<float>;
extern template class Network<double>;

// Index of the layer whose output is `conv_name`'s post-activation feature
// map: the last of the Conv2d -> BatchNorm -> ReLU run starting at the conv.
std::size_t post_activation_layer(const ModelSpec& spec,
                                  const std::string& conv_name);

}  // namespace prunekit

#endif  // PRUNEKIT_ENGINE_HPP_
