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

#ifndef PRUNEKIT_STORAGE_HPP_
#define PRUNEKIT_STORAGE_HPP_

#include <cstddef>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "prunekit/model_graph.hpp"
#include "prunekit/tensor.hpp"

namespace prunekit {

inline constexpr int kCheckpointFormatVersion = 1;

// One parameter tensor a spec requires, e.g. "C7.weight" or "C7.bn.gamma".
// Running statistics are stored but are not trainable.
struct TensorSlot {
  std::string name;
  std::string layer;
  Shape shape;
  bool trainable = true;
};

// Every tensor a spec binds, in graph order. This order is also the blob order.
std::vector<TensorSlot> parameter_layout(const ModelSpec& spec);

struct NamedTensor {
  std::string name;
  Tensor tensor;

  bool operator==(const NamedTensor&) const = default;
};

class Checkpoint {
 public:
  Checkpoint() = default;
  explicit Checkpoint(std::vector<NamedTensor> tensors)
      : tensors_(std::move(tensors)) {}

  const std::vector<NamedTensor>& tensors() const { return tensors_; }
  std::vector<NamedTensor>& tensors() { return tensors_; }

  const Tensor* find(std::string_view name) const;
  Tensor* find(std::string_view name);
  // Throws Error(kMissingWeights) when absent.
  const Tensor& at(std::string_view name) const;
  Tensor& at(std::string_view name);

  void set(std::string name, Tensor tensor);
  std::size_t element_count() const;

  bool operator==(const Checkpoint&) const = default;

 private:
  std::vector<NamedTensor> tensors_;
};

// Throws kMissingWeights if a slot is unbound, kShapeMismatch if a bound
// tensor has the wrong shape or an unknown tensor is present.
void check_binding(const ModelSpec& spec, const Checkpoint& weights);

// Content hash of the canonical serialized spec.
std::string model_fingerprint(const ModelSpec& spec);

struct ManifestEntry {
  std::string name;
  std::string dtype = "f32";
  Shape shape;
  std::uint64_t byte_offset = 0;
  std::uint64_t byte_length = 0;
};

struct Manifest {
  int format_version = kCheckpointFormatVersion;
  std::string model_fingerprint;
  std::vector<ManifestEntry> tensors;
};

std::string manifest_to_json(const Manifest& manifest);
Manifest manifest_from_json(const std::string& text);

std::string manifest_path(const std::string& prefix);  // prefix.manifest.json
std::string weights_path(const std::string& prefix);   // prefix.weights.bin

// Little-endian f32 blob, tensors laid out in parameter_layout order.
std::vector<std::byte> encode_blob(const ModelSpec& spec,
                                   const Checkpoint& weights,
                                   Manifest* manifest);
Checkpoint decode_checkpoint(const ModelSpec& spec, const Manifest& manifest,
                             std::span<const std::byte> blob);

void save_checkpoint(const ModelSpec& spec, const Checkpoint& weights,
                     const std::string& prefix);
Checkpoint load_checkpoint(const ModelSpec& spec, const std::string& prefix);

// Glorot-uniform conv/dense weights, zero biases, identity batch norms.
Checkpoint init_random(const ModelSpec& spec, std::uint64_t seed);

// Clips are (time, freq) rank-2 tensors; labels are multi-hot rows.
struct Dataset {
  std::size_t freq_bins = 64;
  std::size_t class_count = 0;
  std::vector<Tensor> clips;
  std::vector<std::vector<float>> labels;

  std::size_t size() const { return clips.size(); }
  bool empty() const { return clips.empty(); }
};

Tensor load_clip(const std::string& path, std::size_t freq_bins);
void save_clip(const Tensor& clip, const std::string& path);

// index.tsv: one "<clip path>\t<comma separated 0/1 labels>" row per clip;
// clip paths are relative to the index file's directory.
Dataset load_dataset(const std::string& index_path, std::size_t freq_bins = 64);
void save_dataset(const Dataset& dataset, const std::string& directory);

// Stacks clips into a (batch, 1, time, freq) input and a (batch, classes)
// target tensor. All selected clips must share a time extent.
Tensor make_input_batch(const Dataset& dataset,
                        std::span<const std::size_t> indices);
Tensor make_target_batch(const Dataset& dataset,
                         std::span<const std::size_t> indices);

// Content hash over the clips' shapes and little-endian bytes.
std::string dataset_fingerprint(const Dataset& dataset,
                                std::span<const std::size_t> indices);
std::string tensor_fingerprint(const Tensor& tensor);

struct ToyDatasetConfig {
  std::size_t clips = 100;
  std::size_t class_count = 4;
  std::size_t time = 100;
  std::size_t freq = 64;
  double positive_rate = 0.5;
  double noise_std = 0.5;
  double signal = 1.5;
};

// Synthetic multi-label "spectrograms": class k is present when its own
// frequency band carries extra energy over a random stretch of time.
Dataset generate_toy_dataset(const ToyDatasetConfig& config,
                             std::uint64_t seed);

}  // namespace prunekit

#endif  // PRUNEKIT_STORAGE_HPP_
