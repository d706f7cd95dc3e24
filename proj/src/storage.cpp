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

#include "prunekit/storage.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <random>
#include <set>
#include <sstream>

#include <json.hpp>

#include "prunekit/error.hpp"
#include "prunekit/file_util.hpp"
#include "prunekit/hash.hpp"

namespace prunekit {
namespace {

using nlohmann::json;
namespace fs = std::filesystem;

void append_le(std::vector<std::byte>& out, float v) {
  const auto bits = std::bit_cast<std::uint32_t>(v);
  for (int i = 0; i < 4; ++i) {
    out.push_back(static_cast<std::byte>((bits >> (8 * i)) & 0xFFu));
  }
}

float read_le(const std::byte* p) {
  std::uint32_t bits = 0;
  for (int i = 0; i < 4; ++i) {
    bits |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  }
  return std::bit_cast<float>(bits);
}

void append_tensor_le(std::vector<std::byte>& out, const Tensor& t) {
  out.reserve(out.size() + 4 * t.size());
  for (float v : t.data()) append_le(out, v);
}

void add_norm_slots(std::vector<TensorSlot>& slots, const std::string& layer,
                    std::size_t channels) {
  slots.push_back({layer + ".gamma", layer, {channels}, true});
  slots.push_back({layer + ".beta", layer, {channels}, true});
  slots.push_back({layer + ".running_mean", layer, {channels}, false});
  slots.push_back({layer + ".running_var", layer, {channels}, false});
}

}  // namespace

std::string shape_to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::vector<TensorSlot> parameter_layout(const ModelSpec& spec) {
  std::vector<TensorSlot> slots;
  for (const auto& l : spec.layers) {
    switch (l.kind) {
      case LayerKind::kInputBN:
        add_norm_slots(slots, l.name, l.bins);
        break;
      case LayerKind::kBatchNorm:
        add_norm_slots(slots, l.name, l.channels);
        break;
      case LayerKind::kConv2d:
        slots.push_back({l.name + ".weight", l.name,
                         {l.out_channels, l.in_channels, l.kernel, l.kernel},
                         true});
        if (l.has_bias) {
          slots.push_back({l.name + ".bias", l.name, {l.out_channels}, true});
        }
        break;
      case LayerKind::kDense:
        slots.push_back(
            {l.name + ".weight", l.name, {l.out_features, l.in_features}, true});
        if (l.has_bias) {
          slots.push_back({l.name + ".bias", l.name, {l.out_features}, true});
        }
        break;
      default:
        break;
    }
  }
  return slots;
}

const Tensor* Checkpoint::find(std::string_view name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

Tensor* Checkpoint::find(std::string_view name) {
  for (auto& t : tensors_) {
    if (t.name == name) return &t.tensor;
  }
  return nullptr;
}

const Tensor& Checkpoint::at(std::string_view name) const {
  const Tensor* t = find(name);
  if (!t) {
    throw Error(ErrorCode::kMissingWeights,
                "checkpoint has no tensor '" + std::string(name) + "'");
  }
  return *t;
}

Tensor& Checkpoint::at(std::string_view name) {
  Tensor* t = find(name);
  if (!t) {
    throw Error(ErrorCode::kMissingWeights,
                "checkpoint has no tensor '" + std::string(name) + "'");
  }
  return *t;
}

void Checkpoint::set(std::string name, Tensor tensor) {
  if (Tensor* existing = find(name)) {
    *existing = std::move(tensor);
    return;
  }
  tensors_.push_back({std::move(name), std::move(tensor)});
}

std::size_t Checkpoint::element_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors_) n += t.tensor.size();
  return n;
}

void check_binding(const ModelSpec& spec, const Checkpoint& weights) {
  const auto layout = parameter_layout(spec);
  for (const auto& slot : layout) {
    const Tensor* t = weights.find(slot.name);
    if (!t) {
      throw Error(ErrorCode::kMissingWeights,
                  "no weights bound for '" + slot.name + "'");
    }
    if (t->shape() != slot.shape) {
      throw Error(ErrorCode::kShapeMismatch,
                  "'" + slot.name + "' has shape " + shape_to_string(t->shape()) +
                      ", spec needs " + shape_to_string(slot.shape));
    }
  }
  if (weights.tensors().size() != layout.size()) {
    throw Error(ErrorCode::kShapeMismatch,
                "checkpoint carries tensors the spec does not bind");
  }
}

std::string model_fingerprint(const ModelSpec& spec) {
  return sha256_hex(canonical_json(spec));
}

std::string manifest_path(const std::string& prefix) {
  return prefix + ".manifest.json";
}

std::string weights_path(const std::string& prefix) {
  return prefix + ".weights.bin";
}

std::string manifest_to_json(const Manifest& manifest) {
  json j;
  j["format_version"] = manifest.format_version;
  j["model_fingerprint"] = manifest.model_fingerprint;
  j["tensors"] = json::array();
  for (const auto& e : manifest.tensors) {
    j["tensors"].push_back({{"name", e.name},
                            {"dtype", e.dtype},
                            {"shape", e.shape},
                            {"byte_offset", e.byte_offset},
                            {"byte_length", e.byte_length}});
  }
  return j.dump(2) + "\n";
}

Manifest manifest_from_json(const std::string& text) {
  Manifest m;
  try {
    const json j = json::parse(text);
    m.format_version = j.at("format_version").get<int>();
    m.model_fingerprint = j.at("model_fingerprint").get<std::string>();
    for (const auto& e : j.at("tensors")) {
      ManifestEntry entry;
      entry.name = e.at("name").get<std::string>();
      entry.dtype = e.at("dtype").get<std::string>();
      entry.shape = e.at("shape").get<Shape>();
      entry.byte_offset = e.at("byte_offset").get<std::uint64_t>();
      entry.byte_length = e.at("byte_length").get<std::uint64_t>();
      m.tensors.push_back(std::move(entry));
    }
  } catch (const json::exception& e) {
    throw Error(ErrorCode::kParse, std::string("manifest: ") + e.what());
  }
  return m;
}

std::vector<std::byte> encode_blob(const ModelSpec& spec,
                                   const Checkpoint& weights,
                                   Manifest* manifest) {
  check_binding(spec, weights);
  std::vector<std::byte> blob;
  if (manifest) {
    manifest->format_version = kCheckpointFormatVersion;
    manifest->model_fingerprint = model_fingerprint(spec);
    manifest->tensors.clear();
  }
  for (const auto& slot : parameter_layout(spec)) {
    const Tensor& t = weights.at(slot.name);
    const std::uint64_t offset = blob.size();
    append_tensor_le(blob, t);
    if (manifest) {
      manifest->tensors.push_back(
          {slot.name, "f32", slot.shape, offset, blob.size() - offset});
    }
  }
  return blob;
}

Checkpoint decode_checkpoint(const ModelSpec& spec, const Manifest& manifest,
                             std::span<const std::byte> blob) {
  if (manifest.format_version != kCheckpointFormatVersion) {
    throw Error(ErrorCode::kUnknownVersion,
                "unsupported checkpoint format_version " +
                    std::to_string(manifest.format_version));
  }
  if (manifest.model_fingerprint != model_fingerprint(spec)) {
    throw Error(ErrorCode::kFingerprintMismatch,
                "checkpoint was written for a different model");
  }
  const auto layout = parameter_layout(spec);
  std::set<std::string> seen;
  for (const auto& e : manifest.tensors) {
    if (e.dtype != "f32") {
      throw Error(ErrorCode::kUnknownVersion,
                  "'" + e.name + "': unsupported dtype " + e.dtype);
    }
    const auto slot = std::find_if(layout.begin(), layout.end(),
                                   [&](const auto& s) { return s.name == e.name; });
    if (slot == layout.end()) {
      throw Error(ErrorCode::kFingerprintMismatch,
                  "manifest tensor '" + e.name + "' is not bound by the model");
    }
    if (slot->shape != e.shape) {
      throw Error(ErrorCode::kFingerprintMismatch,
                  "'" + e.name + "' has shape " + shape_to_string(e.shape) +
                      ", model needs " + shape_to_string(slot->shape));
    }
    if (!seen.insert(e.name).second) {
      throw Error(ErrorCode::kCorruptBlob, "'" + e.name + "' listed twice");
    }
  }
  if (seen.size() != layout.size()) {
    throw Error(ErrorCode::kMissingWeights,
                "manifest does not cover every parameter of the model");
  }

  std::vector<const ManifestEntry*> by_offset;
  for (const auto& e : manifest.tensors) by_offset.push_back(&e);
  std::sort(by_offset.begin(), by_offset.end(),
            [](auto* a, auto* b) { return a->byte_offset < b->byte_offset; });
  std::uint64_t covered_until = 0;
  for (const auto* e : by_offset) {
    if (e->byte_length != 4 * element_count(e->shape)) {
      throw Error(ErrorCode::kCorruptBlob,
                  "'" + e->name + "' byte_length does not match its shape");
    }
    if (e->byte_offset < covered_until) {
      throw Error(ErrorCode::kCorruptBlob, "'" + e->name + "' overlaps");
    }
    if (e->byte_offset > blob.size() ||
        e->byte_length > blob.size() - e->byte_offset) {
      throw Error(ErrorCode::kCorruptBlob,
                  "'" + e->name + "' extends past the end of the blob");
    }
    covered_until = e->byte_offset + e->byte_length;
  }
  if (covered_until != blob.size()) {
    throw Error(ErrorCode::kCorruptBlob, "blob has trailing bytes");
  }

  std::vector<NamedTensor> tensors;
  tensors.reserve(layout.size());
  for (const auto& slot : layout) {
    const auto& e = *std::find_if(manifest.tensors.begin(), manifest.tensors.end(),
                                  [&](const auto& m) { return m.name == slot.name; });
    std::vector<float> values(element_count(e.shape));
    const std::byte* p = blob.data() + e.byte_offset;
    for (std::size_t i = 0; i < values.size(); ++i) values[i] = read_le(p + 4 * i);
    tensors.push_back({slot.name, Tensor(slot.shape, std::move(values))});
  }
  return Checkpoint(std::move(tensors));
}

void save_checkpoint(const ModelSpec& spec, const Checkpoint& weights,
                     const std::string& prefix) {
  Manifest manifest;
  const auto blob = encode_blob(spec, weights, &manifest);
  // Blob first: a manifest is only published once its blob exists.
  write_file_atomic(weights_path(prefix), blob);
  write_file_atomic(manifest_path(prefix), manifest_to_json(manifest));
}

Checkpoint load_checkpoint(const ModelSpec& spec, const std::string& prefix) {
  const Manifest manifest = manifest_from_json(read_text_file(manifest_path(prefix)));
  const auto blob = read_binary_file(weights_path(prefix));
  return decode_checkpoint(spec, manifest, blob);
}

Checkpoint init_random(const ModelSpec& spec, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<NamedTensor> tensors;
  for (const auto& slot : parameter_layout(spec)) {
    Tensor t(slot.shape);
    const LayerSpec& l = spec.layer(slot.layer);
    const bool is_weight = slot.name.ends_with(".weight");
    if (is_weight) {
      double fan_in = 0, fan_out = 0;
      if (l.kind == LayerKind::kConv2d) {
        const double area = static_cast<double>(l.kernel * l.kernel);
        fan_in = static_cast<double>(l.in_channels) * area;
        fan_out = static_cast<double>(l.out_channels) * area;
      } else {
        fan_in = static_cast<double>(l.in_features);
        fan_out = static_cast<double>(l.out_features);
      }
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-bound, bound);
      for (float& v : t.data()) v = static_cast<float>(dist(rng));
    } else if (slot.name.ends_with(".gamma") ||
               slot.name.ends_with(".running_var")) {
      t.fill(1.0f);
    }
    tensors.push_back({slot.name, std::move(t)});
  }
  return Checkpoint(std::move(tensors));
}

Tensor load_clip(const std::string& path, std::size_t freq_bins) {
  const auto bytes = read_binary_file(path);
  const std::size_t row_bytes = 4 * freq_bins;
  if (freq_bins == 0 || bytes.empty() || bytes.size() % row_bytes != 0) {
    throw Error(ErrorCode::kShapeMismatch,
                path + ": size " + std::to_string(bytes.size()) +
                    " bytes is not a whole number of " +
                    std::to_string(freq_bins) + "-bin frames");
  }
  const std::size_t time = bytes.size() / row_bytes;
  std::vector<float> values(time * freq_bins);
  for (std::size_t i = 0; i < values.size(); ++i) values[i] = read_le(&bytes[4 * i]);
  return Tensor({time, freq_bins}, std::move(values));
}

void save_clip(const Tensor& clip, const std::string& path) {
  std::vector<std::byte> bytes;
  append_tensor_le(bytes, clip);
  write_file_atomic(path, bytes);
}

Dataset load_dataset(const std::string& index_path, std::size_t freq_bins) {
  const std::string text = read_text_file(index_path);
  const fs::path base = fs::path(index_path).parent_path();
  Dataset ds;
  ds.freq_bins = freq_bins;
  std::istringstream lines(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(lines, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto tab = line.find('\t');
    if (tab == std::string::npos) {
      throw Error(ErrorCode::kParse, index_path + ":" + std::to_string(line_no) +
                                         ": expected <path>\\t<labels>");
    }
    std::vector<float> labels;
    std::istringstream fields(line.substr(tab + 1));
    std::string field;
    while (std::getline(fields, field, ',')) {
      if (field == "0") {
        labels.push_back(0.0f);
      } else if (field == "1") {
        labels.push_back(1.0f);
      } else {
        throw Error(ErrorCode::kParse, index_path + ":" + std::to_string(line_no) +
                                           ": labels must be 0 or 1");
      }
    }
    if (ds.class_count == 0) ds.class_count = labels.size();
    if (labels.empty() || labels.size() != ds.class_count) {
      throw Error(ErrorCode::kShapeMismatch,
                  index_path + ":" + std::to_string(line_no) +
                      ": label vector length differs from earlier rows");
    }
    ds.clips.push_back(load_clip((base / line.substr(0, tab)).string(), freq_bins));
    ds.labels.push_back(std::move(labels));
  }
  return ds;
}

void save_dataset(const Dataset& dataset, const std::string& directory) {
  std::string index;
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "clip_%05zu.f32", i);
    save_clip(dataset.clips[i], (fs::path(directory) / name).string());
    index += name;
    index += '\t';
    for (std::size_t k = 0; k < dataset.labels[i].size(); ++k) {
      if (k) index += ',';
      index += dataset.labels[i][k] > 0.5f ? '1' : '0';
    }
    index += '\n';
  }
  write_file_atomic((fs::path(directory) / "index.tsv").string(), index);
}

Tensor make_input_batch(const Dataset& dataset,
                        std::span<const std::size_t> indices) {
  if (indices.empty()) throw Error(ErrorCode::kEmptyDataset, "empty batch");
  const Tensor& first = dataset.clips.at(indices[0]);
  const std::size_t time = first.dim(0), freq = first.dim(1);
  Tensor batch({indices.size(), 1, time, freq});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const Tensor& clip = dataset.clips.at(indices[b]);
    if (clip.shape() != first.shape()) {
      throw Error(ErrorCode::kShapeMismatch,
                  "clips in one batch must share a shape");
    }
    std::copy(clip.data().begin(), clip.data().end(),
              batch.data().begin() + static_cast<std::ptrdiff_t>(b * time * freq));
  }
  return batch;
}

Tensor make_target_batch(const Dataset& dataset,
                         std::span<const std::size_t> indices) {
  Tensor targets({indices.size(), dataset.class_count});
  for (std::size_t b = 0; b < indices.size(); ++b) {
    const auto& row = dataset.labels.at(indices[b]);
    std::copy(row.begin(), row.end(),
              targets.data().begin() +
                  static_cast<std::ptrdiff_t>(b * dataset.class_count));
  }
  return targets;
}

std::string tensor_fingerprint(const Tensor& tensor) {
  Sha256 h;
  h.update(shape_to_string(tensor.shape()));
  std::vector<std::byte> bytes;
  append_tensor_le(bytes, tensor);
  h.update(bytes);
  return h.hex_digest();
}

std::string dataset_fingerprint(const Dataset& dataset,
                                std::span<const std::size_t> indices) {
  Sha256 h;
  for (std::size_t i : indices) {
    const Tensor& clip = dataset.clips.at(i);
    h.update(shape_to_string(clip.shape()));
    std::vector<std::byte> bytes;
    append_tensor_le(bytes, clip);
    h.update(bytes);
  }
  return h.hex_digest();
}

Dataset generate_toy_dataset(const ToyDatasetConfig& config,
                             std::uint64_t seed) {
  if (config.class_count == 0 || config.freq < config.class_count ||
      config.time < 4) {
    throw Error(ErrorCode::kInvalidArgument,
                "toy dataset needs >= 1 class, freq >= classes and time >= 4");
  }
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, config.noise_std);
  std::bernoulli_distribution present(config.positive_rate);

  Dataset ds;
  ds.freq_bins = config.freq;
  ds.class_count = config.class_count;
  const std::size_t band = config.freq / config.class_count;
  for (std::size_t n = 0; n < config.clips; ++n) {
    Tensor clip({config.time, config.freq});
    for (float& v : clip.data()) v = static_cast<float>(noise(rng));
    std::vector<float> labels(config.class_count, 0.0f);
    for (std::size_t k = 0; k < config.class_count; ++k) {
      if (!present(rng)) continue;
      labels[k] = 1.0f;
      // Energy in the middle half of the class's band, over 1/4..1/2 of the clip.
      const std::size_t f_lo = k * band + band / 4;
      const std::size_t f_hi = std::max(f_lo + 1, k * band + (3 * band) / 4);
      std::uniform_int_distribution<std::size_t> len_dist(config.time / 4,
                                                          config.time / 2);
      const std::size_t len = std::max<std::size_t>(1, len_dist(rng));
      std::uniform_int_distribution<std::size_t> start_dist(0, config.time - len);
      const std::size_t start = start_dist(rng);
      for (std::size_t t = start; t < start + len; ++t) {
        for (std::size_t f = f_lo; f < f_hi; ++f) {
          clip.at(t, f) += static_cast<float>(config.signal);
        }
      }
    }
    ds.clips.push_back(std::move(clip));
    ds.labels.push_back(std::move(labels));
  }
  return ds;
}

}  // namespace prunekit
