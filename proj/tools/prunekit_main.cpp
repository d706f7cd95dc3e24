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

// prunekit: command-line front end for the pruning pipeline
// (preset-export -> init -> importance -> prune -> finetune -> eval / infer,
// plus analyze and sweep).

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "prunekit/complexity.hpp"
#include "prunekit/engine.hpp"
#include "prunekit/error.hpp"
#include "prunekit/file_util.hpp"
#include "prunekit/importance.hpp"
#include "prunekit/metrics.hpp"
#include "prunekit/model_graph.hpp"
#include "prunekit/pruner.hpp"
#include "prunekit/storage.hpp"
#include "prunekit/trainer.hpp"

namespace fs = std::filesystem;
using namespace prunekit;

namespace {

struct Shared {
  std::string model;
  std::string weights;
  std::string out;
  std::string format = "json";
  std::uint64_t seed = 0;
};

void add_shared(CLI::App* cmd, Shared& s, bool weights, bool out) {
  cmd->add_option("--model", s.model,
                  "Architecture JSON file, or a built-in preset name (cnn14, toy)")
      ->required();
  if (weights) cmd->add_option("--weights", s.weights, "Checkpoint prefix");
  if (out) cmd->add_option("--out", s.out, "Output path or prefix");
  cmd->add_option("--format", s.format, "Output format")
      ->check(CLI::IsMember({"json", "csv"}));
  cmd->add_option("--seed", s.seed, "Random seed");
}

ModelSpec resolve_model(const std::string& ref) {
  if (!fs::exists(ref)) {
    if (ref == "cnn14") return build_cnn14_preset();
    if (ref == "toy") return build_toy_preset();
  }
  ModelSpec spec = load_model(ref);
  const auto violations = validate(spec);
  if (!violations.empty()) {
    throw Error(ErrorCode::kInvalidSpec, ref + ": " + violations.front());
  }
  return spec;
}

Checkpoint require_weights(const ModelSpec& spec, const Shared& s) {
  if (s.weights.empty()) {
    throw Error(ErrorCode::kMissingWeights, "--weights is required");
  }
  return load_checkpoint(spec, s.weights);
}

void emit(const std::string& text, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << text;
  } else {
    write_file_atomic(out_path, text);
  }
}

std::vector<std::string> split_list(const std::string& text) {
  std::vector<std::string> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

Tensor load_calibration(const std::string& index, std::size_t clips,
                        std::size_t freq_bins) {
  const Dataset ds = load_dataset(index, freq_bins);
  if (ds.empty() || clips == 0) {
    throw Error(ErrorCode::kEmptyCalibration, "calibration set is empty");
  }
  std::vector<std::size_t> idx(std::min(clips, ds.size()));
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  return make_input_batch(ds, idx);
}

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

std::string fmt1(double v) {
  char buf[48];
  std::snprintf(buf, sizeof buf, "%.1f", v);
  return buf;
}

// Ratios are range-checked up front so no command has side effects first.
void check_ratio(double r) {
  if (!(r >= 0.0 && r < 1.0)) {
    throw Error(ErrorCode::kRatioOutOfRange,
                "ratio " + fmt(r) + " is outside [0, 1)");
  }
}

ImportanceReport rank_for_pruning(const ModelSpec& spec, const Checkpoint& weights,
                                  const std::vector<std::string>& layers,
                                  const std::string& calibration,
                                  std::size_t calibration_clips) {
  if (calibration.empty()) {
    return score_model(spec, weights, Criterion::kWeightNorm, layers, nullptr);
  }
  const Tensor calib =
      load_calibration(calibration, calibration_clips, spec.input_shape.freq);
  return score_model(spec, weights, Criterion::kActivationEnergy, layers, &calib);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"prunekit: structured filter pruning for audio-tagging CNNs"};
  app.require_subcommand(1);
  Shared s;

  // preset-export
  std::string preset = "cnn14";
  auto* preset_cmd = app.add_subcommand("preset-export", "Write a built-in architecture");
  preset_cmd->add_option("--preset", preset)->check(CLI::IsMember({"cnn14", "toy"}));
  preset_cmd->add_option("--out", s.out, "Output file (stdout if omitted)");

  // init
  auto* init_cmd = app.add_subcommand("init", "Write seeded random weights");
  add_shared(init_cmd, s, false, true);
  init_cmd->get_option("--out")->required();

  // toy-data
  ToyDatasetConfig toy;
  std::string toy_out;
  std::uint64_t toy_seed = 0;
  auto* toy_cmd = app.add_subcommand("toy-data", "Generate a synthetic multi-label dataset");
  toy_cmd->add_option("--out", toy_out, "Output directory")->required();
  toy_cmd->add_option("--clips", toy.clips);
  toy_cmd->add_option("--classes", toy.class_count);
  toy_cmd->add_option("--time", toy.time);
  toy_cmd->add_option("--freq", toy.freq);
  toy_cmd->add_option("--seed", toy_seed);

  // analyze
  std::string baseline;
  auto* analyze_cmd = app.add_subcommand("analyze", "Count parameters and MACs");
  add_shared(analyze_cmd, s, false, true);
  analyze_cmd->add_option("--baseline", baseline, "Reference model to compare against");

  // importance
  std::string calibration, criterion, layers_arg;
  std::size_t calibration_clips = 32;
  auto* imp_cmd = app.add_subcommand("importance", "Score and rank conv filters");
  add_shared(imp_cmd, s, true, true);
  imp_cmd->add_option("--calibration", calibration, "Calibration dataset index.tsv");
  imp_cmd->add_option("--calibration-clips", calibration_clips);
  imp_cmd->add_option("--criterion", criterion)
      ->check(CLI::IsMember({"weight_l1", "activation_energy"}));
  imp_cmd->add_option("--layers", layers_arg, "Comma-separated conv layers");

  // prune
  std::string plan_path, importance_path;
  std::optional<double> ratio;
  auto* prune_cmd = app.add_subcommand("prune", "Remove filters and rewire the network");
  add_shared(prune_cmd, s, true, true);
  prune_cmd->get_option("--out")->required();
  prune_cmd->add_option("--plan", plan_path, "Explicit prune plan JSON");
  prune_cmd->add_option("--ratio", ratio, "Uniform ratio for --layers");
  prune_cmd->add_option("--layers", layers_arg);
  prune_cmd->add_option("--importance", importance_path, "Importance report JSON");
  prune_cmd->add_option("--calibration", calibration);
  prune_cmd->add_option("--calibration-clips", calibration_clips);

  // finetune
  std::string data, eval_data, config_path, log_path;
  TrainConfig tc;
  auto* ft_cmd = app.add_subcommand("finetune", "Fine-tune a (pruned) model");
  add_shared(ft_cmd, s, true, true);
  ft_cmd->get_option("--out")->required();
  ft_cmd->add_option("--data", data, "Training index.tsv")->required();
  ft_cmd->add_option("--eval-data", eval_data, "Held-out index.tsv")->required();
  ft_cmd->add_option("--config", config_path, "Train config JSON");
  ft_cmd->add_option("--iterations", tc.iterations);
  ft_cmd->add_option("--batch-size", tc.batch_size);
  ft_cmd->add_option("--lr", tc.learning_rate);
  ft_cmd->add_option("--mixup-alpha", tc.mixup_alpha);
  ft_cmd->add_option("--time-masks", tc.masking.time_masks);
  ft_cmd->add_option("--max-time-width", tc.masking.max_time_width);
  ft_cmd->add_option("--freq-masks", tc.masking.freq_masks);
  ft_cmd->add_option("--max-freq-width", tc.masking.max_freq_width);
  ft_cmd->add_option("--log", log_path, "Write the train log CSV here too");

  // eval
  auto* eval_cmd = app.add_subcommand("eval", "Per-class AP and mAP on a dataset");
  add_shared(eval_cmd, s, true, true);
  eval_cmd->add_option("--data", data)->required();

  // infer
  std::string clip_path;
  std::size_t top_k = 10, clip_bins = 64;
  auto* infer_cmd = app.add_subcommand("infer", "Top-k class probabilities for one clip");
  add_shared(infer_cmd, s, true, false);
  infer_cmd->add_option("--clip", clip_path, "Raw little-endian f32 clip")->required();
  infer_cmd->add_option("--top-k", top_k);
  infer_cmd->add_option("--freq-bins", clip_bins, "Frequency bins per clip frame");

  // sweep
  std::string ratios_arg;
  bool save_weights = false;
  auto* sweep_cmd = app.add_subcommand("sweep", "Prune at several ratios and tabulate");
  add_shared(sweep_cmd, s, true, true);
  sweep_cmd->add_option("--ratios", ratios_arg, "Comma-separated ratios");
  sweep_cmd->add_option("--layers", layers_arg);
  sweep_cmd->add_option("--calibration", calibration);
  sweep_cmd->add_option("--calibration-clips", calibration_clips);
  sweep_cmd->add_option("--finetune-data", data);
  sweep_cmd->add_option("--eval-data", eval_data);
  sweep_cmd->add_option("--iterations", tc.iterations);
  sweep_cmd->add_option("--batch-size", tc.batch_size);
  sweep_cmd->add_option("--lr", tc.learning_rate);
  sweep_cmd->add_flag("--save-weights", save_weights, "Write pruned checkpoints");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    nlohmann::json detail{{"message", e.what()}};
    std::cerr << "error: UsageError " << detail.dump() << "\n";
    return 2;
  }

  try {
    if (preset_cmd->parsed()) {
      const ModelSpec spec = preset == "toy" ? build_toy_preset() : build_cnn14_preset();
      emit(to_json(spec) + "\n", s.out);
    } else if (init_cmd->parsed()) {
      const ModelSpec spec = resolve_model(s.model);
      save_checkpoint(spec, init_random(spec, s.seed), s.out);
    } else if (toy_cmd->parsed()) {
      save_dataset(generate_toy_dataset(toy, toy_seed), toy_out);
    } else if (analyze_cmd->parsed()) {
      const ModelSpec spec = resolve_model(s.model);
      const ComplexityReport report = analyze(spec);
      if (baseline.empty()) {
        emit(s.format == "csv" ? report_to_csv(report) : report_to_json(report), s.out);
      } else {
        const DeltaReport d = compare(analyze(resolve_model(baseline)), report);
        emit(s.format == "csv" ? delta_to_csv(d) : delta_to_json(d), s.out);
      }
    } else if (imp_cmd->parsed()) {
      const ModelSpec spec = resolve_model(s.model);
      const Checkpoint weights = require_weights(spec, s);
      const Criterion crit = !criterion.empty() ? parse_criterion(criterion)
                             : calibration.empty() ? Criterion::kWeightNorm
                                                   : Criterion::kActivationEnergy;
      std::optional<Tensor> calib;
      if (crit == Criterion::kActivationEnergy) {
        if (calibration.empty()) {
          throw Error(ErrorCode::kEmptyCalibration, "--calibration is required");
        }
        calib = load_calibration(calibration, calibration_clips, spec.input_shape.freq);
      }
      const auto report = score_model(spec, weights, crit, split_list(layers_arg),
                                      calib ? &*calib : nullptr);
      emit(importance_to_json(report), s.out);
    } else if (prune_cmd->parsed()) {
      const ModelSpec spec = resolve_model(s.model);
      if (plan_path.empty() == !ratio.has_value()) {
        throw Error(ErrorCode::kInvalidArgument, "give exactly one of --plan or --ratio");
      }
      if (ratio) check_ratio(*ratio);
      const Checkpoint weights = require_weights(spec, s);
      PrunePlan plan;
      if (!plan_path.empty()) {
        plan = plan_from_json(read_text_file(plan_path));
      } else {
        std::vector<std::string> layers = split_list(layers_arg);
        if (layers.empty()) layers = default_prune_layers(spec);
        const ImportanceReport report =
            !importance_path.empty()
                ? importance_from_json(read_text_file(importance_path))
                : rank_for_pruning(spec, weights, layers, calibration, calibration_clips);
        plan = make_plan(report, uniform_ratios(layers, *ratio));
      }
      const auto [pruned_spec, pruned_weights] = apply_plan(spec, weights, plan);
      save_model(pruned_spec, s.out + ".arch.json");
      save_checkpoint(pruned_spec, pruned_weights, s.out);
      write_file_atomic(s.out + ".plan.json", plan_to_json(plan));
      const PruneSummary summary = prune_report(spec, pruned_spec);
      std::cout << (s.format == "csv" ? delta_to_csv(summary.delta) : summary.text);
    } else if (ft_cmd->parsed()) {
      const ModelSpec spec = resolve_model(s.model);
      if (!config_path.empty()) {
        const TrainConfig file_config = config_from_json(read_text_file(config_path));
        // Flags given explicitly override the file.
        TrainConfig merged = file_config;
        if (ft_cmd->count("--iterations")) merged.iterations = tc.iterations;
        if (ft_cmd->count("--batch-size")) merged.batch_size = tc.batch_size;
        if (ft_cmd->count("--lr")) merged.learning_rate = tc.learning_rate;
        if (ft_cmd->count("--mixup-alpha")) merged.mixup_alpha = tc.mixup_alpha;
        if (ft_cmd->count("--time-masks")) merged.masking.time_masks = tc.masking.time_masks;
        if (ft_cmd->count("--max-time-width")) merged.masking.max_time_width = tc.masking.max_time_width;
        if (ft_cmd->count("--freq-masks")) merged.masking.freq_masks = tc.masking.freq_masks;
        if (ft_cmd->count("--max-freq-width")) merged.masking.max_freq_width = tc.masking.max_freq_width;
        tc = merged;
      }
      if (ft_cmd->count("--seed") || config_path.empty()) tc.seed = s.seed;
      validate_config(tc);
      const Checkpoint weights = require_weights(spec, s);
      const Dataset train = load_dataset(data, spec.input_shape.freq);
      const Dataset held = load_dataset(eval_data, spec.input_shape.freq);
      const FinetuneResult r = finetune(spec, weights, train, held, tc);
      save_checkpoint(spec, r.weights, s.out);
      const std::string csv = train_log_to_csv(r.log);
      if (!log_path.empty()) write_file_atomic(log_path, csv);
      std::cout << csv;
    } else if (eval_cmd->parsed()) {
      const ModelSpec spec = resolve_model(s.model);
      const Checkpoint weights = require_weights(spec, s);
      const Dataset ds = load_dataset(data, spec.input_shape.freq);
      const EvalResult r = evaluate(spec, weights, ds);
      emit(s.format == "csv" ? eval_to_csv(r) : eval_to_json(r), s.out);
    } else if (infer_cmd->parsed()) {
      const ModelSpec spec = resolve_model(s.model);
      const Tensor clip = load_clip(clip_path, clip_bins);
      if (clip.dim(1) != spec.input_shape.freq) {
        throw Error(ErrorCode::kShapeMismatch,
                    "clip has " + std::to_string(clip.dim(1)) +
                        " frequency bins, model expects " +
                        std::to_string(spec.input_shape.freq));
      }
      const Checkpoint weights = require_weights(spec, s);
      Network<float> net(spec, weights);
      Tensor input({1, 1, clip.dim(0), clip.dim(1)},
                   std::vector<float>(clip.data().begin(), clip.data().end()));
      const Tensor probs = net.forward(input, Mode::kEval);
      std::vector<std::size_t> order(probs.size());
      std::iota(order.begin(), order.end(), std::size_t{0});
      std::stable_sort(order.begin(), order.end(),
                       [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
      order.resize(std::min(top_k, order.size()));
      if (s.format == "csv") {
        std::cout << "class,probability\n";
        for (std::size_t k : order) std::cout << k << "," << fmt(probs[k]) << "\n";
      } else {
        nlohmann::ordered_json j = nlohmann::ordered_json::array();
        for (std::size_t k : order) j.push_back({{"class", k}, {"probability", probs[k]}});
        std::cout << j.dump(2) << "\n";
      }
    } else if (sweep_cmd->parsed()) {
      const ModelSpec spec = resolve_model(s.model);
      std::vector<double> ratios;
      for (const auto& r : split_list(ratios_arg)) {
        try {
          ratios.push_back(std::stod(r));
        } catch (const std::exception&) {
          throw Error(ErrorCode::kInvalidArgument, "bad ratio '" + r + "'");
        }
        check_ratio(ratios.back());
      }
      const bool tune = !data.empty() || !eval_data.empty();
      if (tune && (data.empty() || eval_data.empty())) {
        throw Error(ErrorCode::kInvalidArgument,
                    "--finetune-data and --eval-data go together");
      }
      std::vector<std::string> layers = split_list(layers_arg);
      if (layers.empty()) layers = default_prune_layers(spec);

      nlohmann::ordered_json rows = nlohmann::ordered_json::array();
      std::string csv = tune ? "ratio,params,macs,param_reduction_pct,mac_reduction_pct,map\n"
                             : "ratio,params,macs,param_reduction_pct,mac_reduction_pct\n";
      if (!ratios.empty()) {
        const Checkpoint weights =
            s.weights.empty() ? init_random(spec, s.seed) : load_checkpoint(spec, s.weights);
        const ImportanceReport report =
            rank_for_pruning(spec, weights, layers, calibration, calibration_clips);
        std::optional<Dataset> train, held;
        if (tune) {
          train = load_dataset(data, spec.input_shape.freq);
          held = load_dataset(eval_data, spec.input_shape.freq);
        }
        const ComplexityReport base = analyze(spec);
        for (double r : ratios) {
          const PrunePlan plan = make_plan(report, uniform_ratios(layers, r));
          auto [pspec, pweights] = apply_plan(spec, weights, plan);
          const DeltaReport d = compare(base, analyze(pspec));
          nlohmann::ordered_json row{{"ratio", r},
                                     {"params", d.candidate_params},
                                     {"macs", d.candidate_macs},
                                     {"param_reduction_pct", std::round(d.param_reduction * 10) / 10},
                                     {"mac_reduction_pct", std::round(d.mac_reduction * 10) / 10}};
          std::string line = fmt(r) + "," + std::to_string(d.candidate_params) + "," +
                             std::to_string(d.candidate_macs) + "," +
                             fmt1(d.param_reduction) + "," + fmt1(d.mac_reduction);
          if (tune) {
            TrainConfig cfg = tc;
            cfg.seed = s.seed;
            pweights = finetune(pspec, pweights, *train, *held, cfg).weights;
            const double map = evaluate(pspec, pweights, *held).map;
            row["map"] = map;
            line += "," + fmt(map);
          }
          csv += line + "\n";
          rows.push_back(row);
          if (!s.out.empty()) {
            const std::string dir = (fs::path(s.out) / ("ratio_" + fmt(r))).string();
            save_model(pspec, (fs::path(dir) / "model.arch.json").string());
            write_file_atomic((fs::path(dir) / "plan.json").string(), plan_to_json(plan));
            if (save_weights) save_checkpoint(pspec, pweights, (fs::path(dir) / "model").string());
          }
        }
      }
      const std::string table = s.format == "csv" ? csv : rows.dump(2) + "\n";
      if (!s.out.empty()) {
        write_file_atomic((fs::path(s.out) / (s.format == "csv" ? "sweep.csv" : "sweep.json")).string(),
                          table);
      }
      std::cout << table;
    }
  } catch (const Error& e) {
    nlohmann::json detail{{"message", e.what()}};
    std::cerr << "error: " << error_code_name(e.code()) << " " << detail.dump() << "\n";
    return 1;
  } catch (const std::exception& e) {
    nlohmann::json detail{{"message", e.what()}};
    std::cerr << "error: InternalError " << detail.dump() << "\n";
    return 1;
  }
  return 0;
}
