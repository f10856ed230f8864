// SPDX-License-Identifier: Apache-2.0
//
// Experiment commands. Each cmd_* validates its config, does its work under
// out_dir and returns what it wrote. Errors surface as InputError,
// BackendError or PartialFailure; the command-line front end turns those
// into exit codes 2, 3 and 4.

#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "synthaug/datasets.hpp"
#include "synthaug/metrics.hpp"
#include "synthaug/textgen.hpp"
#include "synthaug/trainer.hpp"

namespace synthaug::pipeline {

/// Environment variable that overrides the default cache root.
inline constexpr const char* kCacheEnv = "SYNTHAUG_CACHE";

/// Flat key set shared by the config file and the command line.
struct PipelineConfig {
  // inputs
  std::string captions;
  std::string caption_format = "coco_json";
  std::vector<std::string> labels;
  std::string labels_file;
  std::string dataset;          // real-image manifest
  std::string test_dataset;     // test manifest for train/evaluate
  std::string descriptions;     // gen-descriptions output, for prompt_source=description
  std::string images_manifest;  // gen-images output
  std::string adversarial_dir;  // <dir>/<label>/*.png

  // backends: "stub" or "process:<command>"
  std::string t2t_backend = "stub";
  std::string t2i_backend = "stub";

  // augmentation
  double ratio = 1.0;
  std::string prompt_source = "label";
  std::uint64_t seed = 0;
  std::size_t variants_per_label = 1;
  bool long_tail = false;
  std::size_t few_shot = 0;  // 0 keeps every real image
  std::size_t adversarial_per_class = 0;
  bool manifest_only = false;  // plan synthetic entries without rendering them

  // decoding
  int max_length = 20;
  int beam_size = 5;
  int finetune_epochs = textgen::kDefaultFinetuneEpochs;

  // dataset resolution
  int width = 32;
  int height = 32;

  // training
  trainer::TrainConfig train;
  std::string classifier = "convnet";

  // evaluation
  std::string checkpoint;
  std::string hypotheses;
  std::string references;

  // sweeps and reports
  std::vector<double> ratios;
  std::vector<double> max_ratios;
  std::vector<std::string> results;
  std::string metric = "accuracy";

  // toy data
  std::size_t toy_per_class = 50;
  std::size_t toy_test_per_class = 20;

  std::string name = "experiment";
  std::string out_dir = "out";
  std::string cache_dir;  // empty: $SYNTHAUG_CACHE, then <out_dir>/cache

  /// Checks value ranges and the inputs `command` needs.
  void validate(std::string_view command) const;

  nlohmann::json to_json() const;
  /// Flat TOML rendering of every key, readable back through --config.
  std::string to_toml() const;
  /// sha256 over every key.
  std::string digest() const;

  std::filesystem::path resolved_cache_dir() const;
  textgen::DecodeConfig decode_config() const;
  ImageSpec image_spec() const;
  datasets::AugmentationPlan plan() const;
};

/// What a command produced. Timings are kept out of the serialized result
/// so reruns stay byte-identical; they go to a separate file.
struct ExperimentResult {
  std::string command;
  std::string name;
  std::string config_digest;
  std::map<std::string, std::string> manifest_digests;
  std::string dataset;
  std::string metric;
  double value = 0.0;
  std::optional<trainer::RunReport> run_report;
  std::optional<metrics::MetricReport> metric_report;
  std::map<std::string, double> timings_sec;
  std::vector<std::filesystem::path> outputs;

  nlohmann::json to_json() const;
  static ExperimentResult from_json(const nlohmann::json& j);
};

/// Label texts from `labels`, else `labels_file` (one per line), else the
/// categories of `dataset`.
std::vector<std::string> resolve_labels(const PipelineConfig& config);

/// Real dataset after the long-tail / few-shot subsetting the config asks for.
datasets::Dataset load_real_dataset(const PipelineConfig& config);

ExperimentResult cmd_finetune_t2t(const PipelineConfig& config);
ExperimentResult cmd_gen_descriptions(const PipelineConfig& config);
ExperimentResult cmd_gen_images(const PipelineConfig& config);
ExperimentResult cmd_build_dataset(const PipelineConfig& config);
ExperimentResult cmd_train(const PipelineConfig& config);
ExperimentResult cmd_evaluate(const PipelineConfig& config);
ExperimentResult cmd_sweep(const PipelineConfig& config);
ExperimentResult cmd_report(const PipelineConfig& config);

/// Stub-rendered "real" toy set: train.jsonl and test.jsonl under out_dir.
ExperimentResult cmd_make_toy(const PipelineConfig& config);

/// Header of the sweep CSV.
std::string sweep_csv_header();

struct SweepPoint {
  double ratio = 0.0;
  double mean_val_accuracy = 0.0;
  double mean_test_accuracy = 0.0;
  double std_test_accuracy = 0.0;
};

/// Ratio whose run has the best validation accuracy; ties go to the smaller
/// ratio. `points` must not be empty.
const SweepPoint& select_max(const std::vector<SweepPoint>& points);

struct PlotSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;  // (x, y)
  bool dashed = false;
};

/// Line chart of accuracy (y, fraction) against ratio (x) as an RGB raster.
Image render_line_plot(const std::vector<PlotSeries>& series, int width = 480,
                       int height = 320);

}  // namespace synthaug::pipeline
