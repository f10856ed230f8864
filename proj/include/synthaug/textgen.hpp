// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "synthaug/corpus.hpp"
#include "synthaug/process.hpp"

namespace synthaug::textgen {

struct LabelSpec {
  int class_id = 0;
  std::string label_text;

  bool operator==(const LabelSpec&) const = default;
};

/// Decoding settings. Defaults are the caption-generator settings: sentences
/// of at most 20 tokens, beam width 5.
struct DecodeConfig {
  int max_length = 20;
  int beam_size = 5;
  std::uint64_t seed = 0;

  void validate() const;
  bool operator==(const DecodeConfig&) const = default;
};

inline constexpr int kDefaultFinetuneEpochs = 5;

struct Description {
  std::string text;
  LabelSpec source_label;
  std::string backend_id;
  DecodeConfig decode_config;
};

struct TrainingSummary {
  std::string backend_id;
  std::size_t records_seen = 0;
  int epochs = 0;
  std::vector<double> nll_per_epoch;  // mean next-token NLL after each epoch

  double final_nll() const { return nll_per_epoch.empty() ? 0.0 : nll_per_epoch.back(); }
};

class T2TBackend {
 public:
  virtual ~T2TBackend() = default;

  virtual std::string id() const = 0;

  /// Must be a pure function of (fine-tune history, prompt, config).
  virtual std::string generate(const std::string& prompt, const DecodeConfig& config) = 0;

  /// Trains on prompt -> target continuation (next-token likelihood of the
  /// target given the prompt).
  virtual TrainingSummary finetune(std::span<const corpus::PromptedCaption> records,
                                   int epochs) = 0;

  /// How many generate() calls may run concurrently.
  virtual std::size_t max_parallelism() const { return 1; }
};

/// Template generator: "a photo of a {keywords} in a realistic scene,
/// variant {seed mod kVariants}". Needs no model.
class StubT2TBackend final : public T2TBackend {
 public:
  static constexpr std::uint64_t kVariants = 8;

  std::string id() const override { return "stub-t2t-v1"; }
  std::string generate(const std::string& prompt, const DecodeConfig& config) override;
  TrainingSummary finetune(std::span<const corpus::PromptedCaption> records, int epochs) override;
  std::size_t max_parallelism() const override { return 64; }

  std::size_t finetune_calls() const { return finetune_calls_; }

 private:
  std::size_t finetune_calls_ = 0;
};

/// Out-of-process generator speaking newline-delimited JSON on stdio:
///   {"op":"generate","prompt","max_length","beam_size","seed"} -> {"text"}
///   {"op":"finetune","epochs","records":N} + N {"prompt","target"} lines
///       -> {"records_seen","nll_per_epoch":[...]}
///   {"op":"info"} -> {"backend_id"}
class ProcessT2TBackend final : public T2TBackend {
 public:
  explicit ProcessT2TBackend(std::string command);

  std::string id() const override { return id_; }
  std::string generate(const std::string& prompt, const DecodeConfig& config) override;
  TrainingSummary finetune(std::span<const corpus::PromptedCaption> records, int epochs) override;

 private:
  std::unique_ptr<LineProcess> process_;
  std::string id_;
};

/// "stub" or "process:<command>".
std::unique_ptr<T2TBackend> make_t2t_backend(const std::string& spec);

TrainingSummary finetune(T2TBackend& backend, std::span<const corpus::PromptedCaption> records,
                         int epochs = kDefaultFinetuneEpochs);

/// Generates a description for a label from the one-keyword prompt
/// render_prompt({label_text}). Output is cut to max_length whitespace tokens.
Description gen_description(T2TBackend& backend, const LabelSpec& label,
                            const DecodeConfig& config);

/// Label-major, variant-minor; variant v decodes with seed + v.
std::vector<Description> gen_description_batch(T2TBackend& backend,
                                               std::span<const LabelSpec> labels,
                                               const DecodeConfig& config,
                                               std::size_t variants_per_label = 1);

}  // namespace synthaug::textgen
