// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace synthaug::metrics {

using Tokens = std::vector<std::string>;

struct CaptionPair {
  std::string image_id;
  Tokens hypothesis;
  std::vector<Tokens> references;
};

/// Lowercase, strip ASCII punctuation, split on whitespace.
Tokens tokenize(std::string_view sentence);

/// Corpus BLEU-4 without smoothing. Brevity length is the closest reference
/// length, ties going to the shorter one.
double bleu4(std::span<const CaptionPair> corpus);

/// LCS F-measure with beta = 1.2. Over several references, precision and
/// recall are each maximized before combining.
double rouge_l(const CaptionPair& pair);
double rouge_l_corpus(std::span<const CaptionPair> corpus);

/// Single-reference F-measure.
double rouge_l(std::span<const std::string> hypothesis, std::span<const std::string> reference);

inline constexpr double kRougeBeta = 1.2;
inline constexpr double kCiderSigma = 6.0;

/// CIDEr-D: clipped TF-IDF cosine per n-gram order with a gaussian length
/// penalty, averaged over n = 1..4 and references, times 10.
double cider_d(std::span<const CaptionPair> corpus);

/// Per-image CIDEr-D scores in corpus order.
std::vector<double> cider_d_per_image(std::span<const CaptionPair> corpus);

struct MetricReport {
  std::string dataset;
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
  std::size_t n = 0;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

MetricReport evaluate_captions(std::span<const CaptionPair> corpus, std::string dataset = {});

/// "dataset,n,bleu4,rouge_l,cider_d"
std::string metric_csv_header();
std::string metric_csv_row(const MetricReport& report);

/// Reads newline-delimited {"image_id", "sentence"} records and joins
/// hypotheses with their references. Every hypothesis needs at least one
/// reference; duplicate hypotheses for an image are an error.
std::vector<CaptionPair> read_caption_pairs(const std::filesystem::path& hypotheses,
                                            const std::filesystem::path& references);

/// One scored entry for a delta table.
struct ScoreEntry {
  std::string name;
  std::string dataset;
  std::string metric;
  double value = 0.0;  // fraction, 0.713 means 71.3%
};

/// "+1.3%" style rendering of (variant - baseline) in percentage points.
std::string format_delta(double baseline, double variant);

struct DeltaRow {
  std::string name;
  double value = 0.0;
  double delta_pp = 0.0;
  std::string rendered;
};

/// Deltas of every variant against the baseline. Dataset or metric
/// mismatches raise InputError.
std::vector<DeltaRow> delta_table(const ScoreEntry& baseline, std::span<const ScoreEntry> variants);

}  // namespace synthaug::metrics
