// SPDX-License-Identifier: Apache-2.0

#include "synthaug/metrics.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <fstream>
#include <limits>
#include <unordered_map>
#include <unordered_set>

#include <fmt/core.h>
#include <spdlog/spdlog.h>

#include "synthaug/common.hpp"

namespace synthaug::metrics {

using nlohmann::json;

Tokens tokenize(std::string_view sentence) {
  std::string cleaned;
  cleaned.reserve(sentence.size());
  for (const char ch : sentence) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::ispunct(c)) continue;
    cleaned.push_back(static_cast<char>(std::tolower(c)));
  }
  return split_whitespace(cleaned);
}

namespace {

constexpr int kMaxN = 4;

// n-grams joined with a separator that cannot occur inside a token.
using NgramCounts = std::unordered_map<std::string, int>;

NgramCounts count_ngrams(const Tokens& tokens, int n) {
  NgramCounts counts;
  if (static_cast<int>(tokens.size()) < n) return counts;
  for (std::size_t i = 0; i + n <= tokens.size(); ++i) {
    std::string key = tokens[i];
    for (int k = 1; k < n; ++k) {
      key.push_back('\x1f');
      key += tokens[i + k];
    }
    ++counts[key];
  }
  return counts;
}

void check_pair(const CaptionPair& pair, std::size_t index) {
  if (pair.references.empty()) {
    throw InputError(fmt::format("caption pair {} (image '{}') has no references", index,
                                 pair.image_id));
  }
}

void check_corpus(std::span<const CaptionPair> corpus, std::string_view metric) {
  if (corpus.empty()) throw InputError(fmt::format("{}: empty corpus", metric));
  for (std::size_t i = 0; i < corpus.size(); ++i) check_pair(corpus[i], i);
}

std::size_t lcs_length(std::span<const std::string> a, std::span<const std::string> b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

double f_measure(double p, double r) {
  if (p == 0.0 || r == 0.0) return 0.0;
  const double b2 = kRougeBeta * kRougeBeta;
  return ((1.0 + b2) * p * r) / (r + b2 * p);
}

}  // namespace

double bleu4(std::span<const CaptionPair> corpus) {
  check_corpus(corpus, "bleu4");
  std::array<double, kMaxN> correct{}, guess{};
  double hyp_len = 0.0, ref_len = 0.0;
  for (const auto& pair : corpus) {
    const auto c = pair.hypothesis.size();
    hyp_len += static_cast<double>(c);
    // Closest reference length; ties go to the shorter reference.
    std::size_t best = pair.references.front().size();
    for (const auto& ref : pair.references) {
      const auto d = [c](std::size_t len) { return len > c ? len - c : c - len; };
      if (d(ref.size()) < d(best) || (d(ref.size()) == d(best) && ref.size() < best)) {
        best = ref.size();
      }
    }
    ref_len += static_cast<double>(best);

    for (int n = 1; n <= kMaxN; ++n) {
      const auto hyp_counts = count_ngrams(pair.hypothesis, n);
      NgramCounts max_ref;
      for (const auto& ref : pair.references) {
        for (const auto& [gram, cnt] : count_ngrams(ref, n)) {
          auto& m = max_ref[gram];
          m = std::max(m, cnt);
        }
      }
      for (const auto& [gram, cnt] : hyp_counts) {
        const auto it = max_ref.find(gram);
        if (it != max_ref.end()) correct[n - 1] += std::min(cnt, it->second);
        guess[n - 1] += cnt;
      }
    }
  }
  if (hyp_len == 0.0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < kMaxN; ++n) {
    if (correct[n] == 0.0) return 0.0;
    log_sum += std::log(correct[n] / guess[n]);
  }
  const double bp = std::exp(std::min(0.0, 1.0 - ref_len / hyp_len));
  return bp * std::exp(log_sum / kMaxN);
}

double rouge_l(std::span<const std::string> hypothesis, std::span<const std::string> reference) {
  if (hypothesis.empty() || reference.empty()) return 0.0;
  const auto lcs = static_cast<double>(lcs_length(hypothesis, reference));
  return f_measure(lcs / static_cast<double>(hypothesis.size()),
                   lcs / static_cast<double>(reference.size()));
}

double rouge_l(const CaptionPair& pair) {
  check_pair(pair, 0);
  if (pair.hypothesis.empty()) return 0.0;
  double p_max = 0.0, r_max = 0.0;
  for (const auto& ref : pair.references) {
    if (ref.empty()) continue;
    const auto lcs = static_cast<double>(lcs_length(pair.hypothesis, ref));
    p_max = std::max(p_max, lcs / static_cast<double>(pair.hypothesis.size()));
    r_max = std::max(r_max, lcs / static_cast<double>(ref.size()));
  }
  return f_measure(p_max, r_max);
}

double rouge_l_corpus(std::span<const CaptionPair> corpus) {
  check_corpus(corpus, "rouge_l");
  double sum = 0.0;
  for (const auto& pair : corpus) sum += rouge_l(pair);
  return sum / static_cast<double>(corpus.size());
}

namespace {

struct TfIdfVector {
  std::array<std::unordered_map<std::string, double>, kMaxN> weights;
  std::array<double, kMaxN> norm{};
  double length = 0.0;
};

TfIdfVector tfidf(const Tokens& tokens, const std::unordered_map<std::string, int>& df,
                  double log_corpus) {
  TfIdfVector v;
  for (int n = 1; n <= kMaxN; ++n) {
    double sq = 0.0;
    for (const auto& [gram, tf] : count_ngrams(tokens, n)) {
      const auto it = df.find(gram);
      const double d = it == df.end() ? 1.0 : std::max(1.0, static_cast<double>(it->second));
      const double w = static_cast<double>(tf) * (log_corpus - std::log(d));
      v.weights[n - 1][gram] = w;
    }
    // Summed in map order, the same order cider_sim walks, so a vector's
    // similarity with itself is exactly 1.
    for (const auto& [gram, w] : v.weights[n - 1]) sq += w * w;
    v.norm[n - 1] = sq;
  }
  v.length = static_cast<double>(tokens.size());
  return v;
}

double cider_sim(const TfIdfVector& hyp, const TfIdfVector& ref) {
  const double delta = hyp.length - ref.length;
  const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
  double total = 0.0;
  for (int n = 0; n < kMaxN; ++n) {
    double dot = 0.0;
    for (const auto& [gram, wh] : hyp.weights[n]) {
      const auto it = ref.weights[n].find(gram);
      if (it == ref.weights[n].end()) continue;
      // Clipping the hypothesis weight at the reference weight.
      dot += std::min(wh, it->second) * it->second;
    }
    if (hyp.norm[n] != 0.0 && ref.norm[n] != 0.0) {
      total += dot / std::sqrt(hyp.norm[n] * ref.norm[n]) * penalty;
    }
  }
  return total / kMaxN;
}

}  // namespace

std::vector<double> cider_d_per_image(std::span<const CaptionPair> corpus) {
  check_corpus(corpus, "cider_d");
  if (corpus.size() < 2) throw InputError("IDF undefined at corpus size 1");
  std::unordered_map<std::string, int> df;
  for (const auto& pair : corpus) {
    std::unordered_set<std::string> seen;
    for (const auto& ref : pair.references) {
      for (int n = 1; n <= kMaxN; ++n) {
        for (const auto& [gram, cnt] : count_ngrams(ref, n)) seen.insert(gram);
      }
    }
    for (const auto& g : seen) ++df[g];
  }
  const double log_corpus = std::log(static_cast<double>(corpus.size()));
  std::vector<double> scores;
  scores.reserve(corpus.size());
  for (const auto& pair : corpus) {
    const auto hv = tfidf(pair.hypothesis, df, log_corpus);
    double sum = 0.0;
    for (const auto& ref : pair.references) sum += cider_sim(hv, tfidf(ref, df, log_corpus));
    scores.push_back(sum / static_cast<double>(pair.references.size()) * 10.0);
  }
  return scores;
}

double cider_d(std::span<const CaptionPair> corpus) {
  const auto scores = cider_d_per_image(corpus);
  double sum = 0.0;
  for (double s : scores) sum += s;
  return sum / static_cast<double>(scores.size());
}

json MetricReport::to_json() const {
  return json{{"dataset", dataset}, {"n", n}, {"bleu4", bleu4}, {"rouge_l", rouge_l},
              {"cider_d", cider_d}};
}

MetricReport MetricReport::from_json(const json& j) {
  MetricReport r;
  r.dataset = j.value("dataset", "");
  r.n = j.at("n").get<std::size_t>();
  r.bleu4 = j.at("bleu4").get<double>();
  r.rouge_l = j.at("rouge_l").get<double>();
  r.cider_d = j.at("cider_d").get<double>();
  return r;
}

MetricReport evaluate_captions(std::span<const CaptionPair> corpus, std::string dataset) {
  MetricReport r;
  r.dataset = std::move(dataset);
  r.n = corpus.size();
  r.bleu4 = bleu4(corpus);
  r.rouge_l = rouge_l_corpus(corpus);
  r.cider_d = cider_d(corpus);
  return r;
}

std::string metric_csv_header() { return "dataset,n,bleu4,rouge_l,cider_d"; }

std::string metric_csv_row(const MetricReport& r) {
  return fmt::format("{},{},{:.6f},{:.6f},{:.6f}", r.dataset, r.n, r.bleu4, r.rouge_l, r.cider_d);
}

namespace {

std::vector<std::pair<std::string, std::string>> read_sentences(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError(fmt::format("cannot open caption records '{}'", path.string()));
  std::vector<std::pair<std::string, std::string>> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (trim(line).empty()) continue;
    try {
      const auto j = json::parse(line);
      const auto& id = j.at("image_id");
      std::string key = id.is_string() ? id.get<std::string>() : id.dump();
      out.emplace_back(std::move(key), j.at("sentence").get<std::string>());
    } catch (const json::exception& e) {
      throw InputError(fmt::format("{}:{}: {}", path.string(), lineno, e.what()));
    }
  }
  return out;
}

}  // namespace

std::vector<CaptionPair> read_caption_pairs(const std::filesystem::path& hypotheses,
                                            const std::filesystem::path& references) {
  std::map<std::string, std::vector<Tokens>> refs;
  for (auto& [id, sentence] : read_sentences(references)) refs[id].push_back(tokenize(sentence));

  std::vector<CaptionPair> pairs;
  std::unordered_set<std::string> seen;
  for (auto& [id, sentence] : read_sentences(hypotheses)) {
    if (!seen.insert(id).second) {
      throw InputError(fmt::format("{}: duplicate hypothesis for image '{}'", hypotheses.string(), id));
    }
    const auto it = refs.find(id);
    if (it == refs.end()) {
      throw InputError(fmt::format("{}: no reference for image '{}'", references.string(), id));
    }
    pairs.push_back({id, tokenize(sentence), it->second});
  }
  if (pairs.empty()) throw InputError(fmt::format("{}: no hypotheses", hypotheses.string()));
  if (seen.size() < refs.size()) {
    spdlog::warn("{} reference image(s) have no hypothesis and are ignored",
                 refs.size() - seen.size());
  }
  return pairs;
}

std::string format_delta(double baseline, double variant) {
  // Round in tenths of a point first so that -0.04 renders as +0.0%.
  const double tenths = std::round((variant - baseline) * 1000.0);
  if (tenths == 0.0) return "+0.0%";
  return fmt::format("{}{:.1f}%", tenths > 0 ? "+" : "-", std::abs(tenths) / 10.0);
}

std::vector<DeltaRow> delta_table(const ScoreEntry& baseline, std::span<const ScoreEntry> variants) {
  std::vector<DeltaRow> rows;
  for (const auto& v : variants) {
    if (v.dataset != baseline.dataset) {
      throw InputError(fmt::format("delta table: '{}' is on dataset '{}' but the baseline is on '{}'",
                                   v.name, v.dataset, baseline.dataset));
    }
    if (v.metric != baseline.metric) {
      throw InputError(fmt::format("delta table: '{}' reports '{}' but the baseline reports '{}'",
                                   v.name, v.metric, baseline.metric));
    }
    rows.push_back({v.name, v.value, (v.value - baseline.value) * 100.0,
                    format_delta(baseline.value, v.value)});
  }
  return rows;
}

}  // namespace synthaug::metrics
