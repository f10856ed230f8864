// SPDX-License-Identifier: Apache-2.0
//
// Brute-force caption metric references. Written without sharing any code
// with src/metrics.cpp: n-grams are vectors compared element by element,
// LCS is a memoized recursion, and TF-IDF vectors are ordered maps.

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <map>
#include <set>
#include <string>
#include <vector>

namespace oracle {

using Sentence = std::vector<std::string>;
using Gram = std::vector<std::string>;

struct Item {
  Sentence hyp;
  std::vector<Sentence> refs;
};

inline std::vector<Gram> grams(const Sentence& s, int n) {
  std::vector<Gram> out;
  for (int i = 0; i + n <= static_cast<int>(s.size()); ++i) {
    out.emplace_back(s.begin() + i, s.begin() + i + n);
  }
  return out;
}

inline int occurrences(const std::vector<Gram>& list, const Gram& g) {
  return static_cast<int>(std::count(list.begin(), list.end(), g));
}

inline double bleu4(const std::vector<Item>& corpus) {
  double c = 0, r = 0;
  double match[4] = {0, 0, 0, 0}, total[4] = {0, 0, 0, 0};
  for (const auto& it : corpus) {
    c += it.hyp.size();
    // Closest length, shorter on ties: scan sorted candidate lengths.
    std::vector<int> lens;
    for (const auto& ref : it.refs) lens.push_back(static_cast<int>(ref.size()));
    std::sort(lens.begin(), lens.end());
    int best = lens[0];
    for (int l : lens) {
      if (std::abs(l - static_cast<int>(it.hyp.size())) <
          std::abs(best - static_cast<int>(it.hyp.size()))) {
        best = l;
      }
    }
    r += best;
    for (int n = 1; n <= 4; ++n) {
      const auto hg = grams(it.hyp, n);
      std::set<Gram> distinct(hg.begin(), hg.end());
      for (const auto& g : distinct) {
        int clip = 0;
        for (const auto& ref : it.refs) clip = std::max(clip, occurrences(grams(ref, n), g));
        match[n - 1] += std::min(occurrences(hg, g), clip);
      }
      total[n - 1] += hg.size();
    }
  }
  if (c == 0) return 0.0;
  double prod = 1.0;
  for (int n = 0; n < 4; ++n) {
    if (match[n] == 0) return 0.0;
    prod *= match[n] / total[n];
  }
  const double bp = c >= r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::pow(prod, 0.25);
}

inline int lcs(const Sentence& a, const Sentence& b) {
  std::map<std::pair<int, int>, int> memo;
  std::function<int(int, int)> go = [&](int i, int j) -> int {
    if (i == static_cast<int>(a.size()) || j == static_cast<int>(b.size())) return 0;
    const auto key = std::make_pair(i, j);
    if (auto f = memo.find(key); f != memo.end()) return f->second;
    int v = a[i] == b[j] ? 1 + go(i + 1, j + 1) : std::max(go(i + 1, j), go(i, j + 1));
    memo[key] = v;
    return v;
  };
  return go(0, 0);
}

inline double rouge_l(const Item& it, double beta = 1.2) {
  if (it.hyp.empty()) return 0.0;
  double p = 0, r = 0;
  for (const auto& ref : it.refs) {
    if (ref.empty()) continue;
    const double l = lcs(it.hyp, ref);
    p = std::max(p, l / it.hyp.size());
    r = std::max(r, l / ref.size());
  }
  if (p == 0 || r == 0) return 0.0;
  return (1 + beta * beta) * p * r / (r + beta * beta * p);
}

inline double rouge_l_corpus(const std::vector<Item>& corpus) {
  double s = 0;
  for (const auto& it : corpus) s += rouge_l(it);
  return s / corpus.size();
}

inline double cider_d(const std::vector<Item>& corpus, double sigma = 6.0) {
  const double N = corpus.size();
  // document frequency over each image's reference set
  std::map<Gram, int> df;
  for (const auto& it : corpus) {
    std::set<Gram> seen;
    for (const auto& ref : it.refs)
      for (int n = 1; n <= 4; ++n)
        for (const auto& g : grams(ref, n)) seen.insert(g);
    for (const auto& g : seen) df[g] += 1;
  }
  auto vec = [&](const Sentence& s, int n) {
    std::map<Gram, double> v;
    for (const auto& g : grams(s, n)) v[g] += 1.0;
    for (auto& [g, w] : v) {
      const int d = df.count(g) ? df[g] : 0;
      w = w * std::log(N / std::max(1, d));
    }
    return v;
  };
  double total = 0;
  for (const auto& it : corpus) {
    double per_image = 0;
    for (const auto& ref : it.refs) {
      const double dl = static_cast<double>(it.hyp.size()) - static_cast<double>(ref.size());
      const double pen = std::exp(-dl * dl / (2 * sigma * sigma));
      double acc = 0;
      for (int n = 1; n <= 4; ++n) {
        const auto vh = vec(it.hyp, n);
        const auto vr = vec(ref, n);
        double dot = 0, nh = 0, nr = 0;
        for (const auto& [g, w] : vh) {
          nh += w * w;
          auto f = vr.find(g);
          if (f != vr.end()) dot += std::min(w, f->second) * f->second;
        }
        for (const auto& [g, w] : vr) nr += w * w;
        if (nh > 0 && nr > 0) acc += dot / (std::sqrt(nh) * std::sqrt(nr)) * pen;
      }
      per_image += acc / 4.0;
    }
    total += 10.0 * per_image / it.refs.size();
  }
  return total / N;
}

}  // namespace oracle
