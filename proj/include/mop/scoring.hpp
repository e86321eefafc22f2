#pragma once

/**
 * Task metrics: execution accuracy (exact match), set-style match, and
 * ROUGE-L, over a shared text-normalization pipeline.
 *
 * Normalization is pinned bit-exactly so scores are reproducible:
 * ASCII-lowercase, collapse whitespace runs to a single space, strip
 * surrounding whitespace, then strip terminal punctuation (. , ; : ! ?).
 */

#include <algorithm>
#include <cctype>
#include <cmath>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "mop/core.hpp"
#include "mop/errors.hpp"

namespace mop {

inline std::string normalize_answer(std::string_view raw) {
  std::string s;
  s.reserve(raw.size());
  bool pending_space = false;
  for (char c : raw) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !s.empty();
      continue;
    }
    if (pending_space) {
      s.push_back(' ');
      pending_space = false;
    }
    s.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
  }
  auto is_terminal_punct = [](char c) {
    return c == '.' || c == ',' || c == ';' || c == ':' || c == '!' || c == '?';
  };
  while (!s.empty() && (is_terminal_punct(s.back()) || s.back() == ' ')) s.pop_back();
  return s;
}

inline std::vector<std::string> tokenize(std::string_view text) {
  const std::string norm = normalize_answer(text);
  std::vector<std::string> tokens;
  std::size_t i = 0;
  while (i < norm.size()) {
    std::size_t j = norm.find(' ', i);
    if (j == std::string::npos) j = norm.size();
    if (j > i) tokens.emplace_back(norm.substr(i, j - i));
    i = j + 1;
  }
  return tokens;
}

/// 1.0 iff the normalized prediction equals any normalized acceptable answer.
inline double exact_match(std::string_view prediction, const std::vector<std::string>& acceptable) {
  const std::string pred = normalize_answer(prediction);
  for (const auto& gold : acceptable)
    if (pred == normalize_answer(gold)) return 1.0;
  return 0.0;
}

/// Splits text on `separator` and normalizes each piece; empty pieces dropped.
inline std::set<std::string> answer_set(std::string_view text, char separator = ',') {
  std::set<std::string> items;
  std::size_t start = 0;
  while (start <= text.size()) {
    std::size_t end = text.find(separator, start);
    if (end == std::string_view::npos) end = text.size();
    std::string item = normalize_answer(text.substr(start, end - start));
    if (!item.empty()) items.insert(std::move(item));
    start = end + 1;
  }
  return items;
}

/// |P ∩ G| / |G| where P is the prediction's answer set and G the union of
/// the acceptable answers' sets.
inline double set_match(std::string_view prediction, const std::vector<std::string>& acceptable,
                        char separator = ',') {
  std::set<std::string> gold;
  for (const auto& g : acceptable) {
    auto items = answer_set(g, separator);
    gold.insert(items.begin(), items.end());
  }
  if (gold.empty()) return 0.0;
  const auto pred = answer_set(prediction, separator);
  std::size_t hits = 0;
  for (const auto& item : pred)
    if (gold.count(item)) ++hits;
  return static_cast<double>(hits) / static_cast<double>(gold.size());
}

/// Longest common subsequence length between two token sequences.
inline std::size_t lcs_length(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return 0;
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

/// Token-level ROUGE-L F1 (beta = 1). Zero when either side has no tokens.
inline double rouge_l(std::string_view prediction, std::string_view reference) {
  const auto pred = tokenize(prediction);
  const auto ref = tokenize(reference);
  if (pred.empty() || ref.empty()) return 0.0;
  const double lcs = static_cast<double>(lcs_length(pred, ref));
  if (lcs == 0.0) return 0.0;
  const double precision = lcs / static_cast<double>(pred.size());
  const double recall = lcs / static_cast<double>(ref.size());
  return 2.0 * precision * recall / (precision + recall);
}

/// Per-item score of one prediction against a demo's acceptable outputs.
inline double score_prediction(std::string_view prediction, const Demo& gold, Metric metric) {
  switch (metric) {
    case Metric::ExactMatch:
      return exact_match(prediction, gold.outputs);
    case Metric::SetMatch:
      return set_match(prediction, gold.outputs);
    case Metric::RougeL: {
      double best = 0.0;
      for (const auto& ref : gold.outputs) best = std::max(best, rouge_l(prediction, ref));
      return best;
    }
  }
  return 0.0;
}

struct ScoreReport {
  std::vector<double> per_item;
  double mean = 0.0;
  Metric metric = Metric::ExactMatch;

  json to_json() const {
    return json{{"metric", to_string(metric)}, {"mean", mean}, {"per_item", per_item}};
  }
};

inline ScoreReport score_batch(const std::vector<std::string>& predictions,
                               const std::vector<Demo>& golds, Metric metric) {
  if (predictions.empty() || predictions.size() != golds.size())
    throw LengthMismatch("score_batch requires equal, non-empty prediction and gold lists");
  ScoreReport report;
  report.metric = metric;
  report.per_item.reserve(predictions.size());
  double total = 0.0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double s = score_prediction(predictions[i], golds[i], metric);
    report.per_item.push_back(s);
    total += s;
  }
  report.mean = total / static_cast<double>(report.per_item.size());
  return report;
}

}  // namespace mop
