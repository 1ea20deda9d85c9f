#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "fusionlab/error.hpp"

namespace fusionlab {

// Positive class = 1 (hate).
struct ConfusionCounts {
  std::size_t tp = 0;
  std::size_t fp = 0;
  std::size_t tn = 0;
  std::size_t fn = 0;

  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const ConfusionCounts&, const ConfusionCounts&) = default;
};

inline ConfusionCounts compute_confusion(std::span<const int> preds, std::span<const int> labels) {
  if (preds.size() != labels.size()) {
    throw DimensionError("compute_confusion: " + std::to_string(preds.size()) +
                         " predictions vs " + std::to_string(labels.size()) + " labels");
  }
  ConfusionCounts c;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const int p = preds[i], y = labels[i];
    if ((p != 0 && p != 1) || (y != 0 && y != 1)) {
      throw DataError("compute_confusion: values must be 0 or 1");
    }
    if (p == 1 && y == 1) ++c.tp;
    else if (p == 1) ++c.fp;
    else if (y == 1) ++c.fn;
    else ++c.tn;
  }
  return c;
}

struct ClassMetrics {
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
};

// Per-class metrics for both classes and their unweighted means. Any ratio
// with an empty denominator is defined as 0 and recorded in zero_division.
struct MacroMetrics {
  std::array<ClassMetrics, 2> per_class{};  // index = class label
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  double accuracy = 0.0;
  bool zero_division = false;
};

namespace detail {

inline ClassMetrics class_metrics(std::size_t tp, std::size_t fp, std::size_t fn, bool& flagged) {
  const auto ratio = [&](std::size_t num, std::size_t den) {
    if (den == 0) {
      flagged = true;
      return 0.0;
    }
    return static_cast<double>(num) / static_cast<double>(den);
  };
  ClassMetrics m;
  m.precision = ratio(tp, tp + fp);
  m.recall = ratio(tp, tp + fn);
  const double pr = m.precision + m.recall;
  m.f1 = pr > 0.0 ? 2.0 * m.precision * m.recall / pr : 0.0;
  return m;
}

}  // namespace detail

inline MacroMetrics macro_metrics(const ConfusionCounts& c) {
  if (c.total() == 0) throw ContractError("macro_metrics: no samples");
  MacroMetrics m;
  m.per_class[1] = detail::class_metrics(c.tp, c.fp, c.fn, m.zero_division);
  // Class 0 is scored by inverting labels and predictions.
  m.per_class[0] = detail::class_metrics(c.tn, c.fn, c.fp, m.zero_division);
  m.precision = (m.per_class[0].precision + m.per_class[1].precision) / 2.0;
  m.recall = (m.per_class[0].recall + m.per_class[1].recall) / 2.0;
  m.f1 = (m.per_class[0].f1 + m.per_class[1].f1) / 2.0;
  m.accuracy = static_cast<double>(c.tp + c.tn) / static_cast<double>(c.total());
  return m;
}

// Area under the ROC curve through the Mann-Whitney statistic: the chance a
// random positive outscores a random negative, ties counting one half.
inline double auroc(std::span<const float> scores, std::span<const int> labels) {
  if (scores.size() != labels.size()) {
    throw DimensionError("auroc: " + std::to_string(scores.size()) + " scores vs " +
                         std::to_string(labels.size()) + " labels");
  }
  std::size_t pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw DataError("auroc: labels must be 0 or 1");
    pos += static_cast<std::size_t>(y);
  }
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) {
    throw NumericError("auroc is undefined when only one class is present");
  }
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  // Sum of midranks (1-based) of the positives.
  double pos_rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = (static_cast<double>(i + 1) + static_cast<double>(j)) / 2.0;
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]] == 1) pos_rank_sum += midrank;
    i = j;
  }
  const double np = static_cast<double>(pos), nn = static_cast<double>(neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

}  // namespace fusionlab
