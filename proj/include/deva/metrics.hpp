#pragma once

#include <optional>
#include <span>
#include <string>
#include <vector>

#include "json.hpp"

namespace deva {

/// Regression-style sentiment metrics. For label range 3, acc7/acc5 are the
/// rounded-class accuracies; for label range 1, acc3/acc5 use the usual
/// [-1, 1] bins and acc7 is absent.
struct MetricsReport {
  std::size_t count = 0;
  std::size_t nonzero_count = 0;  // samples behind the "excl" numbers
  double acc2_incl = 0.0;         // zero counted non-negative
  double acc2_excl = 0.0;         // zero-labelled samples dropped
  double f1_incl = 0.0;           // support-weighted F1 over the acc2 classes
  double f1_excl = 0.0;
  std::optional<double> acc3;
  double acc5 = 0.0;
  std::optional<double> acc7;
  double mae = 0.0;
  double corr = 0.0;  // Pearson; 0 when either side is constant

  nlohmann::json to_json() const;
};

/// Throws std::invalid_argument on length mismatch, empty input, or a label
/// range other than 3 or 1.
MetricsReport compute_metrics(std::span<const double> preds, std::span<const double> labels,
                              double label_range);

/// Binary weighted F1 (sklearn "weighted" average) of 0/1 predictions.
double weighted_f1(std::span<const int> truth, std::span<const int> pred);

/// Pearson correlation, 0 when either side has zero variance.
double pearson(std::span<const double> a, std::span<const double> b);

struct IntervalReport {
  std::string name;     // e.g. "[-3,-2)" or "0"
  std::size_t count = 0;
  std::optional<MetricsReport> metrics;  // absent when the interval is empty

  nlohmann::json to_json() const;
};

/// Partitions samples by true label into [-3,-2), [-2,-1), [-1,0), (0,1],
/// (1,2], (2,3] (scaled by label_range / 3) plus exact zero, and scores each.
std::vector<IntervalReport> fine_grained_eval(std::span<const double> preds,
                                              std::span<const double> labels, double label_range);

}  // namespace deva
