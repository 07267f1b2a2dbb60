#pragma once

#include "affect/types.hpp"

#include <cstdint>
#include <span>
#include <vector>

namespace affect::metrics {

/// Population moments of a series (divide by n).
struct SeriesStats {
  double mean = 0.0;
  double std = 0.0;
};

SeriesStats series_stats(std::span<const double> x);

struct ConfusionCounts {
  std::int64_t tp = 0;
  std::int64_t fp = 0;
  std::int64_t fn = 0;
};

struct MetricReport {
  Track track = Track::EXPR;
  std::vector<double> per_class;  // F1_c, CCC per dimension, or Pearson per dimension
  double performance = 0.0;       // arithmetic mean of per_class
  std::int64_t n_evaluated = 0;   // rows that contributed at least one valid label
};

/// Concordance correlation coefficient
///   2 cov(x, x_hat) / (var x + var x_hat + (mean x - mean x_hat)^2)
/// with population moments. Throws InvalidInput on length mismatch or fewer
/// than two samples, DegenerateInput when the denominator vanishes.
double ccc(std::span<const double> x, std::span<const double> x_hat);

/// Pearson correlation. Throws DegenerateInput when either series is constant.
double pearson(std::span<const double> x, std::span<const double> y);

/// F1 from raw counts. Any zero denominator (no predicted positives, no true
/// positives, or P + R = 0) yields 0.
double f1_per_class(const ConfusionCounts& cc);

/// Wraps per-class scores into a report; performance is their mean.
MetricReport track_performance(Track track, std::vector<double> per_class);

/// Per-class one-vs-rest counts over valid rows. For AU each column is its own
/// binary problem masked by its own -1 entries.
std::vector<ConfusionCounts> confusion_counts(const PredictionTrack& preds, const LabelTrack& labels);

/// Scores one video's predictions against its labels.
MetricReport evaluate_track(const PredictionTrack& preds, const LabelTrack& labels);

/// Scores several videos as one pooled evaluation set (the statistics are
/// computed over the concatenation, not averaged per video).
MetricReport evaluate_tracks(std::span<const PredictionTrack> preds, std::span<const LabelTrack> labels);

}  // namespace affect::metrics
