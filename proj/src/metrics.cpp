#include "affect/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace affect::metrics {

namespace {

void check_pair(std::span<const double> x, std::span<const double> y, const char* who) {
  if (x.size() != y.size()) {
    throw InvalidInput(std::string(who) + ": length mismatch (" + std::to_string(x.size()) +
                       " vs " + std::to_string(y.size()) + ")");
  }
  if (x.size() < 2) throw InvalidInput(std::string(who) + ": need at least 2 samples");
}

double covariance(std::span<const double> x, double mx, std::span<const double> y, double my) {
  double s = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) s += (x[i] - mx) * (y[i] - my);
  return s / static_cast<double>(x.size());
}

}  // namespace

SeriesStats series_stats(std::span<const double> x) {
  if (x.empty()) throw InvalidInput("series_stats: empty series");
  const double n = static_cast<double>(x.size());
  const double mean = std::accumulate(x.begin(), x.end(), 0.0) / n;
  double ss = 0.0;
  for (double v : x) ss += (v - mean) * (v - mean);
  return {mean, std::sqrt(ss / n)};
}

double ccc(std::span<const double> x, std::span<const double> x_hat) {
  check_pair(x, x_hat, "ccc");
  const SeriesStats sx = series_stats(x);
  const SeriesStats sy = series_stats(x_hat);
  const double cov = covariance(x, sx.mean, x_hat, sy.mean);
  const double gap = sx.mean - sy.mean;
  const double denom = sx.std * sx.std + sy.std * sy.std + gap * gap;
  if (denom == 0.0) {
    throw DegenerateInput("ccc: both series constant with equal means (zero denominator)");
  }
  return 2.0 * cov / denom;
}

double pearson(std::span<const double> x, std::span<const double> y) {
  check_pair(x, y, "pearson");
  const SeriesStats sx = series_stats(x);
  const SeriesStats sy = series_stats(y);
  if (sx.std == 0.0 || sy.std == 0.0) throw DegenerateInput("pearson: constant series");
  const double r = covariance(x, sx.mean, y, sy.mean) / (sx.std * sy.std);
  return std::clamp(r, -1.0, 1.0);
}

double f1_per_class(const ConfusionCounts& cc) {
  if (cc.tp < 0 || cc.fp < 0 || cc.fn < 0) throw InvalidInput("f1_per_class: negative count");
  if (cc.tp + cc.fp == 0 || cc.tp + cc.fn == 0) return 0.0;
  const double precision = static_cast<double>(cc.tp) / static_cast<double>(cc.tp + cc.fp);
  const double recall = static_cast<double>(cc.tp) / static_cast<double>(cc.tp + cc.fn);
  if (precision + recall == 0.0) return 0.0;
  return 2.0 * precision * recall / (precision + recall);
}

MetricReport track_performance(Track track, std::vector<double> per_class) {
  const auto expected = static_cast<std::size_t>(class_count(track));
  if (per_class.size() != expected) {
    throw InvalidInput("track_performance: track " + std::string(track_name(track)) + " needs " +
                       std::to_string(expected) + " per-class values, got " +
                       std::to_string(per_class.size()));
  }
  MetricReport report;
  report.track = track;
  report.performance = std::accumulate(per_class.begin(), per_class.end(), 0.0) /
                       static_cast<double>(per_class.size());
  report.per_class = std::move(per_class);
  return report;
}

namespace {

void check_alignment(const PredictionTrack& p, const LabelTrack& l) {
  if (p.track != l.track) throw InvalidInput("evaluate: prediction and label tracks differ");
  if (p.video_id != l.video_id) {
    throw InvalidInput("evaluate: video mismatch ('" + p.video_id + "' vs '" + l.video_id + "')");
  }
  if (p.rows() != l.rows()) {
    throw InvalidInput("evaluate: '" + p.video_id + "' has " + std::to_string(p.rows()) +
                       " predicted rows but " + std::to_string(l.rows()) + " label rows");
  }
  if (p.scores.cols() != class_count(p.track) || p.decisions.cols() != decision_width(p.track)) {
    throw InvalidInput("evaluate: prediction shape does not match track");
  }
  if (l.values.cols() != label_width(l.track)) {
    throw InvalidInput("evaluate: label shape does not match track");
  }
}

bool row_valid(const LabelTrack& l, Eigen::Index r) {
  switch (l.track) {
    case Track::VA: return l.values(r, 0) != kVaInvalid && l.values(r, 1) != kVaInvalid;
    case Track::EXPR:
    case Track::CE: return l.values(r, 0) != kLabelInvalid;
    case Track::AU: return (l.values.row(r).array() != kLabelInvalid).any();
    case Track::EMI: return true;
  }
  return false;
}

void accumulate_counts(const PredictionTrack& p, const LabelTrack& l,
                       std::vector<ConfusionCounts>& counts) {
  for (Eigen::Index r = 0; r < l.rows(); ++r) {
    if (p.track == Track::AU) {
      for (Eigen::Index c = 0; c < l.values.cols(); ++c) {
        const double truth = l.values(r, c);
        if (truth == kLabelInvalid) continue;
        const bool pos_pred = p.decisions(r, c) == 1;
        const bool pos_true = truth == 1.0;
        auto& cc = counts[static_cast<std::size_t>(c)];
        if (pos_pred && pos_true) ++cc.tp;
        else if (pos_pred) ++cc.fp;
        else if (pos_true) ++cc.fn;
      }
    } else {
      if (!row_valid(l, r)) continue;
      const int truth = static_cast<int>(l.values(r, 0));
      const int guess = p.decisions(r, 0);
      if (truth == guess) {
        ++counts[static_cast<std::size_t>(truth)].tp;
      } else {
        ++counts[static_cast<std::size_t>(guess)].fp;
        ++counts[static_cast<std::size_t>(truth)].fn;
      }
    }
  }
}

}  // namespace

std::vector<ConfusionCounts> confusion_counts(const PredictionTrack& preds, const LabelTrack& labels) {
  check_alignment(preds, labels);
  if (is_regression(preds.track)) {
    throw InvalidInput("confusion_counts: regression track has no confusion counts");
  }
  std::vector<ConfusionCounts> counts(static_cast<std::size_t>(class_count(preds.track)));
  accumulate_counts(preds, labels, counts);
  return counts;
}

MetricReport evaluate_track(const PredictionTrack& preds, const LabelTrack& labels) {
  return evaluate_tracks(std::span(&preds, 1), std::span(&labels, 1));
}

MetricReport evaluate_tracks(std::span<const PredictionTrack> preds, std::span<const LabelTrack> labels) {
  if (preds.size() != labels.size()) {
    throw InvalidInput("evaluate: " + std::to_string(preds.size()) + " prediction tracks vs " +
                       std::to_string(labels.size()) + " label tracks");
  }
  if (preds.empty()) throw InvalidInput("evaluate: no tracks");
  const Track track = preds.front().track;
  std::int64_t n_eval = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i].track != track) throw InvalidInput("evaluate: mixed tracks");
    check_alignment(preds[i], labels[i]);
    for (Eigen::Index r = 0; r < labels[i].rows(); ++r) n_eval += row_valid(labels[i], r) ? 1 : 0;
  }
  if (n_eval == 0) throw InvalidInput("evaluate: empty evaluation set after masking");

  std::vector<double> per_class;
  if (is_regression(track)) {
    const int dims = class_count(track);
    std::vector<std::vector<double>> truth(static_cast<std::size_t>(dims));
    std::vector<std::vector<double>> guess(static_cast<std::size_t>(dims));
    for (std::size_t i = 0; i < preds.size(); ++i) {
      for (Eigen::Index r = 0; r < labels[i].rows(); ++r) {
        if (!row_valid(labels[i], r)) continue;
        for (int c = 0; c < dims; ++c) {
          truth[static_cast<std::size_t>(c)].push_back(labels[i].values(r, c));
          guess[static_cast<std::size_t>(c)].push_back(preds[i].scores(r, c));
        }
      }
    }
    for (int c = 0; c < dims; ++c) {
      const auto& t = truth[static_cast<std::size_t>(c)];
      const auto& g = guess[static_cast<std::size_t>(c)];
      per_class.push_back(track == Track::VA ? ccc(t, g) : pearson(t, g));
    }
  } else {
    std::vector<ConfusionCounts> counts(static_cast<std::size_t>(class_count(track)));
    for (std::size_t i = 0; i < preds.size(); ++i) accumulate_counts(preds[i], labels[i], counts);
    for (const auto& cc : counts) per_class.push_back(f1_per_class(cc));
  }
  MetricReport report = track_performance(track, std::move(per_class));
  report.n_evaluated = n_eval;
  return report;
}

}  // namespace affect::metrics
