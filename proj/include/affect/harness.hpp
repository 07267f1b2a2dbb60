#pragma once

#include "affect/ensemble.hpp"
#include "affect/fusion.hpp"
#include "affect/metrics.hpp"
#include "affect/postprocess.hpp"
#include "affect/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace affect::harness {

/// One cross-validation fold. Splits are video-level.
struct FoldSplit {
  int fold_id = 1;  // 1..k
  std::vector<std::string> train_video_ids;
  std::vector<std::string> val_video_ids;
  std::uint64_t seed = 0;
};

/// Seeded shuffle, then contiguous partition; the first (n mod k) folds get one
/// extra video. Train/val lists keep the input order.
std::vector<FoldSplit> split_folds(std::span<const std::string> video_ids, int k, std::uint64_t seed);

/// Bundles and labels of a data set, aligned by index.
struct Corpus {
  Track track = Track::EXPR;
  std::vector<FeatureBundle> bundles;
  std::vector<LabelTrack> labels;

  std::vector<std::string> video_ids() const;
  std::size_t index_of(const std::string& video_id) const;
  void validate() const;
};

/// Knobs of the synthetic stand-in corpus.
struct SyntheticSpec {
  Track track = Track::EXPR;
  int videos = 20;
  int min_frames = 40;
  int max_frames = 60;
  int dim = 16;
  int clip_length = 10;
  double separation = 3.0;        // norm of each class prototype
  double noise = 0.3;             // std of the iid feature noise
  int background_clusters = 3;
  int background_dim = 4;
  double background_shift = 0.5;  // norm of the per-scene feature offset
  double face_dropout = 0.0;      // probability a frame has no face
  double mean_segment = 8.0;      // mean run length of a constant label (1 = iid frames)
  std::vector<double> class_probs;  // EXPR/CE class distribution; empty = uniform
  double au_rate = 0.3;           // probability an AU is active in a segment
  std::optional<bool> with_text;  // default: EMI only
  std::uint64_t seed = 0;

  void validate() const;
};

/// Class-conditional Gaussian features per modality. Each video belongs to
/// one of `background_clusters` scenes, which sets its background descriptor
/// and shifts its features. Frames without a face carry noise only.
Corpus make_synthetic_corpus(const SyntheticSpec& spec);

/// The separable-corpus defaults used by the end-to-end checks.
SyntheticSpec separable_spec(Track track, std::uint64_t seed);

enum class ClassWeightPolicy { Uniform, InverseFrequency };

struct ExperimentConfig {
  Track track = Track::EXPR;
  fusion::FusionConfig fusion;
  fusion::TrainConfig train;
  postprocess::PostprocessConfig post;
  int subsets = 3;
  int folds = 5;
  ClassWeightPolicy class_weights = ClassWeightPolicy::InverseFrequency;
  std::uint64_t seed = 0;
  int threads = 1;
  /// Explicit train/val split reported as the "Official" row.
  std::optional<std::pair<std::vector<std::string>, std::vector<std::string>>> official;
  bool run_folds = true;

  void validate() const;
};

struct FoldOutcome {
  std::string name;  // "Official" or "fold-<i>"
  std::optional<metrics::MetricReport> report;
  std::string error;  // set when the fold failed
};

struct ExperimentResult {
  Track track = Track::EXPR;
  std::vector<FoldOutcome> folds;

  /// Mean performance over the successful cross-validation folds (not Official).
  double fold_mean() const;
  /// Mean of each per-class column over the successful cross-validation folds.
  std::vector<double> fold_mean_per_class() const;
};

/// Mixes a base seed with two small indices (splitmix64).
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b);

/// Class weights for a training set under the given policy.
losses::ClassWeights class_weights_for(Track track, ClassWeightPolicy policy,
                                       std::span<const fusion::TrainingSample> samples);

/// Trains one classifier on the given videos.
ensemble::Classifier train_classifier(const ExperimentConfig& cfg, const Corpus& corpus,
                                      std::span<const std::string> video_ids, std::uint64_t seed,
                                      std::vector<double>* loss_curve = nullptr);

/// Partition -> m subset classifiers -> ensemble predict -> post-process ->
/// evaluate, for one train/val split.
metrics::MetricReport run_fold(const ExperimentConfig& cfg, const Corpus& corpus,
                               std::span<const std::string> train_ids, std::span<const std::string> val_ids,
                               int fold_index);

/// Single classifier, no post-processing: train -> predict -> evaluate.
metrics::MetricReport train_predict_evaluate(const ExperimentConfig& cfg, const Corpus& corpus,
                                             std::span<const std::string> train_ids,
                                             std::span<const std::string> val_ids, int fold_index);

/// Runs the official split (if configured) and every cross-validation fold.
/// A failing fold is recorded with its diagnostic; the others still run.
ExperimentResult run_experiment(const ExperimentConfig& cfg, const Corpus& corpus);

// ---------------------------------------------------------------------------
// Reports

struct ReportRow {
  std::string name;
  std::vector<double> per_class;
  std::optional<std::string> error;
};

/// Fixed-width table: "Val Set", one column per class, "Avg.". F1 tracks are
/// printed in percent with two decimals, correlation tracks with four.
std::string render_report_text(Track track, std::span<const ReportRow> rows);

/// {"track", "columns", "rows": [{"name", "per_class", "avg"} | {"name", "error"}]}
std::string render_report_json(Track track, std::span<const ReportRow> rows);

std::vector<ReportRow> report_rows(const ExperimentResult& result);

/// True for F1 tracks, which tables show in percent.
bool reported_in_percent(Track track);

}  // namespace affect::harness
