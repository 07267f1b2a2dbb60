#pragma once

#include "affect/fusion.hpp"
#include "affect/postprocess.hpp"
#include "affect/types.hpp"

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace affect::ensemble {

/// Which background subset each video belongs to.
struct SubsetAssignment {
  std::vector<std::string> video_ids;
  std::vector<int> subset;  // parallel to video_ids, values in [0, m)
  int m = 0;
  Matrix centroids;         // m x b

  int subset_of(const std::string& video_id) const;
  /// Videos of subset s, in assignment order.
  std::vector<std::string> members(int s) const;
  void validate() const;
};

/// Seeded k-means (k-means++ seeding, at most 100 Lloyd iterations) over the
/// rows of `descriptors`. Empty clusters are repaired by moving the point of
/// the largest cluster that lies farthest from its centroid.
SubsetAssignment partition_backgrounds(std::span<const std::string> video_ids, const Matrix& descriptors, int m,
                                       std::uint64_t seed);

SubsetAssignment partition_backgrounds(std::span<const FeatureBundle> bundles, int m, std::uint64_t seed);

/// One classifier's ballot for one frame (or one AU of one frame).
struct Vote {
  int label = 0;
  double confidence = 0.0;
};

/// Every classifier's ballot for one sample.
using VoteRecord = std::vector<Vote>;

/// Plurality label. Ties go to the highest summed confidence, then to the
/// lowest class index.
int vote(std::span<const Vote> records);

/// Element-wise mean.
std::vector<double> fuse_regression(std::span<const std::vector<double>> per_classifier);

/// Fuses aligned predictions of several classifiers for one video: votes on
/// decisions (AU per unit, EXPR/CE per row) and averages the scores; regression
/// tracks are averaged.
PredictionTrack fuse_predictions(std::span<const PredictionTrack> per_classifier);

struct Classifier {
  fusion::FusionParams params;
  fusion::FusionConfig config;
};

/// Runs every classifier on the video and fuses the results. When
/// `before_vote` is given, each classifier's output is post-processed with it
/// before fusion. `threads` caps the number of classifiers run concurrently.
PredictionTrack ensemble_predict(const FeatureBundle& bundle, std::span<const Classifier> classifiers,
                                 const SubsetAssignment& assignment,
                                 const postprocess::PostprocessConfig* before_vote = nullptr, int threads = 1);

}  // namespace affect::ensemble
