#pragma once

#include "affect/types.hpp"

#include <cstdint>
#include <optional>
#include <span>
#include <vector>

namespace affect::postprocess {

/// Gaussian filter width. sigma below 1e-6 means "no smoothing".
struct SmoothingConfig {
  double sigma = 2.0;
  std::optional<int> kernel_radius;  // default ceil(3 sigma)

  int radius() const;
  void validate() const;
  /// sigma = 2 for AU/EXPR, 4 for VA.
  static SmoothingConfig for_track(Track track);
};

inline constexpr double kIdentitySigma = 1e-6;

/// Sampled Gaussian over [-radius, radius], normalized to sum 1.
std::vector<double> gaussian_kernel(const SmoothingConfig& cfg);

/// Each frame without a face takes the prediction of the nearest earlier face
/// frame; frames before the first face frame take the first face frame.
PredictionTrack replace_missing_faces(const PredictionTrack& track, std::span<const std::uint8_t> face_present);

/// Discrete convolution with the truncated kernel. Near the ends only the
/// in-range taps are used, renormalized to sum 1.
std::vector<double> gaussian_smooth(std::span<const double> series, const SmoothingConfig& cfg);

/// Smooths every score channel of a frame-wise track, renormalizes EXPR rows
/// and re-derives decisions. With sigma below kIdentitySigma the track is
/// returned unchanged.
PredictionTrack smooth_track(const PredictionTrack& track, const SmoothingConfig& cfg);

enum class SmoothingOrder { BeforeVote, AfterVote };

/// The two-step cleanup applied to frame-wise predictions.
struct PostprocessConfig {
  bool enabled = true;
  bool replace_faces = true;
  std::optional<SmoothingConfig> smoothing;  // default SmoothingConfig::for_track
  SmoothingOrder order = SmoothingOrder::BeforeVote;
};

/// Face replacement then smoothing. Clip-level tracks pass through untouched.
PredictionTrack apply(const PredictionTrack& track, std::span<const std::uint8_t> face_present,
                      const PostprocessConfig& cfg);

}  // namespace affect::postprocess
