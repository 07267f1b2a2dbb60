#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace affect {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using IntMatrix = Eigen::MatrixXi;

/// The five recognition tracks. VA, EXPR and AU are frame-wise; CE and EMI
/// are scored once per clip.
enum class Track { VA, EXPR, AU, CE, EMI };

/// Raised when an input violates a documented precondition.
class InvalidInput : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Raised when a statistic is undefined for the given data (zero variance).
class DegenerateInput : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

inline constexpr double kVaInvalid = -5.0;
inline constexpr int kLabelInvalid = -1;

std::string_view track_name(Track track);
Track parse_track(std::string_view name);

/// 2 / 8 / 12 / 7 / 6 for VA / EXPR / AU / CE / EMI.
int class_count(Track track);
/// Columns of a label row: 12 for AU, 1 for EXPR/CE, 2 for VA, 6 for EMI.
int label_width(Track track);
/// Columns of the decision block of a prediction row (0 for regression tracks).
int decision_width(Track track);
bool is_framewise(Track track);
bool is_regression(Track track);
/// Column titles in report order, e.g. "AU1".."AU26" or "Valence","Arousal".
const std::vector<std::string>& class_names(Track track);

/// Pre-extracted features of one video.
struct FeatureBundle {
  std::string video_id;
  int clip_length = 100;
  Matrix visual;                       // frame_count x d
  Matrix audio;                        // clip_count x d
  std::optional<Matrix> text;          // clip_count x d
  std::vector<std::uint8_t> face_present;  // frame_count, 1 = face detected
  Vector background;                   // b

  int frame_count() const { return static_cast<int>(visual.rows()); }
  int dim() const { return static_cast<int>(visual.cols()); }
  int clip_count() const;

  /// Throws InvalidInput naming the first violated invariant.
  void validate() const;
};

/// Annotations for one video. Rows are frames (VA/EXPR/AU) or clips (CE/EMI).
/// Invalid entries carry -1 (AU, EXPR) or -5 (VA).
struct LabelTrack {
  Track track = Track::EXPR;
  std::string video_id;
  Matrix values;  // rows x label_width(track)

  int rows() const { return static_cast<int>(values.rows()); }
  void validate() const;
};

/// Model output for one video: per-class probabilities (AU/EXPR/CE) or
/// values (VA/EMI), plus the discrete decisions for classification tracks.
struct PredictionTrack {
  Track track = Track::EXPR;
  std::string video_id;
  Matrix scores;         // rows x class_count(track)
  IntMatrix decisions;   // rows x decision_width(track)

  int rows() const { return static_cast<int>(scores.rows()); }
  void validate() const;
};

/// Builds a prediction whose decisions are derived from the scores:
/// AU thresholded at 0.5, EXPR/CE by argmax (lowest index on ties).
PredictionTrack make_prediction(Track track, std::string video_id, Matrix scores);

/// Recomputes decisions from scores in place.
void derive_decisions(PredictionTrack& pred);

bool operator==(const FeatureBundle& a, const FeatureBundle& b);
bool operator==(const LabelTrack& a, const LabelTrack& b);
bool operator==(const PredictionTrack& a, const PredictionTrack& b);

}  // namespace affect
