#include "affect/types.hpp"

#include <cmath>
#include <sstream>

namespace affect {

std::string_view track_name(Track track) {
  switch (track) {
    case Track::VA: return "va";
    case Track::EXPR: return "expr";
    case Track::AU: return "au";
    case Track::CE: return "ce";
    case Track::EMI: return "emi";
  }
  return "?";
}

Track parse_track(std::string_view name) {
  for (Track t : {Track::VA, Track::EXPR, Track::AU, Track::CE, Track::EMI}) {
    if (track_name(t) == name) return t;
  }
  throw InvalidInput("unknown track '" + std::string(name) + "' (expected va|expr|au|ce|emi)");
}

int class_count(Track track) {
  switch (track) {
    case Track::VA: return 2;
    case Track::EXPR: return 8;
    case Track::AU: return 12;
    case Track::CE: return 7;
    case Track::EMI: return 6;
  }
  return 0;
}

int label_width(Track track) {
  switch (track) {
    case Track::VA: return 2;
    case Track::EXPR: return 1;
    case Track::AU: return 12;
    case Track::CE: return 1;
    case Track::EMI: return 6;
  }
  return 0;
}

int decision_width(Track track) {
  switch (track) {
    case Track::AU: return 12;
    case Track::EXPR:
    case Track::CE: return 1;
    default: return 0;
  }
}

bool is_framewise(Track track) {
  return track == Track::VA || track == Track::EXPR || track == Track::AU;
}

bool is_regression(Track track) { return track == Track::VA || track == Track::EMI; }

const std::vector<std::string>& class_names(Track track) {
  static const std::vector<std::string> va{"Valence", "Arousal"};
  static const std::vector<std::string> expr{"Neutral",   "Anger",   "Disgust",  "Fear",
                                             "Happiness", "Sadness", "Surprise", "Other"};
  static const std::vector<std::string> au{"AU1",  "AU2",  "AU4",  "AU6",  "AU7",  "AU10",
                                           "AU12", "AU15", "AU23", "AU24", "AU25", "AU26"};
  static const std::vector<std::string> ce{"Fearfully Surprised", "Happily Surprised",
                                           "Sadly Surprised",     "Disgustedly Surprised",
                                           "Angrily Surprised",   "Sadly Fearful",
                                           "Sadly Angry"};
  static const std::vector<std::string> emi{"Admiration",    "Amusement",  "Determination",
                                            "Empathic Pain", "Excitement", "Joy"};
  switch (track) {
    case Track::VA: return va;
    case Track::EXPR: return expr;
    case Track::AU: return au;
    case Track::CE: return ce;
    case Track::EMI: return emi;
  }
  return va;
}

int FeatureBundle::clip_count() const {
  if (clip_length <= 0) return 0;
  return (frame_count() + clip_length - 1) / clip_length;
}

namespace {

template <typename M>
bool all_finite(const M& m) {
  return m.allFinite();
}

[[noreturn]] void fail(const std::string& who, const std::string& what) {
  throw InvalidInput(who + ": " + what);
}

}  // namespace

void FeatureBundle::validate() const {
  const std::string who = "bundle '" + video_id + "'";
  if (video_id.empty()) fail(who, "empty video_id");
  if (clip_length < 1) fail(who, "clip length must be >= 1");
  if (frame_count() < 1) fail(who, "no frames");
  if (dim() < 1) fail(who, "feature dimension must be >= 1");
  const int clips = clip_count();
  if (audio.rows() != clips) {
    fail(who, "audio has " + std::to_string(audio.rows()) + " rows, expected " +
                  std::to_string(clips) + " clips");
  }
  if (audio.cols() != dim()) {
    fail(who, "audio width " + std::to_string(audio.cols()) + " != visual width " +
                  std::to_string(dim()));
  }
  if (text) {
    if (text->rows() != clips) {
      fail(who, "text has " + std::to_string(text->rows()) + " rows, expected " +
                    std::to_string(clips) + " clips");
    }
    if (text->cols() != dim()) {
      fail(who, "text width " + std::to_string(text->cols()) + " != visual width " +
                    std::to_string(dim()));
    }
    if (!all_finite(*text)) fail(who, "non-finite value in text features");
  }
  if (static_cast<int>(face_present.size()) != frame_count()) {
    fail(who, "face flag count " + std::to_string(face_present.size()) + " != frame count " +
                  std::to_string(frame_count()));
  }
  for (auto f : face_present) {
    if (f > 1) fail(who, "face flag must be 0 or 1");
  }
  if (!all_finite(visual)) fail(who, "non-finite value in visual features");
  if (!all_finite(audio)) fail(who, "non-finite value in audio features");
  if (!all_finite(background)) fail(who, "non-finite value in background descriptor");
}

void LabelTrack::validate() const {
  const std::string who = "label track '" + video_id + "'";
  if (values.cols() != label_width(track)) {
    fail(who, "expected " + std::to_string(label_width(track)) + " columns, got " +
                  std::to_string(values.cols()));
  }
  for (Eigen::Index r = 0; r < values.rows(); ++r) {
    for (Eigen::Index c = 0; c < values.cols(); ++c) {
      const double v = values(r, c);
      const std::string where = "row " + std::to_string(r) + " col " + std::to_string(c);
      bool ok = std::isfinite(v);
      switch (track) {
        case Track::AU: ok = ok && (v == 0.0 || v == 1.0 || v == -1.0); break;
        case Track::EXPR: ok = ok && v == std::floor(v) && v >= -1.0 && v <= 7.0; break;
        case Track::CE: ok = ok && v == std::floor(v) && v >= 0.0 && v <= 6.0; break;
        case Track::VA: ok = ok && ((v >= -1.0 && v <= 1.0) || v == kVaInvalid); break;
        case Track::EMI: ok = ok && v >= 0.0 && v <= 1.0; break;
      }
      if (!ok) {
        std::ostringstream os;
        os << "value " << v << " out of range for track " << track_name(track) << " at " << where;
        fail(who, os.str());
      }
    }
  }
}

void PredictionTrack::validate() const {
  const std::string who = "prediction track '" + video_id + "'";
  if (scores.cols() != class_count(track)) {
    fail(who, "expected " + std::to_string(class_count(track)) + " score columns, got " +
                  std::to_string(scores.cols()));
  }
  if (decisions.cols() != decision_width(track) || decisions.rows() != scores.rows()) {
    fail(who, "decision block shape does not match scores");
  }
  if (!scores.allFinite()) fail(who, "non-finite score");
  if (!is_regression(track)) {
    if ((scores.array() < 0.0).any() || (scores.array() > 1.0).any()) {
      fail(who, "probability outside [0,1]");
    }
    const int hi = track == Track::AU ? 1 : class_count(track) - 1;
    if ((decisions.array() < 0).any() || (decisions.array() > hi).any()) {
      fail(who, "decision outside the class range");
    }
  }
}

void derive_decisions(PredictionTrack& pred) {
  const auto n = pred.scores.rows();
  pred.decisions.resize(n, decision_width(pred.track));
  if (pred.track == Track::AU) {
    for (Eigen::Index r = 0; r < n; ++r) {
      for (Eigen::Index c = 0; c < pred.scores.cols(); ++c) {
        pred.decisions(r, c) = pred.scores(r, c) >= 0.5 ? 1 : 0;
      }
    }
  } else if (pred.track == Track::EXPR || pred.track == Track::CE) {
    for (Eigen::Index r = 0; r < n; ++r) {
      Eigen::Index best = 0;
      for (Eigen::Index c = 1; c < pred.scores.cols(); ++c) {
        if (pred.scores(r, c) > pred.scores(r, best)) best = c;
      }
      pred.decisions(r, 0) = static_cast<int>(best);
    }
  }
}

PredictionTrack make_prediction(Track track, std::string video_id, Matrix scores) {
  PredictionTrack p;
  p.track = track;
  p.video_id = std::move(video_id);
  p.scores = std::move(scores);
  derive_decisions(p);
  return p;
}

namespace {

template <typename M>
bool same_matrix(const M& a, const M& b) {
  return a.rows() == b.rows() && a.cols() == b.cols() && (a.size() == 0 || a == b);
}

}  // namespace

bool operator==(const FeatureBundle& a, const FeatureBundle& b) {
  if (a.text.has_value() != b.text.has_value()) return false;
  if (a.text && !same_matrix(*a.text, *b.text)) return false;
  return a.video_id == b.video_id && a.clip_length == b.clip_length &&
         same_matrix(a.visual, b.visual) && same_matrix(a.audio, b.audio) &&
         a.face_present == b.face_present && same_matrix(a.background, b.background);
}

bool operator==(const LabelTrack& a, const LabelTrack& b) {
  return a.track == b.track && a.video_id == b.video_id && same_matrix(a.values, b.values);
}

bool operator==(const PredictionTrack& a, const PredictionTrack& b) {
  return a.track == b.track && a.video_id == b.video_id && same_matrix(a.scores, b.scores) &&
         same_matrix(a.decisions, b.decisions);
}

}  // namespace affect
