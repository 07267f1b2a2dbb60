#include "affect/postprocess.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace affect::postprocess {

int SmoothingConfig::radius() const {
  if (kernel_radius) return *kernel_radius;
  return static_cast<int>(std::ceil(3.0 * sigma));
}

void SmoothingConfig::validate() const {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw InvalidInput("smoothing: sigma must be > 0, got " + std::to_string(sigma));
  }
  if (kernel_radius && *kernel_radius < 0) throw InvalidInput("smoothing: kernel radius must be >= 0");
}

SmoothingConfig SmoothingConfig::for_track(Track track) {
  SmoothingConfig c;
  c.sigma = track == Track::VA ? 4.0 : 2.0;
  return c;
}

std::vector<double> gaussian_kernel(const SmoothingConfig& cfg) {
  cfg.validate();
  const int r = cfg.radius();
  std::vector<double> w(static_cast<std::size_t>(2 * r + 1));
  double sum = 0.0;
  for (int i = -r; i <= r; ++i) {
    const double v = std::exp(-0.5 * (i * i) / (cfg.sigma * cfg.sigma));
    w[static_cast<std::size_t>(i + r)] = v;
    sum += v;
  }
  for (double& v : w) v /= sum;
  return w;
}

PredictionTrack replace_missing_faces(const PredictionTrack& track, std::span<const std::uint8_t> face_present) {
  if (!is_framewise(track.track)) {
    throw InvalidInput("replace_missing_faces: track " + std::string(track_name(track.track)) +
                       " is clip-level");
  }
  if (static_cast<int>(face_present.size()) != track.rows()) {
    throw InvalidInput("replace_missing_faces: " + std::to_string(face_present.size()) + " face flags for " +
                       std::to_string(track.rows()) + " frames");
  }
  int first = -1;
  for (int i = 0; i < track.rows(); ++i) {
    if (face_present[static_cast<std::size_t>(i)]) {
      first = i;
      break;
    }
  }
  if (first < 0) throw InvalidInput("replace_missing_faces: no frame of '" + track.video_id + "' has a face");

  PredictionTrack out = track;
  int source = first;
  for (int i = 0; i < track.rows(); ++i) {
    if (face_present[static_cast<std::size_t>(i)]) {
      source = i;
      continue;
    }
    out.scores.row(i) = track.scores.row(source);
    if (out.decisions.cols() > 0) out.decisions.row(i) = track.decisions.row(source);
  }
  return out;
}

std::vector<double> gaussian_smooth(std::span<const double> series, const SmoothingConfig& cfg) {
  if (series.empty()) throw InvalidInput("gaussian_smooth: empty series");
  cfg.validate();
  if (cfg.sigma < kIdentitySigma) return {series.begin(), series.end()};
  const std::vector<double> w = gaussian_kernel(cfg);
  const int r = cfg.radius();
  const int n = static_cast<int>(series.size());
  std::vector<double> out(series.size());
  for (int i = 0; i < n; ++i) {
    double acc = 0.0, mass = 0.0;
    for (int j = std::max(0, i - r); j <= std::min(n - 1, i + r); ++j) {
      const double wj = w[static_cast<std::size_t>(j - i + r)];
      acc += wj * series[static_cast<std::size_t>(j)];
      mass += wj;
    }
    out[static_cast<std::size_t>(i)] = acc / mass;
  }
  return out;
}

PredictionTrack smooth_track(const PredictionTrack& track, const SmoothingConfig& cfg) {
  if (!is_framewise(track.track)) {
    throw InvalidInput("smooth_track: track " + std::string(track_name(track.track)) + " is clip-level");
  }
  cfg.validate();
  if (cfg.sigma < kIdentitySigma || track.rows() == 0) return track;
  PredictionTrack out = track;
  const auto n = static_cast<std::size_t>(track.rows());
  std::vector<double> channel(n);
  for (Eigen::Index c = 0; c < track.scores.cols(); ++c) {
    for (std::size_t i = 0; i < n; ++i) channel[i] = track.scores(static_cast<Eigen::Index>(i), c);
    const std::vector<double> smoothed = gaussian_smooth(channel, cfg);
    for (std::size_t i = 0; i < n; ++i) out.scores(static_cast<Eigen::Index>(i), c) = smoothed[i];
  }
  if (track.track == Track::EXPR) {
    for (Eigen::Index r = 0; r < out.scores.rows(); ++r) {
      const double s = out.scores.row(r).sum();
      if (s > 0.0) out.scores.row(r) /= s;
    }
  }
  if (track.track == Track::AU) out.scores = out.scores.cwiseMax(0.0).cwiseMin(1.0);
  derive_decisions(out);
  return out;
}

PredictionTrack apply(const PredictionTrack& track, std::span<const std::uint8_t> face_present,
                      const PostprocessConfig& cfg) {
  if (!cfg.enabled || !is_framewise(track.track)) return track;
  PredictionTrack out = cfg.replace_faces ? replace_missing_faces(track, face_present) : track;
  const SmoothingConfig sc = cfg.smoothing.value_or(SmoothingConfig::for_track(track.track));
  return smooth_track(out, sc);
}

}  // namespace affect::postprocess
