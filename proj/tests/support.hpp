#pragma once

// Helpers shared by the unit tests and the acceptance runner: random
// instances, independent oracles and finite-difference checks.

#include "affect/fusion.hpp"
#include "affect/types.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

namespace affect::testing {

inline std::string random_id(std::mt19937_64& rng) {
  static const std::string alphabet = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_.-";
  std::uniform_int_distribution<int> len(1, 12), pick(0, static_cast<int>(alphabet.size()) - 1);
  std::string s;
  for (int i = len(rng); i > 0; --i) s.push_back(alphabet[static_cast<std::size_t>(pick(rng))]);
  return s;
}

// Mixes magnitudes, signs, subnormals and exact integers so number
// formatting gets exercised.
inline double random_real(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> kind(0, 5);
  std::normal_distribution<double> g(0.0, 1.0);
  switch (kind(rng)) {
    case 0: return g(rng);
    case 1: return g(rng) * 1e12;
    case 2: return g(rng) * 1e-300;
    case 3: return std::round(g(rng) * 100.0);
    case 4: return 0.1 * std::uniform_int_distribution<int>(-10, 10)(rng);
    default: return std::ldexp(g(rng), std::uniform_int_distribution<int>(-60, 60)(rng));
  }
}

inline Matrix random_matrix(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols) {
  return Matrix::NullaryExpr(rows, cols, [&]() { return random_real(rng); });
}

inline FeatureBundle random_bundle(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> frames(1, 40), dim(1, 6), clip(1, 12), bg(0, 4);
  FeatureBundle b;
  b.video_id = random_id(rng);
  b.clip_length = clip(rng);
  const int n = frames(rng), d = dim(rng);
  b.visual = random_matrix(rng, n, d);
  b.audio = random_matrix(rng, b.clip_count(), d);
  if (std::bernoulli_distribution(0.5)(rng)) b.text = random_matrix(rng, b.clip_count(), d);
  std::bernoulli_distribution face(0.8);
  for (int i = 0; i < n; ++i) b.face_present.push_back(face(rng) ? 1 : 0);
  b.background = random_matrix(rng, bg(rng), 1);
  return b;
}

inline Track random_track(std::mt19937_64& rng) {
  static const Track all[] = {Track::VA, Track::EXPR, Track::AU, Track::CE, Track::EMI};
  return all[std::uniform_int_distribution<int>(0, 4)(rng)];
}

inline LabelTrack random_labels(std::mt19937_64& rng, Track t, int rows) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  LabelTrack l{t, random_id(rng), Matrix(rows, label_width(t))};
  for (Eigen::Index r = 0; r < l.values.rows(); ++r)
    for (Eigen::Index c = 0; c < l.values.cols(); ++c) {
      const double x = u(rng);
      switch (t) {
        case Track::AU: l.values(r, c) = x < 0.1 ? -1 : (x < 0.5 ? 1 : 0); break;
        case Track::EXPR: l.values(r, c) = std::floor(x * 9.0) - 1.0; break;
        case Track::CE: l.values(r, c) = std::floor(x * 7.0); break;
        case Track::VA: l.values(r, c) = x < 0.1 ? kVaInvalid : 2.0 * u(rng) - 1.0; break;
        case Track::EMI: l.values(r, c) = x; break;
      }
    }
  return l;
}

inline PredictionTrack random_prediction(std::mt19937_64& rng, Track t, int rows) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  Matrix s(rows, class_count(t));
  for (Eigen::Index r = 0; r < s.rows(); ++r) {
    for (Eigen::Index c = 0; c < s.cols(); ++c) s(r, c) = is_regression(t) ? random_real(rng) : u(rng);
    if (t == Track::EXPR || t == Track::CE) s.row(r) /= s.row(r).sum();
  }
  return make_prediction(t, random_id(rng), s);
}

// ---------------------------------------------------------------------------
// Oracles, computed from the textbook definitions in long double.

inline long double mean_ld(const std::vector<double>& v) {
  long double s = 0;
  for (double x : v) s += x;
  return s / static_cast<long double>(v.size());
}

inline long double ccc_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const long double mx = mean_ld(x), my = mean_ld(y), n = static_cast<long double>(x.size());
  long double vx = 0, vy = 0, c = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
    c += (x[i] - mx) * (y[i] - my);
  }
  return 2 * (c / n) / (vx / n + vy / n + (mx - my) * (mx - my));
}

inline long double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const long double mx = mean_ld(x), my = mean_ld(y);
  long double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

// F1 of class c by counting; negative truth entries are skipped.
inline double f1_oracle(const std::vector<int>& truth, const std::vector<int>& guess, int c) {
  int tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (truth[i] < 0) continue;
    tp += guess[i] == c && truth[i] == c;
    fp += guess[i] == c && truth[i] != c;
    fn += guess[i] != c && truth[i] == c;
  }
  if (tp == 0) return 0.0;
  const double p = double(tp) / (tp + fp), r = double(tp) / (tp + fn);
  return 2 * p * r / (p + r);
}

// Most ballots, then largest summed confidence, then lowest label.
template <typename Vote>
int tally_oracle(const std::vector<Vote>& votes) {
  std::map<int, std::pair<int, double>> t;
  for (const auto& v : votes) {
    t[v.label].first += 1;
    t[v.label].second += v.confidence;
  }
  int best = -1;
  std::pair<int, double> key{-1, 0.0};
  for (const auto& [label, cs] : t) {
    if (cs.first > key.first || (cs.first == key.first && cs.second > key.second)) {
      best = label;
      key = cs;
    }
  }
  return best;
}

// ---------------------------------------------------------------------------
// Finite differences

inline double rel_err(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

// Largest relative error between fusion::backward and central differences of
// sum(u * forward). Dropout masks are held fixed by replaying the rng state.
inline double max_model_fd_error(const fusion::ClipTensor& clip, const fusion::FusionParams& p,
                                 const fusion::FusionConfig& cfg, std::uint64_t seed, bool train, double h = 1e-4) {
  std::mt19937_64 gen(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const int rows = is_framewise(cfg.track) ? clip.k : 1;
  const Matrix u = Matrix::NullaryExpr(rows, cfg.output_dim, [&]() { return g(gen); });
  const std::mt19937_64 rng_state(seed + 1);
  auto objective = [&](const fusion::FusionParams& q) {
    std::mt19937_64 r = rng_state;
    return (fusion::forward(clip, q, cfg, train, &r).array() * u.array()).sum();
  };
  fusion::ForwardCache cache;
  {
    std::mt19937_64 r = rng_state;
    fusion::forward(clip, p, cfg, train, &r, &cache);
  }
  const fusion::FusionParams grad = fusion::backward(cache, p, cfg, u);
  std::vector<const Matrix*> gs;
  grad.visit([&](const std::string&, const Matrix& m) { gs.push_back(&m); });

  double worst = 0.0;
  fusion::FusionParams q = p;
  std::size_t idx = 0;
  q.visit([&](const std::string&, Matrix& m) {
    const Matrix& gm = *gs[idx++];
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const double keep = m.data()[i];
      m.data()[i] = keep + h;
      const double up = objective(q);
      m.data()[i] = keep - h;
      const double dn = objective(q);
      m.data()[i] = keep;
      worst = std::max(worst, rel_err(gm.data()[i], (up - dn) / (2 * h), 1e-6));
    }
  });
  return worst;
}

}  // namespace affect::testing
