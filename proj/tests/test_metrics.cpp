#include "affect/metrics.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

using namespace affect;
using namespace affect::metrics;

namespace {

// Straight from the definitions, in long double, two-pass.
long double mean_of(const std::vector<double>& v) {
  long double s = 0;
  for (double x : v) s += x;
  return s / v.size();
}

long double ccc_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const long double mx = mean_of(x), my = mean_of(y);
  long double vx = 0, vy = 0, c = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
    c += (x[i] - mx) * (y[i] - my);
  }
  const long double n = x.size();
  vx /= n;
  vy /= n;
  c /= n;
  return 2 * c / (vx + vy + (mx - my) * (mx - my));
}

long double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const long double mx = mean_of(x), my = mean_of(y);
  long double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
    sxy += (x[i] - mx) * (y[i] - my);
  }
  return sxy / std::sqrt(sxx * syy);
}

double f1_oracle(const std::vector<int>& truth, const std::vector<int>& guess, int c) {
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

PredictionTrack expr_pred(const std::vector<int>& labels, const std::string& id = "v") {
  Matrix scores = Matrix::Zero(static_cast<Eigen::Index>(labels.size()), 8);
  for (std::size_t i = 0; i < labels.size(); ++i) scores(static_cast<Eigen::Index>(i), labels[i]) = 1.0;
  return make_prediction(Track::EXPR, id, scores);
}

LabelTrack expr_labels(const std::vector<int>& labels, const std::string& id = "v") {
  LabelTrack t{Track::EXPR, id, Matrix(static_cast<Eigen::Index>(labels.size()), 1)};
  for (std::size_t i = 0; i < labels.size(); ++i) t.values(static_cast<Eigen::Index>(i), 0) = labels[i];
  return t;
}

}  // namespace

TEST_CASE("ccc worked examples") {
  std::vector<double> x{0.1, -0.3, 0.5};
  CHECK(ccc(x, x) == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(ccc(std::vector<double>{0, 1}, std::vector<double>{1, 2}) == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(ccc(std::vector<double>{0, 1, 2}, std::vector<double>{1, 1, 1}) == 0.0);
}

TEST_CASE("ccc errors") {
  CHECK_THROWS_AS(ccc(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), InvalidInput);
  CHECK_THROWS_AS(ccc(std::vector<double>{1}, std::vector<double>{1}), InvalidInput);
  CHECK_THROWS_AS(ccc(std::vector<double>{2, 2}, std::vector<double>{2, 2}), DegenerateInput);
  // constant but different means: defined, and zero
  CHECK(ccc(std::vector<double>{2, 2}, std::vector<double>{3, 3}) == 0.0);
}

TEST_CASE("pearson worked examples") {
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{2, 4, 6}) == doctest::Approx(1.0));
  CHECK(pearson(std::vector<double>{1, 2, 3}, std::vector<double>{3, 2, 1}) == doctest::Approx(-1.0));
  CHECK(pearson(std::vector<double>{0, 1, 0, 1}, std::vector<double>{0, 0, 1, 1}) == doctest::Approx(0.0));
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 1, 1}, std::vector<double>{1, 2, 3}), DegenerateInput);
  CHECK_THROWS_AS(pearson(std::vector<double>{1, 2}, std::vector<double>{1, 2, 3}), InvalidInput);
}

TEST_CASE("series stats use the population estimator") {
  const auto s = series_stats(std::vector<double>{1, 3});
  CHECK(s.mean == 2.0);
  CHECK(s.std == 1.0);
}

TEST_CASE("f1 worked examples and zero conventions") {
  CHECK(f1_per_class({5, 0, 0}) == 1.0);
  CHECK(f1_per_class({1, 1, 1}) == doctest::Approx(0.5));
  CHECK(f1_per_class({0, 0, 3}) == 0.0);
  CHECK(f1_per_class({0, 4, 0}) == 0.0);
  CHECK(f1_per_class({0, 0, 0}) == 0.0);
  CHECK(f1_per_class({0, 2, 3}) == 0.0);
}

TEST_CASE("track_performance checks length and averages") {
  CHECK(track_performance(Track::VA, {0.5523, 0.6531}).performance == doctest::Approx(0.6027));
  CHECK(track_performance(Track::EMI, {0.5942, 0.4982, 0.5090, 0.2275, 0.4961, 0.4580}).performance ==
        doctest::Approx(0.4638).epsilon(5e-5 / 0.4638));
  CHECK_THROWS_AS(track_performance(Track::AU, {1.0, 2.0}), InvalidInput);
  std::vector<double> v{0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8};
  const auto r = track_performance(Track::EXPR, v);
  double s = 0.0;
  for (double x : v) s += x;
  CHECK(r.performance == s / 8.0);
}

TEST_CASE("ccc and pearson against the oracle on random instances") {
  std::mt19937_64 rng(11);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<int> len(2, 12);
  for (int trial = 0; trial < 500; ++trial) {
    const int n = len(rng);
    std::vector<double> x(n), y(n);
    for (int i = 0; i < n; ++i) {
      x[i] = g(rng);
      y[i] = 0.5 * x[i] + g(rng) + 0.3;
    }
    const double c = ccc(x, y), p = pearson(x, y);
    CHECK(c == doctest::Approx(static_cast<double>(ccc_oracle(x, y))).epsilon(1e-10));
    CHECK(p == doctest::Approx(static_cast<double>(pearson_oracle(x, y))).epsilon(1e-10));
    CHECK(std::abs(c) <= std::abs(p) + 1e-12);
    CHECK(std::abs(ccc(x, y) - ccc(y, x)) < 1e-12);
    CHECK(std::abs(ccc(x, x) - 1.0) < 1e-12);
    std::vector<double> affine(n);
    for (int i = 0; i < n; ++i) affine[i] = -3.0 + 2.5 * x[i];
    CHECK(pearson(x, affine) == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("EXPR evaluation: perfect, masked, and oracle") {
  std::vector<int> truth(100);
  for (int i = 0; i < 100; ++i) truth[i] = i % 8;
  CHECK(evaluate_track(expr_pred(truth), expr_labels(truth)).performance == 1.0);

  std::mt19937_64 rng(3);
  std::uniform_int_distribution<int> cls(0, 7);
  std::vector<int> lab(60), guess(60);
  for (int i = 0; i < 60; ++i) {
    lab[i] = i % 7 == 0 ? -1 : cls(rng);
    guess[i] = cls(rng);
  }
  const auto r = evaluate_track(expr_pred(guess), expr_labels(lab));
  for (int c = 0; c < 8; ++c) CHECK(r.per_class[c] == doctest::Approx(f1_oracle(lab, guess, c)));
  CHECK(r.n_evaluated == 60 - 9);

  // frame order does not matter
  std::vector<int> order(60);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<int> lab2(60), guess2(60);
  for (int i = 0; i < 60; ++i) {
    lab2[i] = lab[order[i]];
    guess2[i] = guess[order[i]];
  }
  CHECK(evaluate_track(expr_pred(guess2), expr_labels(lab2)).per_class == r.per_class);
}

TEST_CASE("AU evaluation matches a per-class confusion oracle") {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const int n = 20;
  Matrix probs(n, 12), labels(n, 12);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < 12; ++j) {
      probs(i, j) = u(rng);
      const double r = u(rng);
      labels(i, j) = r < 0.1 ? -1.0 : (r < 0.5 ? 1.0 : 0.0);
    }
  const auto pred = make_prediction(Track::AU, "v", probs);
  const auto rep = evaluate_track(pred, LabelTrack{Track::AU, "v", labels});
  for (int j = 0; j < 12; ++j) {
    int tp = 0, fp = 0, fn = 0;
    for (int i = 0; i < n; ++i) {
      if (labels(i, j) < 0) continue;
      const bool p = probs(i, j) >= 0.5, t = labels(i, j) == 1.0;
      tp += p && t;
      fp += p && !t;
      fn += !p && t;
    }
    const double expect = tp == 0 ? 0.0 : 2.0 * tp / (2.0 * tp + fp + fn);
    CHECK(rep.per_class[j] == doctest::Approx(expect));
  }
}

TEST_CASE("VA evaluation masks the -5 sentinel") {
  LabelTrack l{Track::VA, "v", Matrix(4, 2)};
  l.values << 0.1, 0.2, -5, -5, 0.3, -0.1, 0.5, 0.4;
  Matrix s(4, 2);
  s << 0.1, 0.2, 0.9, 0.9, 0.3, -0.1, 0.5, 0.4;
  const auto r = evaluate_track(make_prediction(Track::VA, "v", s), l);
  CHECK(r.n_evaluated == 3);
  CHECK(r.per_class[0] == doctest::Approx(1.0));
  CHECK(r.per_class[1] == doctest::Approx(1.0));
}

TEST_CASE("evaluation errors") {
  const auto p = expr_pred({1, 2, 3});
  CHECK_THROWS_AS(evaluate_track(p, expr_labels({1, 2})), InvalidInput);
  CHECK_THROWS_AS(evaluate_track(p, expr_labels({1, 2, 3}, "other")), InvalidInput);
  CHECK_THROWS_AS(evaluate_track(p, expr_labels({-1, -1, -1})), InvalidInput);
}

TEST_CASE("pooled evaluation equals evaluation of the concatenation") {
  const std::vector<int> a{0, 1, 2, 3}, b{3, 3, 1, 0};
  const std::vector<int> ga{0, 1, 1, 3}, gb{3, 2, 1, 0};
  std::vector<PredictionTrack> preds{expr_pred(ga, "a"), expr_pred(gb, "b")};
  std::vector<LabelTrack> labels{expr_labels(a, "a"), expr_labels(b, "b")};
  std::vector<int> all_t{0, 1, 2, 3, 3, 3, 1, 0}, all_g{0, 1, 1, 3, 3, 2, 1, 0};
  const auto pooled = evaluate_tracks(preds, labels);
  const auto whole = evaluate_track(expr_pred(all_g), expr_labels(all_t));
  CHECK(pooled.per_class == whole.per_class);
}
