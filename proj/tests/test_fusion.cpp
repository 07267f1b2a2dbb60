#include "affect/fusion.hpp"
#include "affect/harness.hpp"
#include "affect/metrics.hpp"
#include "support.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace affect;
using namespace affect::fusion;

namespace {

FeatureBundle random_bundle(int frames, int d, int k, bool text, std::uint64_t seed, int clips_override = -1) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  FeatureBundle b;
  b.video_id = "v";
  b.clip_length = k;
  b.visual = Matrix::NullaryExpr(frames, d, [&]() { return g(rng); });
  const int clips = clips_override >= 0 ? clips_override : (frames + k - 1) / k;
  b.audio = Matrix::NullaryExpr(clips, d, [&]() { return g(rng); });
  if (text) b.text = Matrix::NullaryExpr(clips, d, [&]() { return g(rng); });
  b.face_present.assign(static_cast<std::size_t>(frames), 1);
  b.background = Vector::Zero(2);
  return b;
}

FusionConfig small_config(Track track, int layers, int heads, double dropout = 0.0) {
  FusionConfig c;
  c.track = track;
  c.num_layers = layers;
  c.num_heads = heads;
  c.dropout = dropout;
  c.clip_length = 4;
  return c.resolved(8);
}

}  // namespace

TEST_CASE("token block shapes") {
  auto b = random_bundle(8, 8, 4, true, 1);
  FusionConfig c;
  c.clip_length = 4;
  CHECK(build_clip_tokens(b, 0, c).token_count() == 6);
  b.text.reset();
  CHECK(build_clip_tokens(b, 0, c).token_count() == 5);

  auto big = random_bundle(100, 8, 100, true, 2);
  FusionConfig defaults;
  CHECK(defaults.clip_length == 100);
  CHECK(build_clip_tokens(big, 0, defaults).token_count() == 102);
  big.text.reset();
  CHECK(build_clip_tokens(big, 0, defaults).token_count() == 101);
}

TEST_CASE("ragged final clip repeats the last frame and masks it") {
  const auto b = random_bundle(7, 8, 4, false, 3);
  FusionConfig c;
  c.clip_length = 4;
  const auto first = build_clip_tokens(b, 0, c);
  const auto second = build_clip_tokens(b, 1, c);
  CHECK(first.real_frames == 4);
  CHECK(std::count(first.valid.begin(), first.valid.end(), 1) == 5);
  CHECK(second.real_frames == 3);
  CHECK(second.valid == std::vector<std::uint8_t>{1, 1, 1, 0, 1});
  const Matrix pe = sinusoidal_encoding(4, 8);
  CHECK((second.tokens.row(3) - pe.row(3)).isApprox(b.visual.row(6)));
  CHECK((second.tokens.row(0) - pe.row(0)).isApprox(b.visual.row(4)));
  CHECK(second.tokens.row(4) == b.audio.row(1));
}

TEST_CASE("clip assembly errors") {
  auto b = random_bundle(8, 8, 4, false, 4);
  FusionConfig c;
  c.clip_length = 4;
  CHECK_THROWS_AS(build_clip_tokens(b, 2, c), InvalidInput);
  c.clip_length = 5;
  CHECK_THROWS_AS(build_clip_tokens(b, 0, c), InvalidInput);
  c.clip_length = 4;
  b.audio = Matrix::Zero(2, 7);
  CHECK_THROWS_AS(build_clip_tokens(b, 0, c), InvalidInput);
}

TEST_CASE("config validation") {
  auto c = small_config(Track::AU, 1, 3);
  CHECK_THROWS_AS(c.validate(), InvalidInput);  // 8 % 3 != 0
  c = small_config(Track::AU, 1, 2);
  c.output_dim = 8;
  CHECK_THROWS_AS(c.validate(), InvalidInput);
  c = small_config(Track::AU, 1, 2);
  CHECK_NOTHROW(c.validate());
}

TEST_CASE("forward is deterministic in eval mode and has the track's shape") {
  const auto b = random_bundle(8, 8, 4, false, 5);
  for (Track t : {Track::AU, Track::EXPR, Track::VA, Track::CE, Track::EMI}) {
    const auto cfg = small_config(t, 2, 2, 0.3);
    const auto p = init_params(cfg, 9);
    const auto clip = build_clip_tokens(b, 0, cfg);
    const Matrix a = forward(clip, p, cfg, false);
    const Matrix a2 = forward(clip, p, cfg, false);
    CHECK(a == a2);
    CHECK(a.rows() == (is_framewise(t) ? 4 : 1));
    CHECK(a.cols() == class_count(t));
  }
}

TEST_CASE("zeroed encoder weights pass tokens straight to the head") {
  const auto b = random_bundle(8, 8, 4, false, 6);
  const auto cfg = small_config(Track::AU, 2, 2);
  auto p = init_params(cfg, 1);
  const Matrix hw = p.head_w;
  p.set_zero();
  p.head_w = hw;
  p.head_b = Matrix::Constant(1, 12, 0.25);
  for (auto& l : p.layers) {
    l.ln1_gamma.setOnes();
    l.ln2_gamma.setOnes();
  }
  const auto clip = build_clip_tokens(b, 0, cfg);
  const Matrix out = forward(clip, p, cfg, false);
  const Matrix expect = (clip.tokens.topRows(4) * hw).rowwise() + p.head_b.row(0);
  CHECK(out.isApprox(expect, 1e-12));
}

TEST_CASE("backward matches finite differences, one layer one head first") {
  const auto b = random_bundle(7, 8, 4, true, 7);
  SUBCASE("1 layer, 1 head") {
    const auto cfg = small_config(Track::AU, 1, 1);
    const auto p = init_params(cfg, 3);
    CHECK(testing::max_model_fd_error(build_clip_tokens(b, 1, cfg), p, cfg, 11, false) < 1e-3);
  }
  SUBCASE("1 layer, 2 heads, clip-level pooling") {
    const auto cfg = small_config(Track::EMI, 1, 2);
    const auto p = init_params(cfg, 4);
    CHECK(testing::max_model_fd_error(build_clip_tokens(b, 1, cfg), p, cfg, 12, false) < 1e-3);
  }
  SUBCASE("2 layers, dropout masks held fixed") {
    const auto cfg = small_config(Track::VA, 2, 2, 0.3);
    const auto p = init_params(cfg, 5);
    CHECK(testing::max_model_fd_error(build_clip_tokens(b, 0, cfg), p, cfg, 13, true) < 1e-3);
  }
}

TEST_CASE("backward: missing cache, zero upstream, batch sum") {
  const auto b = random_bundle(8, 8, 4, false, 8);
  const auto cfg = small_config(Track::EXPR, 1, 2);
  const auto p = init_params(cfg, 6);
  ForwardCache empty;
  CHECK_THROWS_AS(backward(empty, p, cfg, Matrix::Zero(4, 8)), std::logic_error);

  ForwardCache cache;
  const auto clip = build_clip_tokens(b, 0, cfg);
  forward(clip, p, cfg, false, nullptr, &cache);
  const auto z = backward(cache, p, cfg, Matrix::Zero(4, 8));
  z.visit([](const std::string&, const Matrix& m) { CHECK(m.isZero(0.0)); });

  const Matrix u = Matrix::Constant(4, 8, 0.3);
  const auto one = backward(cache, p, cfg, u);
  auto two = backward(cache, p, cfg, u);
  const auto again = backward(cache, p, cfg, u);
  std::vector<const Matrix*> src;
  again.visit([&](const std::string&, const Matrix& m) { src.push_back(&m); });
  std::size_t n = 0;
  two.visit([&](const std::string&, Matrix& m) { m += *src[n++]; });
  std::vector<const Matrix*> ones;
  one.visit([&](const std::string&, const Matrix& m) { ones.push_back(&m); });
  n = 0;
  two.visit([&](const std::string&, const Matrix& m) { CHECK(m == 2.0 * *ones[n++]); });
}

TEST_CASE("permuting clips permutes per-clip outputs") {
  auto b = random_bundle(12, 8, 4, false, 9);
  const auto cfg = small_config(Track::EMI, 1, 2);
  const auto p = init_params(cfg, 7);
  const auto pred = predict(b, p, cfg);
  FeatureBundle swapped = b;
  swapped.visual.middleRows(0, 4) = b.visual.middleRows(8, 4);
  swapped.visual.middleRows(8, 4) = b.visual.middleRows(0, 4);
  swapped.audio.row(0) = b.audio.row(2);
  swapped.audio.row(2) = b.audio.row(0);
  const auto pred2 = predict(swapped, p, cfg);
  CHECK(pred2.scores.row(0) == pred.scores.row(2));
  CHECK(pred2.scores.row(2) == pred.scores.row(0));
  CHECK(pred2.scores.row(1) == pred.scores.row(1));
}

TEST_CASE("predict ranges and padding") {
  const auto b = random_bundle(10, 8, 4, false, 10);
  const auto au_cfg = small_config(Track::AU, 1, 2);
  const auto au = predict(b, init_params(au_cfg, 1), au_cfg);
  CHECK(au.rows() == 10);
  CHECK((au.scores.array() >= 0.0).all());
  CHECK((au.scores.array() <= 1.0).all());
  const auto ex_cfg = small_config(Track::EXPR, 1, 2);
  const auto ex = predict(b, init_params(ex_cfg, 1), ex_cfg);
  for (int r = 0; r < ex.rows(); ++r) CHECK(std::abs(ex.scores.row(r).sum() - 1.0) < 1e-6);
  const auto ce_cfg = small_config(Track::CE, 1, 2);
  CHECK(predict(b, init_params(ce_cfg, 1), ce_cfg).rows() == 3);
  auto wrong = random_bundle(10, 6, 4, false, 11);
  CHECK_THROWS_AS(predict(wrong, init_params(ex_cfg, 1), ex_cfg), InvalidInput);
}

TEST_CASE("optimizer: zero learning rate leaves params unchanged") {
  const auto corpus = harness::make_synthetic_corpus(harness::separable_spec(Track::EXPR, 1));
  auto cfg = FusionConfig{};
  cfg.track = Track::EXPR;
  cfg.clip_length = 10;
  cfg.num_layers = 1;
  cfg = cfg.resolved(16);
  const auto samples = make_samples(corpus.bundles[0], corpus.labels[0], cfg);
  TrainConfig t;
  t.learning_rate = 0.0;
  t.epochs = 2;
  const auto init = init_params(cfg, 3);
  const auto r = train(samples, cfg, t, init);
  std::vector<const Matrix*> a;
  init.visit([&](const std::string&, const Matrix& m) { a.push_back(&m); });
  std::size_t n = 0;
  r.params.visit([&](const std::string&, const Matrix& m) { CHECK(m == *a[n++]); });
}

TEST_CASE("training: loss decreases, is reproducible, and separates held-out data") {
  const auto corpus = harness::make_synthetic_corpus(harness::separable_spec(Track::EXPR, 2));
  auto cfg = FusionConfig{};
  cfg.track = Track::EXPR;
  cfg.clip_length = 10;
  cfg = cfg.resolved(16);
  std::vector<TrainingSample> samples;
  for (int v = 0; v < 15; ++v) {
    auto s = make_samples(corpus.bundles[v], corpus.labels[v], cfg);
    samples.insert(samples.end(), s.begin(), s.end());
  }
  TrainConfig t;
  t.learning_rate = 1e-3;
  t.epochs = 12;
  t.seed = 4;
  const auto r = train(samples, cfg, t);
  CHECK(r.loss_curve[4] <= r.loss_curve[0]);
  const auto r2 = train(samples, cfg, t);
  CHECK(r.loss_curve == r2.loss_curve);

  std::vector<PredictionTrack> preds;
  std::vector<LabelTrack> labels;
  for (int v = 15; v < 20; ++v) {
    preds.push_back(predict(corpus.bundles[v], r.params, cfg));
    labels.push_back(corpus.labels[v]);
  }
  CHECK(metrics::evaluate_tracks(preds, labels).performance >= 0.95);
}

TEST_CASE("training aborts on a diverging loss") {
  const auto corpus = harness::make_synthetic_corpus(harness::separable_spec(Track::VA, 3));
  auto cfg = FusionConfig{};
  cfg.track = Track::VA;
  cfg.clip_length = 10;
  cfg.num_layers = 1;
  cfg = cfg.resolved(16);
  auto samples = make_samples(corpus.bundles[0], corpus.labels[0], cfg);
  samples[0].clip.tokens(0, 0) = std::numeric_limits<double>::infinity();
  TrainConfig t;
  t.epochs = 1;
  t.batch_size = 64;
  CHECK_THROWS_AS(train(samples, cfg, t), std::runtime_error);
}
