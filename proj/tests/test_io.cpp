#include "affect/io.hpp"

#include "support.hpp"

#include <doctest.h>

#include <filesystem>
#include <random>

using namespace affect;
using namespace affect::io;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("affect-io-" + std::to_string(std::random_device{}()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string error_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const FormatError& e) {
    return e.what();
  }
  return "";
}

std::string expr_text(const std::string& body, int rows) {
  return "#affect-labels,version=1,track=expr,video=v1,rows=" + std::to_string(rows) + "\nframe,label\n" + body;
}

}  // namespace

TEST_CASE("format_real is the shortest round trip") {
  CHECK(format_real(0.1) == "0.1");
  CHECK(format_real(75.0) == "75");
  CHECK(format_real(-5.0) == "-5");
  CHECK(format_real(1e-300) == "1e-300");
  std::mt19937_64 rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = testing::random_real(rng);
    CHECK(std::stod(format_real(v)) == v);
  }
}

TEST_CASE("label files") {
  LabelTrack t{Track::EXPR, "v1", Matrix(3, 1)};
  t.values << 0, -1, 7;
  const std::string text = encode_labels(t);
  CHECK(text == expr_text("0,0\n1,-1\n2,7\n", 3));
  CHECK(decode_labels(text) == t);

  LabelTrack va{Track::VA, "v1", Matrix(2, 2)};
  va.values << -5, -5, 0.25, -1;
  CHECK(decode_labels(encode_labels(va)) == va);
  CHECK(encode_labels(va).find("0,-5,-5\n") != std::string::npos);
}

TEST_CASE("label diagnostics") {
  CHECK(error_of([] { decode_labels(expr_text("0,0\n1,9\n", 2), "x.csv"); }) ==
        "x.csv:4: column 'label': value 9 out of range for track expr");
  CHECK(error_of([] { decode_labels(expr_text("0,0\n", 2), "x.csv"); }) == "x.csv:4: unexpected end of file");
  CHECK(error_of([] { decode_labels(expr_text("0,0\n1,1\n2,2\n", 2), "x.csv"); }) == "x.csv:5: unexpected extra line");
  CHECK(error_of([] { decode_labels(expr_text("0,01\n", 1), "x.csv"); }) == "x.csv:3: column 'label': '01' is not an integer");
  CHECK(error_of([] { decode_labels(expr_text("1,1\n", 1), "x.csv"); }) == "x.csv:3: row index must be 0");
  CHECK(error_of([] { decode_labels(expr_text("0,1,2\n", 1), "x.csv"); }) == "x.csv:3: expected 2 fields, found 3");
  CHECK(error_of([] { decode_labels(expr_text("0,1", 1), "x.csv"); }) == "x.csv:3: missing final newline");
  CHECK(error_of([] { decode_labels(expr_text("0,1\r\n", 1), "x.csv"); }) ==
        "x.csv:3: carriage return (files must use LF line endings)");
  CHECK(error_of([] { decode_labels("", "x.csv"); }) == "x.csv:1: empty file");
  CHECK(error_of([] {
          decode_labels("#affect-labels,version=2,track=expr,video=v1,rows=0\nframe,label\n", "x.csv");
        }) == "x.csv:1: unsupported format version 2");
  CHECK(error_of([] {
          decode_labels("#affect-labels,version=1,track=xx,video=v1,rows=0\nframe,label\n", "x.csv");
        }).rfind("x.csv:1: unknown track 'xx'", 0) == 0);
  CHECK(error_of([] {
          decode_labels("#affect-labels,version=1,track=expr,video=v1,rows=0\nframe,value\n", "x.csv");
        }) == "x.csv:2: header row does not match; expected 'frame,label'");
  CHECK(error_of([] {
          decode_labels("#affect-labels,version=1,track=va,video=v1,rows=1\nframe,valence,arousal\n0,0.50,1\n", "x.csv");
        }) == "x.csv:3: column 'valence': '0.50' is not in canonical form ('0.5')");
  CHECK(error_of([] {
          decode_labels("#affect-labels,version=1,track=expr,rows=1,video=v1\nframe,label\n0,1\n", "x.csv");
        }) == "x.csv:1: line is not in canonical form");
}

TEST_CASE("prediction files") {
  std::mt19937_64 rng(2);
  for (Track t : {Track::VA, Track::EXPR, Track::AU, Track::CE, Track::EMI}) {
    const auto p = testing::random_prediction(rng, t, 5);
    CHECK(decode_predictions(encode_predictions(p)) == p);
  }
  auto p = testing::random_prediction(rng, Track::EXPR, 2);
  std::string text = encode_predictions(p);
  const auto at = text.rfind(',');
  text.replace(at + 1, 1, "9");
  CHECK(error_of([&] { decode_predictions(text, "p.csv"); }).rfind("p.csv:4: ", 0) == 0);
}

TEST_CASE("bundles") {
  std::mt19937_64 rng(3);
  const auto b = testing::random_bundle(rng);
  const std::string bytes = encode_bundle(b);
  CHECK(bytes.substr(0, 4) == "AFFB");
  CHECK(decode_bundle(bytes) == b);

  CHECK(error_of([&] { decode_bundle("AFFX" + bytes.substr(4), "b.affb"); }) == "b.affb: not a 'AFFB' file (bad magic)");
  CHECK(error_of([&] { decode_bundle(bytes + "x", "b.affb"); }) == "b.affb: 1 trailing bytes after the last entry");
  CHECK_FALSE(error_of([&] { decode_bundle(bytes.substr(0, bytes.size() - 3), "b.affb"); }).empty());
  std::string v2 = bytes;
  v2[4] = 2;
  CHECK(error_of([&] { decode_bundle(v2, "b.affb"); }) == "b.affb: unsupported format version 2 (expected 1)");
}

TEST_CASE("bundle shape diagnostics name the entry") {
  FeatureBundle b;
  b.video_id = "v";
  b.clip_length = 2;
  b.visual = Matrix::Ones(4, 3);
  b.audio = Matrix::Ones(2, 3);
  b.face_present = {1, 1, 1, 1};
  b.background = Vector::Zero(1);
  std::string bytes = encode_bundle(b);
  // entry layout: u16 name length, name, u8 type, u8 ndim, payload
  const auto pos = bytes.find("frame_count");
  REQUIRE(pos != std::string::npos);
  std::string bad = bytes;
  bad[pos + std::string("frame_count").size() + 2] = 5;
  const auto msg = error_of([&] { decode_bundle(bad, "b.affb"); });
  CHECK(msg.rfind("b.affb: entry 'visual': has 4 rows but the manifest implies 5 frames", 0) == 0);
}

TEST_CASE("checkpoints") {
  fusion::FusionConfig c;
  c.track = Track::VA;
  c.num_layers = 2;
  c.num_heads = 2;
  c.clip_length = 5;
  c = c.resolved(6);
  Checkpoint ck{c, fusion::init_params(c, 9), {1.5, 1.25, 1.0}};
  const std::string bytes = encode_checkpoint(ck);
  CHECK(bytes.substr(0, 4) == "AFFC");
  const auto back = decode_checkpoint(bytes);
  CHECK(encode_checkpoint(back) == bytes);
  CHECK(back.loss_curve == ck.loss_curve);
  CHECK(back.config.num_layers == 2);
  CHECK_FALSE(error_of([&] { decode_checkpoint(bytes.substr(0, bytes.size() - 8), "c.affc"); }).empty());
}

TEST_CASE("assignment, folds, split, scores") {
  TempDir tmp;
  Matrix desc(4, 2);
  desc << 0, 0, 0, 1, 9, 9, 9, 8;
  std::vector<std::string> ids{"a", "b", "c", "d"};
  const auto a = ensemble::partition_backgrounds(ids, desc, 2, 1);
  const auto back = decode_assignment(encode_assignment(a));
  CHECK(back.subset == a.subset);
  CHECK(back.centroids == a.centroids);

  FoldTable ft{2, 7, {{"a", 1}, {"b", 2}}};
  write_fold_table(ft, tmp.path / "f.csv");
  const auto ft2 = read_fold_table(tmp.path / "f.csv");
  CHECK(ft2.rows == ft.rows);
  CHECK(ft2.seed == 7);

  SplitManifest sm{{"a", "b"}, {"c"}};
  write_split_manifest(sm, tmp.path / "s.csv");
  CHECK(read_split_manifest(tmp.path / "s.csv").val == sm.val);

  ScoreTable st{Track::VA, {"Official"}, {{0.5523, 0.6531}}};
  write_score_table(st, tmp.path / "t.csv");
  CHECK(read_score_table(tmp.path / "t.csv").rows == st.rows);
}

TEST_CASE("corpus round trip and pairing errors") {
  TempDir tmp;
  auto spec = harness::separable_spec(Track::EXPR, 1);
  spec.videos = 4;
  spec.min_frames = 12;
  spec.max_frames = 20;
  const auto corpus = harness::make_synthetic_corpus(spec);
  const auto manifest = write_corpus(corpus, tmp.path / "c");
  const auto back = read_corpus(manifest);
  REQUIRE(back.bundles.size() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    CHECK(back.bundles[i] == corpus.bundles[i]);
    CHECK(back.labels[i] == corpus.labels[i]);
  }
  std::vector<PredictionTrack> preds;
  for (const auto& l : back.labels) {
    Matrix s = Matrix::Zero(l.rows(), 8);
    for (int r = 0; r < l.rows(); ++r) s(r, static_cast<int>(l.values(r, 0))) = 1.0;
    preds.push_back(make_prediction(Track::EXPR, l.video_id, s));
  }
  CHECK(metrics::evaluate_tracks(preds, back.labels).per_class ==
        metrics::evaluate_tracks(preds, corpus.labels).per_class);

  // one label row short
  LabelTrack shorter = corpus.labels[1];
  shorter.values.conservativeResize(shorter.rows() - 1, 1);
  write_labels(shorter, tmp.path / "c" / "vid001.csv");
  const std::string frames = std::to_string(corpus.bundles[1].frame_count());
  const std::string rows = std::to_string(corpus.bundles[1].frame_count() - 1);
  CHECK(error_of([&] { read_corpus(manifest); }) ==
        (tmp.path / "c" / "vid001.csv").string() + ": " + rows + " rows but bundle 'vid001.affb' has " + frames + " frames");

  fs::remove(tmp.path / "c" / "vid002.affb");
  CHECK(error_of([&] { read_corpus(manifest); }).find("vid00") != std::string::npos);
  CHECK(error_of([&] { read_bundle(tmp.path / "c" / "vid002.affb"); }) ==
        (tmp.path / "c" / "vid002.affb").string() + ": cannot open file");
}

TEST_CASE("fuzz: write, read, write is byte-identical") {
  std::mt19937_64 rng(99);
  for (int i = 0; i < 300; ++i) {
    const auto b = testing::random_bundle(rng);
    const std::string once = encode_bundle(b);
    CHECK(encode_bundle(decode_bundle(once)) == once);

    const Track t = testing::random_track(rng);
    const int rows = std::uniform_int_distribution<int>(0, 30)(rng);
    const auto l = testing::random_labels(rng, t, rows);
    const std::string lt = encode_labels(l);
    CHECK(encode_labels(decode_labels(lt)) == lt);
    const auto p = testing::random_prediction(rng, t, rows);
    const std::string pt = encode_predictions(p);
    CHECK(encode_predictions(decode_predictions(pt)) == pt);
  }
}

TEST_CASE("fuzz: single-byte corruption never crashes the readers") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 300; ++i) {
    const auto b = testing::random_bundle(rng);
    std::string bytes = encode_bundle(b);
    const auto at = std::uniform_int_distribution<std::size_t>(0, bytes.size() - 1)(rng);
    bytes[at] = static_cast<char>(bytes[at] ^ (1 + std::uniform_int_distribution<int>(0, 254)(rng)));
    try {
      const auto d = decode_bundle(bytes);
      CHECK(encode_bundle(d) == bytes);
    } catch (const FormatError&) {
    }

    const auto l = testing::random_labels(rng, testing::random_track(rng), 6);
    std::string text = encode_labels(l);
    const auto pos = std::uniform_int_distribution<std::size_t>(0, text.size() - 1)(rng);
    text[pos] = "0123456789,-.e\nx"[std::uniform_int_distribution<int>(0, 15)(rng)];
    try {
      const auto d = decode_labels(text);
      CHECK(encode_labels(d) == text);
    } catch (const FormatError&) {
    }
  }
}

TEST_CASE("video ids") {
  CHECK(valid_video_id("vid_01.a-b"));
  CHECK_FALSE(valid_video_id(""));
  CHECK_FALSE(valid_video_id("a b"));
  CHECK_FALSE(valid_video_id("a,b"));
  LabelTrack t{Track::EMI, "bad id", Matrix::Zero(1, 6)};
  CHECK_THROWS_AS(encode_labels(t), FormatError);
}
