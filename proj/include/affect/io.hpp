#pragma once

#include "affect/ensemble.hpp"
#include "affect/fusion.hpp"
#include "affect/harness.hpp"
#include "affect/types.hpp"

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

/// File formats. Every format carries a version field; readers accept only
/// what the matching writer produces (canonical number spelling, fixed entry
/// order, no trailing data). See docs/formats.md for the byte layouts.
namespace affect::io {

inline constexpr std::uint32_t kFormatVersion = 1;

/// Raised for unreadable or invalid files. what() starts with "path:line:"
/// for text formats and "path: entry 'name':" for binary ones.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Feature bundles: binary container, magic "AFFB".
void write_bundle(const FeatureBundle& bundle, const std::filesystem::path& path);
FeatureBundle read_bundle(const std::filesystem::path& path);
std::string encode_bundle(const FeatureBundle& bundle);
FeatureBundle decode_bundle(const std::string& bytes, const std::string& source = "<memory>");

// Label / prediction tracks: CSV with a metadata line and a header row.
void write_labels(const LabelTrack& track, const std::filesystem::path& path);
LabelTrack read_labels(const std::filesystem::path& path, std::optional<Track> expected = std::nullopt);
std::string encode_labels(const LabelTrack& track);
LabelTrack decode_labels(const std::string& text, const std::string& source = "<memory>");

void write_predictions(const PredictionTrack& track, const std::filesystem::path& path);
PredictionTrack read_predictions(const std::filesystem::path& path, std::optional<Track> expected = std::nullopt);
std::string encode_predictions(const PredictionTrack& track);
PredictionTrack decode_predictions(const std::string& text, const std::string& source = "<memory>");

// Checkpoints: binary container, magic "AFFC". Holds the config, every
// parameter tensor and the training loss curve.
struct Checkpoint {
  fusion::FusionConfig config;
  fusion::FusionParams params;
  std::vector<double> loss_curve;
};
void write_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint read_checkpoint(const std::filesystem::path& path);
std::string encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::string& bytes, const std::string& source = "<memory>");

// Subset assignment: CSV table of video -> subset plus the centroid block.
void write_assignment(const ensemble::SubsetAssignment& a, const std::filesystem::path& path);
ensemble::SubsetAssignment read_assignment(const std::filesystem::path& path);
std::string encode_assignment(const ensemble::SubsetAssignment& a);
ensemble::SubsetAssignment decode_assignment(const std::string& text, const std::string& source = "<memory>");

/// Corpus manifest: which bundle and label file belong to each video.
struct CorpusEntry {
  std::string video_id;
  std::string bundle_file;  // relative to the manifest directory
  std::string label_file;
};
struct CorpusManifest {
  Track track = Track::EXPR;
  std::vector<CorpusEntry> entries;
};
void write_corpus_manifest(const CorpusManifest& m, const std::filesystem::path& path);
CorpusManifest read_corpus_manifest(const std::filesystem::path& path);

/// Writes `corpus.csv` plus one bundle (<id>.affb) and one label file
/// (<id>.csv) per video into `dir`. Returns the manifest path.
std::filesystem::path write_corpus(const harness::Corpus& corpus, const std::filesystem::path& dir);
/// Loads every video listed in a corpus manifest and validates the pairing.
harness::Corpus read_corpus(const std::filesystem::path& manifest);

/// Fold table: video -> fold id (1..k), with the shuffle seed.
struct FoldTable {
  int k = 0;
  std::uint64_t seed = 0;
  std::vector<std::pair<std::string, int>> rows;
};
void write_fold_table(const FoldTable& t, const std::filesystem::path& path);
FoldTable read_fold_table(const std::filesystem::path& path);

/// Explicit train/val manifest (the "official" split).
struct SplitManifest {
  std::vector<std::string> train;
  std::vector<std::string> val;
};
void write_split_manifest(const SplitManifest& s, const std::filesystem::path& path);
SplitManifest read_split_manifest(const std::filesystem::path& path);

/// A table of per-class values, one named row each (e.g. published scores).
struct ScoreTable {
  Track track = Track::EXPR;
  std::vector<std::string> row_names;
  std::vector<std::vector<double>> rows;
};
void write_score_table(const ScoreTable& t, const std::filesystem::path& path);
ScoreTable read_score_table(const std::filesystem::path& path);

/// Video ids are restricted to [A-Za-z0-9_.-]+.
bool valid_video_id(const std::string& id);

std::string read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, const std::string& bytes);

/// Shortest round-trip decimal spelling of a double.
std::string format_real(double v);

}  // namespace affect::io
