// affect: command-line front end for the fusion / smoothing / ensemble pipeline.
#include "affect/config.hpp"
#include "affect/io.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace fs = std::filesystem;
using namespace affect;

namespace {

struct Globals {
  std::string config_file;
  std::vector<std::string> sets;
  std::optional<std::uint64_t> seed;
  std::optional<int> threads;
  std::optional<std::string> track;
  std::optional<double> sigma;
  std::optional<int> subsets;
  std::optional<int> folds;
};

class CliError : public std::runtime_error {
 public:
  CliError(std::string kind, const std::string& msg) : std::runtime_error(msg), kind_(std::move(kind)) {}
  const std::string& kind() const { return kind_; }

 private:
  std::string kind_;
};

config::RunConfig resolve_config(const Globals& g) {
  std::vector<std::string> overrides = g.sets;
  if (g.seed) overrides.push_back("seed=" + std::to_string(*g.seed));
  if (g.threads) overrides.push_back("threads=" + std::to_string(*g.threads));
  if (g.track) overrides.push_back("track=\"" + *g.track + "\"");
  if (g.sigma) overrides.push_back("smoothing.sigma=" + io::format_real(*g.sigma));
  if (g.subsets) overrides.push_back("ensemble.subsets=" + std::to_string(*g.subsets));
  if (g.folds) overrides.push_back("folds=" + std::to_string(*g.folds));
  std::optional<fs::path> file;
  if (!g.config_file.empty()) file = g.config_file;
  return config::resolve(file, overrides);
}

struct Context {
  config::RunConfig cfg;

  fs::path in(const std::string& p) const {
    fs::path path(p);
    if (path.is_relative() && !cfg.data_root.empty()) path = fs::path(cfg.data_root) / path;
    if (!fs::exists(path)) throw CliError("missing_file", "no such file: " + path.string());
    return path;
  }
  fs::path out(const std::string& p) const {
    fs::path path(p);
    if (path.is_relative() && !cfg.data_root.empty()) path = fs::path(cfg.data_root) / path;
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    return path;
  }
  fs::path dir(const std::string& p) const {
    fs::path path(p);
    if (path.is_relative() && !cfg.data_root.empty()) path = fs::path(cfg.data_root) / path;
    return path;
  }
  Track track() const { return cfg.experiment.track; }
};

void print_report(const metrics::MetricReport& r) {
  const auto& names = class_names(r.track);
  std::cout << "track " << track_name(r.track) << " (" << r.n_evaluated << " evaluated)\n";
  for (std::size_t c = 0; c < names.size(); ++c) std::cout << "  " << names[c] << ' ' << io::format_real(r.per_class[c]) << '\n';
  std::cout << "performance " << io::format_real(r.performance) << '\n';
}

// ---------------------------------------------------------------------------

void cmd_synth(const Context& ctx, const std::string& out_dir) {
  auto spec = ctx.cfg.synth;
  const auto corpus = harness::make_synthetic_corpus(spec);
  const auto manifest = io::write_corpus(corpus, ctx.dir(out_dir));
  std::cout << "wrote " << corpus.bundles.size() << " videos to " << manifest.string() << '\n';
}

void cmd_split(const Context& ctx, const std::string& corpus_path, const std::string& out, int fold,
               const std::string& split_out) {
  const auto manifest = io::read_corpus_manifest(ctx.in(corpus_path));
  std::vector<std::string> ids;
  for (const auto& e : manifest.entries) ids.push_back(e.video_id);
  const int k = ctx.cfg.experiment.folds;
  const auto folds = harness::split_folds(ids, k, ctx.cfg.experiment.seed);
  io::FoldTable table{k, ctx.cfg.experiment.seed, {}};
  for (const auto& id : ids) {
    for (const auto& f : folds) {
      if (std::find(f.val_video_ids.begin(), f.val_video_ids.end(), id) != f.val_video_ids.end()) {
        table.rows.emplace_back(id, f.fold_id);
      }
    }
  }
  io::write_fold_table(table, ctx.out(out));
  std::cout << "wrote " << k << " folds over " << ids.size() << " videos to " << out << '\n';
  if (!split_out.empty()) {
    if (fold < 1 || fold > k) throw CliError("usage", "--fold must be in [1, " + std::to_string(k) + "]");
    const auto& f = folds[static_cast<std::size_t>(fold - 1)];
    io::write_split_manifest({f.train_video_ids, f.val_video_ids}, ctx.out(split_out));
    std::cout << "wrote fold " << fold << " split to " << split_out << '\n';
  }
}

std::vector<std::string> train_ids_for(const Context& ctx, const harness::Corpus& corpus, const std::string& split,
                                       const std::string& assignment, int subset) {
  std::vector<std::string> ids = corpus.video_ids();
  if (!split.empty()) ids = io::read_split_manifest(ctx.in(split)).train;
  if (!assignment.empty()) {
    const auto a = io::read_assignment(ctx.in(assignment));
    if (subset < 0 || subset >= a.m) {
      throw CliError("usage", "--subset must be in [0, " + std::to_string(a.m - 1) + "]");
    }
    std::vector<std::string> kept;
    for (const auto& id : ids)
      if (a.subset_of(id) == subset) kept.push_back(id);
    ids = std::move(kept);
  }
  if (ids.empty()) throw CliError("invalid_input", "no training videos selected");
  return ids;
}

void cmd_train(const Context& ctx, const std::string& corpus_path, const std::string& split,
               const std::string& assignment, int subset, const std::string& out) {
  const auto corpus = io::read_corpus(ctx.in(corpus_path));
  if (corpus.track != ctx.track()) {
    throw CliError("invalid_input", "corpus track '" + std::string(track_name(corpus.track)) +
                                        "' does not match configured track '" + std::string(track_name(ctx.track())) + "'");
  }
  const auto ids = train_ids_for(ctx, corpus, split, assignment, subset);
  std::vector<double> curve;
  const auto seed = harness::derive_seed(ctx.cfg.experiment.seed, 0, static_cast<std::uint64_t>(std::max(subset, 0)));
  auto clf = harness::train_classifier(ctx.cfg.experiment, corpus, ids, seed, &curve);
  io::write_checkpoint({clf.config, std::move(clf.params), curve}, ctx.out(out));
  std::cout << "trained on " << ids.size() << " videos, final loss " << io::format_real(curve.back()) << ", wrote "
            << out << '\n';
}

void cmd_predict(const Context& ctx, const std::string& ckpt_path, const std::string& bundle_path,
                 const std::string& out) {
  const auto ckpt = io::read_checkpoint(ctx.in(ckpt_path));
  const auto bundle = io::read_bundle(ctx.in(bundle_path));
  const auto pred = fusion::predict(bundle, ckpt.params, ckpt.config);
  io::write_predictions(pred, ctx.out(out));
  std::cout << "wrote " << pred.rows() << " rows to " << out << '\n';
}

void cmd_smooth(const Context& ctx, const std::string& pred_path, const std::string& bundle_path,
                const std::string& out) {
  const auto pred = io::read_predictions(ctx.in(pred_path));
  std::vector<std::uint8_t> flags;
  if (!bundle_path.empty()) {
    flags = io::read_bundle(ctx.in(bundle_path)).face_present;
  } else {
    flags.assign(static_cast<std::size_t>(pred.rows()), 1);
  }
  const auto smoothed = postprocess::apply(pred, flags, ctx.cfg.experiment.post);
  io::write_predictions(smoothed, ctx.out(out));
  std::cout << "wrote " << smoothed.rows() << " rows to " << out << '\n';
}

void cmd_partition(const Context& ctx, const std::string& corpus_path, const std::string& split,
                   const std::string& out) {
  const auto corpus = io::read_corpus(ctx.in(corpus_path));
  std::vector<std::string> ids = corpus.video_ids();
  if (!split.empty()) ids = io::read_split_manifest(ctx.in(split)).train;
  std::vector<FeatureBundle> bundles;
  for (const auto& id : ids) bundles.push_back(corpus.bundles[corpus.index_of(id)]);
  const auto a = ensemble::partition_backgrounds(bundles, ctx.cfg.experiment.subsets, ctx.cfg.experiment.seed);
  io::write_assignment(a, ctx.out(out));
  for (int s = 0; s < a.m; ++s) std::cout << "subset " << s << ": " << a.members(s).size() << " videos\n";
}

void cmd_fuse(const Context& ctx, const std::vector<std::string>& preds, const std::string& out) {
  std::vector<PredictionTrack> tracks;
  for (const auto& p : preds) tracks.push_back(io::read_predictions(ctx.in(p)));
  const auto fused = ensemble::fuse_predictions(tracks);
  io::write_predictions(fused, ctx.out(out));
  std::cout << "fused " << tracks.size() << " predictions into " << out << '\n';
}

void cmd_evaluate(const Context& ctx, const std::vector<std::string>& preds, const std::vector<std::string>& labels) {
  if (preds.size() != labels.size()) {
    throw CliError("usage", std::to_string(preds.size()) + " prediction files but " + std::to_string(labels.size()) +
                                " label files");
  }
  std::vector<PredictionTrack> p;
  std::vector<LabelTrack> l;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    p.push_back(io::read_predictions(ctx.in(preds[i])));
    l.push_back(io::read_labels(ctx.in(labels[i]), p.back().track));
  }
  print_report(metrics::evaluate_tracks(p, l));
}

void cmd_report(const Context& ctx, const std::string& scores, bool json_out, const std::string& out) {
  const auto table = io::read_score_table(ctx.in(scores));
  std::vector<harness::ReportRow> rows;
  for (std::size_t i = 0; i < table.rows.size(); ++i) rows.push_back({table.row_names[i], table.rows[i], std::nullopt});
  const std::string text =
      json_out ? harness::render_report_json(table.track, rows) : harness::render_report_text(table.track, rows);
  if (out.empty()) std::cout << text;
  else io::write_file(ctx.out(out), text);
}

int cmd_experiment(Context& ctx, const std::string& corpus_path, const std::string& official, bool no_folds,
                   bool json_out, const std::string& out) {
  const auto corpus = io::read_corpus(ctx.in(corpus_path));
  auto& e = ctx.cfg.experiment;
  if (corpus.track != e.track) {
    throw CliError("invalid_input", "corpus track '" + std::string(track_name(corpus.track)) +
                                        "' does not match configured track '" + std::string(track_name(e.track)) + "'");
  }
  if (!official.empty()) {
    const auto s = io::read_split_manifest(ctx.in(official));
    e.official = std::make_pair(s.train, s.val);
  }
  e.run_folds = !no_folds;
  const auto result = harness::run_experiment(e, corpus);
  const auto rows = harness::report_rows(result);
  const std::string text = json_out ? harness::render_report_json(e.track, rows) : harness::render_report_text(e.track, rows);
  if (out.empty()) std::cout << text;
  else io::write_file(ctx.out(out), text);
  int failed = 0;
  for (const auto& f : result.folds) {
    if (!f.report) {
      std::cerr << nlohmann::json{{"error", "fold_failed"}, {"fold", f.name}, {"message", f.error}}.dump() << '\n';
      ++failed;
    }
  }
  return failed == 0 ? 0 : 3;
}

void log_config(const config::RunConfig& cfg, const std::string& subcommand) {
  nlohmann::json line;
  line["subcommand"] = subcommand;
  line["config"] = nlohmann::json::parse(config::to_json(cfg));
  std::cerr << "[affect] resolved config " << line.dump() << '\n';
}

int report_error(const std::string& kind, const std::string& msg) {
  std::cerr << nlohmann::json{{"error", kind}, {"message", msg}}.dump() << '\n';
  return kind == "usage" ? 2 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-modal affect pipeline: synthesize, split, train, predict, smooth, ensemble, evaluate, report"};
  app.require_subcommand(1);
  app.fallthrough();
  Globals g;
  app.add_option("--config", g.config_file, "JSON config file")->check(CLI::ExistingFile);
  app.add_option("--set", g.sets, "Override one config key (key=value), repeatable");
  app.add_option("--seed", g.seed, "Random seed");
  app.add_option("--threads", g.threads, "Worker thread cap")->check(CLI::PositiveNumber);
  app.add_option("--track", g.track, "Track")->transform(CLI::IsMember({"va", "expr", "au", "ce", "emi"}, CLI::ignore_case));
  app.add_option("--sigma", g.sigma, "Smoothing sigma");
  app.add_option("--subsets", g.subsets, "Ensemble subset count m")->check(CLI::PositiveNumber);
  app.add_option("--folds", g.folds, "Cross-validation fold count k");

  std::string corpus, out, split, assignment, ckpt, bundle, pred, scores, official;
  std::vector<std::string> preds, labels;
  int subset = -1, fold = 1;
  bool json_out = false, no_folds = false;

  auto* synth = app.add_subcommand("synth", "Generate a synthetic corpus directory");
  synth->add_option("--out", out, "Output directory")->required();

  auto* split_cmd = app.add_subcommand("split", "Assign videos to cross-validation folds");
  split_cmd->add_option("--corpus", corpus, "Corpus manifest")->required();
  split_cmd->add_option("--out", out, "Fold table output")->required();
  split_cmd->add_option("--fold", fold, "Fold to export as a train/val split (1-based)");
  split_cmd->add_option("--split-out", split, "Write the chosen fold as a split manifest");

  auto* train = app.add_subcommand("train", "Train one fusion classifier");
  train->add_option("--corpus", corpus, "Corpus manifest")->required();
  train->add_option("--split", split, "Split manifest; trains on its train role");
  auto* asg_opt = train->add_option("--assignment", assignment, "Subset assignment; restricts to --subset");
  train->add_option("--subset", subset, "Subset index (0-based)")->needs(asg_opt);
  train->add_option("--out", out, "Checkpoint output")->required();

  auto* predict = app.add_subcommand("predict", "Run a checkpoint on one bundle");
  predict->add_option("--checkpoint", ckpt, "Checkpoint")->required();
  predict->add_option("--bundle", bundle, "Feature bundle")->required();
  predict->add_option("--out", out, "Prediction output")->required();

  auto* smooth = app.add_subcommand("smooth", "Face replacement and Gaussian smoothing of a prediction track");
  smooth->add_option("--pred", pred, "Prediction track")->required();
  smooth->add_option("--bundle", bundle, "Feature bundle supplying the face flags");
  smooth->add_option("--out", out, "Output")->required();

  auto* ens = app.add_subcommand("ensemble", "Background partitioning and prediction fusion");
  ens->require_subcommand(1);
  auto* partition = ens->add_subcommand("partition", "Cluster training videos by background into m subsets");
  partition->add_option("--corpus", corpus, "Corpus manifest")->required();
  partition->add_option("--split", split, "Split manifest; partitions its train role");
  partition->add_option("--out", out, "Assignment output")->required();
  auto* fuse = ens->add_subcommand("fuse", "Fuse per-classifier predictions by voting / averaging");
  fuse->add_option("--pred", preds, "Prediction tracks, one per classifier")->required();
  fuse->add_option("--out", out, "Output")->required();

  auto* evaluate = app.add_subcommand("evaluate", "Score predictions against labels");
  evaluate->add_option("--pred", preds, "Prediction tracks")->required();
  evaluate->add_option("--labels", labels, "Label tracks, same order as --pred")->required();

  auto* report = app.add_subcommand("report", "Render a per-class score table");
  report->add_option("--scores", scores, "Score table")->required();
  report->add_flag("--json", json_out, "Machine-readable output");
  report->add_option("--out", out, "Write to a file instead of stdout");

  auto* experiment = app.add_subcommand("experiment", "Full cross-validation run with report");
  experiment->add_option("--corpus", corpus, "Corpus manifest")->required();
  experiment->add_option("--official", official, "Split manifest reported as the Official row");
  experiment->add_flag("--no-folds", no_folds, "Only run the official split");
  experiment->add_flag("--json", json_out, "Machine-readable output");
  experiment->add_option("--out", out, "Write the report to a file instead of stdout");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return report_error("usage", e.what());
  }

  std::string name = app.get_subcommands().front()->get_name();
  if (name == "ensemble") name += " " + ens->get_subcommands().front()->get_name();
  try {
    Context ctx{resolve_config(g)};
    log_config(ctx.cfg, name);
    if (name == "synth") cmd_synth(ctx, out);
    else if (name == "split") cmd_split(ctx, corpus, out, fold, split);
    else if (name == "train") cmd_train(ctx, corpus, split, assignment, subset, out);
    else if (name == "predict") cmd_predict(ctx, ckpt, bundle, out);
    else if (name == "smooth") cmd_smooth(ctx, pred, bundle, out);
    else if (name == "ensemble partition") cmd_partition(ctx, corpus, split, out);
    else if (name == "ensemble fuse") cmd_fuse(ctx, preds, out);
    else if (name == "evaluate") cmd_evaluate(ctx, preds, labels);
    else if (name == "report") cmd_report(ctx, scores, json_out, out);
    else if (name == "experiment") return cmd_experiment(ctx, corpus, official, no_folds, json_out, out);
    return 0;
  } catch (const CliError& e) {
    return report_error(e.kind(), e.what());
  } catch (const config::ConfigError& e) {
    return report_error("config", e.what());
  } catch (const io::FormatError& e) {
    return report_error("format", e.what());
  } catch (const DegenerateInput& e) {
    return report_error("degenerate_input", e.what());
  } catch (const InvalidInput& e) {
    return report_error("invalid_input", e.what());
  } catch (const std::exception& e) {
    return report_error("internal", e.what());
  }
}
