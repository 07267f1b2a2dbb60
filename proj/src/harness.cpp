#include "affect/harness.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <exception>
#include <iomanip>
#include <mutex>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>
#include <unordered_map>

namespace affect::harness {

// ---------------------------------------------------------------------------
// Folds

std::vector<FoldSplit> split_folds(std::span<const std::string> video_ids, int k, std::uint64_t seed) {
  const int n = static_cast<int>(video_ids.size());
  if (k < 2) throw InvalidInput("split_folds: k must be >= 2, got " + std::to_string(k));
  if (k > n) {
    throw InvalidInput("split_folds: k = " + std::to_string(k) + " exceeds the video count " + std::to_string(n));
  }
  {
    std::vector<std::string> sorted(video_ids.begin(), video_ids.end());
    std::sort(sorted.begin(), sorted.end());
    if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
      throw InvalidInput("split_folds: duplicate video id");
    }
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);

  std::vector<int> fold_of(static_cast<std::size_t>(n));
  const int base = n / k, extra = n % k;
  int pos = 0;
  for (int f = 0; f < k; ++f) {
    const int size = base + (f < extra ? 1 : 0);
    for (int j = 0; j < size; ++j) fold_of[static_cast<std::size_t>(order[static_cast<std::size_t>(pos++)])] = f;
  }

  std::vector<FoldSplit> out(static_cast<std::size_t>(k));
  for (int f = 0; f < k; ++f) {
    auto& fs = out[static_cast<std::size_t>(f)];
    fs.fold_id = f + 1;
    fs.seed = seed;
    for (int i = 0; i < n; ++i) {
      (fold_of[static_cast<std::size_t>(i)] == f ? fs.val_video_ids : fs.train_video_ids)
          .push_back(video_ids[static_cast<std::size_t>(i)]);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Corpus

std::vector<std::string> Corpus::video_ids() const {
  std::vector<std::string> ids;
  for (const auto& b : bundles) ids.push_back(b.video_id);
  return ids;
}

std::size_t Corpus::index_of(const std::string& video_id) const {
  for (std::size_t i = 0; i < bundles.size(); ++i)
    if (bundles[i].video_id == video_id) return i;
  throw InvalidInput("corpus has no video '" + video_id + "'");
}

void Corpus::validate() const {
  if (bundles.size() != labels.size()) throw InvalidInput("corpus: bundle and label counts differ");
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    bundles[i].validate();
    labels[i].validate();
    if (labels[i].video_id != bundles[i].video_id) {
      throw InvalidInput("corpus: labels '" + labels[i].video_id + "' paired with bundle '" + bundles[i].video_id + "'");
    }
    if (labels[i].track != track) throw InvalidInput("corpus: label track mismatch for '" + labels[i].video_id + "'");
    const int rows = is_framewise(track) ? bundles[i].frame_count() : bundles[i].clip_count();
    if (labels[i].rows() != rows) {
      throw InvalidInput("corpus: '" + labels[i].video_id + "' has " + std::to_string(labels[i].rows()) +
                         " label rows, expected " + std::to_string(rows));
    }
  }
}

void SyntheticSpec::validate() const {
  if (videos < 1) throw InvalidInput("synthetic corpus: need at least one video");
  if (min_frames < 1 || max_frames < min_frames) throw InvalidInput("synthetic corpus: bad frame range");
  if (dim < 1 || clip_length < 1) throw InvalidInput("synthetic corpus: dim and clip length must be >= 1");
  if (background_clusters < 1 || background_dim < 1) throw InvalidInput("synthetic corpus: bad background shape");
  if (noise < 0.0 || separation < 0.0) throw InvalidInput("synthetic corpus: noise and separation must be >= 0");
  if (face_dropout < 0.0 || face_dropout >= 1.0) throw InvalidInput("synthetic corpus: face dropout must be in [0,1)");
  if (mean_segment < 1.0) throw InvalidInput("synthetic corpus: mean segment length must be >= 1");
  if (!class_probs.empty()) {
    if (track != Track::EXPR && track != Track::CE) {
      throw InvalidInput("synthetic corpus: class_probs only applies to EXPR/CE");
    }
    if (static_cast<int>(class_probs.size()) != class_count(track)) {
      throw InvalidInput("synthetic corpus: class_probs needs " + std::to_string(class_count(track)) + " entries");
    }
    double s = 0.0;
    for (double p : class_probs) {
      if (!(p >= 0.0)) throw InvalidInput("synthetic corpus: negative class probability");
      s += p;
    }
    if (!(s > 0.0)) throw InvalidInput("synthetic corpus: class probabilities sum to zero");
  }
}

namespace {

Matrix random_directions(int count, int d, double scale, std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  Matrix m(count, d);
  for (int i = 0; i < count; ++i)
    for (int j = 0; j < d; ++j) m(i, j) = g(rng);
  for (int i = 0; i < count; ++i) {
    if (count <= d) {
      for (int j = 0; j < i; ++j) m.row(i) -= m.row(i).dot(m.row(j)) * m.row(j);
    }
    const double norm = m.row(i).norm();
    m.row(i) *= (norm > 0.0 ? 1.0 / norm : 0.0);
  }
  return m * scale;
}

}  // namespace

Corpus make_synthetic_corpus(const SyntheticSpec& spec) {
  spec.validate();
  const Track track = spec.track;
  const int d = spec.dim;
  const int classes = class_count(track);
  std::mt19937_64 rng(spec.seed);
  std::normal_distribution<double> gauss(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  const Matrix protos = random_directions(classes, d, spec.separation, rng);
  const Matrix scene_shift = random_directions(spec.background_clusters, d, spec.background_shift, rng);
  Matrix scene_centroid(spec.background_clusters, spec.background_dim);
  for (int c = 0; c < spec.background_clusters; ++c)
    for (int j = 0; j < spec.background_dim; ++j) scene_centroid(c, j) = 5.0 * gauss(rng);

  std::vector<double> probs = spec.class_probs;
  if (probs.empty() && (track == Track::EXPR || track == Track::CE)) probs.assign(static_cast<std::size_t>(classes), 1.0);
  std::discrete_distribution<int> pick_class(probs.begin(), probs.end());
  std::geometric_distribution<int> run_length(1.0 / spec.mean_segment);
  std::uniform_int_distribution<int> pick_frames(spec.min_frames, spec.max_frames);
  const bool with_text = spec.with_text.value_or(track == Track::EMI);

  auto noise_row = [&](double sd) {
    Eigen::RowVectorXd r(d);
    for (int j = 0; j < d; ++j) r(j) = sd * gauss(rng);
    return r;
  };

  Corpus corpus;
  corpus.track = track;
  const int id_width = std::max(3, static_cast<int>(std::to_string(spec.videos - 1).size()));
  for (int v = 0; v < spec.videos; ++v) {
    std::ostringstream id;
    id << "vid" << std::setw(id_width) << std::setfill('0') << v;
    const int scene = v % spec.background_clusters;
    const int frames = pick_frames(rng);

    FeatureBundle b;
    b.video_id = id.str();
    b.clip_length = spec.clip_length;
    b.visual.resize(frames, d);
    b.face_present.assign(static_cast<std::size_t>(frames), 1);
    b.background.resize(spec.background_dim);
    for (int j = 0; j < spec.background_dim; ++j) b.background(j) = scene_centroid(scene, j) + 0.1 * gauss(rng);
    const int clips = b.clip_count();

    LabelTrack lt;
    lt.track = track;
    lt.video_id = b.video_id;
    Matrix signal = Matrix::Zero(frames, d);

    if (is_framewise(track)) {
      lt.values.resize(frames, label_width(track));
      int f = 0;
      while (f < frames) {
        const int len = std::min(frames - f, 1 + run_length(rng));
        Eigen::RowVectorXd seg_label(label_width(track));
        if (track == Track::EXPR) {
          seg_label(0) = pick_class(rng);
        } else if (track == Track::AU) {
          for (int j = 0; j < 12; ++j) seg_label(j) = unit(rng) < spec.au_rate ? 1.0 : 0.0;
        } else {
          seg_label(0) = -0.9 + 1.8 * unit(rng);
          seg_label(1) = -0.9 + 1.8 * unit(rng);
        }
        for (int t = f; t < f + len; ++t) {
          Eigen::RowVectorXd lab = seg_label;
          if (track == Track::VA) {
            for (int j = 0; j < 2; ++j) lab(j) = std::clamp(lab(j) + 0.02 * gauss(rng), -1.0, 1.0);
          }
          lt.values.row(t) = lab;
          if (track == Track::EXPR) {
            signal.row(t) = protos.row(static_cast<int>(lab(0)));
          } else {
            for (int j = 0; j < classes; ++j) signal.row(t) += lab(j) * protos.row(j);
          }
        }
        f += len;
      }
    } else {
      lt.values.resize(clips, label_width(track));
      for (int c = 0; c < clips; ++c) {
        Eigen::RowVectorXd sig = Eigen::RowVectorXd::Zero(d);
        if (track == Track::CE) {
          const int cls = pick_class(rng);
          lt.values(c, 0) = cls;
          sig = protos.row(cls);
        } else {
          for (int j = 0; j < classes; ++j) {
            lt.values(c, j) = unit(rng);
            sig += lt.values(c, j) * protos.row(j);
          }
        }
        const int start = c * spec.clip_length;
        const int stop = std::min(frames, start + spec.clip_length);
        for (int t = start; t < stop; ++t) signal.row(t) = sig;
      }
    }

    for (int t = 0; t < frames; ++t) {
      const bool face = !(spec.face_dropout > 0.0 && unit(rng) < spec.face_dropout);
      b.face_present[static_cast<std::size_t>(t)] = face ? 1 : 0;
      b.visual.row(t) = scene_shift.row(scene) + noise_row(spec.noise);
      if (face) b.visual.row(t) += signal.row(t);
    }
    // Keep at least one face per video so face replacement is always defined.
    if (std::none_of(b.face_present.begin(), b.face_present.end(), [](auto x) { return x != 0; })) {
      b.face_present[0] = 1;
      b.visual.row(0) += signal.row(0);
    }

    auto clip_modality = [&] {
      Matrix m(clips, d);
      for (int c = 0; c < clips; ++c) {
        const int start = c * spec.clip_length;
        const int stop = std::min(frames, start + spec.clip_length);
        Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(d);
        for (int t = start; t < stop; ++t) mean += signal.row(t);
        mean /= static_cast<double>(stop - start);
        m.row(c) = 0.5 * mean + scene_shift.row(scene) + noise_row(spec.noise);
      }
      return m;
    };
    b.audio = clip_modality();
    if (with_text) b.text = clip_modality();

    corpus.bundles.push_back(std::move(b));
    corpus.labels.push_back(std::move(lt));
  }
  return corpus;
}

SyntheticSpec separable_spec(Track track, std::uint64_t seed) {
  SyntheticSpec s;
  s.track = track;
  s.videos = 20;
  s.min_frames = 100;
  s.max_frames = 140;
  s.dim = 16;
  s.clip_length = 10;
  s.separation = 3.0;
  s.noise = 0.3;
  s.background_clusters = 3;
  // Regression targets blur across in-clip boundaries; class tracks need every class in every fold.
  s.mean_segment = track == Track::VA ? 30.0 : 12.0;
  s.seed = seed;
  return s;
}

// ---------------------------------------------------------------------------
// Experiment

void ExperimentConfig::validate() const {
  if (fusion.track != track) throw InvalidInput("experiment: fusion config track does not match");
  if (subsets < 1) throw InvalidInput("experiment: subsets must be >= 1");
  if (run_folds && folds < 2) throw InvalidInput("experiment: folds must be >= 2");
  if (threads < 1) throw InvalidInput("experiment: threads must be >= 1");
  if (!run_folds && !official) throw InvalidInput("experiment: nothing to run (no folds, no official split)");
}

double ExperimentResult::fold_mean() const {
  double s = 0.0;
  int n = 0;
  for (const auto& f : folds) {
    if (f.name == "Official" || !f.report) continue;
    s += f.report->performance;
    ++n;
  }
  if (n == 0) throw InvalidInput("fold_mean: no successful folds");
  return s / n;
}

std::vector<double> ExperimentResult::fold_mean_per_class() const {
  std::vector<double> acc(static_cast<std::size_t>(class_count(track)), 0.0);
  int n = 0;
  for (const auto& f : folds) {
    if (f.name == "Official" || !f.report) continue;
    for (std::size_t c = 0; c < acc.size(); ++c) acc[c] += f.report->per_class[c];
    ++n;
  }
  if (n == 0) throw InvalidInput("fold_mean_per_class: no successful folds");
  for (double& v : acc) v /= n;
  return acc;
}

std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ull;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(base) ^ a) ^ (b + 0x632be59bd9b4e019ull));
}

losses::ClassWeights class_weights_for(Track track, ClassWeightPolicy policy,
                                       std::span<const fusion::TrainingSample> samples) {
  if (is_regression(track) || policy == ClassWeightPolicy::Uniform) return {};
  const auto counts = fusion::class_frequencies(track, samples);
  return losses::ClassWeights::inverse_frequency(counts);
}

ensemble::Classifier train_classifier(const ExperimentConfig& cfg, const Corpus& corpus,
                                      std::span<const std::string> video_ids, std::uint64_t seed,
                                      std::vector<double>* loss_curve) {
  if (video_ids.empty()) throw InvalidInput("train_classifier: no training videos");
  const auto& first = corpus.bundles[corpus.index_of(video_ids.front())];
  fusion::FusionConfig fcfg = cfg.fusion.resolved(first.dim());
  fcfg.track = cfg.track;
  fcfg.clip_length = first.clip_length;
  fcfg.seed = seed;
  fcfg.validate();

  std::vector<fusion::TrainingSample> samples;
  for (const auto& id : video_ids) {
    const std::size_t i = corpus.index_of(id);
    auto s = fusion::make_samples(corpus.bundles[i], corpus.labels[i], fcfg);
    std::move(s.begin(), s.end(), std::back_inserter(samples));
  }
  fusion::TrainConfig tcfg = cfg.train;
  tcfg.seed = derive_seed(seed, 0x7a11, 0);
  tcfg.class_weights = class_weights_for(cfg.track, cfg.class_weights, samples);
  fusion::TrainResult tr = fusion::train(samples, fcfg, tcfg);
  if (loss_curve) *loss_curve = tr.loss_curve;
  return {std::move(tr.params), fcfg};
}

namespace {

std::vector<FeatureBundle> select_bundles(const Corpus& corpus, std::span<const std::string> ids) {
  std::vector<FeatureBundle> out;
  for (const auto& id : ids) out.push_back(corpus.bundles[corpus.index_of(id)]);
  return out;
}

}  // namespace

metrics::MetricReport run_fold(const ExperimentConfig& cfg, const Corpus& corpus, std::span<const std::string> train_ids,
                               std::span<const std::string> val_ids, int fold_index) {
  if (train_ids.empty() || val_ids.empty()) throw InvalidInput("run_fold: empty train or validation set");
  const auto train_bundles = select_bundles(corpus, train_ids);
  const auto assignment =
      ensemble::partition_backgrounds(train_bundles, cfg.subsets, derive_seed(cfg.seed, 0xb9, static_cast<std::uint64_t>(fold_index)));

  std::vector<ensemble::Classifier> classifiers;
  for (int s = 0; s < assignment.m; ++s) {
    const auto members = assignment.members(s);
    classifiers.push_back(train_classifier(cfg, corpus, members,
                                           derive_seed(cfg.seed, static_cast<std::uint64_t>(fold_index),
                                                       static_cast<std::uint64_t>(s))));
  }

  const bool before = cfg.post.enabled && cfg.post.order == postprocess::SmoothingOrder::BeforeVote;
  std::vector<PredictionTrack> preds;
  std::vector<LabelTrack> labels;
  for (const auto& id : val_ids) {
    const std::size_t i = corpus.index_of(id);
    const auto& bundle = corpus.bundles[i];
    PredictionTrack p = ensemble::ensemble_predict(bundle, classifiers, assignment, before ? &cfg.post : nullptr);
    if (cfg.post.enabled && !before) p = postprocess::apply(p, bundle.face_present, cfg.post);
    preds.push_back(std::move(p));
    labels.push_back(corpus.labels[i]);
  }
  return metrics::evaluate_tracks(preds, labels);
}

metrics::MetricReport train_predict_evaluate(const ExperimentConfig& cfg, const Corpus& corpus,
                                             std::span<const std::string> train_ids,
                                             std::span<const std::string> val_ids, int fold_index) {
  const auto clf = train_classifier(cfg, corpus, train_ids, derive_seed(cfg.seed, static_cast<std::uint64_t>(fold_index), 0));
  std::vector<PredictionTrack> preds;
  std::vector<LabelTrack> labels;
  for (const auto& id : val_ids) {
    const std::size_t i = corpus.index_of(id);
    preds.push_back(fusion::predict(corpus.bundles[i], clf.params, clf.config));
    labels.push_back(corpus.labels[i]);
  }
  return metrics::evaluate_tracks(preds, labels);
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const Corpus& corpus) {
  cfg.validate();
  corpus.validate();
  if (corpus.track != cfg.track) throw InvalidInput("run_experiment: corpus track does not match the config");

  struct Job {
    std::string name;
    std::vector<std::string> train, val;
    int index;
  };
  std::vector<Job> jobs;
  if (cfg.official) jobs.push_back({"Official", cfg.official->first, cfg.official->second, 0});
  if (cfg.run_folds) {
    const auto ids = corpus.video_ids();
    for (const auto& f : split_folds(ids, cfg.folds, cfg.seed)) {
      jobs.push_back({"fold-" + std::to_string(f.fold_id), f.train_video_ids, f.val_video_ids, f.fold_id});
    }
  }

  ExperimentResult result;
  result.track = cfg.track;
  result.folds.resize(jobs.size());
  auto run = [&](std::size_t j) {
    auto& out = result.folds[j];
    out.name = jobs[j].name;
    try {
      out.report = run_fold(cfg, corpus, jobs[j].train, jobs[j].val, jobs[j].index);
    } catch (const std::exception& e) {
      out.error = out.name + ": " + e.what();
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(cfg.threads), jobs.size());
  if (workers <= 1) {
    for (std::size_t j = 0; j < jobs.size(); ++j) run(j);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t j = w; j < jobs.size(); j += workers) run(j);
      });
    for (auto& t : pool) t.join();
  }
  return result;
}

// ---------------------------------------------------------------------------
// Reports

bool reported_in_percent(Track track) { return !is_regression(track); }

std::vector<ReportRow> report_rows(const ExperimentResult& result) {
  std::vector<ReportRow> rows;
  for (const auto& f : result.folds) {
    ReportRow r;
    r.name = f.name;
    if (f.report) {
      r.per_class = f.report->per_class;
      if (reported_in_percent(result.track))
        for (double& v : r.per_class) v *= 100.0;
    } else {
      r.error = f.error;
    }
    rows.push_back(std::move(r));
  }
  return rows;
}

std::string render_report_text(Track track, std::span<const ReportRow> rows) {
  const auto& names = class_names(track);
  const int precision = reported_in_percent(track) ? 2 : 4;
  std::vector<std::size_t> widths;
  for (const auto& n : names) widths.push_back(std::max<std::size_t>(n.size(), 7));
  std::size_t name_w = 7;
  for (const auto& r : rows) name_w = std::max(name_w, r.name.size());

  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(name_w)) << "Val Set" << " |";
  for (std::size_t c = 0; c < names.size(); ++c) os << ' ' << std::right << std::setw(static_cast<int>(widths[c])) << names[c];
  os << " | " << std::setw(7) << "Avg." << '\n';
  os << std::string(name_w, '-') << "-+";
  for (std::size_t w : widths) os << std::string(w + 1, '-');
  os << "-+-" << std::string(7, '-') << '\n';
  os << std::fixed << std::setprecision(precision);
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(name_w)) << r.name << " |";
    if (r.error) {
      os << " FAILED: " << *r.error << '\n';
      continue;
    }
    const auto perf = metrics::track_performance(track, r.per_class);
    for (std::size_t c = 0; c < names.size(); ++c)
      os << ' ' << std::right << std::setw(static_cast<int>(widths[c])) << r.per_class[c];
    os << " | " << std::setw(7) << perf.performance << '\n';
  }
  return os.str();
}

std::string render_report_json(Track track, std::span<const ReportRow> rows) {
  nlohmann::json j;
  j["track"] = std::string(track_name(track));
  j["unit"] = reported_in_percent(track) ? "percent" : "coefficient";
  j["columns"] = class_names(track);
  j["rows"] = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json row;
    row["name"] = r.name;
    if (r.error) {
      row["error"] = *r.error;
    } else {
      row["per_class"] = r.per_class;
      row["avg"] = metrics::track_performance(track, r.per_class).performance;
    }
    j["rows"].push_back(std::move(row));
  }
  return j.dump(2) + "\n";
}

}  // namespace affect::harness
