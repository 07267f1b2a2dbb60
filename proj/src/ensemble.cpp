#include "affect/ensemble.hpp"

#include <algorithm>
#include <exception>
#include <limits>
#include <map>
#include <mutex>
#include <random>
#include <thread>

namespace affect::ensemble {

int SubsetAssignment::subset_of(const std::string& video_id) const {
  for (std::size_t i = 0; i < video_ids.size(); ++i)
    if (video_ids[i] == video_id) return subset[i];
  throw InvalidInput("subset assignment has no video '" + video_id + "'");
}

std::vector<std::string> SubsetAssignment::members(int s) const {
  std::vector<std::string> out;
  for (std::size_t i = 0; i < video_ids.size(); ++i)
    if (subset[i] == s) out.push_back(video_ids[i]);
  return out;
}

void SubsetAssignment::validate() const {
  if (m < 1) throw InvalidInput("subset assignment: m must be >= 1");
  if (subset.size() != video_ids.size()) throw InvalidInput("subset assignment: ragged table");
  if (centroids.rows() != m) throw InvalidInput("subset assignment: centroid count != m");
  std::vector<int> sizes(static_cast<std::size_t>(m), 0);
  for (int s : subset) {
    if (s < 0 || s >= m) throw InvalidInput("subset assignment: subset index out of range");
    ++sizes[static_cast<std::size_t>(s)];
  }
  for (int i = 0; i < m; ++i)
    if (sizes[static_cast<std::size_t>(i)] == 0) {
      throw InvalidInput("subset assignment: subset " + std::to_string(i) + " is empty");
    }
}

namespace {

int nearest(const Matrix& centroids, const Eigen::RowVectorXd& x) {
  int best = 0;
  double best_d = std::numeric_limits<double>::infinity();
  for (Eigen::Index c = 0; c < centroids.rows(); ++c) {
    const double dist = (centroids.row(c) - x).squaredNorm();
    if (dist < best_d) {
      best_d = dist;
      best = static_cast<int>(c);
    }
  }
  return best;
}

}  // namespace

SubsetAssignment partition_backgrounds(std::span<const std::string> video_ids, const Matrix& descriptors, int m,
                                       std::uint64_t seed) {
  const auto n = static_cast<int>(descriptors.rows());
  if (static_cast<int>(video_ids.size()) != n) {
    throw InvalidInput("partition_backgrounds: " + std::to_string(video_ids.size()) + " ids for " +
                       std::to_string(n) + " descriptors");
  }
  if (m < 1) throw InvalidInput("partition_backgrounds: m must be >= 1");
  if (m > n) {
    throw InvalidInput("partition_backgrounds: m = " + std::to_string(m) + " exceeds the video count " +
                       std::to_string(n));
  }
  if (!descriptors.allFinite()) throw InvalidInput("partition_backgrounds: non-finite descriptor");

  std::mt19937_64 rng(seed);
  Matrix centroids(m, descriptors.cols());
  std::vector<std::uint8_t> chosen(static_cast<std::size_t>(n), 0);
  {
    std::uniform_int_distribution<int> pick(0, n - 1);
    int first = pick(rng);
    centroids.row(0) = descriptors.row(first);
    chosen[static_cast<std::size_t>(first)] = 1;
    std::vector<double> d2(static_cast<std::size_t>(n));
    for (int c = 1; c < m; ++c) {
      double total = 0.0;
      for (int i = 0; i < n; ++i) {
        double best = std::numeric_limits<double>::infinity();
        for (int j = 0; j < c; ++j) best = std::min(best, (descriptors.row(i) - centroids.row(j)).squaredNorm());
        d2[static_cast<std::size_t>(i)] = chosen[static_cast<std::size_t>(i)] ? 0.0 : best;
        total += d2[static_cast<std::size_t>(i)];
      }
      int next = -1;
      if (total > 0.0) {
        std::uniform_real_distribution<double> u(0.0, total);
        double target = u(rng), acc = 0.0;
        for (int i = 0; i < n; ++i) {
          if (d2[static_cast<std::size_t>(i)] <= 0.0) continue;
          acc += d2[static_cast<std::size_t>(i)];
          next = i;
          if (acc >= target) break;
        }
      } else {
        for (int i = 0; i < n && next < 0; ++i)
          if (!chosen[static_cast<std::size_t>(i)]) next = i;
      }
      centroids.row(c) = descriptors.row(next);
      chosen[static_cast<std::size_t>(next)] = 1;
    }
  }

  std::vector<int> assign(static_cast<std::size_t>(n), -1);
  for (int iter = 0; iter < 100; ++iter) {
    std::vector<int> next(static_cast<std::size_t>(n));
    for (int i = 0; i < n; ++i) next[static_cast<std::size_t>(i)] = nearest(centroids, descriptors.row(i));

    // repair empty clusters
    for (;;) {
      std::vector<int> sizes(static_cast<std::size_t>(m), 0);
      for (int s : next) ++sizes[static_cast<std::size_t>(s)];
      const auto empty = std::find(sizes.begin(), sizes.end(), 0);
      if (empty == sizes.end()) break;
      const int largest = static_cast<int>(std::max_element(sizes.begin(), sizes.end()) - sizes.begin());
      int far = -1;
      double far_d = -1.0;
      for (int i = 0; i < n; ++i) {
        if (next[static_cast<std::size_t>(i)] != largest) continue;
        const double dist = (descriptors.row(i) - centroids.row(largest)).squaredNorm();
        if (dist > far_d) {
          far_d = dist;
          far = i;
        }
      }
      const int target = static_cast<int>(empty - sizes.begin());
      next[static_cast<std::size_t>(far)] = target;
      centroids.row(target) = descriptors.row(far);
    }

    Matrix sums = Matrix::Zero(m, descriptors.cols());
    std::vector<int> counts(static_cast<std::size_t>(m), 0);
    for (int i = 0; i < n; ++i) {
      sums.row(next[static_cast<std::size_t>(i)]) += descriptors.row(i);
      ++counts[static_cast<std::size_t>(next[static_cast<std::size_t>(i)])];
    }
    for (int c = 0; c < m; ++c) centroids.row(c) = sums.row(c) / static_cast<double>(counts[static_cast<std::size_t>(c)]);

    const bool converged = next == assign;
    assign = std::move(next);
    if (converged) break;
  }

  SubsetAssignment out;
  out.video_ids.assign(video_ids.begin(), video_ids.end());
  out.subset = std::move(assign);
  out.m = m;
  out.centroids = std::move(centroids);
  return out;
}

SubsetAssignment partition_backgrounds(std::span<const FeatureBundle> bundles, int m, std::uint64_t seed) {
  if (bundles.empty()) throw InvalidInput("partition_backgrounds: no videos");
  const auto b = bundles.front().background.size();
  Matrix desc(static_cast<Eigen::Index>(bundles.size()), b);
  std::vector<std::string> ids;
  for (std::size_t i = 0; i < bundles.size(); ++i) {
    if (bundles[i].background.size() != b) {
      throw InvalidInput("partition_backgrounds: background descriptor of '" + bundles[i].video_id +
                         "' has a different dimension");
    }
    desc.row(static_cast<Eigen::Index>(i)) = bundles[i].background.transpose();
    ids.push_back(bundles[i].video_id);
  }
  return partition_backgrounds(ids, desc, m, seed);
}

int vote(std::span<const Vote> records) {
  if (records.empty()) throw InvalidInput("vote: no ballots");
  std::map<int, std::vector<double>> tally;
  for (const Vote& v : records) tally[v.label].push_back(v.confidence);
  int best = 0;
  std::size_t best_count = 0;
  double best_conf = -std::numeric_limits<double>::infinity();
  bool have = false;
  // std::map iterates labels in ascending order, so strict comparisons keep
  // the lowest label on a full tie.
  for (auto& [label, confs] : tally) {
    std::sort(confs.begin(), confs.end());
    double sum = 0.0;
    for (double c : confs) sum += c;
    if (!have || confs.size() > best_count || (confs.size() == best_count && sum > best_conf)) {
      best = label;
      best_count = confs.size();
      best_conf = sum;
      have = true;
    }
  }
  return best;
}

std::vector<double> fuse_regression(std::span<const std::vector<double>> per_classifier) {
  if (per_classifier.empty()) throw InvalidInput("fuse_regression: no classifiers");
  const std::size_t len = per_classifier.front().size();
  std::vector<double> out(per_classifier.front());
  for (std::size_t k = 1; k < per_classifier.size(); ++k) {
    if (per_classifier[k].size() != len) throw InvalidInput("fuse_regression: length mismatch");
    for (std::size_t i = 0; i < len; ++i) out[i] += per_classifier[k][i];
  }
  for (double& v : out) v /= static_cast<double>(per_classifier.size());
  return out;
}

PredictionTrack fuse_predictions(std::span<const PredictionTrack> per_classifier) {
  if (per_classifier.empty()) throw InvalidInput("fuse_predictions: no predictions");
  const PredictionTrack& ref = per_classifier.front();
  for (const auto& p : per_classifier) {
    if (p.track != ref.track || p.video_id != ref.video_id || p.rows() != ref.rows() ||
        p.scores.cols() != ref.scores.cols() || p.decisions.cols() != ref.decisions.cols()) {
      throw InvalidInput("fuse_predictions: predictions are not aligned");
    }
  }
  PredictionTrack out = ref;
  for (std::size_t k = 1; k < per_classifier.size(); ++k) out.scores += per_classifier[k].scores;
  out.scores /= static_cast<double>(per_classifier.size());
  if (is_regression(ref.track)) return out;

  std::vector<Vote> ballots(per_classifier.size());
  for (Eigen::Index r = 0; r < ref.decisions.rows(); ++r) {
    for (Eigen::Index c = 0; c < ref.decisions.cols(); ++c) {
      for (std::size_t k = 0; k < per_classifier.size(); ++k) {
        const auto& p = per_classifier[k];
        const int label = p.decisions(r, c);
        double conf = 0.0;
        if (ref.track == Track::AU) conf = label == 1 ? p.scores(r, c) : 1.0 - p.scores(r, c);
        else conf = p.scores(r, label);
        ballots[k] = {label, conf};
      }
      out.decisions(r, c) = vote(ballots);
    }
  }
  return out;
}

PredictionTrack ensemble_predict(const FeatureBundle& bundle, std::span<const Classifier> classifiers,
                                 const SubsetAssignment& assignment,
                                 const postprocess::PostprocessConfig* before_vote, int threads) {
  if (classifiers.empty()) throw InvalidInput("ensemble_predict: no classifiers");
  if (assignment.m != static_cast<int>(classifiers.size())) {
    throw InvalidInput("ensemble_predict: assignment has " + std::to_string(assignment.m) + " subsets but " +
                       std::to_string(classifiers.size()) + " classifiers were given");
  }
  const auto& c0 = classifiers.front().config;
  for (const auto& c : classifiers) {
    const auto& k = c.config;
    if (k.track != c0.track || k.d_model != c0.d_model || k.clip_length != c0.clip_length ||
        k.output_dim != c0.output_dim) {
      throw InvalidInput("ensemble_predict: classifier configs disagree on track, width or clip length");
    }
  }

  std::vector<PredictionTrack> preds(classifiers.size());
  std::exception_ptr failure;
  std::mutex failure_mu;
  auto run = [&](std::size_t i) {
    try {
      PredictionTrack p = fusion::predict(bundle, classifiers[i].params, classifiers[i].config);
      if (before_vote) p = postprocess::apply(p, bundle.face_present, *before_vote);
      preds[i] = std::move(p);
    } catch (...) {
      std::lock_guard lock(failure_mu);
      if (!failure) failure = std::current_exception();
    }
  };
  const std::size_t workers = std::min<std::size_t>(static_cast<std::size_t>(std::max(threads, 1)), classifiers.size());
  if (workers <= 1) {
    for (std::size_t i = 0; i < classifiers.size(); ++i) run(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < workers; ++w) {
      pool.emplace_back([&, w] {
        for (std::size_t i = w; i < classifiers.size(); i += workers) run(i);
      });
    }
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return fuse_predictions(preds);
}

}  // namespace affect::ensemble
