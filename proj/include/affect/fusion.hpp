#pragma once

#include "affect/losses.hpp"
#include "affect/types.hpp"

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

namespace affect::fusion {

/// Shape and regularization of the fusion encoder.
struct FusionConfig {
  Track track = Track::EXPR;
  int num_layers = 4;
  double dropout = 0.3;
  int d_model = 0;      // 0: take the feature dimension of the data
  int num_heads = 4;
  int ff_dim = 0;       // 0: 2 * d_model
  int clip_length = 100;
  int output_dim = 0;   // 0: class_count(track)
  std::uint64_t seed = 0;

  /// Fills the zero defaults from the feature dimension and track.
  FusionConfig resolved(int feature_dim) const;
  void validate() const;
};

/// One clip as a token block: k visual tokens (positional encoding already
/// added), then the audio token, then the text token when present.
struct ClipTensor {
  Matrix tokens;                     // (k + 1 + has_text) x d
  std::vector<std::uint8_t> valid;   // per token; padded frames are 0
  int k = 0;
  int real_frames = 0;
  int first_frame = 0;               // index of the clip's first frame in the video
  bool has_text = false;

  int token_count() const { return static_cast<int>(tokens.rows()); }
};

/// Sinusoidal position table, rows = positions.
Matrix sinusoidal_encoding(int positions, int d);

/// Cuts clip `clip_index` out of a video. A short final clip repeats its last
/// real frame and marks the repeats invalid.
ClipTensor build_clip_tokens(const FeatureBundle& bundle, int clip_index, const FusionConfig& cfg);

struct LayerParams {
  Matrix ln1_gamma, ln1_beta;                 // 1 x d
  Matrix wq, bq, wk, bk, wv, bv, wo, bo;      // d x d, 1 x d
  Matrix ln2_gamma, ln2_beta;                 // 1 x d
  Matrix w1, b1, w2, b2;                      // d x f, 1 x f, f x d, 1 x d
};

/// All trainable weights: the encoder stack, the modality type embeddings
/// for the audio/text tokens, and the fully connected head.
struct FusionParams {
  std::vector<LayerParams> layers;
  Matrix audio_type, text_type;   // 1 x d
  Matrix head_w, head_b;          // d x out, 1 x out

  /// Calls fn(name, matrix) for every tensor in a fixed order.
  template <typename Fn>
  void visit(Fn&& fn);
  template <typename Fn>
  void visit(Fn&& fn) const;

  std::size_t parameter_count() const;
  void set_zero();
  bool all_finite() const;
};

FusionParams init_params(const FusionConfig& cfg, std::uint64_t seed);
FusionParams zeros_like(const FusionParams& p);
/// Checks every tensor shape against cfg; throws InvalidInput on mismatch.
void check_shapes(const FusionParams& p, const FusionConfig& cfg);

/// Activations kept by forward() for backward().
class ForwardCache {
 public:
  bool empty() const { return layers_.empty() && input_.size() == 0; }
  void clear();

 private:
  friend Matrix forward(const ClipTensor&, const FusionParams&, const FusionConfig&, bool,
                        std::mt19937_64*, ForwardCache*);
  friend FusionParams backward(const ForwardCache&, const FusionParams&, const FusionConfig&,
                               const Matrix&);

  struct Layer {
    Matrix x_in, h1, ln1_xhat, ln1_rstd;
    Matrix q, k, v;
    std::vector<Matrix> attn;   // per head, T x T
    Matrix context, attn_out, attn_mask;
    Matrix x_mid, h2, ln2_xhat, ln2_rstd;
    Matrix ff_pre, ff_act, ff_out, ff_mask;
  };
  Matrix input_;
  std::vector<Layer> layers_;
  Matrix final_;
  std::vector<std::uint8_t> valid_;
  int k_ = 0;
  bool has_text_ = false;
};

/// Runs the encoder stack and head on one clip. Frame-wise tracks get k x out
/// (one row per visual token); clip-level tracks get 1 x out from the masked
/// mean of all token outputs. Dropout is only applied when train_mode is set,
/// drawing from rng. Throws std::runtime_error on non-finite activations.
Matrix forward(const ClipTensor& tokens, const FusionParams& params, const FusionConfig& cfg,
               bool train_mode, std::mt19937_64* rng = nullptr, ForwardCache* cache = nullptr);

/// Parameter gradients of sum(upstream .* forward output).
FusionParams backward(const ForwardCache& cache, const FusionParams& params, const FusionConfig& cfg,
                      const Matrix& upstream);

// ---------------------------------------------------------------------------
// Training

/// Decoupled weight decay Adam.
class AdamW {
 public:
  AdamW(double lr, double beta1, double beta2, double eps, double weight_decay);
  void step(FusionParams& params, const FusionParams& grads);
  double learning_rate() const { return lr_; }

 private:
  double lr_, beta1_, beta2_, eps_, weight_decay_;
  long t_ = 0;
  std::vector<Matrix> m_, v_;
};

struct TrainConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
  int epochs = 30;
  int batch_size = 8;
  std::uint64_t seed = 0;
  /// Empty means uniform.
  losses::ClassWeights class_weights;
};

/// A clip with its targets. Frame-wise tracks: k x label_width rows (padded
/// frames hold the invalid sentinel). Clip-level tracks: 1 x label_width.
struct TrainingSample {
  ClipTensor clip;
  Matrix target;
};

std::vector<TrainingSample> make_samples(const FeatureBundle& bundle, const LabelTrack& labels,
                                         const FusionConfig& cfg);

/// Task loss of a batch and its gradient w.r.t. each clip's raw output.
struct BatchLoss {
  double value = 0.0;
  std::vector<Matrix> output_grads;
  bool empty = true;  // no valid target in the batch
};

BatchLoss batch_loss(Track track, std::span<const Matrix> outputs,
                     std::span<const TrainingSample* const> samples, const losses::ClassWeights& weights);

struct TrainResult {
  FusionParams params;
  std::vector<double> loss_curve;  // mean batch loss per epoch
};

/// Trains from a fresh initialization seeded by cfg.seed. Throws
/// std::runtime_error when the loss turns non-finite.
TrainResult train(std::span<const TrainingSample> dataset, const FusionConfig& cfg, const TrainConfig& tcfg);

/// Same, continuing from the supplied parameters.
TrainResult train(std::span<const TrainingSample> dataset, const FusionConfig& cfg, const TrainConfig& tcfg,
                  FusionParams init);

/// Class counts of a training set in the shape the weight policy needs
/// (per class for EXPR/CE, positives per AU for AU).
std::vector<double> class_frequencies(Track track, std::span<const TrainingSample> dataset);

/// Raw head output of one clip in eval mode.
Matrix clip_output(const ClipTensor& clip, const FusionParams& params, const FusionConfig& cfg);

/// Full-video inference: sigmoid (AU) or softmax (EXPR/CE) probabilities, raw
/// values for VA/EMI. Padded frames are dropped.
PredictionTrack predict(const FeatureBundle& bundle, const FusionParams& params, const FusionConfig& cfg);

// ---------------------------------------------------------------------------

template <typename Fn>
void FusionParams::visit(Fn&& fn) {
  for (std::size_t i = 0; i < layers.size(); ++i) {
    auto& l = layers[i];
    const std::string p = "layer" + std::to_string(i) + ".";
    fn(p + "ln1_gamma", l.ln1_gamma);
    fn(p + "ln1_beta", l.ln1_beta);
    fn(p + "wq", l.wq);
    fn(p + "bq", l.bq);
    fn(p + "wk", l.wk);
    fn(p + "bk", l.bk);
    fn(p + "wv", l.wv);
    fn(p + "bv", l.bv);
    fn(p + "wo", l.wo);
    fn(p + "bo", l.bo);
    fn(p + "ln2_gamma", l.ln2_gamma);
    fn(p + "ln2_beta", l.ln2_beta);
    fn(p + "w1", l.w1);
    fn(p + "b1", l.b1);
    fn(p + "w2", l.w2);
    fn(p + "b2", l.b2);
  }
  fn(std::string("audio_type"), audio_type);
  fn(std::string("text_type"), text_type);
  fn(std::string("head_w"), head_w);
  fn(std::string("head_b"), head_b);
}

template <typename Fn>
void FusionParams::visit(Fn&& fn) const {
  const_cast<FusionParams*>(this)->visit(
      [&](const std::string& name, Matrix& m) { fn(name, static_cast<const Matrix&>(m)); });
}

}  // namespace affect::fusion
