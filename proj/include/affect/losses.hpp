#pragma once

#include "affect/types.hpp"

#include <span>
#include <vector>

namespace affect::losses {

inline constexpr double kProbEpsilon = 1e-7;
inline constexpr double kCccEpsilon = 1e-8;

struct LossValue {
  double value = 0.0;
  std::vector<double> gradient;  // one entry per prediction entry, row-major
};

/// Per-class weights of the weighted cross-entropy objectives. Strictly positive.
struct ClassWeights {
  std::vector<double> weights;

  static ClassWeights uniform(int classes);
  /// Inverse class frequency normalized to mean 1. Zero counts are treated as
  /// a count of one so the weight stays finite.
  static ClassWeights inverse_frequency(std::span<const double> counts);
  void validate(int classes) const;
};

/// Weighted binary cross-entropy over the 12 AUs, averaged over AUs.
/// Probabilities are clipped to [eps, 1 - eps]; the gradient is taken w.r.t.
/// the (clipped) probabilities.
LossValue au_bce_loss(std::span<const double> y_hat, std::span<const double> y,
                      const ClassWeights& w);

/// Weighted categorical cross-entropy over the 8 expressions, averaged over
/// classes: (1/8) W_c (-log z_hat_c) for the true class c.
LossValue expr_ce_loss(std::span<const double> z_hat, std::span<const double> z,
                       const ClassWeights& w);

/// Same objective as expr_ce_loss for any class count (used for CE).
LossValue categorical_ce_loss(std::span<const double> z_hat, std::span<const double> z,
                              const ClassWeights& w);

/// (1 - CCC(v_hat, v)) + (1 - CCC(a_hat, a)) over a batch of frames. pred and
/// label are n x 2 (valence, arousal). eps is added to each CCC denominator.
LossValue va_ccc_loss(const Matrix& pred, const Matrix& label);

/// 1 - CCC(pred, label) for one channel, with the smoothed denominator.
LossValue ccc_loss(std::span<const double> pred, std::span<const double> label);

// Logit-space forms used by training. Gradients are w.r.t. the logits.

/// au_bce_loss composed with a sigmoid. Entries whose label is -1 contribute
/// neither value nor gradient; the 1/12 normalization is kept.
LossValue au_bce_loss_logits(std::span<const double> logits, std::span<const double> y,
                             const ClassWeights& w);

/// categorical cross-entropy composed with a softmax, for target class index.
LossValue categorical_ce_loss_logits(std::span<const double> logits, int target,
                                     const ClassWeights& w);

/// Mean squared error over all entries.
LossValue mse_loss(std::span<const double> pred, std::span<const double> target);

}  // namespace affect::losses
