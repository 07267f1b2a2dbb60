#include "affect/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

namespace affect::losses {

ClassWeights ClassWeights::uniform(int classes) {
  if (classes < 1) throw InvalidInput("ClassWeights: class count must be >= 1");
  return {std::vector<double>(static_cast<std::size_t>(classes), 1.0)};
}

ClassWeights ClassWeights::inverse_frequency(std::span<const double> counts) {
  if (counts.empty()) throw InvalidInput("ClassWeights: no class counts");
  std::vector<double> w;
  w.reserve(counts.size());
  for (double c : counts) {
    if (!(c >= 0.0)) throw InvalidInput("ClassWeights: negative class count");
    w.push_back(1.0 / std::max(c, 1.0));
  }
  const double mean = std::accumulate(w.begin(), w.end(), 0.0) / static_cast<double>(w.size());
  for (double& x : w) x /= mean;
  return {std::move(w)};
}

void ClassWeights::validate(int classes) const {
  if (static_cast<int>(weights.size()) != classes) {
    throw InvalidInput("ClassWeights: expected " + std::to_string(classes) + " weights, got " +
                       std::to_string(weights.size()));
  }
  for (double x : weights) {
    if (!(x > 0.0) || !std::isfinite(x)) throw InvalidInput("ClassWeights: weights must be > 0");
  }
}

namespace {

void require_size(std::span<const double> v, std::size_t n, const char* who, const char* what) {
  if (v.size() != n) {
    throw InvalidInput(std::string(who) + ": " + what + " has length " + std::to_string(v.size()) +
                       ", expected " + std::to_string(n));
  }
}

// log(1 + exp(x)) without overflow.
double softplus(double x) { return x > 0.0 ? x + std::log1p(std::exp(-x)) : std::log1p(std::exp(x)); }

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

}  // namespace

LossValue au_bce_loss(std::span<const double> y_hat, std::span<const double> y, const ClassWeights& w) {
  constexpr std::size_t n = 12;
  require_size(y_hat, n, "au_bce_loss", "prediction");
  require_size(y, n, "au_bce_loss", "label");
  w.validate(static_cast<int>(n));
  LossValue out;
  out.gradient.resize(n);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (y[j] != 0.0 && y[j] != 1.0) throw InvalidInput("au_bce_loss: labels must be 0 or 1");
    const double p = std::clamp(y_hat[j], kProbEpsilon, 1.0 - kProbEpsilon);
    out.value -= scale * w.weights[j] * (y[j] * std::log(p) + (1.0 - y[j]) * std::log(1.0 - p));
    out.gradient[j] = scale * w.weights[j] * (p - y[j]) / (p * (1.0 - p));
  }
  return out;
}

LossValue categorical_ce_loss(std::span<const double> z_hat, std::span<const double> z,
                              const ClassWeights& w) {
  const std::size_t n = w.weights.size();
  w.validate(static_cast<int>(n));
  require_size(z_hat, n, "categorical_ce_loss", "prediction");
  require_size(z, n, "categorical_ce_loss", "label");
  double ones = 0.0;
  for (double v : z) {
    if (v != 0.0 && v != 1.0) throw InvalidInput("categorical_ce_loss: label is not one-hot");
    ones += v;
  }
  if (ones != 1.0) throw InvalidInput("categorical_ce_loss: label is not one-hot");
  double total = 0.0;
  for (double v : z_hat) {
    if (!(v >= 0.0 && v <= 1.0)) throw InvalidInput("categorical_ce_loss: probability outside [0,1]");
    total += v;
  }
  if (std::abs(total - 1.0) > 1e-6) {
    throw InvalidInput("categorical_ce_loss: probabilities sum to " + std::to_string(total));
  }
  LossValue out;
  out.gradient.assign(n, 0.0);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (z[j] == 0.0) continue;
    const double p = std::clamp(z_hat[j], kProbEpsilon, 1.0);
    out.value -= scale * w.weights[j] * std::log(p);
    out.gradient[j] = -scale * w.weights[j] / p;
  }
  return out;
}

LossValue expr_ce_loss(std::span<const double> z_hat, std::span<const double> z, const ClassWeights& w) {
  if (w.weights.size() != 8) throw InvalidInput("expr_ce_loss: expected 8 class weights");
  return categorical_ce_loss(z_hat, z, w);
}

LossValue ccc_loss(std::span<const double> pred, std::span<const double> label) {
  if (pred.size() != label.size()) throw InvalidInput("ccc_loss: length mismatch");
  if (pred.size() < 2) throw InvalidInput("ccc_loss: need at least 2 frames");
  const std::size_t n = pred.size();
  const double inv_n = 1.0 / static_cast<double>(n);
  const double mx = std::accumulate(pred.begin(), pred.end(), 0.0) * inv_n;
  const double my = std::accumulate(label.begin(), label.end(), 0.0) * inv_n;
  double vx = 0.0, vy = 0.0, sxy = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    const double dx = pred[i] - mx, dy = label[i] - my;
    vx += dx * dx;
    vy += dy * dy;
    sxy += dx * dy;
  }
  vx *= inv_n;
  vy *= inv_n;
  sxy *= inv_n;
  const double gap = mx - my;
  const double num = 2.0 * sxy;
  const double den = vx + vy + gap * gap + kCccEpsilon;

  LossValue out;
  out.value = 1.0 - num / den;
  out.gradient.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d_num = 2.0 * (label[i] - my) * inv_n;
    const double d_den = 2.0 * (pred[i] - mx) * inv_n + 2.0 * gap * inv_n;
    out.gradient[i] = -(d_num * den - num * d_den) / (den * den);
  }
  return out;
}

LossValue va_ccc_loss(const Matrix& pred, const Matrix& label) {
  if (pred.cols() != 2 || label.cols() != 2) throw InvalidInput("va_ccc_loss: expected n x 2 inputs");
  if (pred.rows() != label.rows()) throw InvalidInput("va_ccc_loss: length mismatch");
  if (pred.rows() < 2) throw InvalidInput("va_ccc_loss: need at least 2 frames");
  const auto n = static_cast<std::size_t>(pred.rows());
  LossValue out;
  out.gradient.assign(2 * n, 0.0);
  for (int c = 0; c < 2; ++c) {
    const Vector p = pred.col(c);
    const Vector l = label.col(c);
    LossValue part = ccc_loss(std::span(p.data(), n), std::span(l.data(), n));
    out.value += part.value;
    for (std::size_t i = 0; i < n; ++i) out.gradient[2 * i + static_cast<std::size_t>(c)] = part.gradient[i];
  }
  return out;
}

LossValue au_bce_loss_logits(std::span<const double> logits, std::span<const double> y,
                             const ClassWeights& w) {
  const std::size_t n = logits.size();
  require_size(y, n, "au_bce_loss_logits", "label");
  w.validate(static_cast<int>(n));
  LossValue out;
  out.gradient.assign(n, 0.0);
  const double scale = 1.0 / static_cast<double>(n);
  for (std::size_t j = 0; j < n; ++j) {
    if (y[j] == static_cast<double>(kLabelInvalid)) continue;
    // -log p = softplus(-l), -log(1-p) = softplus(l)
    out.value += scale * w.weights[j] * (y[j] * softplus(-logits[j]) + (1.0 - y[j]) * softplus(logits[j]));
    out.gradient[j] = scale * w.weights[j] * (sigmoid(logits[j]) - y[j]);
  }
  return out;
}

LossValue categorical_ce_loss_logits(std::span<const double> logits, int target, const ClassWeights& w) {
  const std::size_t n = logits.size();
  w.validate(static_cast<int>(n));
  if (target < 0 || static_cast<std::size_t>(target) >= n) {
    throw InvalidInput("categorical_ce_loss_logits: target out of range");
  }
  const double mx = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  for (double l : logits) z += std::exp(l - mx);
  const double log_z = mx + std::log(z);
  const double scale = w.weights[static_cast<std::size_t>(target)] / static_cast<double>(n);
  LossValue out;
  out.value = scale * (log_z - logits[static_cast<std::size_t>(target)]);
  out.gradient.resize(n);
  for (std::size_t k = 0; k < n; ++k) {
    out.gradient[k] = scale * (std::exp(logits[k] - log_z) - (static_cast<int>(k) == target ? 1.0 : 0.0));
  }
  return out;
}

LossValue mse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size() || pred.empty()) throw InvalidInput("mse_loss: bad lengths");
  const double inv_n = 1.0 / static_cast<double>(pred.size());
  LossValue out;
  out.gradient.resize(pred.size());
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    out.value += d * d * inv_n;
    out.gradient[i] = 2.0 * d * inv_n;
  }
  return out;
}

}  // namespace affect::losses
