#include "affect/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace affect::fusion {

namespace {

constexpr double kLayerNormEps = 1e-5;
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

std::string shape_str(Eigen::Index r, Eigen::Index c) {
  return std::to_string(r) + "x" + std::to_string(c);
}

}  // namespace

// ---------------------------------------------------------------------------
// Config and clip assembly

FusionConfig FusionConfig::resolved(int feature_dim) const {
  FusionConfig c = *this;
  if (c.d_model == 0) c.d_model = feature_dim;
  if (c.ff_dim == 0) c.ff_dim = 2 * c.d_model;
  if (c.output_dim == 0) c.output_dim = class_count(c.track);
  return c;
}

void FusionConfig::validate() const {
  if (d_model < 1) throw InvalidInput("FusionConfig: d_model must be >= 1");
  if (num_heads < 1 || d_model % num_heads != 0) {
    throw InvalidInput("FusionConfig: d_model " + std::to_string(d_model) +
                       " is not divisible by num_heads " + std::to_string(num_heads));
  }
  if (num_layers < 0) throw InvalidInput("FusionConfig: num_layers must be >= 0");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw InvalidInput("FusionConfig: dropout must be in [0,1)");
  if (clip_length < 1) throw InvalidInput("FusionConfig: clip length k must be >= 1");
  if (ff_dim < 1) throw InvalidInput("FusionConfig: ff_dim must be >= 1");
  if (output_dim != class_count(track)) {
    throw InvalidInput("FusionConfig: output_dim " + std::to_string(output_dim) + " does not match track " +
                       std::string(track_name(track)));
  }
}

Matrix sinusoidal_encoding(int positions, int d) {
  Matrix pe(positions, d);
  for (int pos = 0; pos < positions; ++pos) {
    for (int i = 0; i < d; ++i) {
      const double rate = std::pow(10000.0, -static_cast<double>(i - i % 2) / static_cast<double>(d));
      pe(pos, i) = (i % 2 == 0) ? std::sin(pos * rate) : std::cos(pos * rate);
    }
  }
  return pe;
}

ClipTensor build_clip_tokens(const FeatureBundle& bundle, int clip_index, const FusionConfig& cfg) {
  const int k = cfg.clip_length;
  const int d = bundle.dim();
  if (bundle.clip_length != k) {
    throw InvalidInput("build_clip_tokens: bundle '" + bundle.video_id + "' uses clip length " +
                       std::to_string(bundle.clip_length) + ", config uses " + std::to_string(k));
  }
  if (clip_index < 0 || clip_index >= bundle.clip_count()) {
    throw InvalidInput("build_clip_tokens: clip index " + std::to_string(clip_index) + " outside [0, " +
                       std::to_string(bundle.clip_count()) + ")");
  }
  if (bundle.audio.cols() != d || (bundle.text && bundle.text->cols() != d)) {
    throw InvalidInput("build_clip_tokens: feature dimension mismatch across modalities in '" +
                       bundle.video_id + "'");
  }
  if (cfg.d_model != 0 && cfg.d_model != d) {
    throw InvalidInput("build_clip_tokens: feature dimension " + std::to_string(d) +
                       " != d_model " + std::to_string(cfg.d_model));
  }

  ClipTensor clip;
  clip.k = k;
  clip.has_text = bundle.text.has_value();
  clip.first_frame = clip_index * k;
  clip.real_frames = std::min(k, bundle.frame_count() - clip.first_frame);
  const int tokens = k + 1 + (clip.has_text ? 1 : 0);
  clip.tokens.resize(tokens, d);
  clip.valid.assign(static_cast<std::size_t>(tokens), 1);

  const Matrix pe = sinusoidal_encoding(k, d);
  for (int i = 0; i < k; ++i) {
    const int src = clip.first_frame + std::min(i, clip.real_frames - 1);
    clip.tokens.row(i) = bundle.visual.row(src) + pe.row(i);
    if (i >= clip.real_frames) clip.valid[static_cast<std::size_t>(i)] = 0;
  }
  clip.tokens.row(k) = bundle.audio.row(clip_index);
  if (clip.has_text) clip.tokens.row(k + 1) = bundle.text->row(clip_index);
  return clip;
}

// ---------------------------------------------------------------------------
// Parameters

std::size_t FusionParams::parameter_count() const {
  std::size_t n = 0;
  visit([&](const std::string&, const Matrix& m) { n += static_cast<std::size_t>(m.size()); });
  return n;
}

void FusionParams::set_zero() {
  visit([](const std::string&, Matrix& m) { m.setZero(); });
}

bool FusionParams::all_finite() const {
  bool ok = true;
  visit([&](const std::string&, const Matrix& m) { ok = ok && m.allFinite(); });
  return ok;
}

FusionParams init_params(const FusionConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  const int d = cfg.d_model, f = cfg.ff_dim, out = cfg.output_dim;
  auto xavier = [&](int rows, int cols) {
    const double a = std::sqrt(6.0 / static_cast<double>(rows + cols));
    std::uniform_real_distribution<double> u(-a, a);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = u(rng);
    return m;
  };
  auto normal = [&](int rows, int cols, double sd) {
    std::normal_distribution<double> g(0.0, sd);
    Matrix m(rows, cols);
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = g(rng);
    return m;
  };

  FusionParams p;
  p.layers.resize(static_cast<std::size_t>(cfg.num_layers));
  for (auto& l : p.layers) {
    l.ln1_gamma = Matrix::Ones(1, d);
    l.ln1_beta = Matrix::Zero(1, d);
    l.wq = xavier(d, d);
    l.bq = Matrix::Zero(1, d);
    l.wk = xavier(d, d);
    l.bk = Matrix::Zero(1, d);
    l.wv = xavier(d, d);
    l.bv = Matrix::Zero(1, d);
    l.wo = xavier(d, d);
    l.bo = Matrix::Zero(1, d);
    l.ln2_gamma = Matrix::Ones(1, d);
    l.ln2_beta = Matrix::Zero(1, d);
    l.w1 = xavier(d, f);
    l.b1 = Matrix::Zero(1, f);
    l.w2 = xavier(f, d);
    l.b2 = Matrix::Zero(1, d);
  }
  p.audio_type = normal(1, d, 0.02);
  p.text_type = normal(1, d, 0.02);
  p.head_w = xavier(d, out);
  p.head_b = Matrix::Zero(1, out);
  return p;
}

FusionParams zeros_like(const FusionParams& p) {
  FusionParams z = p;
  z.set_zero();
  return z;
}

void check_shapes(const FusionParams& p, const FusionConfig& cfg) {
  if (static_cast<int>(p.layers.size()) != cfg.num_layers) {
    throw InvalidInput("fusion params have " + std::to_string(p.layers.size()) + " layers, config has " +
                       std::to_string(cfg.num_layers));
  }
  const int d = cfg.d_model, f = cfg.ff_dim, out = cfg.output_dim;
  const FusionParams* pp = &p;
  auto expect = [&](const std::string& name, const Matrix& m, int r, int c) {
    if (m.rows() != r || m.cols() != c) {
      throw InvalidInput("fusion param '" + name + "' has shape " + shape_str(m.rows(), m.cols()) +
                         ", expected " + shape_str(r, c));
    }
  };
  pp->visit([&](const std::string& name, const Matrix& m) {
    const auto dot = name.find('.');
    const std::string leaf = dot == std::string::npos ? name : name.substr(dot + 1);
    if (leaf == "wq" || leaf == "wk" || leaf == "wv" || leaf == "wo") expect(name, m, d, d);
    else if (leaf == "w1") expect(name, m, d, f);
    else if (leaf == "b1") expect(name, m, 1, f);
    else if (leaf == "w2") expect(name, m, f, d);
    else if (leaf == "head_w") expect(name, m, d, out);
    else if (leaf == "head_b") expect(name, m, 1, out);
    else expect(name, m, 1, d);
  });
}

// ---------------------------------------------------------------------------
// Forward / backward

namespace {

struct LayerNormOut {
  Matrix y, xhat, rstd;
};

LayerNormOut layer_norm(const Matrix& x, const Matrix& gamma, const Matrix& beta) {
  const Eigen::Index t = x.rows();
  LayerNormOut o;
  o.xhat.resize(x.rows(), x.cols());
  o.rstd.resize(t, 1);
  for (Eigen::Index r = 0; r < t; ++r) {
    const double mu = x.row(r).mean();
    const double var = (x.row(r).array() - mu).square().mean();
    const double rstd = 1.0 / std::sqrt(var + kLayerNormEps);
    o.rstd(r, 0) = rstd;
    o.xhat.row(r) = (x.row(r).array() - mu) * rstd;
  }
  o.y = (o.xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
  return o;
}

// Returns d(input); accumulates d(gamma), d(beta).
Matrix layer_norm_backward(const Matrix& dy, const Matrix& xhat, const Matrix& rstd, const Matrix& gamma,
                           Matrix& dgamma, Matrix& dbeta) {
  dgamma += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbeta += dy.colwise().sum();
  const Matrix dxhat = (dy.array().rowwise() * gamma.row(0).array()).matrix();
  Matrix dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const double m1 = dxhat.row(r).mean();
    const double m2 = (dxhat.row(r).array() * xhat.row(r).array()).mean();
    dx.row(r) = rstd(r, 0) * (dxhat.row(r).array() - m1 - xhat.row(r).array() * m2);
  }
  return dx;
}

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); }

double gelu_grad(double x) {
  return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) + x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
}

Matrix add_row(const Matrix& m, const Matrix& bias) { return m.rowwise() + bias.row(0); }

Matrix dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  Matrix m(rows, cols);
  for (Eigen::Index j = 0; j < cols; ++j)
    for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = keep(rng) ? scale : 0.0;
  return m;
}

int valid_count(const std::vector<std::uint8_t>& valid) {
  return static_cast<int>(std::count(valid.begin(), valid.end(), std::uint8_t{1}));
}

}  // namespace

void ForwardCache::clear() {
  input_.resize(0, 0);
  layers_.clear();
  final_.resize(0, 0);
  valid_.clear();
}

Matrix forward(const ClipTensor& clip, const FusionParams& params, const FusionConfig& cfg, bool train_mode,
               std::mt19937_64* rng, ForwardCache* cache) {
  check_shapes(params, cfg);
  if (clip.tokens.cols() != cfg.d_model) {
    throw InvalidInput("forward: token width " + std::to_string(clip.tokens.cols()) + " != d_model " +
                       std::to_string(cfg.d_model));
  }
  if (clip.k != clip.token_count() - 1 - (clip.has_text ? 1 : 0) ||
      static_cast<int>(clip.valid.size()) != clip.token_count()) {
    throw InvalidInput("forward: malformed clip tensor");
  }
  const bool use_dropout = train_mode && cfg.dropout > 0.0;
  if (use_dropout && rng == nullptr) throw InvalidInput("forward: train mode with dropout needs an rng");

  const Eigen::Index t = clip.token_count();
  const int d = cfg.d_model;
  const int heads = cfg.num_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  Matrix x = clip.tokens;
  x.row(clip.k) += params.audio_type.row(0);
  if (clip.has_text) x.row(clip.k + 1) += params.text_type.row(0);

  if (cache) {
    cache->clear();
    cache->input_ = x;
    cache->valid_ = clip.valid;
    cache->k_ = clip.k;
    cache->has_text_ = clip.has_text;
    cache->layers_.reserve(params.layers.size());
  }

  for (const auto& lp : params.layers) {
    ForwardCache::Layer lc;
    LayerNormOut n1 = layer_norm(x, lp.ln1_gamma, lp.ln1_beta);
    Matrix q = add_row(n1.y * lp.wq, lp.bq);
    Matrix k = add_row(n1.y * lp.wk, lp.bk);
    Matrix v = add_row(n1.y * lp.wv, lp.bv);
    Matrix context(t, d);
    std::vector<Matrix> attn(static_cast<std::size_t>(heads));
    for (int h = 0; h < heads; ++h) {
      const auto qh = q.middleCols(h * dh, dh);
      const auto kh = k.middleCols(h * dh, dh);
      Matrix s = (qh * kh.transpose()) * scale;
      Matrix a(t, t);
      for (Eigen::Index r = 0; r < t; ++r) {
        double mx = -std::numeric_limits<double>::infinity();
        for (Eigen::Index c = 0; c < t; ++c)
          if (clip.valid[static_cast<std::size_t>(c)]) mx = std::max(mx, s(r, c));
        double z = 0.0;
        for (Eigen::Index c = 0; c < t; ++c) {
          const double e = clip.valid[static_cast<std::size_t>(c)] ? std::exp(s(r, c) - mx) : 0.0;
          a(r, c) = e;
          z += e;
        }
        a.row(r) /= z;
      }
      context.middleCols(h * dh, dh) = a * v.middleCols(h * dh, dh);
      attn[static_cast<std::size_t>(h)] = std::move(a);
    }
    Matrix attn_out = add_row(context * lp.wo, lp.bo);
    Matrix mask1;
    Matrix x_mid;
    if (use_dropout) {
      mask1 = dropout_mask(t, d, cfg.dropout, *rng);
      x_mid = x + attn_out.cwiseProduct(mask1);
    } else {
      x_mid = x + attn_out;
    }

    LayerNormOut n2 = layer_norm(x_mid, lp.ln2_gamma, lp.ln2_beta);
    Matrix ff_pre = add_row(n2.y * lp.w1, lp.b1);
    Matrix ff_act = ff_pre.unaryExpr([](double z) { return gelu(z); });
    Matrix ff_out = add_row(ff_act * lp.w2, lp.b2);
    Matrix mask2;
    Matrix x_out;
    if (use_dropout) {
      mask2 = dropout_mask(t, d, cfg.dropout, *rng);
      x_out = x_mid + ff_out.cwiseProduct(mask2);
    } else {
      x_out = x_mid + ff_out;
    }

    if (cache) {
      lc.x_in = std::move(x);
      lc.h1 = std::move(n1.y);
      lc.ln1_xhat = std::move(n1.xhat);
      lc.ln1_rstd = std::move(n1.rstd);
      lc.q = std::move(q);
      lc.k = std::move(k);
      lc.v = std::move(v);
      lc.attn = std::move(attn);
      lc.context = std::move(context);
      lc.attn_mask = std::move(mask1);
      lc.x_mid = x_mid;
      lc.h2 = std::move(n2.y);
      lc.ln2_xhat = std::move(n2.xhat);
      lc.ln2_rstd = std::move(n2.rstd);
      lc.ff_pre = std::move(ff_pre);
      lc.ff_act = std::move(ff_act);
      lc.ff_mask = std::move(mask2);
      cache->layers_.push_back(std::move(lc));
    }
    x = std::move(x_out);
  }

  Matrix out;
  if (is_framewise(cfg.track)) {
    out = add_row(x.topRows(clip.k) * params.head_w, params.head_b);
  } else {
    Matrix pooled = Matrix::Zero(1, d);
    for (Eigen::Index r = 0; r < t; ++r)
      if (clip.valid[static_cast<std::size_t>(r)]) pooled += x.row(r);
    pooled /= static_cast<double>(valid_count(clip.valid));
    out = pooled * params.head_w + params.head_b;
  }
  if (!out.allFinite()) throw std::runtime_error("forward: non-finite activation (training diverged?)");
  if (cache) cache->final_ = std::move(x);
  return out;
}

FusionParams backward(const ForwardCache& cache, const FusionParams& params, const FusionConfig& cfg,
                      const Matrix& upstream) {
  if (cache.empty()) throw std::logic_error("backward: no forward cache (run forward with a cache first)");
  check_shapes(params, cfg);
  if (cache.layers_.size() != params.layers.size()) throw std::logic_error("backward: stale forward cache");

  const Matrix& xf = cache.final_;
  const Eigen::Index t = xf.rows();
  const int d = cfg.d_model;
  const int heads = cfg.num_heads;
  const int dh = d / heads;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  FusionParams g = zeros_like(params);
  Matrix dx = Matrix::Zero(t, d);

  if (is_framewise(cfg.track)) {
    if (upstream.rows() != cache.k_ || upstream.cols() != cfg.output_dim) {
      throw InvalidInput("backward: upstream gradient shape " + shape_str(upstream.rows(), upstream.cols()) +
                         " does not match the output");
    }
    g.head_w = xf.topRows(cache.k_).transpose() * upstream;
    g.head_b = upstream.colwise().sum();
    dx.topRows(cache.k_) = upstream * params.head_w.transpose();
  } else {
    if (upstream.rows() != 1 || upstream.cols() != cfg.output_dim) {
      throw InvalidInput("backward: upstream gradient shape " + shape_str(upstream.rows(), upstream.cols()) +
                         " does not match the output");
    }
    const double n = static_cast<double>(valid_count(cache.valid_));
    Matrix pooled = Matrix::Zero(1, d);
    for (Eigen::Index r = 0; r < t; ++r)
      if (cache.valid_[static_cast<std::size_t>(r)]) pooled += xf.row(r);
    pooled /= n;
    g.head_w = pooled.transpose() * upstream;
    g.head_b = upstream;
    const Matrix dpooled = upstream * params.head_w.transpose() / n;
    for (Eigen::Index r = 0; r < t; ++r)
      if (cache.valid_[static_cast<std::size_t>(r)]) dx.row(r) = dpooled;
  }

  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& lp = params.layers[li];
    const auto& lc = cache.layers_[li];
    auto& lg = g.layers[li];

    // x_out = x_mid + ff_out * mask2
    Matrix dff_out = lc.ff_mask.size() ? Matrix(dx.cwiseProduct(lc.ff_mask)) : dx;
    lg.w2 += lc.ff_act.transpose() * dff_out;
    lg.b2 += dff_out.colwise().sum();
    Matrix dff_pre = dff_out * lp.w2.transpose();
    dff_pre = dff_pre.cwiseProduct(lc.ff_pre.unaryExpr([](double z) { return gelu_grad(z); }));
    lg.w1 += lc.h2.transpose() * dff_pre;
    lg.b1 += dff_pre.colwise().sum();
    const Matrix dh2 = dff_pre * lp.w1.transpose();
    Matrix dx_mid = dx + layer_norm_backward(dh2, lc.ln2_xhat, lc.ln2_rstd, lp.ln2_gamma, lg.ln2_gamma, lg.ln2_beta);

    // x_mid = x_in + attn_out * mask1
    Matrix dattn = lc.attn_mask.size() ? Matrix(dx_mid.cwiseProduct(lc.attn_mask)) : dx_mid;
    lg.wo += lc.context.transpose() * dattn;
    lg.bo += dattn.colwise().sum();
    const Matrix dcontext = dattn * lp.wo.transpose();
    Matrix dq(t, d), dk(t, d), dv(t, d);
    for (int h = 0; h < heads; ++h) {
      const Matrix& a = lc.attn[static_cast<std::size_t>(h)];
      const auto dch = dcontext.middleCols(h * dh, dh);
      const Matrix da = dch * lc.v.middleCols(h * dh, dh).transpose();
      dv.middleCols(h * dh, dh) = a.transpose() * dch;
      const Eigen::VectorXd rowdot = (da.array() * a.array()).rowwise().sum();
      const Matrix ds = (a.array() * (da.colwise() - rowdot).array()).matrix();
      dq.middleCols(h * dh, dh) = ds * lc.k.middleCols(h * dh, dh) * scale;
      dk.middleCols(h * dh, dh) = ds.transpose() * lc.q.middleCols(h * dh, dh) * scale;
    }
    lg.wq += lc.h1.transpose() * dq;
    lg.bq += dq.colwise().sum();
    lg.wk += lc.h1.transpose() * dk;
    lg.bk += dk.colwise().sum();
    lg.wv += lc.h1.transpose() * dv;
    lg.bv += dv.colwise().sum();
    const Matrix dh1 = dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
    dx = dx_mid + layer_norm_backward(dh1, lc.ln1_xhat, lc.ln1_rstd, lp.ln1_gamma, lg.ln1_gamma, lg.ln1_beta);
  }

  g.audio_type = dx.row(cache.k_);
  if (cache.has_text_) g.text_type = dx.row(cache.k_ + 1);
  return g;
}

// ---------------------------------------------------------------------------
// Optimizer

AdamW::AdamW(double lr, double beta1, double beta2, double eps, double weight_decay)
    : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps), weight_decay_(weight_decay) {
  if (!(lr >= 0.0)) throw InvalidInput("AdamW: learning rate must be >= 0");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
    throw InvalidInput("AdamW: betas must lie in [0,1)");
  }
  if (!(eps > 0.0)) throw InvalidInput("AdamW: eps must be > 0");
  if (!(weight_decay >= 0.0)) throw InvalidInput("AdamW: weight decay must be >= 0");
}

void AdamW::step(FusionParams& params, const FusionParams& grads) {
  std::vector<const Matrix*> gs;
  grads.visit([&](const std::string&, const Matrix& m) { gs.push_back(&m); });
  if (m_.empty()) {
    for (const Matrix* gm : gs) {
      m_.push_back(Matrix::Zero(gm->rows(), gm->cols()));
      v_.push_back(Matrix::Zero(gm->rows(), gm->cols()));
    }
  }
  ++t_;
  const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  std::size_t i = 0;
  params.visit([&](const std::string& name, Matrix& p) {
    const Matrix& gm = *gs.at(i);
    if (gm.rows() != p.rows() || gm.cols() != p.cols()) {
      throw InvalidInput("AdamW: gradient shape mismatch for '" + name + "'");
    }
    Matrix& m = m_[i];
    Matrix& v = v_[i];
    m = beta1_ * m + (1.0 - beta1_) * gm;
    v = beta2_ * v + (1.0 - beta2_) * gm.cwiseProduct(gm);
    const Matrix update =
        (m.array() / bc1) / ((v.array() / bc2).sqrt() + eps_) + weight_decay_ * p.array();
    p -= lr_ * update;
    ++i;
  });
}

// ---------------------------------------------------------------------------
// Training

std::vector<TrainingSample> make_samples(const FeatureBundle& bundle, const LabelTrack& labels,
                                         const FusionConfig& cfg) {
  const Track track = cfg.track;
  if (labels.track != track) throw InvalidInput("make_samples: label track does not match config");
  const int expected_rows = is_framewise(track) ? bundle.frame_count() : bundle.clip_count();
  if (labels.rows() != expected_rows) {
    throw InvalidInput("make_samples: '" + bundle.video_id + "' has " + std::to_string(labels.rows()) +
                       " label rows, expected " + std::to_string(expected_rows));
  }
  const int width = label_width(track);
  const double pad = track == Track::VA ? kVaInvalid : static_cast<double>(kLabelInvalid);
  std::vector<TrainingSample> out;
  out.reserve(static_cast<std::size_t>(bundle.clip_count()));
  for (int c = 0; c < bundle.clip_count(); ++c) {
    TrainingSample s;
    s.clip = build_clip_tokens(bundle, c, cfg);
    if (is_framewise(track)) {
      s.target = Matrix::Constant(s.clip.k, width, pad);
      s.target.topRows(s.clip.real_frames) = labels.values.middleRows(s.clip.first_frame, s.clip.real_frames);
    } else {
      s.target = labels.values.row(c);
    }
    out.push_back(std::move(s));
  }
  return out;
}

BatchLoss batch_loss(Track track, std::span<const Matrix> outputs, std::span<const TrainingSample* const> samples,
                     const losses::ClassWeights& weights) {
  if (outputs.size() != samples.size()) throw InvalidInput("batch_loss: outputs/samples size mismatch");
  BatchLoss bl;
  bl.output_grads.reserve(outputs.size());
  for (const Matrix& o : outputs) bl.output_grads.push_back(Matrix::Zero(o.rows(), o.cols()));

  auto row_of = [](const Matrix& m, Eigen::Index r) {
    std::vector<double> v(static_cast<std::size_t>(m.cols()));
    for (Eigen::Index c = 0; c < m.cols(); ++c) v[static_cast<std::size_t>(c)] = m(r, c);
    return v;
  };

  switch (track) {
    case Track::AU:
    case Track::EXPR:
    case Track::CE: {
      std::size_t count = 0;
      for (const auto* s : samples)
        for (Eigen::Index r = 0; r < s->target.rows(); ++r) {
          if (track == Track::AU ? (s->target.row(r).array() != kLabelInvalid).any()
                                 : s->target(r, 0) != kLabelInvalid)
            ++count;
        }
      if (count == 0) return bl;
      const double inv = 1.0 / static_cast<double>(count);
      for (std::size_t i = 0; i < samples.size(); ++i) {
        const Matrix& tgt = samples[i]->target;
        for (Eigen::Index r = 0; r < tgt.rows(); ++r) {
          const std::vector<double> logits = row_of(outputs[i], r);
          losses::LossValue lv;
          if (track == Track::AU) {
            if (!(tgt.row(r).array() != kLabelInvalid).any()) continue;
            const std::vector<double> y = row_of(tgt, r);
            lv = losses::au_bce_loss_logits(logits, y, weights);
          } else {
            if (tgt(r, 0) == kLabelInvalid) continue;
            lv = losses::categorical_ce_loss_logits(logits, static_cast<int>(tgt(r, 0)), weights);
          }
          bl.value += lv.value * inv;
          for (std::size_t c = 0; c < lv.gradient.size(); ++c)
            bl.output_grads[i](r, static_cast<Eigen::Index>(c)) = lv.gradient[c] * inv;
        }
      }
      bl.empty = false;
      return bl;
    }
    case Track::VA: {
      std::vector<std::pair<std::size_t, Eigen::Index>> where;
      for (std::size_t i = 0; i < samples.size(); ++i)
        for (Eigen::Index r = 0; r < samples[i]->target.rows(); ++r)
          if (samples[i]->target(r, 0) != kVaInvalid && samples[i]->target(r, 1) != kVaInvalid)
            where.emplace_back(i, r);
      if (where.size() < 2) return bl;
      Matrix pred(static_cast<Eigen::Index>(where.size()), 2), label(static_cast<Eigen::Index>(where.size()), 2);
      for (std::size_t n = 0; n < where.size(); ++n) {
        const auto [i, r] = where[n];
        pred.row(static_cast<Eigen::Index>(n)) = outputs[i].row(r);
        label.row(static_cast<Eigen::Index>(n)) = samples[i]->target.row(r);
      }
      const losses::LossValue lv = losses::va_ccc_loss(pred, label);
      bl.value = lv.value;
      for (std::size_t n = 0; n < where.size(); ++n) {
        const auto [i, r] = where[n];
        bl.output_grads[i](r, 0) = lv.gradient[2 * n];
        bl.output_grads[i](r, 1) = lv.gradient[2 * n + 1];
      }
      bl.empty = false;
      return bl;
    }
    case Track::EMI: {
      std::vector<double> pred, target;
      for (std::size_t i = 0; i < samples.size(); ++i)
        for (Eigen::Index c = 0; c < outputs[i].cols(); ++c) {
          pred.push_back(outputs[i](0, c));
          target.push_back(samples[i]->target(0, c));
        }
      const losses::LossValue lv = losses::mse_loss(pred, target);
      bl.value = lv.value;
      std::size_t n = 0;
      for (std::size_t i = 0; i < samples.size(); ++i)
        for (Eigen::Index c = 0; c < outputs[i].cols(); ++c) bl.output_grads[i](0, c) = lv.gradient[n++];
      bl.empty = false;
      return bl;
    }
  }
  return bl;
}

std::vector<double> class_frequencies(Track track, std::span<const TrainingSample> dataset) {
  if (is_regression(track)) return {};
  std::vector<double> counts(static_cast<std::size_t>(class_count(track)), 0.0);
  for (const auto& s : dataset) {
    for (Eigen::Index r = 0; r < s.target.rows(); ++r) {
      if (track == Track::AU) {
        for (Eigen::Index c = 0; c < s.target.cols(); ++c)
          if (s.target(r, c) == 1.0) counts[static_cast<std::size_t>(c)] += 1.0;
      } else if (s.target(r, 0) != kLabelInvalid) {
        counts[static_cast<std::size_t>(s.target(r, 0))] += 1.0;
      }
    }
  }
  return counts;
}

TrainResult train(std::span<const TrainingSample> dataset, const FusionConfig& cfg, const TrainConfig& tcfg) {
  return train(dataset, cfg, tcfg, init_params(cfg, cfg.seed));
}

TrainResult train(std::span<const TrainingSample> dataset, const FusionConfig& cfg, const TrainConfig& tcfg,
                  FusionParams init) {
  if (dataset.empty()) throw InvalidInput("train: empty training set");
  cfg.validate();
  check_shapes(init, cfg);
  if (tcfg.epochs < 0) throw InvalidInput("train: epochs must be >= 0");
  if (tcfg.batch_size < 1) throw InvalidInput("train: batch size must be >= 1");
  const losses::ClassWeights weights = tcfg.class_weights.weights.empty()
                                           ? losses::ClassWeights::uniform(cfg.output_dim)
                                           : tcfg.class_weights;
  if (!is_regression(cfg.track)) weights.validate(cfg.output_dim);

  TrainResult result{std::move(init), {}};
  AdamW opt(tcfg.learning_rate, tcfg.beta1, tcfg.beta2, tcfg.eps, tcfg.weight_decay);
  std::mt19937_64 rng(tcfg.seed);
  std::vector<std::size_t> order(dataset.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  const auto batch = static_cast<std::size_t>(tcfg.batch_size);

  std::vector<ForwardCache> caches(batch);
  std::vector<Matrix> outputs;
  std::vector<const TrainingSample*> members;
  for (int epoch = 0; epoch < tcfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0.0;
    int batches = 0;
    for (std::size_t start = 0; start < order.size(); start += batch) {
      const std::size_t stop = std::min(order.size(), start + batch);
      outputs.clear();
      members.clear();
      for (std::size_t j = start; j < stop; ++j) {
        const TrainingSample& s = dataset[order[j]];
        members.push_back(&s);
        outputs.push_back(forward(s.clip, result.params, cfg, true, &rng, &caches[j - start]));
      }
      const BatchLoss bl = batch_loss(cfg.track, outputs, members, weights);
      if (bl.empty) continue;
      if (!std::isfinite(bl.value)) {
        throw std::runtime_error("train: non-finite loss at epoch " + std::to_string(epoch + 1) +
                                 ", batch " + std::to_string(batches + 1));
      }
      FusionParams grads = backward(caches[0], result.params, cfg, bl.output_grads[0]);
      for (std::size_t j = 1; j < members.size(); ++j) {
        const FusionParams gj = backward(caches[j], result.params, cfg, bl.output_grads[j]);
        std::vector<const Matrix*> src;
        gj.visit([&](const std::string&, const Matrix& m) { src.push_back(&m); });
        std::size_t n = 0;
        grads.visit([&](const std::string&, Matrix& m) { m += *src[n++]; });
      }
      opt.step(result.params, grads);
      total += bl.value;
      ++batches;
    }
    result.loss_curve.push_back(batches ? total / batches : 0.0);
    if (!result.params.all_finite()) {
      throw std::runtime_error("train: parameters diverged at epoch " + std::to_string(epoch + 1));
    }
  }
  return result;
}

// ---------------------------------------------------------------------------
// Inference

Matrix clip_output(const ClipTensor& clip, const FusionParams& params, const FusionConfig& cfg) {
  return forward(clip, params, cfg, false);
}

PredictionTrack predict(const FeatureBundle& bundle, const FusionParams& params, const FusionConfig& cfg) {
  bundle.validate();
  if (bundle.dim() != cfg.d_model) {
    throw InvalidInput("predict: bundle '" + bundle.video_id + "' has feature dimension " +
                       std::to_string(bundle.dim()) + ", model expects " + std::to_string(cfg.d_model));
  }
  const Track track = cfg.track;
  const int rows = is_framewise(track) ? bundle.frame_count() : bundle.clip_count();
  Matrix scores(rows, cfg.output_dim);
  for (int c = 0; c < bundle.clip_count(); ++c) {
    const ClipTensor clip = build_clip_tokens(bundle, c, cfg);
    Matrix out = clip_output(clip, params, cfg);
    if (track == Track::AU) {
      out = out.unaryExpr([](double z) { return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z)); });
    } else if (track == Track::EXPR || track == Track::CE) {
      for (Eigen::Index r = 0; r < out.rows(); ++r) {
        const double mx = out.row(r).maxCoeff();
        out.row(r) = (out.row(r).array() - mx).exp().matrix();
        out.row(r) /= out.row(r).sum();
      }
    }
    if (is_framewise(track)) {
      scores.middleRows(clip.first_frame, clip.real_frames) = out.topRows(clip.real_frames);
    } else {
      scores.row(c) = out.row(0);
    }
  }
  return make_prediction(track, bundle.video_id, std::move(scores));
}

}  // namespace affect::fusion
