#include "gem/model.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "json.hpp"

namespace gem {

namespace {

constexpr double kLnEps = 1e-5;
constexpr double kInitStd = 0.02;
const double kLambdaInit = std::log(20.0);
const double kLambdaMax = std::log(100.0);

template <class Real>
void fill_normal(Mat<Real>& mat, double stddev, Rng& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Real* p = mat.data();
  for (Eigen::Index i = 0; i < mat.size(); ++i) p[i] = static_cast<Real>(dist(rng));
}

template <class Real>
Real gelu_scalar(Real z) {
  return Real(0.5) * z * (Real(1) + std::erf(z * Real(M_SQRT1_2)));
}

template <class Real>
Real gelu_grad_scalar(Real z) {
  const Real phi = std::exp(Real(-0.5) * z * z) * Real(0.3989422804014327);
  const Real Phi = Real(0.5) * (Real(1) + std::erf(z * Real(M_SQRT1_2)));
  return Phi + z * phi;
}

// Row-wise layer norm; xhat and rstd are stored for the backward pass.
template <class Real>
void layer_norm_fwd(const Mat<Real>& x, const Mat<Real>& g, const Mat<Real>& b,
                    Mat<Real>& y, Mat<Real>& xhat, Mat<Real>& rstd) {
  const Eigen::Index T = x.rows(), d = x.cols();
  y.resize(T, d);
  xhat.resize(T, d);
  rstd.resize(T, 1);
  for (Eigen::Index i = 0; i < T; ++i) {
    const Real mu = x.row(i).mean();
    const Real var = (x.row(i).array() - mu).square().mean();
    const Real r = Real(1) / std::sqrt(var + Real(kLnEps));
    rstd(i, 0) = r;
    xhat.row(i) = ((x.row(i).array() - mu) * r).matrix();
    y.row(i) = xhat.row(i).cwiseProduct(g.row(0)) + b.row(0);
  }
}

template <class Real>
void layer_norm_bwd(const Mat<Real>& dy, const Mat<Real>& xhat,
                    const Mat<Real>& rstd, const Mat<Real>& g, Mat<Real>& dx,
                    Mat<Real>& dg, Mat<Real>& db) {
  const Eigen::Index T = dy.rows(), d = dy.cols();
  dx.resize(T, d);
  for (Eigen::Index i = 0; i < T; ++i) {
    dg += dy.row(i).cwiseProduct(xhat.row(i));
    db += dy.row(i);
    Mat<Real> dxh = dy.row(i).cwiseProduct(g.row(0));
    const Real m1 = dxh.row(0).mean();
    const Real m2 = dxh.row(0).cwiseProduct(xhat.row(i)).mean();
    dx.row(i) =
        (((dxh.row(0).array() - m1) - xhat.row(i).array() * m2) * rstd(i, 0))
            .matrix();
  }
}

// Inverted dropout; mask entries are 0 or 1/(1-rate).
template <class Real>
Mat<Real> draw_dropout_mask(Eigen::Index rows, Eigen::Index cols, double rate,
                            Rng& rng) {
  Mat<Real> mask(rows, cols);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  const Real scale = Real(1.0 / (1.0 - rate));
  Real* p = mask.data();
  for (Eigen::Index i = 0; i < mask.size(); ++i) {
    p[i] = unif(rng) < rate ? Real(0) : scale;
  }
  return mask;
}

template <class Real>
void masked_softmax_rows(Mat<Real>& scores, const AttentionMask& mask,
                         Mat<Real>& probs) {
  const Eigen::Index T = scores.rows();
  probs.resize(T, scores.cols());
  for (Eigen::Index i = 0; i < T; ++i) {
    Real maxv = -std::numeric_limits<Real>::infinity();
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (mask.allowed(static_cast<int>(i), static_cast<int>(j))) {
        maxv = std::max(maxv, scores(i, j));
      }
    }
    if (!std::isfinite(maxv)) {
      throw std::runtime_error("attention row without any allowed key");
    }
    Real denom = 0;
    for (Eigen::Index j = 0; j < scores.cols(); ++j) {
      if (mask.allowed(static_cast<int>(i), static_cast<int>(j))) {
        const Real e = std::exp(scores(i, j) - maxv);
        probs(i, j) = e;
        denom += e;
      } else {
        probs(i, j) = 0;
      }
    }
    probs.row(i) /= denom;
  }
}

template <class Real>
int argmax_row(const Mat<Real>& row) {
  int best = 0;
  Real bestv = row(0, 0);
  for (Eigen::Index j = 1; j < row.cols(); ++j) {
    if (row(0, j) > bestv) {
      bestv = row(0, j);
      best = static_cast<int>(j);
    }
  }
  return best;
}

template <class Real>
int sample_row(const Mat<Real>& logits, Rng& rng) {
  const Eigen::Index V = logits.cols();
  const Real maxv = logits.row(0).maxCoeff();
  Mat<Real> p(1, V);
  Real denom = 0;
  for (Eigen::Index j = 0; j < V; ++j) {
    p(0, j) = std::exp(logits(0, j) - maxv);
    denom += p(0, j);
  }
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Real u = static_cast<Real>(unif(rng)) * denom;
  Real acc = 0;
  for (Eigen::Index j = 0; j < V; ++j) {
    acc += p(0, j);
    if (u <= acc) return static_cast<int>(j);
  }
  return static_cast<int>(V - 1);
}

}  // namespace

void ModelConfig::validate() const {
  if (n_layers < 1 || n_heads < 1 || d_model < 1 || d_ff < 1 ||
      max_positions < 1) {
    throw std::invalid_argument("model dimensions must be positive");
  }
  if (vocab_size < kNumReserved + 1) {
    throw std::invalid_argument("vocab_size must cover the reserved tokens");
  }
  if (d_model % n_heads != 0) {
    throw std::invalid_argument("d_model must be divisible by n_heads");
  }
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::invalid_argument("dropout_rate must lie in [0, 1)");
  }
}

template <class Real>
std::vector<ParamRef<Real>> ModelParams<Real>::registry() {
  std::vector<ParamRef<Real>> refs;
  refs.push_back({"tok_emb", &tok_emb});
  refs.push_back({"pos_emb", &pos_emb});
  for (size_t l = 0; l < layers.size(); ++l) {
    const std::string p = "layers." + std::to_string(l) + ".";
    LayerParams<Real>& L = layers[l];
    refs.push_back({p + "ln1_g", &L.ln1_g});
    refs.push_back({p + "ln1_b", &L.ln1_b});
    refs.push_back({p + "wq", &L.wq});
    refs.push_back({p + "bq", &L.bq});
    refs.push_back({p + "wk", &L.wk});
    refs.push_back({p + "bk", &L.bk});
    refs.push_back({p + "wv", &L.wv});
    refs.push_back({p + "bv", &L.bv});
    refs.push_back({p + "wo", &L.wo});
    refs.push_back({p + "bo", &L.bo});
    refs.push_back({p + "ln2_g", &L.ln2_g});
    refs.push_back({p + "ln2_b", &L.ln2_b});
    refs.push_back({p + "w1", &L.w1});
    refs.push_back({p + "b1", &L.b1});
    refs.push_back({p + "w2", &L.w2});
    refs.push_back({p + "b2", &L.b2});
  }
  refs.push_back({"lnf_g", &lnf_g});
  refs.push_back({"lnf_b", &lnf_b});
  refs.push_back({"w_out", &w_out});
  refs.push_back({"b_out", &b_out});
  refs.push_back({"log_temp", &log_temp});
  return refs;
}

template <class Real>
void ModelParams<Real>::allocate_zero(const ModelConfig& cfg) {
  const int d = cfg.d_model, V = cfg.vocab_size, F = cfg.d_ff;
  tok_emb = Mat<Real>::Zero(V, d);
  pos_emb = Mat<Real>::Zero(cfg.max_positions, d);
  layers.resize(static_cast<size_t>(cfg.n_layers));
  for (auto& L : layers) {
    L.ln1_g = Mat<Real>::Zero(1, d);
    L.ln1_b = Mat<Real>::Zero(1, d);
    L.wq = Mat<Real>::Zero(d, d);
    L.bq = Mat<Real>::Zero(1, d);
    L.wk = Mat<Real>::Zero(d, d);
    L.bk = Mat<Real>::Zero(1, d);
    L.wv = Mat<Real>::Zero(d, d);
    L.bv = Mat<Real>::Zero(1, d);
    L.wo = Mat<Real>::Zero(d, d);
    L.bo = Mat<Real>::Zero(1, d);
    L.ln2_g = Mat<Real>::Zero(1, d);
    L.ln2_b = Mat<Real>::Zero(1, d);
    L.w1 = Mat<Real>::Zero(d, F);
    L.b1 = Mat<Real>::Zero(1, F);
    L.w2 = Mat<Real>::Zero(F, d);
    L.b2 = Mat<Real>::Zero(1, d);
  }
  lnf_g = Mat<Real>::Zero(1, d);
  lnf_b = Mat<Real>::Zero(1, d);
  w_out = Mat<Real>::Zero(d, V);
  b_out = Mat<Real>::Zero(1, V);
  log_temp = Mat<Real>::Zero(1, 1);
}

template <class Real>
void ModelParams<Real>::set_zero() {
  for (auto& ref : registry()) ref.tensor->setZero();
}

template <class Real>
ModelState<Real> init_model(const ModelConfig& cfg) {
  cfg.validate();
  ModelState<Real> state;
  state.config = cfg;
  ModelParams<Real>& P = state.params;
  P.allocate_zero(cfg);

  Rng rng(cfg.seed);
  const double resid_std = kInitStd / std::sqrt(2.0 * cfg.n_layers);
  fill_normal(P.tok_emb, kInitStd, rng);
  fill_normal(P.pos_emb, kInitStd, rng);
  for (auto& L : P.layers) {
    L.ln1_g.setOnes();
    fill_normal(L.wq, kInitStd, rng);
    fill_normal(L.wk, kInitStd, rng);
    fill_normal(L.wv, kInitStd, rng);
    fill_normal(L.wo, resid_std, rng);
    L.ln2_g.setOnes();
    fill_normal(L.w1, kInitStd, rng);
    fill_normal(L.w2, resid_std, rng);
  }
  P.lnf_g.setOnes();
  fill_normal(P.w_out, kInitStd, rng);
  P.log_temp(0, 0) = static_cast<Real>(kLambdaInit);
  return state;
}

template <class Real>
ForwardResult<Real> forward(const ModelState<Real>& state,
                            std::span<const int> tokens,
                            const AttentionMask& mask,
                            std::span<const int> positions, bool train_mode,
                            Rng* rng, ForwardCache<Real>* cache,
                            bool want_logits) {
  const ModelConfig& cfg = state.config;
  const ModelParams<Real>& P = state.params;
  const int T = static_cast<int>(tokens.size());
  const int d = cfg.d_model, hd = cfg.head_dim(), nh = cfg.n_heads;
  if (T < 1) throw std::invalid_argument("forward needs at least one token");
  if (mask.size() != T || static_cast<int>(positions.size()) != T) {
    throw std::invalid_argument("tokens, mask and positions sizes disagree");
  }
  for (int t = 0; t < T; ++t) {
    if (tokens[t] < 0 || tokens[t] >= cfg.vocab_size) {
      throw std::invalid_argument("token id out of range: " +
                                  std::to_string(tokens[t]));
    }
    if (positions[t] < 0 || positions[t] >= cfg.max_positions) {
      throw std::runtime_error("position overflow: " +
                               std::to_string(positions[t]) + " >= " +
                               std::to_string(cfg.max_positions));
    }
  }
  const bool use_dropout = train_mode && cfg.dropout_rate > 0.0;
  if (use_dropout && rng == nullptr) {
    throw std::invalid_argument("training forward with dropout needs an rng");
  }

  ForwardCache<Real> local;
  ForwardCache<Real>& C = cache ? *cache : local;
  C.tokens.assign(tokens.begin(), tokens.end());
  C.positions.assign(positions.begin(), positions.end());
  C.mask = mask;
  C.train_mode = train_mode;
  C.layers.assign(static_cast<size_t>(cfg.n_layers), LayerCache<Real>{});
  C.emb_drop.resize(0, 0);

  Mat<Real> x(T, d);
  for (int t = 0; t < T; ++t) {
    x.row(t) = P.tok_emb.row(tokens[t]) + P.pos_emb.row(positions[t]);
  }
  if (use_dropout) {
    C.emb_drop = draw_dropout_mask<Real>(T, d, cfg.dropout_rate, *rng);
    x = x.cwiseProduct(C.emb_drop);
  }

  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hd));
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams<Real>& L = P.layers[static_cast<size_t>(l)];
    LayerCache<Real>& LC = C.layers[static_cast<size_t>(l)];

    LC.ln1_in = x;
    layer_norm_fwd(LC.ln1_in, L.ln1_g, L.ln1_b, LC.attn_in, LC.ln1_xhat,
                   LC.ln1_rstd);
    LC.q = LC.attn_in * L.wq;
    LC.q.rowwise() += L.bq.row(0);
    LC.k = LC.attn_in * L.wk;
    LC.k.rowwise() += L.bk.row(0);
    LC.v = LC.attn_in * L.wv;
    LC.v.rowwise() += L.bv.row(0);

    LC.ctx.resize(T, d);
    LC.attn_probs.assign(static_cast<size_t>(nh), Mat<Real>());
    for (int h = 0; h < nh; ++h) {
      Mat<Real> scores =
          LC.q.middleCols(h * hd, hd) * LC.k.middleCols(h * hd, hd).transpose();
      scores *= scale;
      masked_softmax_rows(scores, mask, LC.attn_probs[static_cast<size_t>(h)]);
      LC.ctx.middleCols(h * hd, hd).noalias() =
          LC.attn_probs[static_cast<size_t>(h)] * LC.v.middleCols(h * hd, hd);
    }
    Mat<Real> attn_out = LC.ctx * L.wo;
    attn_out.rowwise() += L.bo.row(0);
    if (use_dropout) {
      LC.attn_drop = draw_dropout_mask<Real>(T, d, cfg.dropout_rate, *rng);
      attn_out = attn_out.cwiseProduct(LC.attn_drop);
    }
    x += attn_out;

    LC.ln2_in = x;
    layer_norm_fwd(LC.ln2_in, L.ln2_g, L.ln2_b, LC.mlp_in, LC.ln2_xhat,
                   LC.ln2_rstd);
    LC.z1 = LC.mlp_in * L.w1;
    LC.z1.rowwise() += L.b1.row(0);
    LC.gelu_out = LC.z1.unaryExpr([](Real z) { return gelu_scalar(z); });
    Mat<Real> mlp_out = LC.gelu_out * L.w2;
    mlp_out.rowwise() += L.b2.row(0);
    if (use_dropout) {
      LC.mlp_drop = draw_dropout_mask<Real>(T, d, cfg.dropout_rate, *rng);
      mlp_out = mlp_out.cwiseProduct(LC.mlp_drop);
    }
    x += mlp_out;

    if (!x.allFinite()) {
      throw std::runtime_error("non-finite activations in layer " +
                               std::to_string(l));
    }
  }

  C.lnf_in = x;
  layer_norm_fwd(C.lnf_in, P.lnf_g, P.lnf_b, C.hidden, C.lnf_xhat, C.lnf_rstd);

  ForwardResult<Real> out;
  out.hidden = C.hidden;
  if (want_logits) {
    out.logits.noalias() = C.hidden * P.w_out;
    out.logits.rowwise() += P.b_out.row(0);
    if (!out.logits.allFinite()) {
      throw std::runtime_error("non-finite logits");
    }
  }
  return out;
}

template <class Real>
void backward(const ModelState<Real>& state, const ForwardCache<Real>& cache,
              const Mat<Real>& d_hidden, const Mat<Real>& d_logits,
              ModelParams<Real>& grads) {
  const ModelConfig& cfg = state.config;
  const ModelParams<Real>& P = state.params;
  const int T = static_cast<int>(cache.tokens.size());
  const int d = cfg.d_model, hd = cfg.head_dim(), nh = cfg.n_heads;
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hd));

  Mat<Real> dh = Mat<Real>::Zero(T, d);
  if (d_hidden.size() > 0) dh = d_hidden;
  if (d_logits.size() > 0) {
    grads.w_out.noalias() += cache.hidden.transpose() * d_logits;
    grads.b_out += d_logits.colwise().sum();
    dh.noalias() += d_logits * P.w_out.transpose();
  }

  Mat<Real> dx;
  layer_norm_bwd(dh, cache.lnf_xhat, cache.lnf_rstd, P.lnf_g, dx, grads.lnf_g,
                 grads.lnf_b);

  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const LayerParams<Real>& L = P.layers[static_cast<size_t>(l)];
    const LayerCache<Real>& LC = cache.layers[static_cast<size_t>(l)];
    LayerParams<Real>& G = grads.layers[static_cast<size_t>(l)];

    // MLP sub-block. dx holds the gradient w.r.t. this block's output.
    Mat<Real> d_mlp;
    if (LC.mlp_drop.size() > 0) {
      d_mlp = dx.cwiseProduct(LC.mlp_drop);
    } else {
      d_mlp = dx;
    }
    G.w2.noalias() += LC.gelu_out.transpose() * d_mlp;
    G.b2 += d_mlp.colwise().sum();
    Mat<Real> d_gelu = d_mlp * L.w2.transpose();
    Mat<Real> d_z1 = d_gelu.cwiseProduct(
        LC.z1.unaryExpr([](Real z) { return gelu_grad_scalar(z); }));
    G.w1.noalias() += LC.mlp_in.transpose() * d_z1;
    G.b1 += d_z1.colwise().sum();
    Mat<Real> d_mlp_in = d_z1 * L.w1.transpose();
    Mat<Real> d_ln2_in;
    layer_norm_bwd(d_mlp_in, LC.ln2_xhat, LC.ln2_rstd, L.ln2_g, d_ln2_in,
                   G.ln2_g, G.ln2_b);
    dx += d_ln2_in;

    // Attention sub-block.
    Mat<Real> d_attn_out;
    if (LC.attn_drop.size() > 0) {
      d_attn_out = dx.cwiseProduct(LC.attn_drop);
    } else {
      d_attn_out = dx;
    }
    G.wo.noalias() += LC.ctx.transpose() * d_attn_out;
    G.bo += d_attn_out.colwise().sum();
    Mat<Real> d_ctx = d_attn_out * L.wo.transpose();

    Mat<Real> dQ = Mat<Real>::Zero(T, d);
    Mat<Real> dK = Mat<Real>::Zero(T, d);
    Mat<Real> dV = Mat<Real>::Zero(T, d);
    for (int h = 0; h < nh; ++h) {
      const Mat<Real>& probs = LC.attn_probs[static_cast<size_t>(h)];
      auto Vh = LC.v.middleCols(h * hd, hd);
      auto Qh = LC.q.middleCols(h * hd, hd);
      auto Kh = LC.k.middleCols(h * hd, hd);
      Mat<Real> d_ctx_h = d_ctx.middleCols(h * hd, hd);
      Mat<Real> dP = d_ctx_h * Vh.transpose();
      dV.middleCols(h * hd, hd).noalias() = probs.transpose() * d_ctx_h;
      Mat<Real> row_dot = probs.cwiseProduct(dP).rowwise().sum();
      Mat<Real> shifted = dP.colwise() - row_dot.col(0);
      Mat<Real> dS = probs.cwiseProduct(shifted);
      dQ.middleCols(h * hd, hd).noalias() = dS * Kh * scale;
      dK.middleCols(h * hd, hd).noalias() = dS.transpose() * Qh * scale;
    }
    G.wq.noalias() += LC.attn_in.transpose() * dQ;
    G.bq += dQ.colwise().sum();
    G.wk.noalias() += LC.attn_in.transpose() * dK;
    G.bk += dK.colwise().sum();
    G.wv.noalias() += LC.attn_in.transpose() * dV;
    G.bv += dV.colwise().sum();
    Mat<Real> d_attn_in =
        dQ * L.wq.transpose() + dK * L.wk.transpose() + dV * L.wv.transpose();
    Mat<Real> d_ln1_in;
    layer_norm_bwd(d_attn_in, LC.ln1_xhat, LC.ln1_rstd, L.ln1_g, d_ln1_in,
                   G.ln1_g, G.ln1_b);
    dx += d_ln1_in;
  }

  if (cache.emb_drop.size() > 0) dx = dx.cwiseProduct(cache.emb_drop);
  for (int t = 0; t < T; ++t) {
    grads.tok_emb.row(cache.tokens[static_cast<size_t>(t)]) += dx.row(t);
    grads.pos_emb.row(cache.positions[static_cast<size_t>(t)]) += dx.row(t);
  }
}

template <class Real>
KVCacheSnapshot<Real> capture_special_kv(const ModelState<Real>& state,
                                         const SegmentedSequence& seq) {
  validate_segmented(seq);
  if (seq.special_count < 1) {
    throw std::invalid_argument("capture_special_kv needs at least one special");
  }
  const ModelConfig& cfg = state.config;
  const int m = seq.prefix_len, k = seq.special_count;
  AttentionMask mask = build_gem_mask(m, k, seq.suffix_len);
  std::vector<int> positions(static_cast<size_t>(seq.size()));
  for (int i = 0; i < seq.size(); ++i) positions[static_cast<size_t>(i)] = i;

  ForwardCache<Real> cache;
  forward(state, std::span<const int>(seq.tokens), mask,
          std::span<const int>(positions), /*train_mode=*/false, nullptr,
          &cache, /*want_logits=*/false);

  KVCacheSnapshot<Real> snap;
  snap.prefix_len = m;
  snap.special_count = k;
  snap.n_heads = cfg.n_heads;
  snap.head_dim = cfg.head_dim();
  for (int i = 0; i < k; ++i) snap.positions.push_back(m + i);
  snap.keys.reserve(static_cast<size_t>(cfg.n_layers));
  snap.values.reserve(static_cast<size_t>(cfg.n_layers));
  for (const auto& LC : cache.layers) {
    snap.keys.push_back(LC.k.middleRows(m, k));
    snap.values.push_back(LC.v.middleRows(m, k));
  }
  snap.bootstrap_hidden = cache.hidden.row(m + k - 1);
  return snap;
}

template <class Real>
DecodeState<Real> make_decode_state(const ModelState<Real>& state,
                                    const KVCacheSnapshot<Real>& cache) {
  if (cache.keys.size() != static_cast<size_t>(state.config.n_layers)) {
    throw std::invalid_argument("snapshot layer count mismatch");
  }
  DecodeState<Real> ds;
  ds.keys = cache.keys;
  ds.values = cache.values;
  ds.next_position = cache.prefix_len + cache.special_count;
  return ds;
}

template <class Real>
Mat<Real> decode_step(const ModelState<Real>& state, DecodeState<Real>& ds,
                      int token) {
  const ModelConfig& cfg = state.config;
  const ModelParams<Real>& P = state.params;
  const int d = cfg.d_model, hd = cfg.head_dim(), nh = cfg.n_heads;
  if (token < 0 || token >= cfg.vocab_size) {
    throw std::invalid_argument("token id out of range: " + std::to_string(token));
  }
  if (ds.next_position >= cfg.max_positions) {
    throw std::runtime_error("position overflow: " +
                             std::to_string(ds.next_position) + " >= " +
                             std::to_string(cfg.max_positions));
  }
  const Real scale = Real(1) / std::sqrt(static_cast<Real>(hd));

  Mat<Real> x = P.tok_emb.row(token) + P.pos_emb.row(ds.next_position);
  ds.next_position += 1;

  Mat<Real> xhat, rstd, a;
  for (int l = 0; l < cfg.n_layers; ++l) {
    const LayerParams<Real>& L = P.layers[static_cast<size_t>(l)];
    layer_norm_fwd(x, L.ln1_g, L.ln1_b, a, xhat, rstd);
    Mat<Real> q = a * L.wq + L.bq;
    Mat<Real> kk = a * L.wk + L.bk;
    Mat<Real> vv = a * L.wv + L.bv;
    Mat<Real>& K = ds.keys[static_cast<size_t>(l)];
    Mat<Real>& V = ds.values[static_cast<size_t>(l)];
    const Eigen::Index rows = K.rows();
    K.conservativeResize(rows + 1, d);
    V.conservativeResize(rows + 1, d);
    K.row(rows) = kk.row(0);
    V.row(rows) = vv.row(0);

    Mat<Real> ctx(1, d);
    for (int h = 0; h < nh; ++h) {
      Mat<Real> scores =
          q.middleCols(h * hd, hd) * K.middleCols(h * hd, hd).transpose();
      scores *= scale;
      const Real maxv = scores.row(0).maxCoeff();
      Mat<Real> e = (scores.array() - maxv).exp().matrix();
      const Real denom = e.sum();
      Mat<Real> probs = e / denom;
      ctx.middleCols(h * hd, hd).noalias() =
          probs * V.middleCols(h * hd, hd);
    }
    Mat<Real> attn_out = ctx * L.wo + L.bo;
    x += attn_out;

    Mat<Real> b;
    layer_norm_fwd(x, L.ln2_g, L.ln2_b, b, xhat, rstd);
    Mat<Real> z1 = b * L.w1 + L.b1;
    Mat<Real> g = z1.unaryExpr([](Real z) { return gelu_scalar(z); });
    Mat<Real> mlp_out = g * L.w2 + L.b2;
    x += mlp_out;
    if (!x.allFinite()) {
      throw std::runtime_error("non-finite activations in layer " +
                               std::to_string(l));
    }
  }
  Mat<Real> hidden;
  layer_norm_fwd(x, P.lnf_g, P.lnf_b, hidden, xhat, rstd);
  Mat<Real> logits = hidden * P.w_out + P.b_out;
  return logits;
}

template <class Real>
std::vector<int> decode_from_cache(const ModelState<Real>& state,
                                   const KVCacheSnapshot<Real>& cache,
                                   int max_new, bool greedy, Rng* rng) {
  if (max_new < 1) throw std::invalid_argument("max_new must be >= 1");
  if (!greedy && rng == nullptr) {
    throw std::invalid_argument("sampled decoding needs an rng");
  }
  const ModelParams<Real>& P = state.params;
  DecodeState<Real> ds = make_decode_state(state, cache);

  Mat<Real> logits = cache.bootstrap_hidden * P.w_out + P.b_out;
  std::vector<int> out;
  while (true) {
    const int tok = greedy ? argmax_row(logits) : sample_row(logits, *rng);
    if (tok == kEosId) break;
    out.push_back(tok);
    if (static_cast<int>(out.size()) >= max_new) break;
    logits = decode_step(state, ds, tok);
  }
  return out;
}

template <class Real>
Mat<Real> teacher_forced_suffix_logits(const ModelState<Real>& state,
                                       const KVCacheSnapshot<Real>& cache,
                                       std::span<const int> suffix) {
  const int n = static_cast<int>(suffix.size());
  if (n < 1) throw std::invalid_argument("empty suffix");
  const ModelParams<Real>& P = state.params;
  Mat<Real> out(n, state.config.vocab_size);
  out.row(0) = (cache.bootstrap_hidden * P.w_out + P.b_out).row(0);
  DecodeState<Real> ds = make_decode_state(state, cache);
  for (int i = 0; i + 1 < n; ++i) {
    out.row(i + 1) = decode_step(state, ds, suffix[static_cast<size_t>(i)]).row(0);
  }
  return out;
}

// --- checkpoint I/O ---

namespace {

nlohmann::ordered_json config_to_json(const ModelConfig& cfg) {
  nlohmann::ordered_json j;
  j["n_layers"] = cfg.n_layers;
  j["n_heads"] = cfg.n_heads;
  j["d_model"] = cfg.d_model;
  j["d_ff"] = cfg.d_ff;
  j["vocab_size"] = cfg.vocab_size;
  j["max_positions"] = cfg.max_positions;
  j["dropout_rate"] = cfg.dropout_rate;
  j["seed"] = cfg.seed;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig cfg;
  cfg.n_layers = j.at("n_layers").get<int>();
  cfg.n_heads = j.at("n_heads").get<int>();
  cfg.d_model = j.at("d_model").get<int>();
  cfg.d_ff = j.at("d_ff").get<int>();
  cfg.vocab_size = j.at("vocab_size").get<int>();
  cfg.max_positions = j.at("max_positions").get<int>();
  cfg.dropout_rate = j.at("dropout_rate").get<double>();
  cfg.seed = j.at("seed").get<std::uint64_t>();
  return cfg;
}

}  // namespace

std::string model_config_to_json_string(const ModelConfig& cfg) {
  return config_to_json(cfg).dump();
}

ModelConfig model_config_from_json_string(const std::string& json_text) {
  nlohmann::json j = nlohmann::json::parse(json_text);
  ModelConfig defaults;
  ModelConfig cfg;
  cfg.n_layers = j.value("n_layers", defaults.n_layers);
  cfg.n_heads = j.value("n_heads", defaults.n_heads);
  cfg.d_model = j.value("d_model", defaults.d_model);
  cfg.d_ff = j.value("d_ff", defaults.d_ff);
  cfg.vocab_size = j.value("vocab_size", defaults.vocab_size);
  cfg.max_positions = j.value("max_positions", defaults.max_positions);
  cfg.dropout_rate = j.value("dropout_rate", defaults.dropout_rate);
  cfg.seed = j.value("seed", defaults.seed);
  return cfg;
}

void save_checkpoint(const ModelState<float>& state, const std::string& path,
                     const CheckpointExtras* extras) {
  auto& params = const_cast<ModelParams<float>&>(state.params);
  std::vector<std::pair<std::string, const MatF*>> tensors;
  for (auto& ref : params.registry()) tensors.emplace_back(ref.name, ref.tensor);
  if (extras) {
    for (auto& [name, mat] : extras->extra_tensors) tensors.emplace_back(name, mat);
  }

  nlohmann::ordered_json manifest;
  manifest["format"] = "gem-checkpoint-v1";
  manifest["config"] = config_to_json(state.config);
  manifest["lambda"] = static_cast<double>(state.lambda());
  if (extras && extras->vocab_json) {
    manifest["vocab"] = nlohmann::ordered_json::parse(*extras->vocab_json);
  }
  if (extras && extras->trainer_json) {
    manifest["trainer"] = nlohmann::ordered_json::parse(*extras->trainer_json);
  }
  nlohmann::ordered_json table = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  for (auto& [name, mat] : tensors) {
    const std::uint64_t bytes =
        static_cast<std::uint64_t>(mat->size()) * sizeof(float);
    nlohmann::ordered_json row;
    row["name"] = name;
    row["rows"] = mat->rows();
    row["cols"] = mat->cols();
    row["offset"] = offset;
    row["bytes"] = bytes;
    table.push_back(row);
    offset += bytes;
  }
  manifest["tensors"] = table;
  manifest["payload_bytes"] = offset;

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out << manifest.dump() << "\n";
  for (auto& [name, mat] : tensors) {
    out.write(reinterpret_cast<const char*>(mat->data()),
              static_cast<std::streamsize>(mat->size() * sizeof(float)));
  }
  if (!out) throw std::runtime_error("failed writing checkpoint: " + path);
}

LoadedCheckpoint load_checkpoint_full(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint: " + path);
  std::string manifest_line;
  if (!std::getline(in, manifest_line)) {
    throw std::runtime_error("checkpoint lacks a manifest line: " + path);
  }
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(manifest_line);
  } catch (const std::exception& e) {
    throw std::runtime_error("bad checkpoint manifest: " + std::string(e.what()));
  }
  if (manifest.value("format", "") != "gem-checkpoint-v1") {
    throw std::runtime_error("unknown checkpoint format in " + path);
  }

  std::string payload((std::istreambuf_iterator<char>(in)),
                      std::istreambuf_iterator<char>());
  const std::uint64_t expected = manifest.at("payload_bytes").get<std::uint64_t>();
  if (payload.size() != expected) {
    throw std::runtime_error(
        "checkpoint payload size mismatch: manifest says " +
        std::to_string(expected) + " bytes, file has " +
        std::to_string(payload.size()));
  }

  LoadedCheckpoint loaded;
  loaded.state.config = config_from_json(manifest.at("config"));
  loaded.state.params.allocate_zero(loaded.state.config);
  if (manifest.contains("vocab")) {
    loaded.vocab_json = manifest["vocab"].dump();
  }
  if (manifest.contains("trainer")) {
    loaded.trainer_json = manifest["trainer"].dump();
  }

  std::unordered_map<std::string, MatF*> by_name;
  for (auto& ref : loaded.state.params.registry()) by_name[ref.name] = ref.tensor;

  size_t params_seen = 0;
  for (const auto& row : manifest.at("tensors")) {
    const std::string name = row.at("name").get<std::string>();
    const auto rows = row.at("rows").get<Eigen::Index>();
    const auto cols = row.at("cols").get<Eigen::Index>();
    const auto offset = row.at("offset").get<std::uint64_t>();
    const auto bytes = row.at("bytes").get<std::uint64_t>();
    if (offset + bytes > payload.size()) {
      throw std::runtime_error("checkpoint tensor " + name +
                               " overruns the payload");
    }
    auto it = by_name.find(name);
    MatF* dst;
    if (it != by_name.end()) {
      dst = it->second;
      if (dst->rows() != rows || dst->cols() != cols) {
        throw std::runtime_error("checkpoint tensor " + name +
                                 " has an unexpected shape");
      }
      ++params_seen;
    } else {
      loaded.extra_tensors.emplace_back(name, MatF(rows, cols));
      dst = &loaded.extra_tensors.back().second;
    }
    if (static_cast<std::uint64_t>(dst->size()) * sizeof(float) != bytes) {
      throw std::runtime_error("checkpoint tensor " + name +
                               " has a bad byte count");
    }
    std::memcpy(dst->data(), payload.data() + offset, bytes);
  }
  if (params_seen != by_name.size()) {
    throw std::runtime_error("checkpoint is missing model tensors");
  }
  return loaded;
}

ModelState<float> load_checkpoint(const std::string& path) {
  return std::move(load_checkpoint_full(path).state);
}

// --- explicit instantiations ---

template struct ModelParams<float>;
template struct ModelParams<double>;

template ModelState<float> init_model<float>(const ModelConfig&);
template ModelState<double> init_model<double>(const ModelConfig&);

template ForwardResult<float> forward<float>(const ModelState<float>&,
                                             std::span<const int>,
                                             const AttentionMask&,
                                             std::span<const int>, bool, Rng*,
                                             ForwardCache<float>*, bool);
template ForwardResult<double> forward<double>(const ModelState<double>&,
                                               std::span<const int>,
                                               const AttentionMask&,
                                               std::span<const int>, bool,
                                               Rng*, ForwardCache<double>*,
                                               bool);

template void backward<float>(const ModelState<float>&,
                              const ForwardCache<float>&, const Mat<float>&,
                              const Mat<float>&, ModelParams<float>&);
template void backward<double>(const ModelState<double>&,
                               const ForwardCache<double>&, const Mat<double>&,
                               const Mat<double>&, ModelParams<double>&);

template KVCacheSnapshot<float> capture_special_kv<float>(
    const ModelState<float>&, const SegmentedSequence&);
template KVCacheSnapshot<double> capture_special_kv<double>(
    const ModelState<double>&, const SegmentedSequence&);

template DecodeState<float> make_decode_state<float>(
    const ModelState<float>&, const KVCacheSnapshot<float>&);
template DecodeState<double> make_decode_state<double>(
    const ModelState<double>&, const KVCacheSnapshot<double>&);

template Mat<float> decode_step<float>(const ModelState<float>&,
                                       DecodeState<float>&, int);
template Mat<double> decode_step<double>(const ModelState<double>&,
                                         DecodeState<double>&, int);

template std::vector<int> decode_from_cache<float>(const ModelState<float>&,
                                                   const KVCacheSnapshot<float>&,
                                                   int, bool, Rng*);
template std::vector<int> decode_from_cache<double>(
    const ModelState<double>&, const KVCacheSnapshot<double>&, int, bool, Rng*);

template Mat<float> teacher_forced_suffix_logits<float>(
    const ModelState<float>&, const KVCacheSnapshot<float>&,
    std::span<const int>);
template Mat<double> teacher_forced_suffix_logits<double>(
    const ModelState<double>&, const KVCacheSnapshot<double>&,
    std::span<const int>);

}  // namespace gem
