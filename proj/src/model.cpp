#include "jat/model.hpp"

#include <cmath>
#include <stdexcept>

#include "jat/container.hpp"
#include "jat/rng.hpp"

namespace jat {

void ModelConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::runtime_error("model config: " + msg); };
  if (num_layers < 1) fail("num_layers must be >= 1");
  if (d_model < 1 || num_heads < 1) fail("d_model and num_heads must be >= 1");
  if (d_model % num_heads != 0) fail("d_model must be divisible by num_heads");
  if (d_ff < 1) fail("d_ff must be >= 1");
  if (d_f < 1) fail("d_f must be >= 1");
  if (max_len < 2) fail("max_len must be >= 2");
  if (vocab_size < kJumpRowStart + max_len + 1)
    fail("vocab_size " + std::to_string(vocab_size) + " cannot host the jump block (need > " +
         std::to_string(kJumpRowStart + max_len) + ")");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"num_layers", c.num_layers}, {"d_model", c.d_model},
                     {"num_heads", c.num_heads},   {"d_ff", c.d_ff},
                     {"d_f", c.d_f},               {"max_len", c.max_len},
                     {"vocab_size", c.vocab_size}, {"seed", c.seed},
                     {"tied", c.tied}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c.num_layers = j.value("num_layers", c.num_layers);
  c.d_model = j.value("d_model", c.d_model);
  c.num_heads = j.value("num_heads", c.num_heads);
  c.d_ff = j.value("d_ff", c.d_ff);
  c.d_f = j.value("d_f", c.d_f);
  c.max_len = j.value("max_len", c.max_len);
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.seed = j.value("seed", c.seed);
  c.tied = j.value("tied", c.tied);
}

namespace {

template <class T>
void fill_normal(MatT<T>& m, Rng& rng, double stddev) {
  for (Eigen::Index i = 0; i < m.rows(); ++i)
    for (Eigen::Index j = 0; j < m.cols(); ++j)
      m(i, j) = static_cast<T>(rng.normal() * stddev);
}

constexpr double kInitStd = 0.02;
constexpr double kLayerNormEps = 1e-5;

template <class T>
T gelu(T x) {
  return T(0.5) * x * (T(1) + std::erf(x * T(0.70710678118654752440)));
}

template <class T>
T gelu_derivative(T x) {
  const T cdf = T(0.5) * (T(1) + std::erf(x * T(0.70710678118654752440)));
  const T pdf = std::exp(T(-0.5) * x * x) * T(0.39894228040143267794);
  return cdf + x * pdf;
}

template <class T>
void layer_norm_forward(const MatT<T>& x, const MatT<T>& gain, const MatT<T>& bias, MatT<T>& out,
                        MatT<T>& xhat, Eigen::Matrix<T, Eigen::Dynamic, 1>& rstd) {
  const Eigen::Index n = x.rows(), d = x.cols();
  out.resize(n, d);
  xhat.resize(n, d);
  rstd.resize(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const T mu = x.row(i).mean();
    const T var = (x.row(i).array() - mu).square().mean();
    const T r = T(1) / std::sqrt(var + T(kLayerNormEps));
    rstd(i) = r;
    xhat.row(i) = (x.row(i).array() - mu).matrix() * r;
    out.row(i) = (xhat.row(i).array() * gain.array() + bias.array()).matrix();
  }
}

template <class T>
void layer_norm_backward(const MatT<T>& d_out, const MatT<T>& xhat,
                         const Eigen::Matrix<T, Eigen::Dynamic, 1>& rstd, const MatT<T>& gain,
                         MatT<T>& d_gain, MatT<T>& d_bias, MatT<T>& d_x) {
  const Eigen::Index n = d_out.rows(), d = d_out.cols();
  d_x.resize(n, d);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto dxhat = (d_out.row(i).array() * gain.array()).eval();
    const T m1 = dxhat.mean();
    const T m2 = (dxhat * xhat.row(i).array()).mean();
    d_x.row(i) = (rstd(i) * (dxhat - m1 - xhat.row(i).array() * m2)).matrix();
    d_gain.array() += d_out.row(i).array() * xhat.row(i).array();
    d_bias.array() += d_out.row(i).array();
  }
}

template <class T>
void softmax_rows_inplace(MatT<T>& m) {
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const T mx = m.row(i).maxCoeff();
    m.row(i) = (m.row(i).array() - mx).exp();
    m.row(i) /= m.row(i).sum();
  }
}

// Cross-entropy of a single logits row against `label`; writes softmax - onehot
// into d_logits when requested.
template <class T>
T softmax_cross_entropy(const Eigen::Matrix<T, 1, Eigen::Dynamic>& logits, std::int32_t label,
                        Eigen::Matrix<T, 1, Eigen::Dynamic>* d_logits) {
  const T mx = logits.maxCoeff();
  const auto shifted = (logits.array() - mx).eval();
  const T lse = std::log(shifted.exp().sum());
  const T loss = lse - shifted(label);
  if (d_logits) {
    *d_logits = (shifted - lse).exp().matrix();
    (*d_logits)(label) -= T(1);
  }
  return loss;
}

}  // namespace

template <class T>
ModelParamsT<T> init_params(const ModelConfig& config) {
  config.validate();
  Rng rng(derive_seed(config.seed, 0x1417));
  ModelParamsT<T> p;
  p.config = config;
  const int d = config.d_model, dk = config.d_k(), H = config.num_heads;

  p.token_embeddings.resize(config.vocab_size, d);
  fill_normal(p.token_embeddings, rng, kInitStd);

  p.layers.resize(static_cast<std::size_t>(config.num_layers));
  for (auto& lay : p.layers) {
    lay.wq.resize(static_cast<std::size_t>(H));
    lay.wk.resize(static_cast<std::size_t>(H));
    lay.wv.resize(static_cast<std::size_t>(H));
    for (int h = 0; h < H; ++h) {
      lay.wq[static_cast<std::size_t>(h)].resize(d, dk);
      fill_normal(lay.wq[static_cast<std::size_t>(h)], rng, kInitStd);
      lay.wk[static_cast<std::size_t>(h)].resize(d, dk);
      fill_normal(lay.wk[static_cast<std::size_t>(h)], rng, kInitStd);
      lay.wv[static_cast<std::size_t>(h)].resize(d, dk);
      fill_normal(lay.wv[static_cast<std::size_t>(h)], rng, kInitStd);
    }
    lay.wo.resize(H * dk, d);
    fill_normal(lay.wo, rng, kInitStd);
    lay.ffn_w1.resize(d, config.d_ff);
    fill_normal(lay.ffn_w1, rng, kInitStd);
    lay.ffn_w2.resize(config.d_ff, d);
    fill_normal(lay.ffn_w2, rng, kInitStd);
    lay.ffn_b1 = MatT<T>::Zero(1, config.d_ff);
    lay.ffn_b2 = MatT<T>::Zero(1, d);
    lay.ln1_gain = MatT<T>::Ones(1, d);
    lay.ln1_bias = MatT<T>::Zero(1, d);
    lay.ln2_gain = MatT<T>::Ones(1, d);
    lay.ln2_bias = MatT<T>::Zero(1, d);
  }

  p.mlm_w.resize(d, config.vocab_size);
  fill_normal(p.mlm_w, rng, kInitStd);
  p.mlm_b = MatT<T>::Zero(1, config.vocab_size);
  p.jtp_w.resize(d, config.max_len);
  fill_normal(p.jtp_w, rng, kInitStd);
  p.jtp_b = MatT<T>::Zero(1, config.max_len);
  p.func_proj.resize(d, config.d_f);
  fill_normal(p.func_proj, rng, kInitStd);

  if (!config.tied) {
    p.position_embeddings.resize(config.max_len, d);
    fill_normal(p.position_embeddings, rng, kInitStd);
  }
  return p;
}

template <class T>
ModelParamsT<T> zero_like(const ModelParamsT<T>& p) {
  ModelParamsT<T> z = p;
  for_each_tensor(z, [](const std::string&, MatT<T>& m) { m.setZero(); });
  return z;
}

template <class U, class T>
ModelParamsT<U> cast_params(const ModelParamsT<T>& p) {
  ModelParamsT<U> out;
  out.config = p.config;
  out.layers.resize(p.layers.size());
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    const auto& a = p.layers[l];
    auto& b = out.layers[l];
    b.wq.resize(a.wq.size());
    b.wk.resize(a.wk.size());
    b.wv.resize(a.wv.size());
  }
  auto src = [&](const ModelParamsT<T>& from) {
    std::vector<const MatT<T>*> tensors;
    for_each_tensor(from, [&](const std::string&, const MatT<T>& m) { tensors.push_back(&m); });
    return tensors;
  };
  const auto inputs = src(p);
  std::size_t i = 0;
  for_each_tensor(out, [&](const std::string&, MatT<U>& m) {
    m = inputs[i++]->template cast<U>();
  });
  return out;
}

template <class T>
MatT<T> forward_hidden(const ModelParamsT<T>& params, std::span<const std::int32_t> ids,
                       std::int32_t length, EncoderCache<T>* cache,
                       std::vector<std::vector<MatT<T>>>* attention) {
  const auto& cfg = params.config;
  const int n = length;
  if (n < 1) throw std::runtime_error("forward: empty sequence");
  if (static_cast<std::size_t>(n) > ids.size()) throw std::runtime_error("forward: length exceeds ids");
  const int d = cfg.d_model, H = cfg.num_heads, dk = cfg.d_k();
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));

  MatT<T> x(n, d);
  for (int pos = 0; pos < n; ++pos) {
    const std::int32_t id = ids[static_cast<std::size_t>(pos)];
    if (id < 0 || id >= cfg.vocab_size)
      throw std::runtime_error("forward: token id out of range: " + std::to_string(id));
    x.row(pos) = params.token_embeddings.row(id) + params.position_row(pos);
  }

  if (cache) cache->layers.resize(params.layers.size());
  if (attention) attention->assign(params.layers.size(), {});

  MatT<T> concat(n, H * dk), q(n, dk), k(n, dk), v(n, dk), scores(n, n), ctx(n, dk);
  for (std::size_t l = 0; l < params.layers.size(); ++l) {
    const auto& lay = params.layers[l];
    LayerCache<T>* lc = cache ? &cache->layers[l] : nullptr;
    if (lc) {
      lc->x_in = x;
      lc->q.resize(static_cast<std::size_t>(H));
      lc->k.resize(static_cast<std::size_t>(H));
      lc->v.resize(static_cast<std::size_t>(H));
      lc->probs.resize(static_cast<std::size_t>(H));
    }
    for (int h = 0; h < H; ++h) {
      const auto hs = static_cast<std::size_t>(h);
      q.noalias() = x * lay.wq[hs];
      k.noalias() = x * lay.wk[hs];
      v.noalias() = x * lay.wv[hs];
      scores.noalias() = q * k.transpose();
      scores *= scale;
      softmax_rows_inplace(scores);
      ctx.noalias() = scores * v;
      concat.block(0, h * dk, n, dk) = ctx;
      if (lc) {
        lc->q[hs] = q;
        lc->k[hs] = k;
        lc->v[hs] = v;
        lc->probs[hs] = scores;
      }
      if (attention) (*attention)[l].push_back(scores);
    }

    MatT<T> attn_out(n, d);
    attn_out.noalias() = concat * lay.wo;
    MatT<T> resid1 = x + attn_out;

    MatT<T> xhat1, y;
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd1;
    layer_norm_forward(resid1, lay.ln1_gain, lay.ln1_bias, y, xhat1, rstd1);

    MatT<T> f1(n, cfg.d_ff);
    f1.noalias() = y * lay.ffn_w1;
    f1.rowwise() += lay.ffn_b1.row(0);
    MatT<T> g = f1.unaryExpr([](T t) { return gelu(t); });
    MatT<T> f2(n, d);
    f2.noalias() = g * lay.ffn_w2;
    f2.rowwise() += lay.ffn_b2.row(0);
    MatT<T> resid2 = y + f2;

    MatT<T> xhat2, x_next;
    Eigen::Matrix<T, Eigen::Dynamic, 1> rstd2;
    layer_norm_forward(resid2, lay.ln2_gain, lay.ln2_bias, x_next, xhat2, rstd2);

    if (!x_next.allFinite())
      throw std::runtime_error("forward: non-finite activations in layer " + std::to_string(l));

    if (lc) {
      lc->concat = concat;
      lc->xhat1 = std::move(xhat1);
      lc->rstd1 = std::move(rstd1);
      lc->y = std::move(y);
      lc->f1 = std::move(f1);
      lc->g = std::move(g);
      lc->xhat2 = std::move(xhat2);
      lc->rstd2 = std::move(rstd2);
    }
    x = std::move(x_next);
  }
  return x;
}

template <class T>
void backward_hidden(const ModelParamsT<T>& params, const EncoderCache<T>& cache,
                     std::span<const std::int32_t> ids, const MatT<T>& d_hidden,
                     GradientsT<T>& grads) {
  const auto& cfg = params.config;
  const int n = static_cast<int>(d_hidden.rows());
  const int d = cfg.d_model, H = cfg.num_heads, dk = cfg.d_k();
  const T scale = T(1) / std::sqrt(static_cast<T>(dk));

  MatT<T> dx = d_hidden;
  for (std::size_t li = params.layers.size(); li-- > 0;) {
    const auto& lay = params.layers[li];
    const auto& lc = cache.layers[li];
    auto& glay = grads.layers[li];

    // LN2
    MatT<T> d_resid2;
    layer_norm_backward(dx, lc.xhat2, lc.rstd2, lay.ln2_gain, glay.ln2_gain, glay.ln2_bias,
                        d_resid2);
    MatT<T> dy = d_resid2;  // residual branch

    // FFN
    const MatT<T>& d_f2 = d_resid2;
    glay.ffn_w2.noalias() += lc.g.transpose() * d_f2;
    glay.ffn_b2.row(0) += d_f2.colwise().sum();
    MatT<T> dg(n, cfg.d_ff);
    dg.noalias() = d_f2 * lay.ffn_w2.transpose();
    MatT<T> d_f1 =
        dg.binaryExpr(lc.f1, [](T go, T f) { return go * gelu_derivative(f); });
    glay.ffn_w1.noalias() += lc.y.transpose() * d_f1;
    glay.ffn_b1.row(0) += d_f1.colwise().sum();
    dy.noalias() += d_f1 * lay.ffn_w1.transpose();

    // LN1
    MatT<T> d_resid1;
    layer_norm_backward(dy, lc.xhat1, lc.rstd1, lay.ln1_gain, glay.ln1_gain, glay.ln1_bias,
                        d_resid1);
    dx = d_resid1;  // residual branch
    const MatT<T>& d_attn_out = d_resid1;

    // output projection
    glay.wo.noalias() += lc.concat.transpose() * d_attn_out;
    MatT<T> d_concat(n, H * dk);
    d_concat.noalias() = d_attn_out * lay.wo.transpose();

    for (int h = 0; h < H; ++h) {
      const auto hs = static_cast<std::size_t>(h);
      const auto d_ctx = d_concat.block(0, h * dk, n, dk);
      const MatT<T>& probs = lc.probs[hs];

      MatT<T> d_probs(n, n);
      d_probs.noalias() = d_ctx * lc.v[hs].transpose();
      MatT<T> d_v(n, dk);
      d_v.noalias() = probs.transpose() * d_ctx;

      MatT<T> d_scores(n, n);
      for (int i = 0; i < n; ++i) {
        const T dot = d_probs.row(i).dot(probs.row(i));
        d_scores.row(i) = (probs.row(i).array() * (d_probs.row(i).array() - dot)).matrix();
      }

      MatT<T> d_q(n, dk), d_k(n, dk);
      d_q.noalias() = d_scores * lc.k[hs];
      d_q *= scale;
      d_k.noalias() = d_scores.transpose() * lc.q[hs];
      d_k *= scale;

      glay.wq[hs].noalias() += lc.x_in.transpose() * d_q;
      glay.wk[hs].noalias() += lc.x_in.transpose() * d_k;
      glay.wv[hs].noalias() += lc.x_in.transpose() * d_v;
      dx.noalias() += d_q * lay.wq[hs].transpose();
      dx.noalias() += d_k * lay.wk[hs].transpose();
      dx.noalias() += d_v * lay.wv[hs].transpose();
    }
  }

  // Embedding scatter: token row plus the (tied or untied) position row.
  for (int pos = 0; pos < n; ++pos) {
    const std::int32_t id = ids[static_cast<std::size_t>(pos)];
    grads.token_embeddings.row(id) += dx.row(pos);
    if (cfg.tied)
      grads.token_embeddings.row(kJumpRowStart + pos) += dx.row(pos);
    else
      grads.position_embeddings.row(pos) += dx.row(pos);
  }
}

template <class T>
Eigen::Matrix<T, 1, Eigen::Dynamic> function_embedding_vector(const ModelParamsT<T>& params,
                                                              const EncodedFunction& ef,
                                                              bool generic_jump_inputs) {
  std::vector<std::int32_t> ids = ef.ids;
  if (generic_jump_inputs) apply_generic_jump_policy(ids, params.config.max_len);
  const MatT<T> hidden = forward_hidden(params, ids, ef.length);
  const Eigen::Matrix<T, 1, Eigen::Dynamic> t =
      hidden.row(0).unaryExpr([](T v) { return std::tanh(v); });
  return t * params.func_proj;
}

FunctionEmbedding embed_function(const ModelParams& params, const EncodedFunction& ef,
                                 bool generic_jump_inputs) {
  FunctionEmbedding out;
  out.vector = function_embedding_vector(params, ef, generic_jump_inputs);
  out.identity = ef.identity;
  return out;
}

std::vector<std::int32_t> apply_mask_plan(const std::vector<std::int32_t>& ids,
                                          const MaskPlan& plan) {
  std::vector<std::int32_t> out = ids;
  for (const auto& [pos, label] : plan.jtp_positions) {
    (void)label;
    out[static_cast<std::size_t>(pos)] = Vocabulary::Loc;
  }
  for (const auto& t : plan.mlm_positions) {
    switch (t.corruption) {
      case Corruption::Mask: out[static_cast<std::size_t>(t.position)] = Vocabulary::Mask; break;
      case Corruption::Random: out[static_cast<std::size_t>(t.position)] = t.replacement_id; break;
      case Corruption::Keep: break;
    }
  }
  return out;
}

void apply_generic_jump_policy(std::vector<std::int32_t>& ids, int max_len) {
  for (auto& id : ids)
    if (id >= kJumpRowStart && id < kJumpRowStart + max_len) id = Vocabulary::UnkJump;
}

template <class T>
T pretrain_loss_and_grads(const ModelParamsT<T>& params, std::span<const PretrainExample> batch,
                          GradientsT<T>* grads, bool generic_jump_inputs) {
  if (batch.empty()) return T(0);
  const T inv_batch = T(1) / static_cast<T>(batch.size());
  const int d = params.config.d_model;
  T total = T(0);

  EncoderCache<T> cache;
  for (const auto& ex : batch) {
    const EncodedFunction& ef = *ex.function;
    const MaskPlan& plan = *ex.plan;
    std::vector<std::int32_t> corrupted = apply_mask_plan(ef.ids, plan);
    if (generic_jump_inputs) apply_generic_jump_policy(corrupted, params.config.max_len);

    const bool want_grads = grads != nullptr;
    const MatT<T> hidden =
        forward_hidden(params, corrupted, ef.length, want_grads ? &cache : nullptr);
    MatT<T> d_hidden;
    if (want_grads) d_hidden = MatT<T>::Zero(ef.length, d);

    Eigen::Matrix<T, 1, Eigen::Dynamic> logits, d_logits;
    if (!plan.mlm_positions.empty()) {
      const T inv = T(1) / static_cast<T>(plan.mlm_positions.size());
      T mlm_loss = T(0);
      for (const auto& t : plan.mlm_positions) {
        logits = hidden.row(t.position) * params.mlm_w + params.mlm_b;
        mlm_loss += softmax_cross_entropy(logits, t.original_id, want_grads ? &d_logits : nullptr);
        if (want_grads) {
          d_logits *= inv * inv_batch;
          grads->mlm_w.noalias() += hidden.row(t.position).transpose() * d_logits;
          grads->mlm_b += d_logits;
          d_hidden.row(t.position).noalias() += d_logits * params.mlm_w.transpose();
        }
      }
      total += mlm_loss * inv * inv_batch;
    }
    if (!plan.jtp_positions.empty()) {
      const T inv = T(1) / static_cast<T>(plan.jtp_positions.size());
      T jtp_loss = T(0);
      for (const auto& [pos, label] : plan.jtp_positions) {
        logits = hidden.row(pos) * params.jtp_w + params.jtp_b;
        jtp_loss += softmax_cross_entropy(logits, label, want_grads ? &d_logits : nullptr);
        if (want_grads) {
          d_logits *= inv * inv_batch;
          grads->jtp_w.noalias() += hidden.row(pos).transpose() * d_logits;
          grads->jtp_b += d_logits;
          d_hidden.row(pos).noalias() += d_logits * params.jtp_w.transpose();
        }
      }
      total += jtp_loss * inv * inv_batch;
    }

    if (want_grads && !(plan.mlm_positions.empty() && plan.jtp_positions.empty()))
      backward_hidden(params, cache, corrupted, d_hidden, *grads);
  }
  if (!std::isfinite(static_cast<double>(total)))
    throw std::runtime_error("pretrain loss is non-finite");
  return total;
}

namespace {

// One encoder pass prepared for the embedding head, retained for backward.
template <class T>
struct EmbedWork {
  std::vector<std::int32_t> ids;
  std::int32_t length = 0;
  EncoderCache<T> cache;
  MatT<T> hidden;
  Eigen::Matrix<T, 1, Eigen::Dynamic> activ;  // tanh(CLS state)
  Eigen::Matrix<T, 1, Eigen::Dynamic> emb;
};

template <class T>
void embed_forward(const ModelParamsT<T>& params, const EncodedFunction& ef, bool generic,
                   bool want_grads, EmbedWork<T>& w) {
  w.ids = ef.ids;
  if (generic) apply_generic_jump_policy(w.ids, params.config.max_len);
  w.length = ef.length;
  w.hidden = forward_hidden(params, w.ids, ef.length, want_grads ? &w.cache : nullptr);
  w.activ = w.hidden.row(0).unaryExpr([](T v) { return std::tanh(v); });
  w.emb = w.activ * params.func_proj;
}

template <class T>
void embed_backward(const ModelParamsT<T>& params, const EmbedWork<T>& w,
                    const Eigen::Matrix<T, 1, Eigen::Dynamic>& d_emb, GradientsT<T>& grads) {
  grads.func_proj.noalias() += w.activ.transpose() * d_emb;
  const Eigen::Matrix<T, 1, Eigen::Dynamic> d_activ = d_emb * params.func_proj.transpose();
  MatT<T> d_hidden = MatT<T>::Zero(w.length, params.config.d_model);
  d_hidden.row(0) =
      (d_activ.array() * (T(1) - w.activ.array() * w.activ.array())).matrix();
  backward_hidden(params, w.cache, w.ids, d_hidden, grads);
}

// cos(u, v) with zero-norm vectors scored as 0 (partials vanish there too).
template <class T>
T cosine(const Eigen::Matrix<T, 1, Eigen::Dynamic>& u, const Eigen::Matrix<T, 1, Eigen::Dynamic>& v,
         Eigen::Matrix<T, 1, Eigen::Dynamic>* du, Eigen::Matrix<T, 1, Eigen::Dynamic>* dv,
         std::size_t* zero_norm_count) {
  const T nu = u.norm(), nv = v.norm();
  if (nu == T(0) || nv == T(0)) {
    if (zero_norm_count) ++*zero_norm_count;
    if (du) du->setZero(u.cols());
    if (dv) dv->setZero(v.cols());
    return T(0);
  }
  const T c = u.dot(v) / (nu * nv);
  if (du) *du = v / (nu * nv) - (c / (nu * nu)) * u;
  if (dv) *dv = u / (nu * nv) - (c / (nv * nv)) * v;
  return c;
}

}  // namespace

template <class T>
T triplet_loss_and_grads(const ModelParamsT<T>& params, std::span<const TripletExample> batch,
                         double margin_epsilon, GradientsT<T>* grads,
                         std::size_t* zero_norm_count, bool generic_jump_inputs) {
  if (batch.empty()) return T(0);
  const bool want_grads = grads != nullptr;
  const T inv_batch = T(1) / static_cast<T>(batch.size());
  const T eps = static_cast<T>(margin_epsilon);
  T total = T(0);

  EmbedWork<T> wa, wp, wn;
  using RVec = Eigen::Matrix<T, 1, Eigen::Dynamic>;
  RVec dp_a, dp_p, dn_a, dn_n;
  for (const auto& ex : batch) {
    embed_forward(params, *ex.anchor, generic_jump_inputs, want_grads, wa);
    embed_forward(params, *ex.positive, generic_jump_inputs, want_grads, wp);
    embed_forward(params, *ex.negative, generic_jump_inputs, want_grads, wn);

    const T cos_pos = cosine(wa.emb, wp.emb, want_grads ? &dp_a : nullptr,
                             want_grads ? &dp_p : nullptr, zero_norm_count);
    const T cos_neg = cosine(wa.emb, wn.emb, want_grads ? &dn_a : nullptr,
                             want_grads ? &dn_n : nullptr, zero_norm_count);
    const T hinge = eps - cos_pos + cos_neg;
    if (hinge <= T(0)) continue;
    total += hinge * inv_batch;
    if (!want_grads) continue;

    embed_backward(params, wa, RVec((-dp_a + dn_a) * inv_batch), *grads);
    embed_backward(params, wp, RVec(-dp_p * inv_batch), *grads);
    embed_backward(params, wn, RVec(dn_n * inv_batch), *grads);
  }
  if (!std::isfinite(static_cast<double>(total)))
    throw std::runtime_error("triplet loss is non-finite");
  return total;
}

// --- checkpoints ------------------------------------------------------------

void save_checkpoint(const ModelParams& params, const std::filesystem::path& path) {
  ContainerWriter w(kCheckpointMagic);
  w.meta()["kind"] = "model_checkpoint";
  w.meta()["config"] = params.config;
  for_each_tensor(params, [&](const std::string& name, const MatF& m) {
    w.add_f32(name, {static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())},
              m.data());
  });
  if (params.config.tied)
    w.add_row_alias("position_embeddings", "token_embeddings",
                    static_cast<std::size_t>(kJumpRowStart),
                    static_cast<std::size_t>(params.config.max_len));
  w.write(path);
}

ModelParams load_checkpoint(const std::filesystem::path& path) {
  ContainerReader r(path, kCheckpointMagic);
  if (r.meta().value("kind", std::string()) != "model_checkpoint")
    throw std::runtime_error(path.string() + ": not a model checkpoint");
  ModelConfig config = r.meta().at("config").get<ModelConfig>();
  config.validate();

  ModelParams params = init_params<float>(config);
  for_each_tensor(params, [&](const std::string& name, MatF& m) {
    const auto& desc = r.descriptor(name);
    if (desc.shape.size() != 2 || desc.shape[0] != static_cast<std::size_t>(m.rows()) ||
        desc.shape[1] != static_cast<std::size_t>(m.cols()))
      throw std::runtime_error(path.string() + ": tensor '" + name +
                               "' shape mismatch against config");
    std::copy_n(r.f32(name), static_cast<std::size_t>(m.size()), m.data());
  });
  return params;
}

// --- explicit instantiations ------------------------------------------------

template ModelParamsT<float> init_params<float>(const ModelConfig&);
template ModelParamsT<double> init_params<double>(const ModelConfig&);
template ModelParamsT<float> zero_like<float>(const ModelParamsT<float>&);
template ModelParamsT<double> zero_like<double>(const ModelParamsT<double>&);
template ModelParamsT<double> cast_params<double, float>(const ModelParamsT<float>&);
template ModelParamsT<float> cast_params<float, double>(const ModelParamsT<double>&);
template MatT<float> forward_hidden<float>(const ModelParamsT<float>&,
                                           std::span<const std::int32_t>, std::int32_t,
                                           EncoderCache<float>*, std::vector<std::vector<MatF>>*);
template MatT<double> forward_hidden<double>(const ModelParamsT<double>&,
                                             std::span<const std::int32_t>, std::int32_t,
                                             EncoderCache<double>*,
                                             std::vector<std::vector<MatT<double>>>*);
template void backward_hidden<float>(const ModelParamsT<float>&, const EncoderCache<float>&,
                                     std::span<const std::int32_t>, const MatT<float>&,
                                     GradientsT<float>&);
template void backward_hidden<double>(const ModelParamsT<double>&, const EncoderCache<double>&,
                                      std::span<const std::int32_t>, const MatT<double>&,
                                      GradientsT<double>&);
template Eigen::Matrix<float, 1, Eigen::Dynamic> function_embedding_vector<float>(
    const ModelParamsT<float>&, const EncodedFunction&, bool);
template Eigen::Matrix<double, 1, Eigen::Dynamic> function_embedding_vector<double>(
    const ModelParamsT<double>&, const EncodedFunction&, bool);
template float pretrain_loss_and_grads<float>(const ModelParamsT<float>&,
                                              std::span<const PretrainExample>, GradientsT<float>*,
                                              bool);
template double pretrain_loss_and_grads<double>(const ModelParamsT<double>&,
                                                std::span<const PretrainExample>,
                                                GradientsT<double>*, bool);
template float triplet_loss_and_grads<float>(const ModelParamsT<float>&,
                                             std::span<const TripletExample>, double,
                                             GradientsT<float>*, std::size_t*, bool);
template double triplet_loss_and_grads<double>(const ModelParamsT<double>&,
                                               std::span<const TripletExample>, double,
                                               GradientsT<double>*, std::size_t*, bool);

}  // namespace jat
