#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "jat/normalizer.hpp"

namespace jat {

template <class T>
using MatT = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MatF = MatT<float>;

// Token-embedding row that doubles as position row 0 sits at this offset
// (right after the special tokens): JUMP_i lives at row kJumpRowStart + i.
inline constexpr int kJumpRowStart = Vocabulary::kNumSpecials;

struct ModelConfig {
  int num_layers = 4;
  int d_model = 128;
  int num_heads = 4;
  int d_ff = 512;
  int d_f = 128;       // function-embedding dimension
  int max_len = 512;   // must match the normalizer's
  int vocab_size = 0;  // set from the vocabulary
  std::uint64_t seed = 0;
  // Tied: position row i and the JUMP_i token-embedding row are one storage.
  // Untied keeps an independent position table (ablation baseline).
  bool tied = true;

  int d_k() const { return d_model / num_heads; }
  void validate() const;  // throws std::runtime_error
};

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);

template <class T>
struct LayerParamsT {
  std::vector<MatT<T>> wq, wk, wv;  // per head, d_model x d_k
  MatT<T> wo;                       // (H*d_k) x d_model
  MatT<T> ffn_w1, ffn_b1;           // d_model x d_ff, 1 x d_ff
  MatT<T> ffn_w2, ffn_b2;           // d_ff x d_model, 1 x d_model
  MatT<T> ln1_gain, ln1_bias;       // 1 x d_model
  MatT<T> ln2_gain, ln2_bias;
};

template <class T>
struct ModelParamsT {
  ModelConfig config;
  // vocab_size x d_model; when tied, rows [kJumpRowStart, kJumpRowStart+max_len)
  // are simultaneously the position-embedding table.
  MatT<T> token_embeddings;
  MatT<T> position_embeddings;  // max_len x d_model; empty (0x0) when tied
  std::vector<LayerParamsT<T>> layers;
  MatT<T> mlm_w, mlm_b;  // d_model x vocab, 1 x vocab
  MatT<T> jtp_w, jtp_b;  // d_model x max_len, 1 x max_len
  MatT<T> func_proj;     // d_model x d_f

  // Both views of the shared storage observe writes through either one.
  auto position_row(int i) {
    return config.tied ? token_embeddings.row(kJumpRowStart + i) : position_embeddings.row(i);
  }
  auto position_row(int i) const {
    return config.tied ? token_embeddings.row(kJumpRowStart + i) : position_embeddings.row(i);
  }
};

using ModelParams = ModelParamsT<float>;
// Gradients are shape-congruent to the parameters; the tied rows accumulate
// both the token-usage and the position-usage contributions.
template <class T>
using GradientsT = ModelParamsT<T>;

// Fixed tensor iteration order shared by the optimizer, the checkpoint format
// and the tests. Visits fn(name, matrix).
template <class T, class Fn>
void for_each_tensor(ModelParamsT<T>& p, Fn&& fn) {
  fn("token_embeddings", p.token_embeddings);
  for (std::size_t l = 0; l < p.layers.size(); ++l) {
    auto& lay = p.layers[l];
    const std::string prefix = "layer" + std::to_string(l) + ".";
    for (std::size_t h = 0; h < lay.wq.size(); ++h) {
      const std::string hp = prefix + "head" + std::to_string(h) + ".";
      fn(hp + "wq", lay.wq[h]);
      fn(hp + "wk", lay.wk[h]);
      fn(hp + "wv", lay.wv[h]);
    }
    fn(prefix + "wo", lay.wo);
    fn(prefix + "ffn_w1", lay.ffn_w1);
    fn(prefix + "ffn_b1", lay.ffn_b1);
    fn(prefix + "ffn_w2", lay.ffn_w2);
    fn(prefix + "ffn_b2", lay.ffn_b2);
    fn(prefix + "ln1_gain", lay.ln1_gain);
    fn(prefix + "ln1_bias", lay.ln1_bias);
    fn(prefix + "ln2_gain", lay.ln2_gain);
    fn(prefix + "ln2_bias", lay.ln2_bias);
  }
  fn("mlm_w", p.mlm_w);
  fn("mlm_b", p.mlm_b);
  fn("jtp_w", p.jtp_w);
  fn("jtp_b", p.jtp_b);
  fn("func_proj", p.func_proj);
  if (!p.config.tied) fn("position_embeddings", p.position_embeddings);
}

template <class T, class Fn>
void for_each_tensor(const ModelParamsT<T>& p, Fn&& fn) {
  for_each_tensor(const_cast<ModelParamsT<T>&>(p),
                  [&](const std::string& name, MatT<T>& m) { fn(name, std::as_const(m)); });
}

// Weights ~ N(0, 0.02^2), biases zero, layer-norm gains one; deterministic
// under config.seed. The untied position table is drawn last so both arms of
// an ablation share every other tensor's initialization.
template <class T>
ModelParamsT<T> init_params(const ModelConfig& config);

template <class T>
ModelParamsT<T> zero_like(const ModelParamsT<T>& p);

template <class U, class T>
ModelParamsT<U> cast_params(const ModelParamsT<T>& p);

// --- forward / backward ---------------------------------------------------

template <class T>
struct LayerCache {
  MatT<T> x_in;
  std::vector<MatT<T>> q, k, v, probs;  // per head
  MatT<T> concat;
  MatT<T> xhat1;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd1;
  MatT<T> y;  // LN1 output, FFN input
  MatT<T> f1, g;
  MatT<T> xhat2;
  Eigen::Matrix<T, Eigen::Dynamic, 1> rstd2;
};

template <class T>
struct EncoderCache {
  std::vector<LayerCache<T>> layers;
};

// Runs the encoder over the first `length` positions (PAD never enters the
// computation, which is equivalent to the additive -inf attention mask).
// Returns final-layer hidden states, length x d_model. `attention`, when
// non-null, receives per-layer per-head softmax matrices.
// Throws on non-finite activations, naming the layer.
template <class T>
MatT<T> forward_hidden(const ModelParamsT<T>& params, std::span<const std::int32_t> ids,
                       std::int32_t length, EncoderCache<T>* cache = nullptr,
                       std::vector<std::vector<MatT<T>>>* attention = nullptr);

template <class T>
void backward_hidden(const ModelParamsT<T>& params, const EncoderCache<T>& cache,
                     std::span<const std::int32_t> ids, const MatT<T>& d_hidden,
                     GradientsT<T>& grads);

// E_f = tanh(final CLS state) * W^F
template <class T>
Eigen::Matrix<T, 1, Eigen::Dynamic> function_embedding_vector(const ModelParamsT<T>& params,
                                                              const EncodedFunction& ef,
                                                              bool generic_jump_inputs = false);

struct FunctionEmbedding {
  Eigen::RowVectorXf vector;
  FunctionRef identity;
};

FunctionEmbedding embed_function(const ModelParams& params, const EncodedFunction& ef,
                                 bool generic_jump_inputs = false);

// --- corruption plans and losses -------------------------------------------

enum class Corruption : std::uint8_t { Mask, Random, Keep };

struct MlmTarget {
  std::int32_t position = 0;
  std::int32_t original_id = 0;
  Corruption corruption = Corruption::Mask;
  std::int32_t replacement_id = 0;  // used when corruption == Random
};

// Positions selected for corruption plus the labels needed to score them.
// mlm and jtp position sets are disjoint; jump sources are JTP-only.
struct MaskPlan {
  std::vector<MlmTarget> mlm_positions;
  std::vector<std::pair<std::int32_t, std::int32_t>> jtp_positions;  // (source pos, target pos)
};

std::vector<std::int32_t> apply_mask_plan(const std::vector<std::int32_t>& ids,
                                          const MaskPlan& plan);

// Ablation input policy: hide every JUMP_i behind <unk_jump>.
void apply_generic_jump_policy(std::vector<std::int32_t>& ids, int max_len);

struct PretrainExample {
  const EncodedFunction* function = nullptr;
  const MaskPlan* plan = nullptr;
};

struct TripletExample {
  const EncodedFunction* anchor = nullptr;
  const EncodedFunction* positive = nullptr;
  const EncodedFunction* negative = nullptr;
};

// Mean over batch elements of (mean MLM cross-entropy + mean JTP
// cross-entropy); empty position sets contribute zero. Gradients accumulate
// into `grads` when non-null.
template <class T>
T pretrain_loss_and_grads(const ModelParamsT<T>& params, std::span<const PretrainExample> batch,
                          GradientsT<T>* grads, bool generic_jump_inputs = false);

// Mean over batch of max(0, eps - cos(f, g+) + cos(f, g-)). Zero-norm
// embeddings contribute cos = 0 and bump *zero_norm_count.
template <class T>
T triplet_loss_and_grads(const ModelParamsT<T>& params, std::span<const TripletExample> batch,
                         double margin_epsilon, GradientsT<T>* grads,
                         std::size_t* zero_norm_count = nullptr,
                         bool generic_jump_inputs = false);

// --- checkpoints ------------------------------------------------------------

inline constexpr const char* kCheckpointMagic = "JTRNCKPT";

// Little-endian f32 manifest+blob container. Tied tensors are stored once;
// the manifest marks position_embeddings as an alias of the jump-block rows.
// save -> load -> save is byte-identical.
void save_checkpoint(const ModelParams& params, const std::filesystem::path& path);
ModelParams load_checkpoint(const std::filesystem::path& path);

}  // namespace jat
