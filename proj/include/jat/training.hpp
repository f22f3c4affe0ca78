#pragma once

#include <functional>
#include <string>
#include <vector>

#include "jat/model.hpp"

namespace jat {

struct TrainConfig {
  int batch_size = 32;
  int steps = 1000;
  double learning_rate = 1e-4;  // finetune convention: 1e-5
  std::pair<double, double> adam_betas{0.9, 0.999};
  double adam_eps = 1e-8;
  int warmup_steps = 1000;  // linear warmup, then constant
  double mlm_rate = 0.15;
  double jtp_rate = 0.15;
  double margin_epsilon = 0.2;  // in (0, 0.5]
  std::uint64_t seed = 0;

  void validate() const;  // throws std::runtime_error
};

void to_json(nlohmann::json& j, const TrainConfig& c);
void from_json(const nlohmann::json& j, TrainConfig& c);

// JTP first: each jump source is selected independently with probability
// jtp_rate. MLM second over the remaining eligible positions (no CLS, no PAD,
// no special tokens, no jump sources) with probability mlm_rate; corruption is
// the 80/10/10 mask/random/keep split, random replacements drawn uniformly
// from the non-special vocabulary. Deterministic under step_seed.
MaskPlan plan_masks(const EncodedFunction& ef, const Vocabulary& vocab, const TrainConfig& cfg,
                    std::uint64_t step_seed);

// Mean MLM cross-entropy plus mean JTP cross-entropy for one plan.
float pretrain_loss(const ModelParams& params, const EncodedFunction& ef, const MaskPlan& plan);

// max(0, eps - cos(anchor, positive) + cos(anchor, negative)); zero-norm
// embeddings score cos = 0 and bump the warning counter.
float finetune_loss(const FunctionEmbedding& anchor, const FunctionEmbedding& positive,
                    const FunctionEmbedding& negative, double margin_epsilon,
                    std::size_t* zero_norm_count = nullptr);

// Index triples into a pool of encoded functions.
struct TripletBatch {
  std::vector<std::size_t> anchors, positives, negatives;
};

// Anchors/positives drawn from ground-truth pairs, negatives uniformly from
// the pool excluding the anchor's identity. Throws when the pool holds fewer
// than two distinct identities.
TripletBatch sample_triplets(const std::vector<GroundTruthPair>& pairs,
                             const std::vector<EncodedFunction>& pool, int batch_size,
                             std::uint64_t step_seed);

// Ground-truth pairs over an encoded pool, both directions of every listed
// optimization pair. Indices refer to `pool`.
std::vector<GroundTruthPair> pairs_from_encoded(
    const std::vector<EncodedFunction>& pool,
    const std::vector<std::pair<OptLevel, OptLevel>>& opt_pairs);

template <class T>
struct AdamState {
  GradientsT<T> m, v;
  std::int64_t t = 0;
};

template <class T>
AdamState<T> make_adam_state(const ModelParamsT<T>& params);

// One Adam update; the learning rate ramps linearly over warmup_steps and
// stays constant afterwards.
template <class T>
void adam_step(ModelParamsT<T>& params, const GradientsT<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg, int step);

struct TrainLogEntry {
  int step = 0;
  std::string objective;
  double loss = 0.0;
};
using StepCallback = std::function<void(const TrainLogEntry&)>;

struct TrainOptions {
  StepCallback on_step;
  // Ablation baseline arm: JUMP_i inputs hidden behind <unk_jump>.
  bool generic_jump_inputs = false;
  // Checkpoint sink invoked every `checkpoint_interval` steps when set.
  int checkpoint_interval = 0;
  std::function<void(const ModelParams&, int step)> on_checkpoint;
};

// MLM + JTP pre-training. Deterministic under cfg.seed; aborts with the step
// number if the loss turns non-finite.
void pretrain(ModelParams& params, const std::vector<EncodedFunction>& corpus,
              const Vocabulary& vocab, const TrainConfig& cfg, const TrainOptions& opts = {});

// Cosine-margin triplet fine-tuning over ground-truth pairs.
void finetune(ModelParams& params, const std::vector<GroundTruthPair>& pairs,
              const std::vector<EncodedFunction>& pool, const TrainConfig& cfg,
              const TrainOptions& opts = {});

}  // namespace jat
