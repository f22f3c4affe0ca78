#include "jat/training.hpp"
#include <map>

#include <cmath>
#include <stdexcept>

#include "jat/rng.hpp"

namespace jat {

void TrainConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::runtime_error("train config: " + msg); };
  if (batch_size < 1) fail("batch_size must be >= 1");
  if (steps < 0) fail("steps must be >= 0");
  if (!(learning_rate > 0)) fail("learning_rate must be positive");
  if (!(adam_betas.first >= 0 && adam_betas.first < 1)) fail("beta1 out of range");
  if (!(adam_betas.second >= 0 && adam_betas.second < 1)) fail("beta2 out of range");
  if (!(adam_eps > 0)) fail("adam_eps must be positive");
  if (warmup_steps < 0) fail("warmup_steps must be >= 0");
  if (mlm_rate < 0 || mlm_rate > 1) fail("mlm_rate must be in [0, 1]");
  if (jtp_rate < 0 || jtp_rate > 1) fail("jtp_rate must be in [0, 1]");
  if (!(margin_epsilon > 0 && margin_epsilon <= 0.5)) fail("margin_epsilon must be in (0, 0.5]");
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"batch_size", c.batch_size},
                     {"steps", c.steps},
                     {"learning_rate", c.learning_rate},
                     {"adam_beta1", c.adam_betas.first},
                     {"adam_beta2", c.adam_betas.second},
                     {"adam_eps", c.adam_eps},
                     {"warmup_steps", c.warmup_steps},
                     {"mlm_rate", c.mlm_rate},
                     {"jtp_rate", c.jtp_rate},
                     {"margin_epsilon", c.margin_epsilon},
                     {"seed", c.seed}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.batch_size = j.value("batch_size", c.batch_size);
  c.steps = j.value("steps", c.steps);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.adam_betas.first = j.value("adam_beta1", c.adam_betas.first);
  c.adam_betas.second = j.value("adam_beta2", c.adam_betas.second);
  c.adam_eps = j.value("adam_eps", c.adam_eps);
  c.warmup_steps = j.value("warmup_steps", c.warmup_steps);
  c.mlm_rate = j.value("mlm_rate", c.mlm_rate);
  c.jtp_rate = j.value("jtp_rate", c.jtp_rate);
  c.margin_epsilon = j.value("margin_epsilon", c.margin_epsilon);
  c.seed = j.value("seed", c.seed);
}

MaskPlan plan_masks(const EncodedFunction& ef, const Vocabulary& vocab, const TrainConfig& cfg,
                    std::uint64_t step_seed) {
  MaskPlan plan;
  Rng rng(derive_seed(step_seed, 0x3A5C));

  std::vector<bool> is_jump_source(static_cast<std::size_t>(ef.length), false);
  for (const auto& [src, tgt] : ef.jump_pairs) {
    is_jump_source[static_cast<std::size_t>(src)] = true;
    if (rng.bernoulli(cfg.jtp_rate)) plan.jtp_positions.emplace_back(src, tgt);
  }

  // Random replacements come from the non-special vocabulary.
  const std::int32_t first_regular = Vocabulary::kNumSpecials;
  const std::int32_t regular_count = static_cast<std::int32_t>(vocab.size()) - first_regular;

  for (std::int32_t pos = 1; pos < ef.length; ++pos) {
    const std::int32_t id = ef.ids[static_cast<std::size_t>(pos)];
    if (vocab.is_special_id(id)) continue;
    if (is_jump_source[static_cast<std::size_t>(pos)]) continue;
    if (vocab.is_jump_id(id)) continue;  // unsampled jump ids stay out of MLM
    if (!rng.bernoulli(cfg.mlm_rate)) continue;
    MlmTarget t;
    t.position = pos;
    t.original_id = id;
    const double u = rng.uniform();
    if (u < 0.8) {
      t.corruption = Corruption::Mask;
    } else if (u < 0.9) {
      t.corruption = Corruption::Random;
      t.replacement_id = first_regular + static_cast<std::int32_t>(
                                             rng.below(static_cast<std::uint64_t>(regular_count)));
    } else {
      t.corruption = Corruption::Keep;
    }
    plan.mlm_positions.push_back(t);
  }
  return plan;
}

float pretrain_loss(const ModelParams& params, const EncodedFunction& ef, const MaskPlan& plan) {
  const PretrainExample ex{&ef, &plan};
  return pretrain_loss_and_grads<float>(params, {&ex, 1}, nullptr);
}

namespace {

double cosine_or_zero(const Eigen::RowVectorXf& u, const Eigen::RowVectorXf& v,
                      std::size_t* zero_norm_count) {
  const double nu = u.norm(), nv = v.norm();
  if (nu == 0.0 || nv == 0.0) {
    if (zero_norm_count) ++*zero_norm_count;
    return 0.0;
  }
  return u.cast<double>().dot(v.cast<double>()) / (nu * nv);
}

}  // namespace

float finetune_loss(const FunctionEmbedding& anchor, const FunctionEmbedding& positive,
                    const FunctionEmbedding& negative, double margin_epsilon,
                    std::size_t* zero_norm_count) {
  const double cos_pos = cosine_or_zero(anchor.vector, positive.vector, zero_norm_count);
  const double cos_neg = cosine_or_zero(anchor.vector, negative.vector, zero_norm_count);
  return static_cast<float>(std::max(0.0, margin_epsilon - cos_pos + cos_neg));
}

TripletBatch sample_triplets(const std::vector<GroundTruthPair>& pairs,
                             const std::vector<EncodedFunction>& pool, int batch_size,
                             std::uint64_t step_seed) {
  if (pairs.empty()) throw std::runtime_error("sample_triplets: no ground-truth pairs");
  bool second_identity = false;
  for (const auto& ef : pool)
    if (!ef.identity.same_identity(pool.front().identity)) {
      second_identity = true;
      break;
    }
  if (!second_identity)
    throw std::runtime_error("sample_triplets: pool holds fewer than two identities");

  TripletBatch batch;
  Rng rng(derive_seed(step_seed, 0x7217));
  for (int i = 0; i < batch_size; ++i) {
    const auto& pair = pairs[rng.below(pairs.size())];
    const FunctionRef& anchor_id = pool[pair.query_index].identity;
    std::size_t neg;
    do {
      neg = rng.below(pool.size());
    } while (pool[neg].identity.same_identity(anchor_id));
    batch.anchors.push_back(pair.query_index);
    batch.positives.push_back(pair.target_index);
    batch.negatives.push_back(neg);
  }
  return batch;
}

std::vector<GroundTruthPair> pairs_from_encoded(
    const std::vector<EncodedFunction>& pool,
    const std::vector<std::pair<OptLevel, OptLevel>>& opt_pairs) {
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<std::pair<OptLevel, Key>, std::size_t> first_at;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const auto& id = pool[i].identity;
    first_at.emplace(std::make_pair(id.opt, Key{id.project, id.binary, id.function_name}), i);
  }
  std::vector<GroundTruthPair> pairs;
  auto one_direction = [&](OptLevel a, OptLevel b) {
    for (std::size_t i = 0; i < pool.size(); ++i) {
      const auto& id = pool[i].identity;
      if (id.opt != a) continue;
      const auto it =
          first_at.find(std::make_pair(b, Key{id.project, id.binary, id.function_name}));
      if (it == first_at.end()) continue;
      pairs.push_back(GroundTruthPair{i, it->second});
    }
  };
  for (const auto& [a, b] : opt_pairs) {
    one_direction(a, b);
    one_direction(b, a);
  }
  return pairs;
}

template <class T>
AdamState<T> make_adam_state(const ModelParamsT<T>& params) {
  AdamState<T> s;
  s.m = zero_like(params);
  s.v = zero_like(params);
  return s;
}

template <class T>
void adam_step(ModelParamsT<T>& params, const GradientsT<T>& grads, AdamState<T>& state,
               const TrainConfig& cfg, int step) {
  const double warm =
      cfg.warmup_steps > 0 ? std::min(1.0, (step + 1) / static_cast<double>(cfg.warmup_steps)) : 1.0;
  const double lr = cfg.learning_rate * warm;
  const double b1 = cfg.adam_betas.first, b2 = cfg.adam_betas.second;
  ++state.t;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(state.t));

  std::vector<const MatT<T>*> gs;
  for_each_tensor(grads, [&](const std::string&, const MatT<T>& g) { gs.push_back(&g); });
  std::vector<MatT<T>*> ms, vs;
  for_each_tensor(state.m, [&](const std::string&, MatT<T>& m) { ms.push_back(&m); });
  for_each_tensor(state.v, [&](const std::string&, MatT<T>& m) { vs.push_back(&m); });

  std::size_t i = 0;
  for_each_tensor(params, [&](const std::string&, MatT<T>& w) {
    const auto& g = *gs[i];
    auto& m = *ms[i];
    auto& v = *vs[i];
    ++i;
    m = (m * T(b1) + g * T(1.0 - b1)).eval();
    v = (v.array() * T(b2) + g.array().square() * T(1.0 - b2)).matrix().eval();
    const auto mhat = (m.array() / T(bc1)).eval();
    const auto vhat = (v.array() / T(bc2)).eval();
    w.array() -= T(lr) * mhat / (vhat.sqrt() + T(cfg.adam_eps));
  });
}

template AdamState<float> make_adam_state<float>(const ModelParamsT<float>&);
template AdamState<double> make_adam_state<double>(const ModelParamsT<double>&);
template void adam_step<float>(ModelParamsT<float>&, const GradientsT<float>&, AdamState<float>&,
                               const TrainConfig&, int);
template void adam_step<double>(ModelParamsT<double>&, const GradientsT<double>&,
                                AdamState<double>&, const TrainConfig&, int);

namespace {

void check_finite_loss(double loss, int step, const char* objective) {
  if (!std::isfinite(loss))
    throw std::runtime_error(std::string(objective) + " diverged at step " + std::to_string(step) +
                             ": non-finite loss");
}

}  // namespace

void pretrain(ModelParams& params, const std::vector<EncodedFunction>& corpus,
              const Vocabulary& vocab, const TrainConfig& cfg, const TrainOptions& opts) {
  cfg.validate();
  if (corpus.empty()) throw std::runtime_error("pretrain: empty corpus");
  auto state = make_adam_state(params);
  GradientsT<float> grads = zero_like(params);

  std::vector<MaskPlan> plans(static_cast<std::size_t>(cfg.batch_size));
  std::vector<PretrainExample> batch(static_cast<std::size_t>(cfg.batch_size));
  for (int step = 0; step < cfg.steps; ++step) {
    Rng pick(derive_seed(cfg.seed, 0xBA7C, static_cast<std::uint64_t>(step)));
    for (int i = 0; i < cfg.batch_size; ++i) {
      const std::size_t idx = pick.below(corpus.size());
      const auto& ef = corpus[idx];
      plans[static_cast<std::size_t>(i)] = plan_masks(
          ef, vocab, cfg, derive_seed(cfg.seed, static_cast<std::uint64_t>(step), static_cast<std::uint64_t>(i)));
      batch[static_cast<std::size_t>(i)] = PretrainExample{&ef, &plans[static_cast<std::size_t>(i)]};
    }
    for_each_tensor(grads, [](const std::string&, MatF& m) { m.setZero(); });
    const float loss =
        pretrain_loss_and_grads<float>(params, batch, &grads, opts.generic_jump_inputs);
    check_finite_loss(loss, step, "pretrain");
    adam_step(params, grads, state, cfg, step);
    if (opts.on_step) opts.on_step(TrainLogEntry{step, "pretrain", loss});
    if (opts.on_checkpoint && opts.checkpoint_interval > 0 &&
        (step + 1) % opts.checkpoint_interval == 0)
      opts.on_checkpoint(params, step);
  }
}

void finetune(ModelParams& params, const std::vector<GroundTruthPair>& pairs,
              const std::vector<EncodedFunction>& pool, const TrainConfig& cfg,
              const TrainOptions& opts) {
  cfg.validate();
  if (pool.empty()) throw std::runtime_error("finetune: empty pool");
  if (cfg.steps > 0 && pairs.empty()) throw std::runtime_error("finetune: no ground-truth pairs");
  auto state = make_adam_state(params);
  GradientsT<float> grads = zero_like(params);

  std::vector<TripletExample> batch(static_cast<std::size_t>(cfg.batch_size));
  for (int step = 0; step < cfg.steps; ++step) {
    const TripletBatch tb = sample_triplets(
        pairs, pool, cfg.batch_size, derive_seed(cfg.seed, 0xF17E, static_cast<std::uint64_t>(step)));
    for (int i = 0; i < cfg.batch_size; ++i) {
      const auto s = static_cast<std::size_t>(i);
      batch[s] = TripletExample{&pool[tb.anchors[s]], &pool[tb.positives[s]], &pool[tb.negatives[s]]};
    }
    for_each_tensor(grads, [](const std::string&, MatF& m) { m.setZero(); });
    std::size_t zero_norms = 0;
    const float loss = triplet_loss_and_grads<float>(params, batch, cfg.margin_epsilon, &grads,
                                                     &zero_norms, opts.generic_jump_inputs);
    check_finite_loss(loss, step, "finetune");
    adam_step(params, grads, state, cfg, step);
    if (opts.on_step) opts.on_step(TrainLogEntry{step, "finetune", loss});
    if (opts.on_checkpoint && opts.checkpoint_interval > 0 &&
        (step + 1) % opts.checkpoint_interval == 0)
      opts.on_checkpoint(params, step);
  }
}

}  // namespace jat
