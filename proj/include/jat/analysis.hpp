#pragma once

#include <map>
#include <span>
#include <string>
#include <vector>

#include "jat/retrieval.hpp"
#include "jat/training.hpp"

namespace jat {

struct AttentionAuditConfig {
  int d = 32;
  double sigma = 1.0;
  std::int64_t num_samples = 20000;  // per projection draw
  std::uint64_t seed = 0;
  // Independent (q, k) draws; the positivity/match property must hold for
  // each one, which is stronger than a single draw.
  int num_projections = 3;

  void validate() const;
};

// One (q, k) draw. J = q k^T / sqrt(d) with singular values s_n. The audited
// statistic applies J's singular spectrum diagonally (A_ij = E_i diag(s) E_j^T),
// which is the quantity whose expectation the tied-embedding analysis gives in
// closed form as sigma^2 * sum_n s_n. The raw bilinear statistic
// E_i J E_j^T has expectation sigma^2 * trace(J) instead -- the orthogonal SVD
// factors do not cancel -- and is reported alongside for comparison.
struct AttentionAuditProjection {
  double predicted_mean = 0.0;  // sigma^2 * sum s_n
  double empirical_mean = 0.0;
  double std_error = 0.0;
  double z_score_positive = 0.0;  // empirical_mean / std_error
  double control_mean = 0.0;      // tie removed: P_j drawn independently
  double control_std_error = 0.0;
  double control_z = 0.0;
  double raw_predicted_mean = 0.0;  // sigma^2 * trace(J)
  double raw_empirical_mean = 0.0;
  double raw_std_error = 0.0;
};

struct AttentionAuditReport {
  AttentionAuditConfig config;
  // Pooled across projection draws (equal sample counts per draw).
  double empirical_mean = 0.0;
  double predicted_mean = 0.0;
  double std_error = 0.0;
  double z_score_positive = 0.0;
  double control_mean = 0.0;
  double control_z = 0.0;
  std::vector<AttentionAuditProjection> projections;
};

AttentionAuditReport audit_jump_attention(const AttentionAuditConfig& cfg);

nlohmann::json attention_audit_to_json(const AttentionAuditReport& report);
// One row per (d, sigma): d,sigma,empirical_mean,predicted_mean,std_error,z,control_mean,control_z
void write_attention_audit_csv(std::span<const AttentionAuditReport> reports,
                               const std::filesystem::path& path);

struct JtpProbeReport {
  std::map<int, double> topk_accuracy;
  std::size_t num_instances = 0;
};

// Masks sampled jump sources with <loc> and ranks the JTP head's logits.
// Throws when the corpus contains no jump pairs.
JtpProbeReport jtp_probe(const ModelParams& params, std::span<const EncodedFunction> corpus,
                         double sample_rate, std::uint64_t seed, std::vector<int> ks = {1, 3, 5, 10},
                         bool generic_jump_inputs = false);

nlohmann::json jtp_probe_to_json(const JtpProbeReport& report);

struct AblationEvalConfig {
  std::vector<std::pair<OptLevel, OptLevel>> opt_pairs{{OptLevel::O0, OptLevel::O1},
                                                       {OptLevel::O0, OptLevel::O2},
                                                       {OptLevel::O1, OptLevel::O2}};
  std::size_t pool_size = 100;
  std::uint64_t eval_seed = 1;
  double train_fraction = 0.8;  // project-level split; queries come from the held-out part
  std::uint64_t split_seed = 7;
};

struct AblationArm {
  std::map<std::string, double> recall_at_1;  // per opt pair
  double average_recall_at_1 = 0.0;
};

struct AblationReport {
  AblationArm jump_aware;
  AblationArm fixed_token;
  std::map<std::string, double> delta;  // jump_aware - fixed_token, per pair
  double average_delta = 0.0;
  std::size_t num_train_functions = 0;
  std::size_t num_test_functions = 0;
};

struct AblationArtifacts {
  ModelParams jump_aware;
  ModelParams jump_aware_pretrained;  // snapshot before fine-tuning
  ModelParams fixed_token;
  Vocabulary vocab;
  std::vector<EncodedFunction> encoded_corpus;  // full corpus (train + test)
  std::vector<EncodedFunction> encoded_test;    // held-out split
};

// Trains the jump-aware arm and the fixed-token baseline (every JUMP_i input
// replaced by <unk_jump>, independent position storage) with identical seeds
// and bit-identical data order, then evaluates both on identical pools.
// `artifacts`, when non-null, receives the trained models for reuse.
AblationReport run_ablation(std::vector<FunctionRecord> corpus, const ModelConfig& model_cfg,
                            const TrainConfig& pretrain_cfg, const TrainConfig& finetune_cfg,
                            const AblationEvalConfig& eval_cfg, std::size_t vocab_max_size,
                            AblationArtifacts* artifacts = nullptr,
                            const StepCallback& on_step = {});

nlohmann::json ablation_to_json(const AblationReport& report);

}  // namespace jat
