#include "jat/analysis.hpp"

#include <Eigen/SVD>
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>

#include "jat/parallel.hpp"
#include "jat/rng.hpp"

namespace jat {

void AttentionAuditConfig::validate() const {
  auto fail = [](const std::string& msg) { throw std::runtime_error("audit config: " + msg); };
  if (d < 2) fail("d must be >= 2");
  if (!(sigma > 0)) fail("sigma must be positive");
  if (num_samples < 1000) fail("num_samples must be >= 1000");
  if (num_projections < 1) fail("num_projections must be >= 1");
}

namespace {

using MatD = Eigen::MatrixXd;
using VecD = Eigen::VectorXd;

struct Accum {
  double sum = 0.0, sumsq = 0.0;
  std::int64_t n = 0;
  void add(double x) {
    sum += x;
    sumsq += x * x;
    ++n;
  }
  double mean() const { return sum / static_cast<double>(n); }
  double std_error() const {
    const double m = mean();
    const double var = sumsq / static_cast<double>(n) - m * m;
    return std::sqrt(std::max(var, 0.0) / static_cast<double>(n));
  }
};

void fill_vec(VecD& v, Rng& rng, double sigma) {
  for (Eigen::Index i = 0; i < v.size(); ++i) v(i) = rng.normal() * sigma;
}

}  // namespace

AttentionAuditReport audit_jump_attention(const AttentionAuditConfig& cfg) {
  cfg.validate();
  AttentionAuditReport report;
  report.config = cfg;
  report.projections.resize(static_cast<std::size_t>(cfg.num_projections));

  parallel_for(static_cast<std::size_t>(cfg.num_projections), [&](std::size_t proj) {
    Rng rng(derive_seed(cfg.seed, 0xA0D1, proj));
    const int d = cfg.d;
    MatD q(d, d), k(d, d);
    for (Eigen::Index i = 0; i < q.size(); ++i) q.data()[i] = rng.normal();
    for (Eigen::Index i = 0; i < k.size(); ++i) k.data()[i] = rng.normal();
    const MatD J = q * k.transpose() / std::sqrt(static_cast<double>(d));
    const Eigen::JacobiSVD<MatD> svd(J);
    const VecD s = svd.singularValues();

    auto& p = report.projections[proj];
    p.predicted_mean = cfg.sigma * cfg.sigma * s.sum();
    p.raw_predicted_mean = cfg.sigma * cfg.sigma * J.trace();

    Accum tied, control, raw;
    VecD ti(d), pi(d), tj(d), tl(d), pl(d), pj_control(d);
    VecD ei(d), ej(d), el(d);
    for (std::int64_t it = 0; it < cfg.num_samples; ++it) {
      fill_vec(ti, rng, cfg.sigma);
      fill_vec(pi, rng, cfg.sigma);
      fill_vec(tj, rng, cfg.sigma);
      fill_vec(tl, rng, cfg.sigma);
      fill_vec(pl, rng, cfg.sigma);
      ei = ti + pi;
      ej = tj + ti;  // tie: P_j = T_i
      el = tl + pl;

      // Diagonalized statistic: the spectrum of J applied coordinate-wise.
      const double a_ij = (ei.array() * s.array() * ej.array()).sum();
      const double a_il = (ei.array() * s.array() * el.array()).sum();
      tied.add(a_ij - a_il);

      // Raw bilinear statistic for comparison (expectation sigma^2 tr J).
      const VecD jei = J.transpose() * ei;
      raw.add(jei.dot(ej) - jei.dot(el));

      // Control: tie removed, P_j independent.
      fill_vec(pj_control, rng, cfg.sigma);
      ej = tj + pj_control;
      const double c_ij = (ei.array() * s.array() * ej.array()).sum();
      control.add(c_ij - a_il);
    }

    p.empirical_mean = tied.mean();
    p.std_error = tied.std_error();
    p.z_score_positive = p.empirical_mean / p.std_error;
    p.control_mean = control.mean();
    p.control_std_error = control.std_error();
    p.control_z = p.control_mean / p.control_std_error;
    p.raw_empirical_mean = raw.mean();
    p.raw_std_error = raw.std_error();
  });

  const double np = static_cast<double>(cfg.num_projections);
  double se2 = 0.0, cse2 = 0.0;
  for (const auto& p : report.projections) {
    report.empirical_mean += p.empirical_mean / np;
    report.predicted_mean += p.predicted_mean / np;
    report.control_mean += p.control_mean / np;
    se2 += p.std_error * p.std_error;
    cse2 += p.control_std_error * p.control_std_error;
  }
  report.std_error = std::sqrt(se2) / np;
  report.z_score_positive = report.empirical_mean / report.std_error;
  report.control_z = report.control_mean / (std::sqrt(cse2) / np);
  return report;
}

nlohmann::json attention_audit_to_json(const AttentionAuditReport& r) {
  nlohmann::json projections = nlohmann::json::array();
  for (const auto& p : r.projections)
    projections.push_back(nlohmann::json{{"predicted_mean", p.predicted_mean},
                                         {"empirical_mean", p.empirical_mean},
                                         {"std_error", p.std_error},
                                         {"z_score_positive", p.z_score_positive},
                                         {"control_mean", p.control_mean},
                                         {"control_std_error", p.control_std_error},
                                         {"control_z", p.control_z},
                                         {"raw_predicted_mean", p.raw_predicted_mean},
                                         {"raw_empirical_mean", p.raw_empirical_mean},
                                         {"raw_std_error", p.raw_std_error}});
  return nlohmann::json{{"d", r.config.d},
                        {"sigma", r.config.sigma},
                        {"num_samples", r.config.num_samples},
                        {"num_projections", r.config.num_projections},
                        {"seed", r.config.seed},
                        {"empirical_mean", r.empirical_mean},
                        {"predicted_mean", r.predicted_mean},
                        {"std_error", r.std_error},
                        {"z_score_positive", r.z_score_positive},
                        {"control_mean", r.control_mean},
                        {"control_z", r.control_z},
                        {"projections", std::move(projections)}};
}

void write_attention_audit_csv(std::span<const AttentionAuditReport> reports,
                               const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path.string());
  out << "d,sigma,empirical_mean,predicted_mean,std_error,z_score_positive,control_mean,control_z\n";
  char buf[256];
  for (const auto& r : reports) {
    std::snprintf(buf, sizeof(buf), "%d,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", r.config.d,
                  r.config.sigma, r.empirical_mean, r.predicted_mean, r.std_error,
                  r.z_score_positive, r.control_mean, r.control_z);
    out << buf;
  }
}

JtpProbeReport jtp_probe(const ModelParams& params, std::span<const EncodedFunction> corpus,
                         double sample_rate, std::uint64_t seed, std::vector<int> ks,
                         bool generic_jump_inputs) {
  bool any_jump = false;
  for (const auto& ef : corpus)
    if (!ef.jump_pairs.empty()) {
      any_jump = true;
      break;
    }
  if (!any_jump) throw std::runtime_error("jtp_probe: corpus has no jump tokens");
  std::sort(ks.begin(), ks.end());

  struct PerFunction {
    std::vector<std::size_t> hits_at;  // parallel to ks
    std::size_t instances = 0;
  };
  std::vector<PerFunction> results(corpus.size());

  parallel_for(corpus.size(), [&](std::size_t fi) {
    const auto& ef = corpus[fi];
    auto& res = results[fi];
    res.hits_at.assign(ks.size(), 0);
    if (ef.jump_pairs.empty()) return;

    Rng rng(derive_seed(seed, 0x1B0B, fi));
    std::vector<std::pair<std::int32_t, std::int32_t>> selected;
    for (const auto& jp : ef.jump_pairs)
      if (rng.bernoulli(sample_rate)) selected.push_back(jp);
    if (selected.empty()) return;

    std::vector<std::int32_t> ids = ef.ids;
    for (const auto& [src, tgt] : selected) ids[static_cast<std::size_t>(src)] = Vocabulary::Loc;
    if (generic_jump_inputs) apply_generic_jump_policy(ids, params.config.max_len);

    const MatF hidden = forward_hidden<float>(params, ids, ef.length);
    for (const auto& [src, tgt] : selected) {
      const Eigen::RowVectorXf logits = hidden.row(src) * params.jtp_w + params.jtp_b;
      // Pessimistic rank: ties ahead of the label count against it.
      std::int32_t rank = 1;
      const float lt = logits(tgt);
      for (Eigen::Index c = 0; c < logits.size(); ++c) {
        if (c == tgt) continue;
        if (logits(c) > lt || (logits(c) == lt && c < tgt)) ++rank;
      }
      ++res.instances;
      for (std::size_t ki = 0; ki < ks.size(); ++ki)
        if (rank <= ks[ki]) ++res.hits_at[ki];
    }
  });

  JtpProbeReport report;
  std::vector<std::size_t> hits(ks.size(), 0);
  for (const auto& r : results) {
    report.num_instances += r.instances;
    for (std::size_t ki = 0; ki < ks.size(); ++ki) hits[ki] += r.hits_at.empty() ? 0 : r.hits_at[ki];
  }
  for (std::size_t ki = 0; ki < ks.size(); ++ki)
    report.topk_accuracy[ks[ki]] =
        report.num_instances == 0
            ? 0.0
            : static_cast<double>(hits[ki]) / static_cast<double>(report.num_instances);
  return report;
}

nlohmann::json jtp_probe_to_json(const JtpProbeReport& r) {
  nlohmann::json acc = nlohmann::json::object();
  for (const auto& [k, v] : r.topk_accuracy) acc[std::to_string(k)] = v;
  return nlohmann::json{{"topk_accuracy", std::move(acc)}, {"num_instances", r.num_instances}};
}

namespace {

AblationArm eval_arm(const ModelParams& params, const std::vector<EncodedFunction>& corpus,
                     const std::vector<EncodedFunction>& test_split,
                     const AblationEvalConfig& eval_cfg, bool generic) {
  PoolSweepConfig sweep;
  sweep.opt_pairs = eval_cfg.opt_pairs;
  sweep.pool_sizes = {eval_cfg.pool_size};
  sweep.ks = {1};
  sweep.seed = eval_cfg.eval_seed;
  sweep.query_universe = &test_split;
  const auto reports = pool_sweep(params, corpus, sweep, generic);

  AblationArm arm;
  for (const auto& r : reports) {
    const double r1 = r.recall_at_k.at(1);
    arm.recall_at_1[r.opt_pair] = r1;
    arm.average_recall_at_1 += r1 / static_cast<double>(reports.size());
  }
  return arm;
}

}  // namespace

AblationReport run_ablation(std::vector<FunctionRecord> corpus, const ModelConfig& model_cfg,
                            const TrainConfig& pretrain_cfg, const TrainConfig& finetune_cfg,
                            const AblationEvalConfig& eval_cfg, std::size_t vocab_max_size,
                            AblationArtifacts* artifacts, const StepCallback& on_step) {
  // Shared preprocessing: one vocabulary and one encoded corpus feed both arms,
  // so data order is bit-identical by construction.
  EncodedCorpus ec =
      preprocess_corpus(corpus, vocab_max_size, static_cast<std::size_t>(model_cfg.max_len));

  const auto [train_records, test_records] =
      split_by_project(corpus, eval_cfg.train_fraction, eval_cfg.split_seed);
  std::set<std::string> train_projects;
  for (const auto& f : train_records) train_projects.insert(f.project);

  std::vector<EncodedFunction> encoded_train, encoded_test;
  for (const auto& ef : ec.functions) {
    if (train_projects.count(ef.identity.project))
      encoded_train.push_back(ef);
    else
      encoded_test.push_back(ef);
  }

  // Fine-tuning pairs over the training split, both directions of each
  // evaluated opt pair. Pair indices refer to the train split, which is an
  // order-preserving filter of the deduplicated corpus.
  std::vector<GroundTruthPair> pairs;
  for (const auto& [a, b] : eval_cfg.opt_pairs) {
    const auto fwd = make_ground_truth_pairs(train_records, a, b);
    pairs.insert(pairs.end(), fwd.pairs.begin(), fwd.pairs.end());
    const auto rev = make_ground_truth_pairs(train_records, b, a);
    pairs.insert(pairs.end(), rev.pairs.begin(), rev.pairs.end());
  }

  ModelConfig cfg = model_cfg;
  cfg.vocab_size = static_cast<int>(ec.vocab.size());

  auto train_arm = [&](bool tied, bool generic, const char* tag,
                       ModelParams* pretrained_snapshot) {
    ModelConfig arm_cfg = cfg;
    arm_cfg.tied = tied;
    ModelParams params = init_params<float>(arm_cfg);
    TrainOptions opts;
    opts.generic_jump_inputs = generic;
    if (on_step)
      opts.on_step = [&, tag](const TrainLogEntry& e) {
        on_step(TrainLogEntry{e.step, std::string(tag) + "." + e.objective, e.loss});
      };
    pretrain(params, encoded_train, ec.vocab, pretrain_cfg, opts);
    if (pretrained_snapshot) *pretrained_snapshot = params;
    finetune(params, pairs, encoded_train, finetune_cfg, opts);
    return params;
  };

  ModelParams jump_aware_pretrained;
  ModelParams jump_aware =
      train_arm(true, false, "jump_aware", artifacts ? &jump_aware_pretrained : nullptr);
  ModelParams fixed_token = train_arm(false, true, "fixed_token", nullptr);

  AblationReport report;
  report.num_train_functions = encoded_train.size();
  report.num_test_functions = encoded_test.size();
  report.jump_aware = eval_arm(jump_aware, ec.functions, encoded_test, eval_cfg, false);
  report.fixed_token = eval_arm(fixed_token, ec.functions, encoded_test, eval_cfg, true);
  for (const auto& [pair_name, r1] : report.jump_aware.recall_at_1) {
    const double d = r1 - report.fixed_token.recall_at_1.at(pair_name);
    report.delta[pair_name] = d;
    report.average_delta += d / static_cast<double>(report.jump_aware.recall_at_1.size());
  }

  if (artifacts) {
    artifacts->jump_aware = std::move(jump_aware);
    artifacts->jump_aware_pretrained = std::move(jump_aware_pretrained);
    artifacts->fixed_token = std::move(fixed_token);
    artifacts->vocab = std::move(ec.vocab);
    artifacts->encoded_corpus = std::move(ec.functions);
    artifacts->encoded_test = std::move(encoded_test);
  }
  return report;
}

nlohmann::json ablation_to_json(const AblationReport& r) {
  auto arm_json = [](const AblationArm& a) {
    nlohmann::json per_pair = nlohmann::json::object();
    for (const auto& [k, v] : a.recall_at_1) per_pair[k] = v;
    return nlohmann::json{{"recall_at_1", std::move(per_pair)},
                          {"average_recall_at_1", a.average_recall_at_1}};
  };
  nlohmann::json deltas = nlohmann::json::object();
  for (const auto& [k, v] : r.delta) deltas[k] = v;
  return nlohmann::json{{"jump_aware", arm_json(r.jump_aware)},
                        {"fixed_token", arm_json(r.fixed_token)},
                        {"delta", std::move(deltas)},
                        {"average_delta", r.average_delta},
                        {"num_train_functions", r.num_train_functions},
                        {"num_test_functions", r.num_test_functions}};
}

}  // namespace jat
