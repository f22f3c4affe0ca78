#pragma once

#include <filesystem>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "jat/model.hpp"

namespace jat {

// Unit-normalized embedding store; zero vectors are flagged and score 0
// against every query.
struct EmbeddingIndex {
  int dimension = 0;
  std::vector<FunctionRef> identities;
  MatF vectors;  // N x dimension, unit rows (except flagged zeros)
  std::vector<std::uint8_t> zero_flags;

  std::size_t size() const { return identities.size(); }
};

EmbeddingIndex build_index(const std::vector<FunctionEmbedding>& embeddings);

void save_index(const EmbeddingIndex& index, const std::filesystem::path& path);
EmbeddingIndex load_index(const std::filesystem::path& path);

struct SearchHit {
  std::size_t index = 0;
  float similarity = 0.0f;
};

// Top-k by descending cosine; ties broken by ascending insertion order.
// Returns min(k, index size) hits. Throws on an empty index.
std::vector<SearchHit> search(const EmbeddingIndex& index, const FunctionEmbedding& query, int k);

struct EvalReport {
  std::string opt_pair;  // "O0,O3"
  std::size_t pool_size = 0;
  double mrr = 0.0;
  std::map<int, double> recall_at_k;
  std::size_t num_queries = 0;
  std::vector<std::int32_t> ranks;  // per query, 1-based
};

nlohmann::json eval_report_to_json(const EvalReport& r);
// CSV columns: opt_pair, pool_size, metric, k, value, num_queries
void write_eval_reports_csv(std::span<const EvalReport> reports, const std::filesystem::path& path);
void write_eval_reports_json(std::span<const EvalReport> reports,
                             const std::filesystem::path& path);

// Rank of each query's ground truth against the full pool:
// rank = 1 + |{p != gt : sim(q, p) >= sim(q, gt)}| (ties count against the
// query). The ground truth is the unique pool entry sharing the query's
// (project, binary, function_name); missing or duplicated ground truth throws,
// naming the query.
EvalReport evaluate(const ModelParams& params, std::span<const EncodedFunction> queries,
                    std::span<const EncodedFunction> pool, const std::vector<int>& ks,
                    bool generic_jump_inputs = false);

// Same contract over pre-computed embeddings (evaluate embeds and delegates).
EvalReport evaluate_embedded(const std::vector<FunctionEmbedding>& queries,
                             const std::vector<FunctionEmbedding>& pool,
                             const std::vector<int>& ks);

struct PoolSweepConfig {
  std::vector<std::pair<OptLevel, OptLevel>> opt_pairs;  // (query opt, pool opt)
  std::vector<std::size_t> pool_sizes;
  std::vector<int> ks{1, 5, 10};
  std::uint64_t seed = 0;
  // When set, only queries from this subset of identities are used (e.g. a
  // held-out split); distractors still come from the whole corpus.
  const std::vector<EncodedFunction>* query_universe = nullptr;
};

// For each (opt pair, pool size): per-query pools containing the ground truth
// plus pool_size-1 distractors sampled uniformly without replacement from the
// pool-opt functions, excluding the query's identity. Pools are nested across
// pool sizes for a fixed seed. Deterministic under seed.
std::vector<EvalReport> pool_sweep(const ModelParams& params,
                                   const std::vector<EncodedFunction>& corpus,
                                   const PoolSweepConfig& cfg, bool generic_jump_inputs = false);

// Unit-normalized corpus embeddings with their identities.
struct CorpusEmbeddings {
  MatF vectors;
  std::vector<std::uint8_t> zero_flags;
  std::vector<FunctionRef> identities;
};

CorpusEmbeddings embed_corpus(const ModelParams& params, std::span<const EncodedFunction> corpus,
                              bool generic_jump_inputs = false);

// pool_sweep over pre-computed embeddings.
std::vector<EvalReport> pool_sweep_embedded(const CorpusEmbeddings& corpus,
                                            const PoolSweepConfig& cfg);

}  // namespace jat
