#include "jat/retrieval.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include "jat/container.hpp"
#include "jat/parallel.hpp"
#include "jat/rng.hpp"

namespace jat {

namespace {

constexpr const char* kIndexMagic = "JTRNEMBS";

// Normalized rows into `out`; returns per-row zero flags.
std::vector<std::uint8_t> normalize_rows(MatF& m) {
  std::vector<std::uint8_t> zero(static_cast<std::size_t>(m.rows()), 0);
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    const float n = m.row(i).norm();
    if (n == 0.0f)
      zero[static_cast<std::size_t>(i)] = 1;
    else
      m.row(i) /= n;
  }
  return zero;
}

std::string opt_pair_name(OptLevel a, OptLevel b) {
  return std::string(to_string(a)) + "," + to_string(b);
}

struct EmbeddedCorpus {
  MatF vectors;  // unit rows
  std::vector<std::uint8_t> zero_flags;
};

EmbeddedCorpus embed_all(const ModelParams& params, std::span<const EncodedFunction> functions,
                         bool generic_jump_inputs) {
  EmbeddedCorpus ec;
  ec.vectors.resize(static_cast<Eigen::Index>(functions.size()), params.config.d_f);
  parallel_for(functions.size(), [&](std::size_t i) {
    ec.vectors.row(static_cast<Eigen::Index>(i)) =
        function_embedding_vector<float>(params, functions[i], generic_jump_inputs);
  });
  ec.zero_flags = normalize_rows(ec.vectors);
  return ec;
}

}  // namespace

EmbeddingIndex build_index(const std::vector<FunctionEmbedding>& embeddings) {
  EmbeddingIndex index;
  if (embeddings.empty()) return index;
  index.dimension = static_cast<int>(embeddings.front().vector.size());
  index.vectors.resize(static_cast<Eigen::Index>(embeddings.size()), index.dimension);
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (embeddings[i].vector.size() != index.dimension)
      throw std::runtime_error("build_index: dimension mismatch at entry " + std::to_string(i));
    index.vectors.row(static_cast<Eigen::Index>(i)) = embeddings[i].vector;
    index.identities.push_back(embeddings[i].identity);
  }
  index.zero_flags = normalize_rows(index.vectors);
  return index;
}

void save_index(const EmbeddingIndex& index, const std::filesystem::path& path) {
  ContainerWriter w(kIndexMagic);
  w.meta()["kind"] = "embedding_index";
  w.meta()["dimension"] = index.dimension;
  nlohmann::json ids = nlohmann::json::array();
  for (const auto& r : index.identities)
    ids.push_back(nlohmann::json{{"project", r.project},
                                 {"binary", r.binary},
                                 {"function", r.function_name},
                                 {"opt", to_string(r.opt)}});
  w.meta()["identities"] = std::move(ids);
  w.add_f32("vectors",
            {static_cast<std::size_t>(index.vectors.rows()),
             static_cast<std::size_t>(index.vectors.cols())},
            index.vectors.data());
  std::vector<std::int32_t> flags(index.zero_flags.begin(), index.zero_flags.end());
  w.add_i32("zero_flags", {flags.size()}, flags.data());
  w.write(path);
}

EmbeddingIndex load_index(const std::filesystem::path& path) {
  ContainerReader r(path, kIndexMagic);
  EmbeddingIndex index;
  index.dimension = r.meta().at("dimension").get<int>();
  for (const auto& j : r.meta().at("identities")) {
    FunctionRef ref;
    ref.project = j.at("project").get<std::string>();
    ref.binary = j.at("binary").get<std::string>();
    ref.function_name = j.at("function").get<std::string>();
    ref.opt = opt_level_from_string(j.at("opt").get<std::string>());
    index.identities.push_back(std::move(ref));
  }
  const auto& desc = r.descriptor("vectors");
  index.vectors.resize(static_cast<Eigen::Index>(desc.shape.at(0)),
                       static_cast<Eigen::Index>(desc.shape.at(1)));
  std::copy_n(r.f32("vectors"), r.element_count("vectors"), index.vectors.data());
  const std::int32_t* zf = r.i32("zero_flags");
  index.zero_flags.assign(zf, zf + r.element_count("zero_flags"));
  if (index.identities.size() != static_cast<std::size_t>(index.vectors.rows()))
    throw std::runtime_error(path.string() + ": identity/vector count mismatch");
  return index;
}

std::vector<SearchHit> search(const EmbeddingIndex& index, const FunctionEmbedding& query, int k) {
  if (index.size() == 0) throw std::runtime_error("search: empty index");
  if (k < 1) throw std::runtime_error("search: k must be >= 1");
  if (query.vector.size() != index.dimension)
    throw std::runtime_error("search: query dimension mismatch");

  Eigen::RowVectorXf q = query.vector;
  const float qn = q.norm();
  Eigen::VectorXf sims;
  if (qn == 0.0f) {
    sims = Eigen::VectorXf::Zero(index.vectors.rows());
  } else {
    q /= qn;
    sims = index.vectors * q.transpose();
    for (std::size_t i = 0; i < index.zero_flags.size(); ++i)
      if (index.zero_flags[i]) sims(static_cast<Eigen::Index>(i)) = 0.0f;
  }

  std::vector<std::size_t> order(index.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return sims(static_cast<Eigen::Index>(a)) > sims(static_cast<Eigen::Index>(b));
  });
  const std::size_t take = std::min<std::size_t>(static_cast<std::size_t>(k), order.size());
  std::vector<SearchHit> hits;
  hits.reserve(take);
  for (std::size_t i = 0; i < take; ++i)
    hits.push_back(SearchHit{order[i], sims(static_cast<Eigen::Index>(order[i]))});
  return hits;
}

namespace {

void aggregate(EvalReport& report, const std::vector<int>& ks) {
  double mrr = 0.0;
  for (const auto rank : report.ranks) mrr += 1.0 / rank;
  report.num_queries = report.ranks.size();
  report.mrr = report.ranks.empty() ? 0.0 : mrr / static_cast<double>(report.ranks.size());
  for (const int k : ks) {
    std::size_t hit = 0;
    for (const auto rank : report.ranks)
      if (rank <= k) ++hit;
    report.recall_at_k[k] =
        report.ranks.empty() ? 0.0 : static_cast<double>(hit) / static_cast<double>(report.ranks.size());
  }
}

}  // namespace

namespace {

EvalReport evaluate_prepared(const EmbeddedCorpus& qe, std::span<const FunctionRef> query_ids,
                             const EmbeddedCorpus& pe, std::span<const FunctionRef> pool_ids,
                             const std::vector<int>& ks) {
  EvalReport report;
  report.pool_size = pool_ids.size();
  report.ranks.resize(query_ids.size());

  parallel_for(query_ids.size(), [&](std::size_t qi) {
    // Locate the unique ground-truth entry.
    std::ptrdiff_t gt = -1;
    for (std::size_t p = 0; p < pool_ids.size(); ++p) {
      if (!pool_ids[p].same_identity(query_ids[qi])) continue;
      if (gt >= 0)
        throw std::runtime_error("evaluate: ground truth of query '" +
                                 query_ids[qi].function_name + "' appears more than once");
      gt = static_cast<std::ptrdiff_t>(p);
    }
    if (gt < 0)
      throw std::runtime_error("evaluate: ground truth of query '" + query_ids[qi].function_name +
                               "' missing from pool");

    Eigen::VectorXf sims = pe.vectors * qe.vectors.row(static_cast<Eigen::Index>(qi)).transpose();
    if (qe.zero_flags[qi]) sims.setZero();
    for (std::size_t p = 0; p < pe.zero_flags.size(); ++p)
      if (pe.zero_flags[p]) sims(static_cast<Eigen::Index>(p)) = 0.0f;

    const float gt_sim = sims(static_cast<Eigen::Index>(gt));
    std::int32_t rank = 1;
    for (Eigen::Index p = 0; p < sims.size(); ++p)
      if (p != static_cast<Eigen::Index>(gt) && sims(p) >= gt_sim) ++rank;
    report.ranks[qi] = rank;
  });

  aggregate(report, ks);
  return report;
}

}  // namespace

EvalReport evaluate(const ModelParams& params, std::span<const EncodedFunction> queries,
                    std::span<const EncodedFunction> pool, const std::vector<int>& ks,
                    bool generic_jump_inputs) {
  const EmbeddedCorpus pe = embed_all(params, pool, generic_jump_inputs);
  const EmbeddedCorpus qe = embed_all(params, queries, generic_jump_inputs);
  std::vector<FunctionRef> query_ids, pool_ids;
  for (const auto& q : queries) query_ids.push_back(q.identity);
  for (const auto& p : pool) pool_ids.push_back(p.identity);
  return evaluate_prepared(qe, query_ids, pe, pool_ids, ks);
}

EvalReport evaluate_embedded(const std::vector<FunctionEmbedding>& queries,
                             const std::vector<FunctionEmbedding>& pool,
                             const std::vector<int>& ks) {
  auto prepare = [](const std::vector<FunctionEmbedding>& embs, std::vector<FunctionRef>& ids) {
    EmbeddedCorpus ec;
    if (embs.empty()) return ec;
    ec.vectors.resize(static_cast<Eigen::Index>(embs.size()), embs.front().vector.size());
    for (std::size_t i = 0; i < embs.size(); ++i) {
      ec.vectors.row(static_cast<Eigen::Index>(i)) = embs[i].vector;
      ids.push_back(embs[i].identity);
    }
    ec.zero_flags = normalize_rows(ec.vectors);
    return ec;
  };
  std::vector<FunctionRef> query_ids, pool_ids;
  const EmbeddedCorpus qe = prepare(queries, query_ids);
  const EmbeddedCorpus pe = prepare(pool, pool_ids);
  return evaluate_prepared(qe, query_ids, pe, pool_ids, ks);
}

CorpusEmbeddings embed_corpus(const ModelParams& params, std::span<const EncodedFunction> corpus,
                              bool generic_jump_inputs) {
  EmbeddedCorpus ec = embed_all(params, corpus, generic_jump_inputs);
  CorpusEmbeddings out;
  out.vectors = std::move(ec.vectors);
  out.zero_flags = std::move(ec.zero_flags);
  out.identities.reserve(corpus.size());
  for (const auto& ef : corpus) out.identities.push_back(ef.identity);
  return out;
}

std::vector<EvalReport> pool_sweep_embedded(const CorpusEmbeddings& corpus,
                                            const PoolSweepConfig& cfg) {
  std::vector<EvalReport> reports;
  for (std::size_t pair_idx = 0; pair_idx < cfg.opt_pairs.size(); ++pair_idx) {
    const auto [opt_q, opt_p] = cfg.opt_pairs[pair_idx];
    if (opt_q == opt_p) throw std::runtime_error("pool_sweep: optimization pair must differ");

    std::vector<std::size_t> candidates;  // pool-opt entries
    for (std::size_t i = 0; i < corpus.identities.size(); ++i)
      if (corpus.identities[i].opt == opt_p) candidates.push_back(i);

    // Queries: query-opt entries with exactly one counterpart among candidates,
    // optionally restricted to the query universe.
    std::vector<std::size_t> queries;
    std::vector<std::size_t> gts;
    for (std::size_t i = 0; i < corpus.identities.size(); ++i) {
      if (corpus.identities[i].opt != opt_q) continue;
      if (cfg.query_universe) {
        const bool in_universe =
            std::any_of(cfg.query_universe->begin(), cfg.query_universe->end(),
                        [&](const EncodedFunction& ef) {
                          return ef.identity.same_identity(corpus.identities[i]);
                        });
        if (!in_universe) continue;
      }
      std::ptrdiff_t gt = -1;
      bool unique = true;
      for (const std::size_t c : candidates) {
        if (!corpus.identities[c].same_identity(corpus.identities[i])) continue;
        if (gt >= 0) unique = false;
        gt = static_cast<std::ptrdiff_t>(c);
      }
      if (gt < 0 || !unique) continue;
      queries.push_back(i);
      gts.push_back(static_cast<std::size_t>(gt));
    }

    for (const std::size_t pool_size : cfg.pool_sizes) {
      if (pool_size < 1) throw std::runtime_error("pool_sweep: pool_size must be >= 1");
      EvalReport report;
      report.opt_pair = opt_pair_name(opt_q, opt_p);
      report.pool_size = pool_size;
      report.ranks.resize(queries.size());

      parallel_for(queries.size(), [&](std::size_t qi) {
        const std::size_t q = queries[qi];
        const std::size_t gt = gts[qi];

        std::vector<std::size_t> distractors;
        distractors.reserve(candidates.size());
        for (const std::size_t c : candidates)
          if (!corpus.identities[c].same_identity(corpus.identities[q])) distractors.push_back(c);
        if (pool_size - 1 > distractors.size())
          throw std::runtime_error("pool_sweep: pool_size " + std::to_string(pool_size) +
                                   " exceeds available distractors (" +
                                   std::to_string(distractors.size() + 1) + ")");

        // One shuffled order per (pair, query); prefixes give nested pools
        // across pool sizes, so Recall@1 is monotone in pool size by
        // construction.
        Rng rng(derive_seed(cfg.seed, pair_idx, q));
        rng.shuffle(distractors);

        Eigen::VectorXf sims =
            corpus.vectors * corpus.vectors.row(static_cast<Eigen::Index>(q)).transpose();
        auto sim_of = [&](std::size_t i) -> float {
          if (corpus.zero_flags[q] || corpus.zero_flags[i]) return 0.0f;
          return sims(static_cast<Eigen::Index>(i));
        };

        const float gt_sim = sim_of(gt);
        std::int32_t rank = 1;
        for (std::size_t d = 0; d + 1 < pool_size; ++d)
          if (sim_of(distractors[d]) >= gt_sim) ++rank;
        report.ranks[qi] = rank;
      });

      aggregate(report, cfg.ks);
      reports.push_back(std::move(report));
    }
  }
  return reports;
}

std::vector<EvalReport> pool_sweep(const ModelParams& params,
                                   const std::vector<EncodedFunction>& corpus,
                                   const PoolSweepConfig& cfg, bool generic_jump_inputs) {
  return pool_sweep_embedded(embed_corpus(params, corpus, generic_jump_inputs), cfg);
}

nlohmann::json eval_report_to_json(const EvalReport& r) {
  nlohmann::json recalls = nlohmann::json::object();
  for (const auto& [k, v] : r.recall_at_k) recalls[std::to_string(k)] = v;
  return nlohmann::json{{"opt_pair", r.opt_pair},   {"pool_size", r.pool_size},
                        {"mrr", r.mrr},             {"recall_at_k", std::move(recalls)},
                        {"num_queries", r.num_queries}, {"ranks", r.ranks}};
}

void write_eval_reports_json(std::span<const EvalReport> reports,
                             const std::filesystem::path& path) {
  nlohmann::json arr = nlohmann::json::array();
  for (const auto& r : reports) arr.push_back(eval_report_to_json(r));
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path.string());
  out << arr.dump(2) << '\n';
}

void write_eval_reports_csv(std::span<const EvalReport> reports,
                            const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path.string());
  out << "opt_pair,pool_size,metric,k,value,num_queries\n";
  char buf[64];
  for (const auto& r : reports) {
    const std::string pair = '"' + r.opt_pair + '"';  // field contains a comma
    std::snprintf(buf, sizeof(buf), "%.9g", r.mrr);
    out << pair << ',' << r.pool_size << ",mrr,," << buf << ',' << r.num_queries << '\n';
    for (const auto& [k, v] : r.recall_at_k) {
      std::snprintf(buf, sizeof(buf), "%.9g", v);
      out << pair << ',' << r.pool_size << ",recall," << k << ',' << buf << ',' << r.num_queries
          << '\n';
    }
  }
}

}  // namespace jat
