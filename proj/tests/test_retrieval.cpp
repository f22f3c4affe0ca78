#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>

#include "jat/corpus.hpp"
#include "jat/retrieval.hpp"
#include "jat/rng.hpp"
#include "testutil.hpp"

using namespace jat;
using testutil::tiny_model_config;
using testutil::tiny_vocab;

namespace {

FunctionEmbedding named(const std::string& name, OptLevel opt, std::vector<float> values) {
  FunctionEmbedding e;
  e.identity = FunctionRef{"p", "b", name, opt};
  e.vector.resize(static_cast<Eigen::Index>(values.size()));
  for (std::size_t i = 0; i < values.size(); ++i) e.vector(static_cast<Eigen::Index>(i)) = values[i];
  return e;
}

std::vector<FunctionEmbedding> random_embeddings(int count, int dim, std::uint64_t seed) {
  std::vector<FunctionEmbedding> out;
  Rng rng(seed);
  for (int i = 0; i < count; ++i) {
    FunctionEmbedding e;
    e.identity = FunctionRef{"p", "b", "f" + std::to_string(i), OptLevel::O0};
    e.vector.resize(dim);
    for (int j = 0; j < dim; ++j) e.vector(j) = static_cast<float>(rng.normal());
    out.push_back(std::move(e));
  }
  return out;
}

}  // namespace

TEST_CASE("build_index: unit norms, scale invariance, zero flags") {
  auto embs = random_embeddings(100, 24, 3);
  const auto index = build_index(embs);
  REQUIRE(index.size() == 100);
  for (Eigen::Index i = 0; i < index.vectors.rows(); ++i)
    CHECK(index.vectors.row(i).norm() == doctest::Approx(1.0).epsilon(1e-6));

  // The same vector scaled by 5 stores identically.
  auto scaled = embs;
  for (auto& e : scaled) e.vector *= 5.0f;
  const auto index5 = build_index(scaled);
  CHECK((index.vectors - index5.vectors).cwiseAbs().maxCoeff() < 1e-6f);

  // Single zero embedding is flagged, not normalized.
  std::vector<FunctionEmbedding> one{named("z", OptLevel::O0, {0, 0, 0})};
  const auto zi = build_index(one);
  CHECK(zi.zero_flags[0] == 1);

  // Dimension mismatch is an error.
  auto bad = embs;
  bad.push_back(named("odd", OptLevel::O0, {1.0f}));
  CHECK_THROWS_AS(build_index(bad), std::runtime_error);
}

TEST_CASE("search: exact match first, orthogonal ties in insertion order") {
  std::vector<FunctionEmbedding> embs{
      named("a", OptLevel::O0, {1, 0, 0}),
      named("b", OptLevel::O0, {0, 1, 0}),
      named("c", OptLevel::O0, {0, 0, 1}),
  };
  const auto index = build_index(embs);

  const auto hits = search(index, named("q", OptLevel::O0, {0, 2, 0}), 3);
  REQUIRE(hits.size() == 3);
  CHECK(hits[0].index == 1);
  CHECK(hits[0].similarity == doctest::Approx(1.0));
  // The two orthogonal entries tie at 0 and keep insertion order.
  CHECK(hits[1].index == 0);
  CHECK(hits[2].index == 2);

  CHECK_THROWS_AS(search(EmbeddingIndex{}, embs[0], 1), std::runtime_error);
  CHECK(search(index, embs[0], 10).size() == 3);  // min(k, size)
}

TEST_CASE("search: agrees with a brute-force sort on 1000 random entries") {
  auto embs = random_embeddings(1000, 16, 7);
  const auto index = build_index(embs);
  Rng rng(11);
  for (int trial = 0; trial < 10; ++trial) {
    FunctionEmbedding q;
    q.vector.resize(16);
    for (int j = 0; j < 16; ++j) q.vector(j) = static_cast<float>(rng.normal());
    const auto hits = search(index, q, 10);

    // Independent path: cosine by hand, stable sort on (-sim, index).
    std::vector<std::pair<float, std::size_t>> brute;
    const float qn = q.vector.norm();
    for (std::size_t i = 0; i < embs.size(); ++i) {
      const float en = embs[i].vector.norm();
      const float sim = q.vector.dot(embs[i].vector) / (qn * en);
      brute.emplace_back(sim, i);
    }
    std::stable_sort(brute.begin(), brute.end(), [](const auto& a, const auto& b) {
      return a.first > b.first;
    });
    REQUIRE(hits.size() == 10);
    for (std::size_t i = 0; i < hits.size(); ++i) {
      CHECK(hits[i].index == brute[i].second);
      CHECK(hits[i].similarity == doctest::Approx(brute[i].first).epsilon(1e-5));
    }
  }
}

TEST_CASE("evaluate_embedded: hand case with ranks [1, 2, 4]") {
  // Pool along coordinate axes; queries tuned so the ground truth ranks are
  // exactly 1, 2 and 4.
  std::vector<FunctionEmbedding> pool{
      named("f0", OptLevel::O3, {1, 0, 0, 0}),
      named("f1", OptLevel::O3, {0, 1, 0, 0}),
      named("f2", OptLevel::O3, {0, 0, 1, 0}),
      named("f3", OptLevel::O3, {0, 0, 0, 1}),
  };
  std::vector<FunctionEmbedding> queries{
      named("f0", OptLevel::O0, {1.0f, 0.1f, 0.0f, 0.0f}),   // gt f0 ranks 1
      named("f1", OptLevel::O0, {0.9f, 0.8f, 0.1f, 0.0f}),   // gt f1 ranks 2
      named("f2", OptLevel::O0, {0.9f, 0.8f, 0.1f, 0.15f}),  // gt f2 ranks 4
  };
  const auto report = evaluate_embedded(queries, pool, {1, 3});
  CHECK(report.ranks == std::vector<std::int32_t>{1, 2, 4});
  CHECK(report.mrr == doctest::Approx((1.0 + 0.5 + 0.25) / 3).epsilon(1e-9));
  CHECK(report.mrr == doctest::Approx(0.58333).epsilon(1e-4));
  CHECK(report.recall_at_k.at(1) == doctest::Approx(1.0 / 3).epsilon(1e-9));
  CHECK(report.recall_at_k.at(3) == doctest::Approx(2.0 / 3).epsilon(1e-9));
  CHECK(report.num_queries == 3);
}

TEST_CASE("evaluate_embedded: perfect retrieval and pessimistic ties") {
  std::vector<FunctionEmbedding> pool{
      named("f0", OptLevel::O3, {1, 0}),
      named("f1", OptLevel::O3, {0, 1}),
  };
  std::vector<FunctionEmbedding> queries{
      named("f0", OptLevel::O0, {1, 0}),
      named("f1", OptLevel::O0, {0, 1}),
  };
  auto report = evaluate_embedded(queries, pool, {1});
  CHECK(report.mrr == doctest::Approx(1.0));
  CHECK(report.recall_at_k.at(1) == doctest::Approx(1.0));

  // A tie counts against the query.
  std::vector<FunctionEmbedding> tied_pool{
      named("f0", OptLevel::O3, {1, 0}),
      named("dup", OptLevel::O3, {1, 0}),
  };
  report = evaluate_embedded({named("f0", OptLevel::O0, {1, 0})}, tied_pool, {1, 2});
  CHECK(report.ranks == std::vector<std::int32_t>{2});
}

TEST_CASE("evaluate: missing or duplicated ground truth names the query") {
  std::vector<FunctionEmbedding> pool{named("other", OptLevel::O3, {1, 0})};
  CHECK_THROWS_WITH_AS(evaluate_embedded({named("lost", OptLevel::O0, {1, 0})}, pool, {1}),
                       doctest::Contains("lost"), std::runtime_error);
  std::vector<FunctionEmbedding> dup_pool{named("q", OptLevel::O3, {1, 0}),
                                          named("q", OptLevel::O1, {0, 1})};
  CHECK_THROWS_WITH_AS(evaluate_embedded({named("q", OptLevel::O0, {1, 0})}, dup_pool, {1}),
                       doctest::Contains("more than once"), std::runtime_error);
}

TEST_CASE("evaluate: MRR lies between recall@1 and 1 on random embeddings") {
  Rng rng(5);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<FunctionEmbedding> pool, queries;
    const int n = 30;
    for (int i = 0; i < n; ++i) {
      auto p = named("f" + std::to_string(i), OptLevel::O3, {});
      p.vector.resize(8);
      for (int j = 0; j < 8; ++j) p.vector(j) = static_cast<float>(rng.normal());
      pool.push_back(p);
      auto q = p;
      q.identity.opt = OptLevel::O0;
      for (int j = 0; j < 8; ++j) q.vector(j) += 0.5f * static_cast<float>(rng.normal());
      queries.push_back(q);
    }
    const auto report = evaluate_embedded(queries, pool, {1, 5, 30});
    CHECK(report.mrr >= report.recall_at_k.at(1) - 1e-12);
    CHECK(report.mrr <= 1.0 + 1e-12);
    CHECK(report.recall_at_k.at(1) <= report.recall_at_k.at(5));
    CHECK(report.recall_at_k.at(30) == doctest::Approx(1.0));
  }
}

TEST_CASE("index: save/load round trip") {
  const auto dir = testutil::temp_dir("index");
  auto embs = random_embeddings(20, 8, 13);
  const auto index = build_index(embs);
  const auto path = dir / "store.bin";
  save_index(index, path);
  const auto loaded = load_index(path);
  CHECK(loaded.dimension == index.dimension);
  CHECK(loaded.identities.size() == index.identities.size());
  CHECK((loaded.vectors - index.vectors).cwiseAbs().maxCoeff() == 0.0f);
  for (std::size_t i = 0; i < index.identities.size(); ++i)
    CHECK(loaded.identities[i] == index.identities[i]);
  std::filesystem::remove_all(dir);
}

namespace {

// Tiny corpus + untrained model shared by the pool-sweep cases.
struct SweepFixture {
  std::vector<EncodedFunction> corpus;
  ModelParams params;

  explicit SweepFixture(int identities, std::uint64_t seed) : params{} {
    SyntheticConfig cfg;
    cfg.num_functions = static_cast<std::size_t>(identities);
    cfg.variants_per_function = 1;
    cfg.seed = seed;
    auto records = generate_synthetic(cfg);
    auto ec = preprocess_corpus(records, 20000, 64);
    corpus = std::move(ec.functions);
    auto mcfg = tiny_model_config(64, static_cast<int>(ec.vocab.size()), seed);
    mcfg.num_layers = 1;
    params = init_params<float>(mcfg);
  }
};

}  // namespace

TEST_CASE("pool_sweep: pool size one gives MRR exactly 1") {
  SweepFixture fx(30, 17);
  PoolSweepConfig cfg;
  cfg.opt_pairs = {{OptLevel::O0, OptLevel::O1}};
  cfg.pool_sizes = {1};
  cfg.ks = {1};
  cfg.seed = 5;
  const auto reports = pool_sweep(fx.params, fx.corpus, cfg);
  REQUIRE(reports.size() == 1);
  CHECK(reports[0].mrr == doctest::Approx(1.0).epsilon(1e-12));
  for (const auto r : reports[0].ranks) CHECK(r == 1);
}

TEST_CASE("pool_sweep: random embeddings are chance-level at pool size two") {
  // Random vectors per function: ground truth and distractor are exchangeable,
  // so Recall@1 must sit at 1/2 up to sampling error.
  const int identities = 800;
  CorpusEmbeddings corpus;
  corpus.vectors.resize(2 * identities, 12);
  Rng rng(23);
  for (int i = 0; i < identities; ++i) {
    for (const OptLevel opt : {OptLevel::O0, OptLevel::O1}) {
      const Eigen::Index row = 2 * i + (opt == OptLevel::O1);
      for (int j = 0; j < 12; ++j) corpus.vectors(row, j) = static_cast<float>(rng.normal());
      corpus.identities.push_back(FunctionRef{"p", "b", "f" + std::to_string(i), opt});
    }
  }
  corpus.vectors.rowwise().normalize();
  corpus.zero_flags.assign(static_cast<std::size_t>(corpus.vectors.rows()), 0);

  PoolSweepConfig cfg;
  cfg.opt_pairs = {{OptLevel::O0, OptLevel::O1}};
  cfg.pool_sizes = {2};
  cfg.ks = {1};
  cfg.seed = 29;
  const auto reports = pool_sweep_embedded(corpus, cfg);
  REQUIRE(reports.size() == 1);
  const double n = static_cast<double>(reports[0].num_queries);
  REQUIRE(n == identities);
  const double sigma = std::sqrt(0.25 / n);
  CHECK(std::abs(reports[0].recall_at_k.at(1) - 0.5) < 3 * sigma);
}

TEST_CASE("pool_sweep: recall@1 is monotone non-increasing in pool size") {
  SweepFixture fx(300, 31);
  PoolSweepConfig cfg;
  cfg.opt_pairs = {{OptLevel::O0, OptLevel::O1}};
  cfg.pool_sizes = {32, 250};
  cfg.ks = {1};
  cfg.seed = 3;
  const auto reports = pool_sweep(fx.params, fx.corpus, cfg);
  REQUIRE(reports.size() == 2);
  CHECK(reports[0].recall_at_k.at(1) >= reports[1].recall_at_k.at(1));
  // Nested pools: per-query ranks can only grow with the pool.
  for (std::size_t i = 0; i < reports[0].ranks.size(); ++i)
    CHECK(reports[0].ranks[i] <= reports[1].ranks[i]);
}

TEST_CASE("pool_sweep: oversized pools are rejected") {
  SweepFixture fx(20, 37);
  PoolSweepConfig cfg;
  cfg.opt_pairs = {{OptLevel::O0, OptLevel::O1}};
  cfg.pool_sizes = {5000};
  cfg.seed = 1;
  CHECK_THROWS_WITH_AS(pool_sweep(fx.params, fx.corpus, cfg), doctest::Contains("exceeds"),
                       std::runtime_error);
}

TEST_CASE("eval reports: CSV and JSON emission") {
  const auto dir = testutil::temp_dir("reports");
  EvalReport r;
  r.opt_pair = "O0,O3";
  r.pool_size = 32;
  r.mrr = 0.625;
  r.recall_at_k = {{1, 0.5}, {5, 0.75}};
  r.num_queries = 4;
  r.ranks = {1, 1, 2, 8};
  const std::vector<EvalReport> reports{r};
  write_eval_reports_csv(reports, dir / "r.csv");
  write_eval_reports_json(reports, dir / "r.json");

  std::ifstream csv(dir / "r.csv");
  std::string header, line1;
  std::getline(csv, header);
  std::getline(csv, line1);
  CHECK(header == "opt_pair,pool_size,metric,k,value,num_queries");
  CHECK(line1 == "\"O0,O3\",32,mrr,,0.625,4");

  std::ifstream jf(dir / "r.json");
  nlohmann::json parsed;
  jf >> parsed;
  CHECK(parsed[0]["mrr"] == 0.625);
  CHECK(parsed[0]["recall_at_k"]["1"] == 0.5);
  std::filesystem::remove_all(dir);
}
