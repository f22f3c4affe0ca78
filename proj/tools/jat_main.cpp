// jat: jump-aware transformer toolkit for binary function similarity.
//
// Subcommands cover the full pipeline: gen-corpus -> preprocess -> pretrain ->
// finetune -> embed -> search/eval, plus the numerical audits (audit-attention,
// jtp-probe, ablate). Every subcommand accepts --config <json> and --seed; any
// config key can also be overridden through the environment as
// JAT_<SECTION>__<KEY> (upper-case, double underscore between path segments).

#include <CLI11.hpp>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>

#include "jat/analysis.hpp"
#include "jat/parallel.hpp"
#include "jat/training.hpp"

extern char** environ;

namespace {

using nlohmann::json;

struct EvalSettings {
  std::vector<std::pair<jat::OptLevel, jat::OptLevel>> opt_pairs{
      {jat::OptLevel::O0, jat::OptLevel::O1},
      {jat::OptLevel::O0, jat::OptLevel::O2},
      {jat::OptLevel::O1, jat::OptLevel::O2}};
  std::vector<std::size_t> pool_sizes{2, 10, 32, 100};
  std::vector<int> ks{1, 5, 10};
  std::uint64_t seed = 1;
  std::string query_split = "all";  // "all" or "test"
  double train_fraction = 0.8;
  std::uint64_t split_seed = 7;
};

void parse_eval_settings(const json& j, EvalSettings& e) {
  if (j.contains("opt_pairs")) {
    e.opt_pairs.clear();
    for (const auto& p : j.at("opt_pairs"))
      e.opt_pairs.emplace_back(jat::opt_level_from_string(p.at(0).get<std::string>()),
                               jat::opt_level_from_string(p.at(1).get<std::string>()));
  }
  if (j.contains("pool_sizes")) e.pool_sizes = j.at("pool_sizes").get<std::vector<std::size_t>>();
  if (j.contains("ks")) e.ks = j.at("ks").get<std::vector<int>>();
  e.seed = j.value("seed", e.seed);
  e.query_split = j.value("query_split", e.query_split);
  e.train_fraction = j.value("train_fraction", e.train_fraction);
  e.split_seed = j.value("split_seed", e.split_seed);
}

void parse_synthetic(const json& j, jat::SyntheticConfig& s) {
  s.num_functions = j.value("num_functions", s.num_functions);
  s.variants_per_function = j.value("variants_per_function", s.variants_per_function);
  if (j.contains("blocks_range"))
    s.blocks_range = {j.at("blocks_range").at(0).get<int>(), j.at("blocks_range").at(1).get<int>()};
  if (j.contains("instrs_per_block_range"))
    s.instrs_per_block_range = {j.at("instrs_per_block_range").at(0).get<int>(),
                                j.at("instrs_per_block_range").at(1).get<int>()};
  if (j.contains("transform_set")) {
    s.transform_set.clear();
    for (const auto& t : j.at("transform_set")) {
      const auto name = t.get<std::string>();
      if (name == "block_reorder") s.transform_set.insert(jat::Transform::BlockReorder);
      else if (name == "register_rename") s.transform_set.insert(jat::Transform::RegisterRename);
      else if (name == "instruction_substitution")
        s.transform_set.insert(jat::Transform::InstructionSubstitution);
      else if (name == "nop_insertion") s.transform_set.insert(jat::Transform::NopInsertion);
      else throw std::runtime_error("unknown transform: " + name);
    }
  }
  s.seed = j.value("seed", s.seed);
}

// Merged run configuration: file, then environment, then flags.
struct RunConfig {
  json raw = json::object();
  jat::ModelConfig model;
  jat::TrainConfig train;
  EvalSettings eval;
  jat::SyntheticConfig synthetic;
  std::size_t vocab_max_size = 20000;
  int threads = 0;

  // "pretrain"/"finetune" sections overlay the shared "train" section. Without
  // any train section, fine-tuning falls back to the conventional 1e-5 rate.
  jat::TrainConfig phase_train(const char* phase) const {
    jat::TrainConfig t = train;
    if (std::string(phase) == "finetune" && !raw.contains("train")) t.learning_rate = 1e-5;
    if (raw.contains(phase)) jat::from_json(raw.at(phase), t);
    return t;
  }
};

json parse_env_value(const std::string& text) {
  const json parsed = json::parse(text, nullptr, false);
  if (!parsed.is_discarded()) return parsed;
  return json(text);  // plain string
}

void apply_env_overrides(json& cfg) {
  for (char** env = environ; *env != nullptr; ++env) {
    const std::string entry(*env);
    if (entry.rfind("JAT_", 0) != 0) continue;
    const auto eq = entry.find('=');
    if (eq == std::string::npos) continue;
    std::string keypath = entry.substr(4, eq - 4);
    const std::string value = entry.substr(eq + 1);
    for (auto& c : keypath) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));

    json* node = &cfg;
    std::size_t begin = 0;
    while (true) {
      const auto sep = keypath.find("__", begin);
      const std::string key = keypath.substr(begin, sep == std::string::npos ? sep : sep - begin);
      if (sep == std::string::npos) {
        (*node)[key] = parse_env_value(value);
        break;
      }
      node = &(*node)[key];
      begin = sep + 2;
    }
  }
}

RunConfig load_run_config(const std::string& config_path) {
  RunConfig rc;
  if (!config_path.empty()) {
    std::ifstream in(config_path);
    if (!in) throw std::runtime_error("cannot open config file: " + config_path);
    try {
      in >> rc.raw;
    } catch (const json::exception& e) {
      throw std::runtime_error("malformed config " + config_path + ": " + e.what());
    }
  }
  apply_env_overrides(rc.raw);
  if (rc.raw.contains("model")) jat::from_json(rc.raw.at("model"), rc.model);
  if (rc.raw.contains("train")) jat::from_json(rc.raw.at("train"), rc.train);
  if (rc.raw.contains("eval")) parse_eval_settings(rc.raw.at("eval"), rc.eval);
  if (rc.raw.contains("synthetic")) parse_synthetic(rc.raw.at("synthetic"), rc.synthetic);
  rc.vocab_max_size = rc.raw.value("vocab_max_size", rc.vocab_max_size);
  rc.threads = rc.raw.value("threads", rc.threads);
  return rc;
}

std::ofstream open_output(const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path);
  return out;
}

jat::StepCallback csv_logger(std::ofstream* sink) {
  if (!sink) return {};
  *sink << "step,objective,loss\n";
  return [sink](const jat::TrainLogEntry& e) {
    char buf[64];
    std::snprintf(buf, sizeof(buf), "%.9g", e.loss);
    *sink << e.step << ',' << e.objective << ',' << buf << '\n';
  };
}

// Model config completed against a vocabulary (cross-field consistency).
jat::ModelConfig resolve_model_config(jat::ModelConfig cfg, const jat::Vocabulary& vocab) {
  if (cfg.vocab_size == 0) cfg.vocab_size = static_cast<int>(vocab.size());
  if (cfg.vocab_size != static_cast<int>(vocab.size()))
    throw std::runtime_error("config model.vocab_size " + std::to_string(cfg.vocab_size) +
                             " does not match the vocabulary (" + std::to_string(vocab.size()) +
                             ")");
  if (cfg.max_len != static_cast<int>(vocab.max_len()))
    throw std::runtime_error("config model.max_len " + std::to_string(cfg.max_len) +
                             " does not match the vocabulary jump block (" +
                             std::to_string(vocab.max_len()) + ")");
  cfg.validate();
  return cfg;
}

std::vector<jat::EncodedFunction> test_split_functions(const jat::EncodedCorpus& ec,
                                                       const EvalSettings& eval) {
  std::vector<std::string> projects;
  for (const auto& ef : ec.functions) projects.push_back(ef.identity.project);
  const auto train_projects =
      jat::pick_train_projects(std::move(projects), eval.train_fraction, eval.split_seed);
  std::vector<jat::EncodedFunction> test;
  for (const auto& ef : ec.functions)
    if (!train_projects.count(ef.identity.project)) test.push_back(ef);
  return test;
}

int run(int argc, char** argv) {
  CLI::App app{"jump-aware transformer toolkit for binary function similarity"};
  app.require_subcommand(1);
  app.fallthrough(true);  // --config/--seed/--threads are accepted after the subcommand too

  std::string config_path;
  std::optional<std::uint64_t> seed_override;
  int threads_flag = 0;
  app.add_option("--config", config_path, "JSON configuration file");
  app.add_option("--seed", seed_override, "override every seed in the run");
  app.add_option("--threads", threads_flag, "cap worker threads (0 = hardware)");

  // gen-corpus
  auto* gen = app.add_subcommand("gen-corpus", "generate a synthetic labeled corpus (JSONL)");
  std::string gen_out = "corpus.jsonl";
  std::optional<std::size_t> gen_n, gen_variants;
  gen->add_option("--out", gen_out, "output JSONL path");
  gen->add_option("--num-functions", gen_n, "base function count");
  gen->add_option("--variants", gen_variants, "variants per base function");

  // preprocess
  auto* pre = app.add_subcommand("preprocess", "tokenize, build vocabulary, encode");
  std::string pre_corpus, pre_vocab = "vocab.json", pre_encoded = "encoded.bin";
  std::optional<int> pre_max_len;
  std::optional<std::size_t> pre_vocab_max;
  pre->add_option("--corpus", pre_corpus, "input corpus JSONL")->required();
  pre->add_option("--vocab", pre_vocab, "output vocabulary JSON");
  pre->add_option("--encoded", pre_encoded, "output encoded cache");
  pre->add_option("--max-len", pre_max_len, "sequence length (default: model.max_len)");
  pre->add_option("--vocab-max", pre_vocab_max, "vocabulary size budget");

  // pretrain / finetune
  auto* ptr = app.add_subcommand("pretrain", "MLM + JTP pre-training");
  auto* fin = app.add_subcommand("finetune", "cosine-margin triplet fine-tuning");
  struct TrainArgs {
    std::string encoded, checkpoint_in, checkpoint_out = "model.ckpt", loss_log;
    std::optional<int> steps;
    std::optional<double> lr;
    std::optional<int> batch;
    int checkpoint_interval = 0;
    bool generic_jumps = false;
  } ptr_args, fin_args;
  for (auto [cmd, args] : {std::pair{ptr, &ptr_args}, std::pair{fin, &fin_args}}) {
    cmd->add_option("--encoded", args->encoded, "encoded corpus cache")->required();
    cmd->add_option("--checkpoint-in", args->checkpoint_in, "start from this checkpoint");
    cmd->add_option("--checkpoint-out", args->checkpoint_out, "output checkpoint");
    cmd->add_option("--loss-log", args->loss_log, "per-step loss CSV");
    cmd->add_option("--steps", args->steps, "optimization steps");
    cmd->add_option("--lr", args->lr, "learning rate");
    cmd->add_option("--batch-size", args->batch, "batch size");
    cmd->add_option("--checkpoint-interval", args->checkpoint_interval,
                    "also write <out>.step<N> every N steps");
    cmd->add_flag("--generic-jumps", args->generic_jumps,
                  "fixed-token baseline inputs (ablation arm)");
  }

  // embed
  auto* emb = app.add_subcommand("embed", "embed a corpus into a vector store");
  std::string emb_encoded, emb_ckpt, emb_out = "embeddings.bin";
  bool emb_generic = false;
  emb->add_option("--encoded", emb_encoded, "encoded corpus cache")->required();
  emb->add_option("--checkpoint-in", emb_ckpt, "model checkpoint")->required();
  emb->add_option("--out", emb_out, "output embedding store");
  emb->add_flag("--generic-jumps", emb_generic, "fixed-token baseline inputs");

  // search
  auto* sea = app.add_subcommand("search", "top-k similarity search against a store");
  std::string sea_store, sea_query;
  int sea_k = 10;
  sea->add_option("--store", sea_store, "embedding store")->required();
  sea->add_option("--query-id", sea_query, "identity 'project/binary/function/opt' from the store")
      ->required();
  sea->add_option("-k,--topk", sea_k, "results to print");

  // eval
  auto* ev = app.add_subcommand("eval", "pool-sweep retrieval evaluation (MRR, recall@k)");
  std::string ev_encoded, ev_ckpt, ev_json, ev_csv;
  bool ev_generic = false;
  ev->add_option("--encoded", ev_encoded, "encoded corpus cache")->required();
  ev->add_option("--checkpoint-in", ev_ckpt, "model checkpoint");
  ev->add_option("--report-json", ev_json, "write the report as JSON");
  ev->add_option("--report-csv", ev_csv, "write the report as CSV");
  ev->add_flag("--generic-jumps", ev_generic, "fixed-token baseline inputs");

  // jtp-probe
  auto* probe = app.add_subcommand("jtp-probe", "jump-target prediction accuracy probe");
  std::string probe_encoded, probe_ckpt;
  double probe_rate = 0.15;
  probe->add_option("--encoded", probe_encoded, "encoded corpus cache")->required();
  probe->add_option("--checkpoint-in", probe_ckpt, "model checkpoint");
  probe->add_option("--sample-rate", probe_rate, "per-jump selection probability");

  // audit-attention
  auto* audit = app.add_subcommand("audit-attention",
                                   "Monte-Carlo audit of the tied-embedding attention expectation");
  jat::AttentionAuditConfig audit_cfg;
  std::string audit_csv;
  audit->add_option("--d", audit_cfg.d, "embedding dimension");
  audit->add_option("--sigma", audit_cfg.sigma, "embedding standard deviation");
  audit->add_option("--samples", audit_cfg.num_samples, "Monte-Carlo samples per projection");
  audit->add_option("--projections", audit_cfg.num_projections, "independent (q,k) draws");
  audit->add_option("--csv", audit_csv, "also write a CSV row");

  // ablate
  auto* abl = app.add_subcommand("ablate", "jump-aware vs fixed-token baseline, paired training");
  std::string abl_corpus, abl_report;
  abl->add_option("--corpus", abl_corpus, "input corpus JSONL")->required();
  abl->add_option("--report", abl_report, "write the ablation report JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help() << std::flush;
    return 2;
  }

  try {
    RunConfig rc = load_run_config(config_path);
    if (threads_flag > 0) rc.threads = threads_flag;
    jat::set_thread_cap(rc.threads);
    if (seed_override) {
      rc.model.seed = *seed_override;
      rc.train.seed = *seed_override;
      rc.eval.seed = *seed_override;
      rc.synthetic.seed = *seed_override;
      audit_cfg.seed = *seed_override;
    }

    if (gen->parsed()) {
      jat::SyntheticConfig cfg = rc.synthetic;
      if (gen_n) cfg.num_functions = *gen_n;
      if (gen_variants) cfg.variants_per_function = *gen_variants;
      const auto corpus = jat::generate_synthetic(cfg);
      jat::save_corpus(corpus, gen_out);
      std::cout << "wrote " << corpus.size() << " functions (" << cfg.num_functions
                << " identities) to " << gen_out << "\n";
      return 0;
    }

    if (pre->parsed()) {
      auto corpus = jat::load_corpus(pre_corpus);
      const std::size_t before = corpus.size();
      const std::size_t max_len = static_cast<std::size_t>(pre_max_len.value_or(rc.model.max_len));
      const std::size_t vocab_max = pre_vocab_max.value_or(rc.vocab_max_size);
      const auto ec = jat::preprocess_corpus(corpus, vocab_max, max_len);
      ec.vocab.save(pre_vocab);
      jat::save_encoded_corpus(ec, pre_encoded);
      std::cout << "encoded " << ec.functions.size() << " functions (" << before - corpus.size()
                << " duplicates dropped), vocabulary " << ec.vocab.size() << " tokens\n";
      return 0;
    }

    auto run_training = [&](const TrainArgs& args, const char* phase) {
      const auto ec = jat::load_encoded_corpus(args.encoded);
      jat::TrainConfig tc = rc.phase_train(phase);
      if (seed_override) tc.seed = *seed_override;
      if (args.steps) tc.steps = *args.steps;
      if (args.lr) tc.learning_rate = *args.lr;
      if (args.batch) tc.batch_size = *args.batch;

      jat::ModelParams params =
          args.checkpoint_in.empty()
              ? jat::init_params<float>(resolve_model_config(rc.model, ec.vocab))
              : jat::load_checkpoint(args.checkpoint_in);
      if (!args.checkpoint_in.empty()) resolve_model_config(params.config, ec.vocab);

      std::optional<std::ofstream> log_sink;
      if (!args.loss_log.empty()) log_sink.emplace(open_output(args.loss_log));
      jat::TrainOptions opts;
      opts.on_step = csv_logger(log_sink ? &*log_sink : nullptr);
      opts.generic_jump_inputs = args.generic_jumps;
      opts.checkpoint_interval = args.checkpoint_interval;
      if (args.checkpoint_interval > 0)
        opts.on_checkpoint = [&](const jat::ModelParams& p, int step) {
          jat::save_checkpoint(p, args.checkpoint_out + ".step" + std::to_string(step + 1));
        };

      if (std::string(phase) == "pretrain") {
        jat::pretrain(params, ec.functions, ec.vocab, tc, opts);
      } else {
        const auto pairs = jat::pairs_from_encoded(ec.functions, rc.eval.opt_pairs);
        jat::finetune(params, pairs, ec.functions, tc, opts);
      }
      jat::save_checkpoint(params, args.checkpoint_out);
      std::cout << phase << ": " << tc.steps << " steps done, checkpoint at "
                << args.checkpoint_out << "\n";
    };
    if (ptr->parsed()) {
      run_training(ptr_args, "pretrain");
      return 0;
    }
    if (fin->parsed()) {
      run_training(fin_args, "finetune");
      return 0;
    }

    if (emb->parsed()) {
      const auto ec = jat::load_encoded_corpus(emb_encoded);
      const auto params = jat::load_checkpoint(emb_ckpt);
      resolve_model_config(params.config, ec.vocab);
      std::vector<jat::FunctionEmbedding> embeddings(ec.functions.size());
      jat::parallel_for(ec.functions.size(), [&](std::size_t i) {
        embeddings[i] = jat::embed_function(params, ec.functions[i], emb_generic);
      });
      jat::save_index(jat::build_index(embeddings), emb_out);
      std::cout << "embedded " << embeddings.size() << " functions into " << emb_out << "\n";
      return 0;
    }

    if (sea->parsed()) {
      const auto index = jat::load_index(sea_store);
      std::ptrdiff_t at = -1;
      for (std::size_t i = 0; i < index.size(); ++i) {
        const auto& r = index.identities[i];
        const std::string id =
            r.project + "/" + r.binary + "/" + r.function_name + "/" + jat::to_string(r.opt);
        if (id == sea_query) {
          at = static_cast<std::ptrdiff_t>(i);
          break;
        }
      }
      if (at < 0) throw std::runtime_error("query id not found in store: " + sea_query);
      jat::FunctionEmbedding q;
      q.identity = index.identities[static_cast<std::size_t>(at)];
      q.vector = index.vectors.row(static_cast<Eigen::Index>(at));
      const auto hits = jat::search(index, q, sea_k);
      for (std::size_t rank = 0; rank < hits.size(); ++rank) {
        const auto& r = index.identities[hits[rank].index];
        std::printf("%2zu  %+.6f  %s/%s/%s/%s\n", rank + 1, hits[rank].similarity,
                    r.project.c_str(), r.binary.c_str(), r.function_name.c_str(),
                    jat::to_string(r.opt));
      }
      return 0;
    }

    if (ev->parsed()) {
      if (ev_ckpt.empty()) throw std::runtime_error("eval: --checkpoint-in is required");
      const auto ec = jat::load_encoded_corpus(ev_encoded);
      const auto params = jat::load_checkpoint(ev_ckpt);
      resolve_model_config(params.config, ec.vocab);
      jat::PoolSweepConfig sweep;
      sweep.opt_pairs = rc.eval.opt_pairs;
      sweep.pool_sizes = rc.eval.pool_sizes;
      sweep.ks = rc.eval.ks;
      sweep.seed = rc.eval.seed;
      std::vector<jat::EncodedFunction> test_split;
      if (rc.eval.query_split == "test") {
        test_split = test_split_functions(ec, rc.eval);
        sweep.query_universe = &test_split;
      } else if (rc.eval.query_split != "all") {
        throw std::runtime_error("eval.query_split must be 'all' or 'test'");
      }
      const auto reports = jat::pool_sweep(params, ec.functions, sweep, ev_generic);
      if (!ev_json.empty()) jat::write_eval_reports_json(reports, ev_json);
      if (!ev_csv.empty()) jat::write_eval_reports_csv(reports, ev_csv);
      for (const auto& r : reports)
        std::printf("%-8s pool %6zu  mrr %.4f  recall@1 %.4f  (%zu queries)\n", r.opt_pair.c_str(),
                    r.pool_size, r.mrr, r.recall_at_k.count(1) ? r.recall_at_k.at(1) : 0.0,
                    r.num_queries);
      return 0;
    }

    if (probe->parsed()) {
      if (probe_ckpt.empty()) throw std::runtime_error("jtp-probe: --checkpoint-in is required");
      const auto ec = jat::load_encoded_corpus(probe_encoded);
      const auto params = jat::load_checkpoint(probe_ckpt);
      resolve_model_config(params.config, ec.vocab);
      const auto report = jat::jtp_probe(params, ec.functions, probe_rate, rc.train.seed);
      std::cout << jat::jtp_probe_to_json(report).dump(2) << "\n";
      return 0;
    }

    if (audit->parsed()) {
      const auto report = jat::audit_jump_attention(audit_cfg);
      std::cout << jat::attention_audit_to_json(report).dump(2) << "\n";
      if (!audit_csv.empty()) {
        const std::vector<jat::AttentionAuditReport> reports{report};
        jat::write_attention_audit_csv(reports, audit_csv);
      }
      return 0;
    }

    if (abl->parsed()) {
      auto corpus = jat::load_corpus(abl_corpus);
      jat::AblationEvalConfig acfg;
      acfg.opt_pairs = rc.eval.opt_pairs;
      acfg.pool_size = rc.eval.pool_sizes.empty() ? 100 : rc.eval.pool_sizes.back();
      acfg.eval_seed = rc.eval.seed;
      acfg.train_fraction = rc.eval.train_fraction;
      acfg.split_seed = rc.eval.split_seed;
      const auto report = jat::run_ablation(std::move(corpus), rc.model, rc.phase_train("pretrain"),
                                            rc.phase_train("finetune"), acfg, rc.vocab_max_size);
      const auto j = jat::ablation_to_json(report);
      std::cout << j.dump(2) << "\n";
      if (!abl_report.empty()) open_output(abl_report) << j.dump(2) << "\n";
      return 0;
    }

    std::cerr << app.help();
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
}

}  // namespace

int main(int argc, char** argv) { return run(argc, argv); }
