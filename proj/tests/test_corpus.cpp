#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <map>
#include <set>

#include "jat/corpus.hpp"
#include "jat/normalizer.hpp"
#include "testutil.hpp"

using namespace jat;

namespace {

std::filesystem::path write_lines(const std::filesystem::path& dir, const std::string& name,
                                  const std::vector<std::string>& lines) {
  const auto path = dir / name;
  std::ofstream out(path, std::ios::binary);
  for (const auto& l : lines) out << l << '\n';
  return path;
}

const char* kTwoInstrLine =
    R"({"project":"p1","binary":"b1","function":"f1","opt":"O0","instructions":[)"
    R"({"addr":4096,"mnemonic":"mov","operands":[{"kind":"register","text":"rax"},{"kind":"immediate","text":"1"}]},)"
    R"({"addr":4100,"mnemonic":"ret","operands":[]}]})";

// --- brute-force CFG oracle for the block_reorder check ----------------------

struct OracleBlock {
  std::string content;             // mnemonics + non-jump operand texts
  std::vector<std::size_t> edges;  // index into block list
};

bool is_control_transfer(const InstructionRecord& ins) {
  if (ins.mnemonic == "ret") return true;
  for (const auto& op : ins.operands)
    if (op.kind == OperandKind::Jump) return true;
  return false;
}

std::vector<OracleBlock> oracle_blocks(const FunctionRecord& f) {
  // Leaders: entry, jump targets, instruction after a control transfer.
  std::set<std::uint64_t> leaders{f.instructions.front().address};
  for (std::size_t i = 0; i < f.instructions.size(); ++i) {
    const auto& ins = f.instructions[i];
    for (const auto& op : ins.operands)
      if (op.kind == OperandKind::Jump) leaders.insert(*op.target_address);
    if (is_control_transfer(ins) && i + 1 < f.instructions.size())
      leaders.insert(f.instructions[i + 1].address);
  }
  std::map<std::uint64_t, std::size_t> block_of_addr;  // leader addr -> block idx
  std::vector<std::vector<const InstructionRecord*>> members;
  for (const auto& ins : f.instructions) {
    if (leaders.count(ins.address)) {
      block_of_addr[ins.address] = members.size();
      members.emplace_back();
    }
    members.back().push_back(&ins);
  }
  std::vector<OracleBlock> blocks(members.size());
  for (std::size_t b = 0; b < members.size(); ++b) {
    for (const auto* ins : members[b]) {
      blocks[b].content += ins->mnemonic;
      blocks[b].content += ' ';
      for (const auto& op : ins->operands) {
        if (op.kind == OperandKind::Jump) continue;  // address text varies
        blocks[b].content += op.text;
        blocks[b].content += ' ';
      }
      blocks[b].content += ";";
      for (const auto& op : ins->operands)
        if (op.kind == OperandKind::Jump) {
          const auto it = block_of_addr.upper_bound(*op.target_address);
          REQUIRE(it != block_of_addr.begin());
          blocks[b].edges.push_back(std::prev(it)->second);
        }
    }
  }
  return blocks;
}

// Content-labelled edge multiset; equality under any content-preserving block
// bijection implies equality of these multisets.
std::multiset<std::pair<std::string, std::string>> labelled_edges(
    const std::vector<OracleBlock>& blocks) {
  std::multiset<std::pair<std::string, std::string>> edges;
  for (const auto& b : blocks)
    for (const auto e : b.edges) edges.emplace(b.content, blocks[e].content);
  return edges;
}

std::multiset<std::string> external_call_names(const FunctionRecord& f) {
  std::multiset<std::string> names;
  for (const auto& ins : f.instructions)
    for (const auto& op : ins.operands)
      if (op.kind == OperandKind::CallExternal) names.insert(*op.call_name);
  return names;
}

}  // namespace

TEST_CASE("load_corpus: one-line file round-trips the schema") {
  const auto dir = testutil::temp_dir("corpus1");
  const auto path = write_lines(dir, "one.jsonl", {kTwoInstrLine});
  const auto corpus = load_corpus(path);
  REQUIRE(corpus.size() == 1);
  CHECK(corpus[0].project == "p1");
  CHECK(corpus[0].optimization == OptLevel::O0);
  REQUIRE(corpus[0].instructions.size() == 2);
  CHECK(corpus[0].instructions[0].mnemonic == "mov");
  CHECK(corpus[0].instructions[0].operands[1].kind == OperandKind::Immediate);
  CHECK(corpus[0].instructions[1].address == 4100);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_corpus: jump without target_addr fails naming the line") {
  const auto dir = testutil::temp_dir("corpus2");
  const std::string bad =
      R"({"project":"p","binary":"b","function":"f","opt":"O0","instructions":[)"
      R"({"addr":1,"mnemonic":"jmp","operands":[{"kind":"jump","text":"0x40"}]}]})";
  const auto path = write_lines(dir, "bad.jsonl", {kTwoInstrLine, bad});
  CHECK_THROWS_WITH_AS(load_corpus(path), doctest::Contains("line 2"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_corpus: malformed JSON and schema violations fail hard") {
  const auto dir = testutil::temp_dir("corpus3");
  CHECK_THROWS_WITH_AS(load_corpus(write_lines(dir, "a.jsonl", {"{not json"})),
                       doctest::Contains("malformed"), std::runtime_error);
  const std::string no_mnemonic =
      R"({"project":"p","binary":"b","function":"f","opt":"O0","instructions":[{"addr":1,"operands":[]}]})";
  CHECK_THROWS_WITH_AS(load_corpus(write_lines(dir, "b.jsonl", {no_mnemonic})),
                       doctest::Contains("schema"), std::runtime_error);
  const std::string dup_addr =
      R"({"project":"p","binary":"b","function":"f","opt":"O0","instructions":[)"
      R"({"addr":4,"mnemonic":"nop","operands":[]},{"addr":4,"mnemonic":"nop","operands":[]}]})";
  CHECK_THROWS_WITH_AS(load_corpus(write_lines(dir, "c.jsonl", {dup_addr})),
                       doctest::Contains("increasing"), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST_CASE("load_corpus: hand-authored three-function fixture parses field by field") {
  const auto dir = testutil::temp_dir("corpus4");
  const std::string f2 =
      R"({"project":"p2","binary":"b","function":"g","opt":"O3","instructions":[)"
      R"({"addr":8,"mnemonic":"call","operands":[{"kind":"call_external","text":"memcpy","call_name":"memcpy"}]},)"
      R"({"addr":12,"mnemonic":"jmp","operands":[{"kind":"jump","text":"0x8","target_addr":8}]}]})";
  const std::string f3 =
      R"({"project":"p2","binary":"b","function":"h","opt":"Os","instructions":[)"
      R"({"addr":100,"mnemonic":"lea","operands":[{"kind":"register","text":"rdi"},{"kind":"string_literal","text":"aHello"}]}]})";
  const auto path = write_lines(dir, "three.jsonl", {kTwoInstrLine, f2, f3});
  const auto corpus = load_corpus(path);
  REQUIRE(corpus.size() == 3);
  CHECK(corpus[0].function_name == "f1");
  CHECK(corpus[1].function_name == "g");
  CHECK(corpus[1].optimization == OptLevel::O3);
  CHECK(corpus[1].instructions[1].operands[0].target_address == 8);
  CHECK(corpus[2].instructions[0].operands[1].kind == OperandKind::StringLiteral);
  // Instruction order preserved.
  CHECK(corpus[1].instructions[0].address < corpus[1].instructions[1].address);
  std::filesystem::remove_all(dir);
}

TEST_CASE("corpus round-trip: serialize(load(p)) preserves every field") {
  SyntheticConfig cfg;
  cfg.num_functions = 6;
  cfg.variants_per_function = 2;
  cfg.seed = 42;
  const auto corpus = generate_synthetic(cfg);
  const auto dir = testutil::temp_dir("corpus5");
  const auto path = dir / "c.jsonl";
  save_corpus(corpus, path);
  const auto reloaded = load_corpus(path);
  REQUIRE(reloaded.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(to_jsonl_line(corpus[i]) == to_jsonl_line(reloaded[i]));
  }
  std::filesystem::remove_all(dir);
}

TEST_CASE("generate_synthetic: deterministic under a fixed seed") {
  SyntheticConfig cfg;
  cfg.num_functions = 1;
  cfg.variants_per_function = 1;
  cfg.seed = 7;
  const auto a = generate_synthetic(cfg);
  const auto b = generate_synthetic(cfg);
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(to_jsonl_line(a[i]) == to_jsonl_line(b[i]));
}

TEST_CASE("generate_synthetic: block_reorder preserves the labelled CFG") {
  SyntheticConfig cfg;
  cfg.num_functions = 8;
  cfg.variants_per_function = 1;
  cfg.transform_set = {Transform::BlockReorder};
  cfg.seed = 99;
  const auto corpus = generate_synthetic(cfg);
  REQUIRE(corpus.size() == 16);
  for (std::size_t i = 0; i < corpus.size(); i += 2) {
    const auto& base = corpus[i];
    const auto& variant = corpus[i + 1];
    REQUIRE(base.function_name == variant.function_name);
    const auto bb = oracle_blocks(base);
    const auto vb = oracle_blocks(variant);
    // Same multiset of block bodies and of content-labelled edges.
    std::multiset<std::string> bc, vc;
    for (const auto& blk : bb) bc.insert(blk.content);
    for (const auto& blk : vb) vc.insert(blk.content);
    CHECK(bc == vc);
    CHECK(labelled_edges(bb) == labelled_edges(vb));
  }
}

TEST_CASE("generate_synthetic: register_rename is a consistent permutation") {
  SyntheticConfig cfg;
  cfg.num_functions = 8;
  cfg.variants_per_function = 1;
  cfg.transform_set = {Transform::RegisterRename};
  cfg.seed = 123;
  const auto corpus = generate_synthetic(cfg);
  for (std::size_t i = 0; i < corpus.size(); i += 2) {
    const auto& base = corpus[i];
    const auto& variant = corpus[i + 1];
    REQUIRE(base.instructions.size() == variant.instructions.size());
    std::map<std::string, std::string> mapping;
    for (std::size_t k = 0; k < base.instructions.size(); ++k) {
      const auto& bi = base.instructions[k];
      const auto& vi = variant.instructions[k];
      CHECK(bi.mnemonic == vi.mnemonic);
      REQUIRE(bi.operands.size() == vi.operands.size());
      for (std::size_t o = 0; o < bi.operands.size(); ++o) {
        CHECK(bi.operands[o].kind == vi.operands[o].kind);
        if (bi.operands[o].kind == OperandKind::Register) {
          const auto [it, inserted] = mapping.emplace(bi.operands[o].text, vi.operands[o].text);
          if (!inserted) CHECK(it->second == vi.operands[o].text);
        }
      }
    }
    // Consistent permutation: injective.
    std::set<std::string> images;
    for (const auto& [from, to] : mapping) images.insert(to);
    CHECK(images.size() == mapping.size());

    // Token-level diff restricted to register operands: the normalized token
    // streams differ only where the base token is a renamed register.
    const auto bt = tokenize_function(base).tokens;
    const auto vt = tokenize_function(variant).tokens;
    REQUIRE(bt.size() == vt.size());
    for (std::size_t t = 0; t < bt.size(); ++t) {
      if (bt[t] == vt[t]) continue;
      const auto it = mapping.find(bt[t]);
      REQUIRE(it != mapping.end());
      CHECK(it->second == vt[t]);
    }
  }
}

TEST_CASE("generate_synthetic: variants keep the external-call multiset") {
  SyntheticConfig cfg;
  cfg.num_functions = 12;
  cfg.variants_per_function = 3;
  cfg.seed = 5;
  const auto corpus = generate_synthetic(cfg);
  REQUIRE(corpus.size() == 48);
  for (std::size_t i = 0; i < corpus.size(); i += 4) {
    const auto base_calls = external_call_names(corpus[i]);
    for (std::size_t v = 1; v < 4; ++v) CHECK(external_call_names(corpus[i + v]) == base_calls);
  }
}

TEST_CASE("generate_synthetic: emitted functions satisfy the record invariants") {
  SyntheticConfig cfg;
  cfg.num_functions = 50;
  cfg.variants_per_function = 2;
  cfg.seed = 2024;
  const auto corpus = generate_synthetic(cfg);
  for (const auto& f : corpus) validate_function(f, f.function_name);  // throws on violation
  CHECK(corpus.size() == 150);
}

TEST_CASE("split_by_project: projects never straddle the split") {
  std::vector<FunctionRecord> corpus;
  for (int p = 0; p < 10; ++p)
    for (int k = 0; k < 3; ++k) {
      FunctionRecord f;
      f.project = "proj" + std::to_string(p);
      f.binary = "b";
      f.function_name = "f" + std::to_string(k);
      f.instructions.push_back({1, "ret", {}});
      corpus.push_back(std::move(f));
    }

  const auto [train, test] = split_by_project(corpus, 0.8, 3);
  std::set<std::string> train_projects, test_projects;
  for (const auto& f : train) train_projects.insert(f.project);
  for (const auto& f : test) test_projects.insert(f.project);
  CHECK(train_projects.size() == 8);
  CHECK(test_projects.size() == 2);
  for (const auto& p : train_projects) CHECK(test_projects.count(p) == 0);
  CHECK(train.size() + test.size() == corpus.size());

  const auto [train2, test2] = split_by_project(corpus, 0.8, 3);
  CHECK(train2.size() == train.size());
  for (std::size_t i = 0; i < train.size(); ++i)
    CHECK(to_jsonl_line(train2[i]) == to_jsonl_line(train[i]));

  // A different seed is allowed to pick a different partition, but it must
  // still be a partition.
  const auto [train3, test3] = split_by_project(corpus, 0.8, 4);
  CHECK(train3.size() + test3.size() == corpus.size());
}

TEST_CASE("split_by_project: single project cannot be split") {
  std::vector<FunctionRecord> corpus(1);
  corpus[0].project = "only";
  corpus[0].instructions.push_back({1, "ret", {}});
  CHECK_THROWS_AS(split_by_project(corpus, 0.5, 1), std::runtime_error);
}

TEST_CASE("make_ground_truth_pairs: counterpart intersection") {
  auto make = [](const std::string& name, OptLevel opt) {
    FunctionRecord f;
    f.project = "p";
    f.binary = "b";
    f.function_name = name;
    f.optimization = opt;
    f.instructions.push_back({1, "ret", {}});
    return f;
  };

  // Every function present at both levels.
  std::vector<FunctionRecord> corpus;
  for (int i = 0; i < 4; ++i) {
    corpus.push_back(make("f" + std::to_string(i), OptLevel::O0));
    corpus.push_back(make("f" + std::to_string(i), OptLevel::O3));
  }
  auto result = make_ground_truth_pairs(corpus, OptLevel::O0, OptLevel::O3);
  CHECK(result.pairs.size() == 4);
  CHECK(result.skipped == 0);

  // A function present only at O0 is skipped and counted.
  corpus.push_back(make("lonely", OptLevel::O0));
  result = make_ground_truth_pairs(corpus, OptLevel::O0, OptLevel::O3);
  CHECK(result.pairs.size() == 4);
  CHECK(result.skipped == 1);

  // Mixed fixture of 5 names with 3 shared; oracle by name intersection.
  std::vector<FunctionRecord> mixed;
  const std::vector<std::string> at_a{"a", "b", "c", "d"};
  const std::vector<std::string> at_b{"b", "c", "d", "e"};
  for (const auto& n : at_a) mixed.push_back(make(n, OptLevel::O1));
  for (const auto& n : at_b) mixed.push_back(make(n, OptLevel::O2));
  std::set<std::string> inter;
  std::set_intersection(at_a.begin(), at_a.end(), at_b.begin(), at_b.end(),
                        std::inserter(inter, inter.begin()));
  result = make_ground_truth_pairs(mixed, OptLevel::O1, OptLevel::O2);
  CHECK(result.pairs.size() == inter.size());
  for (const auto& pr : result.pairs) {
    CHECK(mixed[pr.query_index].function_name == mixed[pr.target_index].function_name);
    CHECK(inter.count(mixed[pr.query_index].function_name) == 1);
  }

  CHECK_THROWS_AS(make_ground_truth_pairs(mixed, OptLevel::O1, OptLevel::O1), std::runtime_error);
}

TEST_CASE("dedup_functions: exact duplicates within (project, opt) collapse") {
  SyntheticConfig cfg;
  cfg.num_functions = 3;
  cfg.variants_per_function = 1;
  cfg.seed = 77;
  auto corpus = generate_synthetic(cfg);
  const auto original_size = corpus.size();
  auto clone = corpus[0];
  clone.function_name = "copycat";  // same tokens, same project+opt
  corpus.push_back(clone);
  auto other_project = corpus[0];
  other_project.project = "elsewhere";  // same tokens, different project: kept
  corpus.push_back(other_project);

  const std::size_t dropped = dedup_functions(corpus);
  CHECK(dropped == 1);
  CHECK(corpus.size() == original_size + 1);
}
