#include <doctest.h>

#include <map>

#include "jat/corpus.hpp"
#include "jat/normalizer.hpp"
#include "testutil.hpp"

using namespace jat;

namespace {

FunctionRecord simple_function(std::vector<InstructionRecord> instrs) {
  FunctionRecord f;
  f.project = "p";
  f.binary = "b";
  f.function_name = "f";
  f.instructions = std::move(instrs);
  return f;
}

OperandRecord reg(const std::string& r) { return {OperandKind::Register, r, {}, {}}; }
OperandRecord imm(const std::string& v) { return {OperandKind::Immediate, v, {}, {}}; }
OperandRecord jump_to(std::uint64_t addr) {
  return {OperandKind::Jump, "0x" + std::to_string(addr), addr, {}};
}

}  // namespace

TEST_CASE("tokenize: immediates become <const>") {
  const auto f = simple_function({{0x10, "mov", {reg("rdi"), imm("0x1234")}}});
  const auto tf = tokenize_function(f);
  CHECK(tf.tokens == std::vector<std::string>{"mov", "rdi", "<const>"});
  CHECK(tf.instr_start == std::vector<std::size_t>{0});
  CHECK(tf.jump_refs.empty());
}

TEST_CASE("tokenize: external calls keep their name, internal calls do not") {
  const auto ext = simple_function(
      {{0x10, "call", {{OperandKind::CallExternal, "memcpy", {}, "memcpy"}}}});
  CHECK(tokenize_function(ext).tokens == std::vector<std::string>{"call", "memcpy"});

  const auto internal = simple_function(
      {{0x10, "call", {{OperandKind::CallInternal, "sub_4021", {}, "sub_4021"}}}});
  CHECK(tokenize_function(internal).tokens == std::vector<std::string>{"call", "<function>"});
}

TEST_CASE("tokenize: strings, memory and registers") {
  const auto f = simple_function(
      {{0x10, "lea", {reg("rdi"), {OperandKind::StringLiteral, "aHello", {}, {}}}},
       {0x14, "mov", {{OperandKind::Memory, "[rbp-8]", {}, {}}, reg("rax")}}});
  const auto tf = tokenize_function(f);
  CHECK(tf.tokens == std::vector<std::string>{"lea", "rdi", "<str>", "mov", "[rbp-8]", "rax"});
  CHECK(tf.instr_start == std::vector<std::size_t>{0, 3});
}

TEST_CASE("tokenize: out-of-function jump targets become <unk_jump>") {
  const auto f = simple_function({{0x10, "jmp", {jump_to(0x9999)}}, {0x14, "ret", {}}});
  const auto tf = tokenize_function(f);
  CHECK(tf.tokens == std::vector<std::string>{"jmp", std::string(kUnkJumpToken), "ret"});
  CHECK(tf.jump_refs.empty());
}

TEST_CASE("encode: jump resolves to the target mnemonic's final position") {
  // Layout: CLS, jmp@1, placeholder@2, 11 nops at 3..13, target mnemonic at 14.
  std::vector<InstructionRecord> instrs;
  instrs.push_back({0x100, "jmp", {jump_to(0x100 + 12 * 4)}});
  for (int i = 1; i < 12; ++i) instrs.push_back({0x100 + 4u * i, "nop", {}});
  instrs.push_back({0x100 + 12 * 4, "add", {reg("rax"), reg("rbx")}});
  const auto f = simple_function(std::move(instrs));

  const auto tf = tokenize_function(f);
  REQUIRE(tf.jump_refs.size() == 1);
  CHECK(tf.jump_refs[0] == std::pair<std::size_t, std::size_t>{1, 12});

  const auto vocab = build_vocabulary({tf}, 2000, 32);
  const auto ef = encode(tf, vocab, 32, make_ref(f));
  CHECK(ef.ids[0] == Vocabulary::Cls);
  REQUIRE(ef.jump_pairs.size() == 1);
  CHECK(ef.jump_pairs[0].first == 2);
  CHECK(ef.jump_pairs[0].second == 14);
  CHECK(ef.ids[2] == vocab.jump_id(14));
  CHECK(vocab.token_of(ef.ids[2]) == "JUMP_14");
  CHECK(vocab.token_of(ef.ids[14]) == "add");
}

TEST_CASE("build_vocabulary: specials, jump block, then corpus tokens") {
  const auto f = simple_function({{0x10, "mov", {reg("rax"), imm("1")}}});
  const auto tf = tokenize_function(f);
  const std::size_t max_len = 16;
  const auto vocab = build_vocabulary({tf}, 2000, max_len);
  // specials + jump block + {mov, rax} (<const> is already a special)
  CHECK(vocab.size() == Vocabulary::kNumSpecials + max_len + 2);
  CHECK(vocab.id_of("<const>") == Vocabulary::Const);
  CHECK(vocab.id_of("JUMP_0") == vocab.jump_id(0));
  CHECK(vocab.id_of("JUMP_15") == vocab.jump_id(15));
  // Equal frequency: lexicographically smaller token gets the smaller id.
  CHECK(vocab.id_of("mov") < vocab.id_of("rax"));
}

TEST_CASE("build_vocabulary: frequency cut matches an independent recount") {
  // 400 distinct tokens; token i appears (i % 7) + 1 times.
  std::vector<TokenizedFunction> corpus;
  std::map<std::string, int> truth;
  TokenizedFunction tf;
  for (int i = 0; i < 400; ++i) {
    char name[16];
    std::snprintf(name, sizeof(name), "t%03d", i);
    const int count = i % 7 + 1;
    truth[name] = count;
    for (int c = 0; c < count; ++c) tf.tokens.push_back(name);
  }
  tf.instr_start.push_back(0);
  corpus.push_back(tf);

  const std::size_t max_len = 16;
  const std::size_t budget = 100;
  const auto vocab =
      build_vocabulary(corpus, Vocabulary::kNumSpecials + max_len + budget, max_len);
  CHECK(vocab.size() == Vocabulary::kNumSpecials + max_len + budget);

  // Independent pass: sort by (count desc, name asc), keep the top 100.
  std::vector<std::pair<std::string, int>> ranked(truth.begin(), truth.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  for (std::size_t i = 0; i < budget; ++i)
    CHECK(vocab.id_of(ranked[i].first) ==
          static_cast<std::int32_t>(Vocabulary::kNumSpecials + max_len + i));
  for (std::size_t i = budget; i < ranked.size(); ++i)
    CHECK(vocab.id_of(ranked[i].first) == Vocabulary::Unk);
}

TEST_CASE("build_vocabulary: max_size must leave room beyond specials and jumps") {
  CHECK_THROWS_AS(build_vocabulary({}, Vocabulary::kNumSpecials + 16, 16), std::runtime_error);
}

TEST_CASE("encode: zero real tokens degenerate to CLS plus padding") {
  const auto vocab = testutil::tiny_vocab(8);
  TokenizedFunction tf;  // empty
  const auto ef = encode(tf, vocab, 8);
  CHECK(ef.length == 1);
  CHECK(ef.ids[0] == Vocabulary::Cls);
  for (std::size_t i = 1; i < 8; ++i) CHECK(ef.ids[i] == Vocabulary::Pad);
  CHECK(ef.jump_pairs.empty());
}

TEST_CASE("encode: truncated jump targets fall back to <unk_jump>") {
  // 40 tokens: jump early, target mnemonic beyond max_len = 16.
  std::vector<InstructionRecord> instrs;
  instrs.push_back({0x100, "jmp", {jump_to(0x100 + 30 * 4)}});
  for (int i = 1; i < 30; ++i) instrs.push_back({0x100 + 4u * i, "nop", {}});
  instrs.push_back({0x100 + 30 * 4, "add", {reg("rax"), reg("rbx")}});
  const auto f = simple_function(std::move(instrs));
  const auto tf = tokenize_function(f);
  // Hand-computed layout: target mnemonic is token 31, final position 32 >= 16.
  REQUIRE(tf.jump_refs.size() == 1);
  CHECK(tf.jump_refs[0].second == 30);
  CHECK(tf.instr_start[30] == 31);

  const auto vocab = build_vocabulary({tf}, 2000, 16);
  const auto ef = encode(tf, vocab, 16, make_ref(f));
  CHECK(ef.length == 16);
  CHECK(ef.ids[2] == Vocabulary::UnkJump);
  CHECK(ef.jump_pairs.empty());
}

TEST_CASE("encode: base-address shift leaves the encoding byte-identical") {
  SyntheticConfig cfg;
  cfg.num_functions = 10;
  cfg.variants_per_function = 1;
  cfg.seed = 31;
  auto corpus = generate_synthetic(cfg);

  std::vector<TokenizedFunction> tokenized;
  for (const auto& f : corpus) tokenized.push_back(tokenize_function(f));
  const auto vocab = build_vocabulary(tokenized, 20000, 128);

  for (const auto& f : corpus) {
    FunctionRecord shifted = f;
    const std::uint64_t delta = 0x7000;
    for (auto& ins : shifted.instructions) {
      ins.address += delta;
      for (auto& op : ins.operands)
        if (op.target_address) *op.target_address += delta;
    }
    const auto a = encode(tokenize_function(f), vocab, 128, make_ref(f));
    const auto b = encode(tokenize_function(shifted), vocab, 128, make_ref(shifted));
    CHECK(a.ids == b.ids);
    CHECK(a.length == b.length);
    CHECK(a.jump_pairs == b.jump_pairs);
  }
}

TEST_CASE("encode: jump-pair position consistency and determinism") {
  SyntheticConfig cfg;
  cfg.num_functions = 20;
  cfg.variants_per_function = 1;
  cfg.seed = 8;
  auto corpus = generate_synthetic(cfg);
  std::vector<TokenizedFunction> tokenized;
  for (const auto& f : corpus) tokenized.push_back(tokenize_function(f));
  const auto vocab = build_vocabulary(tokenized, 20000, 64);

  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto a = encode(tokenized[i], vocab, 64, make_ref(corpus[i]));
    const auto b = encode(tokenized[i], vocab, 64, make_ref(corpus[i]));
    CHECK(a.ids == b.ids);  // purity
    CHECK(a.ids[0] == Vocabulary::Cls);
    for (std::int32_t p = a.length; p < 64; ++p)
      CHECK(a.ids[static_cast<std::size_t>(p)] == Vocabulary::Pad);
    for (const auto& [src, tgt] : a.jump_pairs) {
      CHECK(src < a.length);
      CHECK(tgt < a.length);
      CHECK(a.ids[static_cast<std::size_t>(src)] == vocab.jump_id(tgt));
      CHECK(vocab.token_of(a.ids[static_cast<std::size_t>(src)]) ==
            "JUMP_" + std::to_string(tgt));
    }
  }
}

TEST_CASE("encode: unseen tokens map to <unk> and never fail") {
  const auto vocab = testutil::tiny_vocab(16);
  const auto f = simple_function({{0x10, "frobnicate", {reg("r99")}}});
  const auto ef = encode_record(f, vocab, 16);
  CHECK(ef.ids[1] == Vocabulary::Unk);
  CHECK(ef.ids[2] == Vocabulary::Unk);
}

TEST_CASE("vocabulary: save/load round trip") {
  const auto dir = testutil::temp_dir("vocab");
  const auto f = simple_function({{0x10, "mov", {reg("rax"), imm("1")}}});
  const auto vocab = build_vocabulary({tokenize_function(f)}, 2000, 16);
  const auto path = dir / "vocab.json";
  vocab.save(path);
  const auto loaded = Vocabulary::load(path);
  CHECK(loaded.size() == vocab.size());
  CHECK(loaded.max_len() == vocab.max_len());
  for (std::int32_t id = 0; id < static_cast<std::int32_t>(vocab.size()); ++id)
    CHECK(loaded.token_of(id) == vocab.token_of(id));
  std::filesystem::remove_all(dir);
}

TEST_CASE("preprocess_corpus: deduplication keeps indices aligned") {
  SyntheticConfig cfg;
  cfg.num_functions = 10;
  cfg.variants_per_function = 1;
  cfg.seed = 55;
  auto corpus = generate_synthetic(cfg);
  const auto ec = preprocess_corpus(corpus, 20000, 64);
  REQUIRE(ec.functions.size() == corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    CHECK(ec.functions[i].identity == make_ref(corpus[i]));
}
