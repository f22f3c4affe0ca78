#include "jat/corpus.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include <json.hpp>

#include "jat/rng.hpp"

namespace jat {

using nlohmann::json;

const char* to_string(OperandKind kind) {
  switch (kind) {
    case OperandKind::Register: return "register";
    case OperandKind::Memory: return "memory";
    case OperandKind::Immediate: return "immediate";
    case OperandKind::StringLiteral: return "string_literal";
    case OperandKind::CallInternal: return "call_internal";
    case OperandKind::CallExternal: return "call_external";
    case OperandKind::Jump: return "jump";
  }
  return "?";
}

const char* to_string(OptLevel opt) {
  switch (opt) {
    case OptLevel::O0: return "O0";
    case OptLevel::O1: return "O1";
    case OptLevel::O2: return "O2";
    case OptLevel::O3: return "O3";
    case OptLevel::Os: return "Os";
  }
  return "?";
}

OperandKind operand_kind_from_string(const std::string& s) {
  if (s == "register") return OperandKind::Register;
  if (s == "memory") return OperandKind::Memory;
  if (s == "immediate") return OperandKind::Immediate;
  if (s == "string_literal") return OperandKind::StringLiteral;
  if (s == "call_internal") return OperandKind::CallInternal;
  if (s == "call_external") return OperandKind::CallExternal;
  if (s == "jump") return OperandKind::Jump;
  throw std::runtime_error("unknown operand kind: " + s);
}

OptLevel opt_level_from_string(const std::string& s) {
  if (s == "O0") return OptLevel::O0;
  if (s == "O1") return OptLevel::O1;
  if (s == "O2") return OptLevel::O2;
  if (s == "O3") return OptLevel::O3;
  if (s == "Os") return OptLevel::Os;
  throw std::runtime_error("unknown optimization level: " + s);
}

FunctionRef make_ref(const FunctionRecord& f) {
  return FunctionRef{f.project, f.binary, f.function_name, f.optimization};
}

void SyntheticConfig::validate() const {
  if (num_functions < 1) throw std::runtime_error("synthetic config: num_functions must be >= 1");
  if (variants_per_function < 1 || variants_per_function > 4)
    throw std::runtime_error("synthetic config: variants_per_function must be in [1, 4]");
  if (blocks_range.first < 1 || blocks_range.first > blocks_range.second)
    throw std::runtime_error("synthetic config: invalid blocks_range");
  if (instrs_per_block_range.first < 1 ||
      instrs_per_block_range.first > instrs_per_block_range.second)
    throw std::runtime_error("synthetic config: invalid instrs_per_block_range");
}

void validate_function(const FunctionRecord& f, const std::string& context) {
  auto fail = [&](const std::string& msg) { throw std::runtime_error(context + ": " + msg); };
  if (f.instructions.empty()) fail("function has no instructions");
  std::uint64_t prev = 0;
  bool first = true;
  for (const auto& ins : f.instructions) {
    if (!first && ins.address <= prev) fail("instruction addresses not strictly increasing");
    prev = ins.address;
    first = false;
    int jump_operands = 0;
    for (const auto& op : ins.operands) {
      const bool is_call = op.kind == OperandKind::CallInternal || op.kind == OperandKind::CallExternal;
      if (op.kind == OperandKind::Jump) {
        ++jump_operands;
        if (!op.target_address) fail("jump operand without target_addr");
      } else if (op.target_address) {
        fail("target_addr on non-jump operand");
      }
      if (is_call && !op.call_name) fail("call operand without call_name");
      if (!is_call && op.call_name) fail("call_name on non-call operand");
    }
    if (jump_operands > 1) fail("more than one jump operand in an instruction");
  }
  const std::uint64_t lo = f.instructions.front().address;
  const std::uint64_t hi = f.instructions.back().address;
  for (const auto& ins : f.instructions) {
    for (const auto& op : ins.operands) {
      if (op.kind != OperandKind::Jump) continue;
      const std::uint64_t t = *op.target_address;
      if (t < lo || t > hi) continue;  // out-of-function target, resolved to <unk_jump> later
      const bool hit = std::any_of(f.instructions.begin(), f.instructions.end(),
                                   [&](const InstructionRecord& x) { return x.address == t; });
      if (!hit) fail("jump target inside the function is not an instruction address");
    }
  }
}

FunctionRecord parse_corpus_line(const std::string& line, std::size_t line_number) {
  const std::string context = "line " + std::to_string(line_number);
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception& e) {
    throw std::runtime_error(context + ": malformed JSON: " + e.what());
  }
  try {
    FunctionRecord f;
    f.project = j.at("project").get<std::string>();
    f.binary = j.at("binary").get<std::string>();
    f.function_name = j.at("function").get<std::string>();
    f.optimization = opt_level_from_string(j.at("opt").get<std::string>());
    for (const auto& ji : j.at("instructions")) {
      InstructionRecord ins;
      ins.address = ji.at("addr").get<std::uint64_t>();
      ins.mnemonic = ji.at("mnemonic").get<std::string>();
      for (const auto& jo : ji.at("operands")) {
        OperandRecord op;
        op.kind = operand_kind_from_string(jo.at("kind").get<std::string>());
        op.text = jo.at("text").get<std::string>();
        if (jo.contains("target_addr")) op.target_address = jo.at("target_addr").get<std::uint64_t>();
        if (jo.contains("call_name")) op.call_name = jo.at("call_name").get<std::string>();
        ins.operands.push_back(std::move(op));
      }
      f.instructions.push_back(std::move(ins));
    }
    validate_function(f, context);
    return f;
  } catch (const json::exception& e) {
    throw std::runtime_error(context + ": schema violation: " + e.what());
  }
}

void load_corpus_stream(const std::filesystem::path& path,
                        const std::function<void(FunctionRecord&&)>& sink) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open corpus file: " + path.string());
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (line.empty()) continue;
    sink(parse_corpus_line(line, line_number));
  }
}

std::vector<FunctionRecord> load_corpus(const std::filesystem::path& path) {
  std::vector<FunctionRecord> out;
  load_corpus_stream(path, [&](FunctionRecord&& f) { out.push_back(std::move(f)); });
  return out;
}

std::string to_jsonl_line(const FunctionRecord& f) {
  json instructions = json::array();
  for (const auto& ins : f.instructions) {
    json operands = json::array();
    for (const auto& op : ins.operands) {
      json jo{{"kind", to_string(op.kind)}, {"text", op.text}};
      if (op.target_address) jo["target_addr"] = *op.target_address;
      if (op.call_name) jo["call_name"] = *op.call_name;
      operands.push_back(std::move(jo));
    }
    instructions.push_back(
        json{{"addr", ins.address}, {"mnemonic", ins.mnemonic}, {"operands", std::move(operands)}});
  }
  const json j{{"project", f.project},
               {"binary", f.binary},
               {"function", f.function_name},
               {"opt", to_string(f.optimization)},
               {"instructions", std::move(instructions)}};
  return j.dump();
}

void save_corpus(const std::vector<FunctionRecord>& corpus, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open output file: " + path.string());
  for (const auto& f : corpus) out << to_jsonl_line(f) << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic generator.
//
// Functions are built from explicit basic blocks whose terminators are always
// unconditional transfers (optionally preceded by a conditional jump), so a
// block permutation plus jump re-targeting preserves the CFG. Identities come
// in families that share block bodies but differ in jump wiring; one family
// maps to one project so project-level splits keep families intact.
// ---------------------------------------------------------------------------

namespace {

// Identities sharing a content template. One family in ~15 keeps the density
// of same-template distractors in retrieval pools stable across corpus sizes.
std::size_t family_size_for(std::size_t num_functions) {
  return std::max<std::size_t>(2, (num_functions + 14) / 15);
}

const std::vector<std::string>& reg_pool() {
  static const std::vector<std::string> regs{"rax", "rbx", "rcx", "rdx", "rsi",
                                             "rdi", "r8",  "r9",  "r10", "r11"};
  return regs;
}

const std::vector<std::string>& mem_pool() {
  static const std::vector<std::string> mems{"[rbp-8]",  "[rbp-16]", "[rbp-24]", "[rbp-32]",
                                             "[rax]",    "[rbx]",    "[rcx+8]",  "[rdx+16]",
                                             "[rsi]",    "[rdi+8]",  "[r8+rax]", "[rsp+8]"};
  return mems;
}

const std::vector<std::string>& call_pool() {
  static const std::vector<std::string> calls{"memcpy", "memset", "strlen", "strcmp", "malloc",
                                              "free",   "printf", "puts",   "qsort",  "read",
                                              "write",  "open",   "close",  "atoi",   "exit"};
  return calls;
}

const std::vector<std::string>& imm_pool() {
  static const std::vector<std::string> imms{"0", "1", "2", "4", "8", "16", "32", "64", "255"};
  return imms;
}

const std::vector<std::string>& jcc_pool() {
  static const std::vector<std::string> jccs{"je", "jne", "jl", "jg", "jle", "jge", "ja", "jb"};
  return jccs;
}

OperandRecord reg_op(const std::string& r) { return {OperandKind::Register, r, {}, {}}; }
OperandRecord mem_op(const std::string& m) { return {OperandKind::Memory, m, {}, {}}; }
OperandRecord imm_op(const std::string& v) { return {OperandKind::Immediate, v, {}, {}}; }

struct ProtoInstr {
  std::string mnemonic;
  std::vector<OperandRecord> operands;
};

// A block body (no terminator); terminators are materialized at emit time.
using Body = std::vector<ProtoInstr>;

struct Wiring {
  // Per non-exit block: optional conditional target, mandatory unconditional target.
  struct Edge {
    int cond_target = -1;  // -1: no conditional jump
    std::string cond_mnemonic;
    int uncond_target = 0;
  };
  std::vector<Edge> edges;  // indexed by block, exit block entry unused

  bool operator==(const Wiring& o) const {
    if (edges.size() != o.edges.size()) return false;
    for (std::size_t i = 0; i < edges.size(); ++i)
      if (edges[i].cond_target != o.edges[i].cond_target ||
          edges[i].uncond_target != o.edges[i].uncond_target)
        return false;
    return true;
  }
};

struct FamilyTemplate {
  std::vector<Body> bodies;  // one per block
  int exit_block = 0;
  // Small pool of marker instructions shared by the family. Each identity
  // carries one of them, so content narrows a lookup to a salt group but
  // cannot separate identities within it; only the jump wiring can.
  std::vector<ProtoInstr> salt_pool;
};

ProtoInstr random_body_instr(Rng& rng) {
  const auto& regs = reg_pool();
  auto r = [&] { return regs[rng.below(regs.size())]; };
  switch (rng.below(14)) {
    case 0: return {"mov", {reg_op(r()), reg_op(r())}};
    case 1: return {"mov", {reg_op(r()), imm_op(imm_pool()[rng.below(imm_pool().size())])}};
    case 2: return {"mov", {reg_op(r()), mem_op(mem_pool()[rng.below(mem_pool().size())])}};
    case 3: return {"mov", {mem_op(mem_pool()[rng.below(mem_pool().size())]), reg_op(r())}};
    case 4: {
      const char* m = rng.bernoulli(0.5) ? "add" : "sub";
      if (rng.bernoulli(0.5)) return {m, {reg_op(r()), reg_op(r())}};
      return {m, {reg_op(r()), imm_op(imm_pool()[rng.below(imm_pool().size())])}};
    }
    case 5: {
      const std::string x = r();
      return {"xor", {reg_op(x), reg_op(x)}};
    }
    case 6: return {rng.bernoulli(0.5) ? "and" : "or", {reg_op(r()), reg_op(r())}};
    case 7: {
      if (rng.bernoulli(0.5)) return {"cmp", {reg_op(r()), reg_op(r())}};
      return {"cmp", {reg_op(r()), imm_op(imm_pool()[rng.below(imm_pool().size())])}};
    }
    case 8: {
      const std::string x = r();
      return {"test", {reg_op(x), reg_op(x)}};
    }
    case 9: return {"lea", {reg_op(r()), mem_op(mem_pool()[rng.below(mem_pool().size())])}};
    case 10: return {"imul", {reg_op(r()), reg_op(r())}};
    case 11: {
      const char* m = rng.bernoulli(0.5) ? "shl" : "shr";
      return {m, {reg_op(r()), imm_op(rng.bernoulli(0.5) ? "1" : "2")}};
    }
    case 12: {
      static const char* unary[] = {"inc", "dec", "neg", "not"};
      return {unary[rng.below(4)], {reg_op(r())}};
    }
    default: {
      if (rng.bernoulli(0.25)) {
        const std::string callee = call_pool()[rng.below(call_pool().size())];
        return {"call", {{OperandKind::CallExternal, callee, {}, callee}}};
      }
      if (rng.bernoulli(0.2)) {
        const std::string callee = "sub_" + std::to_string(0x1000 + rng.below(0xefff));
        return {"call", {{OperandKind::CallInternal, callee, {}, callee}}};
      }
      if (rng.bernoulli(0.2)) {
        return {"lea", {reg_op("rdi"), {OperandKind::StringLiteral, "aStr" + std::to_string(rng.below(40)), {}, {}}}};
      }
      return {"push", {reg_op(r())}};
    }
  }
}

FamilyTemplate make_family_template(const SyntheticConfig& cfg, Rng& rng) {
  FamilyTemplate tpl;
  const int lo = cfg.blocks_range.first, hi = cfg.blocks_range.second;
  const int num_blocks = lo + static_cast<int>(rng.below(static_cast<std::uint64_t>(hi - lo + 1)));
  const int ilo = cfg.instrs_per_block_range.first, ihi = cfg.instrs_per_block_range.second;
  for (int b = 0; b < num_blocks; ++b) {
    Body body;
    const int count = ilo + static_cast<int>(rng.below(static_cast<std::uint64_t>(ihi - ilo + 1)));
    for (int i = 0; i < count; ++i) body.push_back(random_body_instr(rng));
    tpl.bodies.push_back(std::move(body));
  }
  tpl.exit_block = num_blocks - 1;
  for (int s = 0; s < 4; ++s) tpl.salt_pool.push_back(random_body_instr(rng));
  return tpl;
}

Wiring make_wiring(const FamilyTemplate& tpl, Rng& rng) {
  const int n = static_cast<int>(tpl.bodies.size());
  Wiring w;
  w.edges.resize(static_cast<std::size_t>(n));
  for (int b = 0; b < n; ++b) {
    if (b == tpl.exit_block) continue;
    auto pick_other = [&] {
      int t;
      do {
        t = static_cast<int>(rng.below(static_cast<std::uint64_t>(n)));
      } while (t == b);
      return t;
    };
    Wiring::Edge e;
    if (n > 2 && rng.bernoulli(0.65)) {
      e.cond_target = pick_other();
      e.cond_mnemonic = jcc_pool()[rng.below(jcc_pool().size())];
    }
    e.uncond_target = pick_other();
    w.edges[static_cast<std::size_t>(b)] = e;
  }
  return w;
}

struct IdentitySpec {
  const FamilyTemplate* tpl = nullptr;
  Wiring wiring;
  ProtoInstr salt;     // one identity-specific instruction
  int salt_block = 0;  // which block body carries it
};

// Materialize one function instance: apply transforms, lay blocks out, assign
// addresses, emit explicit terminators with resolved target addresses.
FunctionRecord emit_function(const IdentitySpec& id, const SyntheticConfig& cfg, bool is_variant,
                             Rng& rng) {
  const auto& tpl = *id.tpl;
  const int n = static_cast<int>(tpl.bodies.size());

  // Working copy of bodies with the identity salt inserted.
  std::vector<Body> bodies = tpl.bodies;
  bodies[static_cast<std::size_t>(id.salt_block)].insert(
      bodies[static_cast<std::size_t>(id.salt_block)].begin() +
          static_cast<long>(bodies[static_cast<std::size_t>(id.salt_block)].size() / 2),
      id.salt);

  const bool reorder = is_variant && cfg.transform_set.count(Transform::BlockReorder);
  const bool rename = is_variant && cfg.transform_set.count(Transform::RegisterRename);
  const bool subst = is_variant && cfg.transform_set.count(Transform::InstructionSubstitution);
  const bool nops = is_variant && cfg.transform_set.count(Transform::NopInsertion);

  // Block layout: entry block stays first so the function entry is preserved.
  std::vector<int> layout(static_cast<std::size_t>(n));
  for (int b = 0; b < n; ++b) layout[static_cast<std::size_t>(b)] = b;
  if (reorder && n > 2) {
    std::vector<int> rest(layout.begin() + 1, layout.end());
    rng.shuffle(rest);
    std::copy(rest.begin(), rest.end(), layout.begin() + 1);
  }

  std::vector<std::string> rename_map;
  if (rename) {
    rename_map = reg_pool();
    rng.shuffle(rename_map);
  }
  auto renamed = [&](const std::string& reg) -> std::string {
    if (!rename) return reg;
    const auto& regs = reg_pool();
    for (std::size_t i = 0; i < regs.size(); ++i)
      if (regs[i] == reg) return rename_map[i];
    return reg;  // rbp/rsp and friends stay put
  };

  auto substituted = [&](const ProtoInstr& p) -> ProtoInstr {
    if (!subst || !rng.bernoulli(0.35)) return p;
    const auto& ops = p.operands;
    if (p.mnemonic == "add" && ops.size() == 2 && ops[1].kind == OperandKind::Immediate &&
        ops[1].text == "1")
      return {"inc", {ops[0]}};
    if (p.mnemonic == "sub" && ops.size() == 2 && ops[1].kind == OperandKind::Immediate &&
        ops[1].text == "1")
      return {"dec", {ops[0]}};
    if (p.mnemonic == "xor" && ops.size() == 2 && ops[0].kind == OperandKind::Register &&
        ops[0].text == ops[1].text)
      return {"mov", {ops[0], imm_op("0")}};
    if (p.mnemonic == "test" && ops.size() == 2 && ops[0].kind == OperandKind::Register &&
        ops[0].text == ops[1].text)
      return {"cmp", {ops[0], imm_op("0")}};
    if (p.mnemonic == "shl" && ops.size() == 2 && ops[1].kind == OperandKind::Immediate &&
        ops[1].text == "1")
      return {"add", {ops[0], ops[0]}};
    return p;
  };

  // Assemble the instruction stream per block; record block head indices.
  struct Pending {
    std::string mnemonic;
    std::vector<OperandRecord> operands;
    int jump_block = -1;  // operand 0 resolves to this block's head address
  };
  std::vector<Pending> stream;
  std::vector<std::size_t> block_head(static_cast<std::size_t>(n), 0);

  for (int pos = 0; pos < n; ++pos) {
    const int b = layout[static_cast<std::size_t>(pos)];
    block_head[static_cast<std::size_t>(b)] = stream.size();

    std::vector<ProtoInstr> body;
    for (const auto& p : bodies[static_cast<std::size_t>(b)]) body.push_back(substituted(p));
    if (nops) {
      const int extra = static_cast<int>(rng.below(3));  // 0..2 nops
      for (int i = 0; i < extra; ++i) {
        const std::size_t at = rng.below(body.size() + 1);
        body.insert(body.begin() + static_cast<long>(at), ProtoInstr{"nop", {}});
      }
    }
    for (auto& p : body) {
      Pending out{p.mnemonic, {}, -1};
      for (auto op : p.operands) {
        if (op.kind == OperandKind::Register) op.text = renamed(op.text);
        out.operands.push_back(std::move(op));
      }
      stream.push_back(std::move(out));
    }

    if (b == tpl.exit_block) {
      stream.push_back({"ret", {}, -1});
    } else {
      const auto& e = id.wiring.edges[static_cast<std::size_t>(b)];
      if (e.cond_target >= 0) {
        Pending jcc{e.cond_mnemonic, {}, e.cond_target};
        stream.push_back(std::move(jcc));
      }
      Pending jmp{"jmp", {}, e.uncond_target};
      stream.push_back(std::move(jmp));
    }
  }

  // Addresses: fresh base per instance, four bytes per instruction.
  const std::uint64_t base = 0x400000 + (rng.next_u64() % 0x10000) * 0x10;
  std::vector<std::uint64_t> addr(stream.size());
  for (std::size_t i = 0; i < stream.size(); ++i) addr[i] = base + 4 * i;

  FunctionRecord f;
  for (std::size_t i = 0; i < stream.size(); ++i) {
    InstructionRecord ins;
    ins.address = addr[i];
    ins.mnemonic = stream[i].mnemonic;
    ins.operands = stream[i].operands;
    if (stream[i].jump_block >= 0) {
      const std::uint64_t target = addr[block_head[static_cast<std::size_t>(stream[i].jump_block)]];
      char buf[32];
      std::snprintf(buf, sizeof(buf), "0x%llx", static_cast<unsigned long long>(target));
      ins.operands.insert(ins.operands.begin(), OperandRecord{OperandKind::Jump, buf, target, {}});
    }
    f.instructions.push_back(std::move(ins));
  }
  return f;
}

}  // namespace

std::vector<FunctionRecord> generate_synthetic(const SyntheticConfig& cfg) {
  cfg.validate();
  static const OptLevel variant_opts[] = {OptLevel::O1, OptLevel::O2, OptLevel::O3, OptLevel::Os};

  const std::size_t family_size = family_size_for(cfg.num_functions);
  const std::size_t num_families = (cfg.num_functions + family_size - 1) / family_size;
  std::vector<FamilyTemplate> templates;
  templates.reserve(num_families);
  for (std::size_t fam = 0; fam < num_families; ++fam) {
    Rng rng(derive_seed(cfg.seed, 0xF0, fam));
    templates.push_back(make_family_template(cfg, rng));
  }

  std::vector<FunctionRecord> out;
  out.reserve(cfg.num_functions * (1 + cfg.variants_per_function));
  std::vector<Wiring> family_wirings;
  std::size_t current_family = static_cast<std::size_t>(-1);

  for (std::size_t i = 0; i < cfg.num_functions; ++i) {
    const std::size_t fam = i / family_size;
    if (fam != current_family) {
      family_wirings.clear();
      current_family = fam;
    }
    const FamilyTemplate& tpl = templates[fam];

    Rng id_rng(derive_seed(cfg.seed, 0x1D, i));
    IdentitySpec id;
    id.tpl = &tpl;
    // Distinct wiring within the family; bounded retry keeps this total.
    for (int attempt = 0; attempt < 64; ++attempt) {
      id.wiring = make_wiring(tpl, id_rng);
      const bool clash = std::any_of(family_wirings.begin(), family_wirings.end(),
                                     [&](const Wiring& w) { return w == id.wiring; });
      if (!clash) break;
    }
    family_wirings.push_back(id.wiring);
    id.salt = tpl.salt_pool[id_rng.below(tpl.salt_pool.size())];
    id.salt_block = 0;  // entry block: stable under reordering, shared within the salt group

    char name[32];
    std::snprintf(name, sizeof(name), "func_%05zu", i);
    char proj[32];
    std::snprintf(proj, sizeof(proj), "proj_%04zu", fam);

    for (std::size_t v = 0; v <= cfg.variants_per_function; ++v) {
      Rng emit_rng(derive_seed(cfg.seed, 0xE0 + v, i));
      FunctionRecord f = emit_function(id, cfg, v > 0, emit_rng);
      f.project = proj;
      f.binary = "bin0";
      f.function_name = name;
      f.optimization = v == 0 ? OptLevel::O0 : variant_opts[v - 1];
      validate_function(f, "synthetic " + f.function_name + " " + to_string(f.optimization));
      out.push_back(std::move(f));
    }
  }
  return out;
}

std::set<std::string> pick_train_projects(std::vector<std::string> projects, double train_fraction,
                                          std::uint64_t seed) {
  if (!(train_fraction > 0.0 && train_fraction < 1.0))
    throw std::runtime_error("split_by_project: train_fraction must be in (0, 1)");
  std::sort(projects.begin(), projects.end());
  projects.erase(std::unique(projects.begin(), projects.end()), projects.end());
  if (projects.size() < 2)
    throw std::runtime_error("split_by_project: need at least 2 projects, got " +
                             std::to_string(projects.size()));

  Rng rng(derive_seed(seed, 0x5B17));
  rng.shuffle(projects);
  std::size_t n_train = static_cast<std::size_t>(
      std::llround(train_fraction * static_cast<double>(projects.size())));
  n_train = std::clamp<std::size_t>(n_train, 1, projects.size() - 1);
  return std::set<std::string>(projects.begin(), projects.begin() + static_cast<long>(n_train));
}

std::pair<std::vector<FunctionRecord>, std::vector<FunctionRecord>> split_by_project(
    const std::vector<FunctionRecord>& corpus, double train_fraction, std::uint64_t seed) {
  std::vector<std::string> projects;
  for (const auto& f : corpus) projects.push_back(f.project);
  const std::set<std::string> train_projects =
      pick_train_projects(std::move(projects), train_fraction, seed);

  std::pair<std::vector<FunctionRecord>, std::vector<FunctionRecord>> out;
  for (const auto& f : corpus) {
    if (train_projects.count(f.project))
      out.first.push_back(f);
    else
      out.second.push_back(f);
  }
  return out;
}

PairingResult make_ground_truth_pairs(const std::vector<FunctionRecord>& corpus, OptLevel opt_a,
                                      OptLevel opt_b) {
  if (opt_a == opt_b) throw std::runtime_error("make_ground_truth_pairs: opt_a must differ from opt_b");
  using Key = std::tuple<std::string, std::string, std::string>;
  std::map<Key, std::size_t> at_b;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& f = corpus[i];
    if (f.optimization != opt_b) continue;
    const Key k{f.project, f.binary, f.function_name};
    at_b.emplace(k, i);  // first occurrence wins
  }
  PairingResult result;
  std::set<Key> seen;
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    const auto& f = corpus[i];
    if (f.optimization != opt_a) continue;
    const Key k{f.project, f.binary, f.function_name};
    if (!seen.insert(k).second) continue;
    const auto it = at_b.find(k);
    if (it == at_b.end()) {
      ++result.skipped;
      continue;
    }
    result.pairs.push_back(GroundTruthPair{i, it->second});
  }
  return result;
}

}  // namespace jat
