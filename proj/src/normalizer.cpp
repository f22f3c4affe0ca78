#include "jat/normalizer.hpp"

#include <algorithm>
#include <fstream>
#include <map>
#include <stdexcept>

#include <json.hpp>

namespace jat {

using nlohmann::json;

TokenizedFunction tokenize_function(const FunctionRecord& f) {
  TokenizedFunction tf;
  // Map instruction addresses to indices for jump resolution.
  std::unordered_map<std::uint64_t, std::size_t> addr_to_instr;
  addr_to_instr.reserve(f.instructions.size());
  for (std::size_t i = 0; i < f.instructions.size(); ++i)
    addr_to_instr.emplace(f.instructions[i].address, i);

  for (std::size_t i = 0; i < f.instructions.size(); ++i) {
    const auto& ins = f.instructions[i];
    tf.instr_start.push_back(tf.tokens.size());
    tf.tokens.push_back(ins.mnemonic);
    for (const auto& op : ins.operands) {
      switch (op.kind) {
        case OperandKind::Register:
        case OperandKind::Memory:
          tf.tokens.push_back(op.text);
          break;
        case OperandKind::StringLiteral:
          tf.tokens.emplace_back(kStrToken);
          break;
        case OperandKind::Immediate:
          tf.tokens.emplace_back(kConstToken);
          break;
        case OperandKind::CallExternal:
          tf.tokens.push_back(*op.call_name);
          break;
        case OperandKind::CallInternal:
          tf.tokens.emplace_back(kFunctionToken);
          break;
        case OperandKind::Jump: {
          const auto it = addr_to_instr.find(*op.target_address);
          if (it == addr_to_instr.end()) {
            tf.tokens.emplace_back(kUnkJumpToken);
          } else {
            tf.jump_refs.emplace_back(tf.tokens.size(), it->second);
            tf.tokens.emplace_back(kJumpPlaceholder);
          }
          break;
        }
      }
    }
  }
  return tf;
}

namespace {

const std::vector<std::string>& special_tokens() {
  static const std::vector<std::string> specials{
      std::string(kPadToken),     std::string(kClsToken),   std::string(kMaskToken),
      std::string(kLocToken),     std::string(kUnkToken),   std::string(kUnkJumpToken),
      std::string(kStrToken),     std::string(kConstToken), std::string(kFunctionToken)};
  return specials;
}

std::string jump_token_name(std::size_t i) { return "JUMP_" + std::to_string(i); }

}  // namespace

Vocabulary::Vocabulary(std::vector<std::string> corpus_tokens, std::size_t max_len)
    : max_len_(max_len) {
  id_to_token_ = special_tokens();
  for (std::size_t i = 0; i < max_len; ++i) id_to_token_.push_back(jump_token_name(i));
  for (auto& t : corpus_tokens) id_to_token_.push_back(std::move(t));
  token_to_id_.reserve(id_to_token_.size());
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    const auto [it, inserted] = token_to_id_.emplace(id_to_token_[i], static_cast<std::int32_t>(i));
    if (!inserted) throw std::runtime_error("vocabulary: duplicate token '" + id_to_token_[i] + "'");
  }
}

std::int32_t Vocabulary::id_of(std::string_view token) const {
  const auto it = token_to_id_.find(std::string(token));
  return it == token_to_id_.end() ? Unk : it->second;
}

const std::string& Vocabulary::token_of(std::int32_t id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size())
    throw std::runtime_error("vocabulary: id out of range: " + std::to_string(id));
  return id_to_token_[static_cast<std::size_t>(id)];
}

nlohmann::json Vocabulary::to_json() const {
  json j;
  j["id_to_token"] = id_to_token_;
  j["max_len"] = max_len_;
  j["specials"] = {{"pad", Pad},     {"cls", Cls},           {"mask", Mask},
                   {"loc", Loc},     {"unk", Unk},           {"unk_jump", UnkJump},
                   {"str", Str},     {"const", Const},       {"function", Function}};
  j["jump_block"] = {{"start", kNumSpecials}, {"size", max_len_}};
  return j;
}

Vocabulary Vocabulary::from_json(const nlohmann::json& j, const std::string& context) {
  const auto tokens = j.at("id_to_token").get<std::vector<std::string>>();
  const auto max_len = j.at("max_len").get<std::size_t>();
  const std::size_t header = static_cast<std::size_t>(kNumSpecials) + max_len;
  if (tokens.size() < header) throw std::runtime_error("vocabulary truncated: " + context);
  for (int s = 0; s < kNumSpecials; ++s)
    if (tokens[static_cast<std::size_t>(s)] != special_tokens()[static_cast<std::size_t>(s)])
      throw std::runtime_error("vocabulary special token layout mismatch in " + context);
  return Vocabulary(
      std::vector<std::string>(tokens.begin() + static_cast<long>(header), tokens.end()), max_len);
}

void Vocabulary::save(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write vocabulary: " + path.string());
  out << to_json().dump(2) << '\n';
}

Vocabulary Vocabulary::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open vocabulary: " + path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw std::runtime_error("malformed vocabulary file " + path.string() + ": " + e.what());
  }
  return from_json(j, path.string());
}

Vocabulary build_vocabulary(const std::vector<TokenizedFunction>& corpus, std::size_t max_size,
                            std::size_t max_len) {
  const std::size_t reserved = static_cast<std::size_t>(Vocabulary::kNumSpecials) + max_len;
  if (max_size < reserved + 1)
    throw std::runtime_error("build_vocabulary: max_size " + std::to_string(max_size) +
                             " leaves no room for corpus tokens (need > " +
                             std::to_string(reserved) + ")");

  std::map<std::string, std::uint64_t> freq;
  for (const auto& tf : corpus)
    for (const auto& t : tf.tokens) {
      if (t == kJumpPlaceholder) continue;
      freq[t] += 1;
    }
  for (const auto& s : special_tokens()) freq.erase(s);
  for (std::size_t i = 0; i < max_len; ++i) freq.erase(jump_token_name(i));

  // Descending frequency, lexicographic tie-break; the map iteration order
  // already gives the lexicographic part.
  std::vector<std::pair<std::string, std::uint64_t>> ranked(freq.begin(), freq.end());
  std::stable_sort(ranked.begin(), ranked.end(),
                   [](const auto& a, const auto& b) { return a.second > b.second; });

  const std::size_t budget = max_size - reserved;
  std::vector<std::string> kept;
  kept.reserve(std::min(budget, ranked.size()));
  for (std::size_t i = 0; i < ranked.size() && i < budget; ++i) kept.push_back(ranked[i].first);
  return Vocabulary(std::move(kept), max_len);
}

EncodedFunction encode(const TokenizedFunction& tf, const Vocabulary& vocab, std::size_t max_len,
                       FunctionRef identity) {
  if (max_len < 2) throw std::runtime_error("encode: max_len must be >= 2");
  if (vocab.max_len() != max_len)
    throw std::runtime_error("encode: vocabulary jump block sized for max_len " +
                             std::to_string(vocab.max_len()) + ", got " + std::to_string(max_len));

  EncodedFunction ef;
  ef.identity = std::move(identity);
  const std::size_t real = std::min(tf.tokens.size(), max_len - 1);
  ef.length = static_cast<std::int32_t>(1 + real);
  ef.ids.assign(max_len, Vocabulary::Pad);
  ef.ids[0] = Vocabulary::Cls;
  for (std::size_t t = 0; t < real; ++t) ef.ids[1 + t] = vocab.id_of(tf.tokens[t]);

  for (const auto& [src_tok, tgt_instr] : tf.jump_refs) {
    const std::size_t src_pos = 1 + src_tok;
    if (src_pos >= max_len) continue;  // source truncated away
    const std::size_t tgt_pos = 1 + tf.instr_start[tgt_instr];
    if (tgt_pos >= max_len) {
      ef.ids[src_pos] = Vocabulary::UnkJump;  // target truncated away
      continue;
    }
    ef.ids[src_pos] = vocab.jump_id(static_cast<std::int32_t>(tgt_pos));
    ef.jump_pairs.emplace_back(static_cast<std::int32_t>(src_pos),
                               static_cast<std::int32_t>(tgt_pos));
  }
  return ef;
}

EncodedFunction encode_record(const FunctionRecord& f, const Vocabulary& vocab,
                              std::size_t max_len) {
  return encode(tokenize_function(f), vocab, max_len, make_ref(f));
}

std::size_t dedup_functions(std::vector<FunctionRecord>& corpus) {
  std::set<std::tuple<std::string, std::string, std::string>> seen;  // (project, opt, tokens)
  std::vector<FunctionRecord> kept;
  kept.reserve(corpus.size());
  std::size_t dropped = 0;
  for (auto& f : corpus) {
    const TokenizedFunction tf = tokenize_function(f);
    std::string joined;
    for (const auto& t : tf.tokens) {
      joined += t;
      joined += '\x1f';
    }
    if (seen.emplace(f.project, to_string(f.optimization), std::move(joined)).second)
      kept.push_back(std::move(f));
    else
      ++dropped;
  }
  corpus = std::move(kept);
  return dropped;
}

EncodedCorpus preprocess_corpus(std::vector<FunctionRecord>& corpus, std::size_t vocab_max_size,
                                std::size_t max_len) {
  dedup_functions(corpus);
  std::vector<TokenizedFunction> tokenized;
  tokenized.reserve(corpus.size());
  for (const auto& f : corpus) tokenized.push_back(tokenize_function(f));
  EncodedCorpus ec;
  ec.vocab = build_vocabulary(tokenized, vocab_max_size, max_len);
  ec.functions.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i)
    ec.functions.push_back(encode(tokenized[i], ec.vocab, max_len, make_ref(corpus[i])));
  return ec;
}

std::vector<EncodedFunction> encode_corpus(std::vector<FunctionRecord>& corpus,
                                           const Vocabulary& vocab, std::size_t max_len) {
  dedup_functions(corpus);
  std::vector<EncodedFunction> out;
  out.reserve(corpus.size());
  for (const auto& f : corpus) out.push_back(encode_record(f, vocab, max_len));
  return out;
}

}  // namespace jat
