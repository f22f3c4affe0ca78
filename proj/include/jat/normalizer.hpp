#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include <json.hpp>

#include "jat/corpus.hpp"

namespace jat {

// Well-known token strings.
inline constexpr std::string_view kPadToken = "<pad>";
inline constexpr std::string_view kClsToken = "<cls>";
inline constexpr std::string_view kMaskToken = "<mask>";
inline constexpr std::string_view kLocToken = "<loc>";
inline constexpr std::string_view kUnkToken = "<unk>";
inline constexpr std::string_view kUnkJumpToken = "<unk_jump>";
inline constexpr std::string_view kStrToken = "<str>";
inline constexpr std::string_view kConstToken = "<const>";
inline constexpr std::string_view kFunctionToken = "<function>";
// Placeholder emitted by the tokenizer for resolvable jump operands; always
// rewritten to JUMP_<pos> (or <unk_jump>) during encoding, never in the vocabulary.
inline constexpr std::string_view kJumpPlaceholder = "<jump>";

struct TokenizedFunction {
  std::vector<std::string> tokens;
  // instruction index -> token index of its mnemonic
  std::vector<std::size_t> instr_start;
  // (source token index, target instruction index) for in-function direct jumps
  std::vector<std::pair<std::size_t, std::size_t>> jump_refs;
};

// Applies the five normalization rules. Mnemonic and operands become tokens in
// instruction order; string literals -> <str>, immediates -> <const>, external
// call names kept, internal calls -> <function>, jump operands -> placeholders
// resolved at encode time (<unk_jump> when the target is outside the function).
TokenizedFunction tokenize_function(const FunctionRecord& f);

// Fixed-layout vocabulary: ids [0,9) are the specials above in declaration
// order, ids [9, 9+max_len) are JUMP_0..JUMP_{max_len-1}, corpus tokens follow
// by descending frequency (ties broken lexicographically).
class Vocabulary {
 public:
  static constexpr int kNumSpecials = 9;
  enum SpecialId : int { Pad = 0, Cls, Mask, Loc, Unk, UnkJump, Str, Const, Function };

  Vocabulary() = default;
  Vocabulary(std::vector<std::string> corpus_tokens, std::size_t max_len);

  std::int32_t id_of(std::string_view token) const;  // Unk when absent
  const std::string& token_of(std::int32_t id) const;
  std::size_t size() const { return id_to_token_.size(); }
  std::size_t max_len() const { return max_len_; }

  std::int32_t jump_id(std::int32_t position) const { return kNumSpecials + position; }
  bool is_jump_id(std::int32_t id) const {
    return id >= kNumSpecials && id < kNumSpecials + static_cast<std::int32_t>(max_len_);
  }
  // Position a JUMP_i id names, -1 for non-jump ids.
  std::int32_t jump_target_of(std::int32_t id) const {
    return is_jump_id(id) ? id - kNumSpecials : -1;
  }
  bool is_special_id(std::int32_t id) const { return id >= 0 && id < kNumSpecials; }

  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  static Vocabulary from_json(const nlohmann::json& j, const std::string& context);

 private:
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, std::int32_t> token_to_id_;
  std::size_t max_len_ = 0;
};

// Throws when max_size < specials + jump block + 1.
Vocabulary build_vocabulary(const std::vector<TokenizedFunction>& corpus, std::size_t max_size,
                            std::size_t max_len);

struct EncodedFunction {
  std::vector<std::int32_t> ids;  // exactly max_len entries, PAD-filled
  std::int32_t length = 0;        // real tokens including CLS
  std::vector<std::pair<std::int32_t, std::int32_t>> jump_pairs;  // (source pos, target pos)
  FunctionRef identity;
};

// CLS at position 0, real tokens truncated to max_len-1, jump placeholders
// rewritten to JUMP_<final target position>; targets truncated away become
// <unk_jump> with no recorded pair.
EncodedFunction encode(const TokenizedFunction& tf, const Vocabulary& vocab, std::size_t max_len,
                       FunctionRef identity = {});
EncodedFunction encode_record(const FunctionRecord& f, const Vocabulary& vocab, std::size_t max_len);

// Exact-duplicate removal within (project, optimization) by normalized token
// sequence. Returns the number of records dropped.
std::size_t dedup_functions(std::vector<FunctionRecord>& corpus);

struct EncodedCorpus {
  Vocabulary vocab;
  std::vector<EncodedFunction> functions;  // parallel to the deduplicated record list
};

// tokenize + dedup + vocabulary + encode in one pass (corpus is deduplicated
// in place so indices stay aligned with the encoded list).
EncodedCorpus preprocess_corpus(std::vector<FunctionRecord>& corpus, std::size_t vocab_max_size,
                                std::size_t max_len);
// Same, but with a pre-built vocabulary (e.g. encoding a test split with the
// training vocabulary).
std::vector<EncodedFunction> encode_corpus(std::vector<FunctionRecord>& corpus,
                                           const Vocabulary& vocab, std::size_t max_len);

// Self-contained encoded-corpus cache (manifest+blob container, magic
// "JTRNCACH"): vocabulary and identities in the manifest, id/jump tensors in
// the blob. Lets later pipeline stages skip re-tokenization.
void save_encoded_corpus(const EncodedCorpus& ec, const std::filesystem::path& path);
EncodedCorpus load_encoded_corpus(const std::filesystem::path& path);

}  // namespace jat
