#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <set>
#include <string>
#include <tuple>
#include <utility>
#include <vector>

namespace jat {

enum class OperandKind {
  Register,
  Memory,
  Immediate,
  StringLiteral,
  CallInternal,
  CallExternal,
  Jump,
};

enum class OptLevel { O0, O1, O2, O3, Os };

const char* to_string(OperandKind kind);
const char* to_string(OptLevel opt);
OperandKind operand_kind_from_string(const std::string& s);
OptLevel opt_level_from_string(const std::string& s);

struct OperandRecord {
  OperandKind kind = OperandKind::Register;
  std::string text;
  // Byte address of the jump target; present iff kind == Jump.
  std::optional<std::uint64_t> target_address;
  // Callee name; present iff kind is a call kind.
  std::optional<std::string> call_name;
};

struct InstructionRecord {
  std::uint64_t address = 0;
  std::string mnemonic;
  std::vector<OperandRecord> operands;
};

struct FunctionRecord {
  std::string project;
  std::string binary;
  std::string function_name;
  OptLevel optimization = OptLevel::O0;
  std::vector<InstructionRecord> instructions;
};

// Ground-truth identity: functions compiled from the same source function
// share (project, binary, function_name) and differ in optimization level.
struct FunctionRef {
  std::string project;
  std::string binary;
  std::string function_name;
  OptLevel opt = OptLevel::O0;

  std::tuple<const std::string&, const std::string&, const std::string&> identity() const {
    return {project, binary, function_name};
  }
  bool same_identity(const FunctionRef& o) const { return identity() == o.identity(); }
  friend bool operator==(const FunctionRef&, const FunctionRef&) = default;
};

FunctionRef make_ref(const FunctionRecord& f);

// Indices into the corpus vector the pairing was computed from.
struct GroundTruthPair {
  std::size_t query_index = 0;
  std::size_t target_index = 0;
};

enum class Transform { BlockReorder, RegisterRename, InstructionSubstitution, NopInsertion };

struct SyntheticConfig {
  std::size_t num_functions = 1;
  std::size_t variants_per_function = 1;  // at most 4 (O1, O2, O3, Os)
  std::pair<int, int> blocks_range{3, 5};
  std::pair<int, int> instrs_per_block_range{2, 5};
  std::set<Transform> transform_set{Transform::BlockReorder, Transform::RegisterRename,
                                    Transform::InstructionSubstitution, Transform::NopInsertion};
  std::uint64_t seed = 0;

  void validate() const;  // throws std::runtime_error on violation
};

// Throws std::runtime_error on malformed JSON, schema violations, or record
// invariant violations; messages name the offending line.
std::vector<FunctionRecord> load_corpus(const std::filesystem::path& path);
void load_corpus_stream(const std::filesystem::path& path,
                        const std::function<void(FunctionRecord&&)>& sink);

std::string to_jsonl_line(const FunctionRecord& f);
FunctionRecord parse_corpus_line(const std::string& line, std::size_t line_number);
void save_corpus(const std::vector<FunctionRecord>& corpus, const std::filesystem::path& path);

// Validates the record invariants (addresses strictly increasing, jump/call
// operand fields, in-range jump targets landing on instruction addresses).
// `context` prefixes error messages.
void validate_function(const FunctionRecord& f, const std::string& context);

// Deterministic synthetic corpus: num_functions base functions (O0) plus
// variants_per_function semantics-preserving rewrites each (O1, O2, ...).
std::vector<FunctionRecord> generate_synthetic(const SyntheticConfig& config);

// Assigns entire projects to one side. Throws if fewer than two projects.
std::pair<std::vector<FunctionRecord>, std::vector<FunctionRecord>> split_by_project(
    const std::vector<FunctionRecord>& corpus, double train_fraction, std::uint64_t seed);

// The project-set selection behind split_by_project, reusable for encoded
// corpora: deterministic under seed, at least one project on each side.
std::set<std::string> pick_train_projects(std::vector<std::string> projects, double train_fraction,
                                          std::uint64_t seed);

struct PairingResult {
  std::vector<GroundTruthPair> pairs;
  std::size_t skipped = 0;  // functions at opt_a with no counterpart at opt_b
};

// One pair per (project, binary, function_name) present at both levels.
PairingResult make_ground_truth_pairs(const std::vector<FunctionRecord>& corpus, OptLevel opt_a,
                                      OptLevel opt_b);

}  // namespace jat
