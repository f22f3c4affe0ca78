#include "jat/container.hpp"
#include "jat/normalizer.hpp"

namespace jat {

namespace {
constexpr const char* kCacheMagic = "JTRNCACH";
}

void save_encoded_corpus(const EncodedCorpus& ec, const std::filesystem::path& path) {
  const std::size_t n = ec.functions.size();
  const std::size_t max_len = ec.vocab.max_len();

  std::vector<std::int32_t> ids(n * max_len, 0);
  std::vector<std::int32_t> lengths(n, 0);
  std::vector<std::int32_t> jump_src, jump_tgt;
  std::vector<std::int32_t> jump_offsets(n + 1, 0);
  nlohmann::json identities = nlohmann::json::array();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& ef = ec.functions[i];
    std::copy(ef.ids.begin(), ef.ids.end(), ids.begin() + static_cast<long>(i * max_len));
    lengths[i] = ef.length;
    for (const auto& [src, tgt] : ef.jump_pairs) {
      jump_src.push_back(src);
      jump_tgt.push_back(tgt);
    }
    jump_offsets[i + 1] = static_cast<std::int32_t>(jump_src.size());
    identities.push_back(nlohmann::json{{"project", ef.identity.project},
                                        {"binary", ef.identity.binary},
                                        {"function", ef.identity.function_name},
                                        {"opt", to_string(ef.identity.opt)}});
  }

  ContainerWriter w(kCacheMagic);
  w.meta()["kind"] = "encoded_corpus";
  w.meta()["vocab"] = ec.vocab.to_json();
  w.meta()["identities"] = std::move(identities);
  w.add_i32("ids", {n, max_len}, ids.data());
  w.add_i32("lengths", {n}, lengths.data());
  w.add_i32("jump_src", {jump_src.size()}, jump_src.data());
  w.add_i32("jump_tgt", {jump_tgt.size()}, jump_tgt.data());
  w.add_i32("jump_offsets", {jump_offsets.size()}, jump_offsets.data());
  w.write(path);
}

EncodedCorpus load_encoded_corpus(const std::filesystem::path& path) {
  ContainerReader r(path, kCacheMagic);
  if (r.meta().value("kind", std::string()) != "encoded_corpus")
    throw std::runtime_error(path.string() + ": not an encoded-corpus cache");

  EncodedCorpus ec;
  ec.vocab = Vocabulary::from_json(r.meta().at("vocab"), path.string());
  const std::size_t max_len = ec.vocab.max_len();

  const auto& identities = r.meta().at("identities");
  const std::size_t n = identities.size();
  if (r.descriptor("ids").shape != std::vector<std::size_t>{n, max_len})
    throw std::runtime_error(path.string() + ": ids tensor shape mismatch");

  const std::int32_t* ids = r.i32("ids");
  const std::int32_t* lengths = r.i32("lengths");
  const std::int32_t* jump_src = r.i32("jump_src");
  const std::int32_t* jump_tgt = r.i32("jump_tgt");
  const std::int32_t* jump_offsets = r.i32("jump_offsets");

  ec.functions.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    auto& ef = ec.functions[i];
    ef.ids.assign(ids + i * max_len, ids + (i + 1) * max_len);
    ef.length = lengths[i];
    for (std::int32_t p = jump_offsets[i]; p < jump_offsets[i + 1]; ++p)
      ef.jump_pairs.emplace_back(jump_src[p], jump_tgt[p]);
    const auto& j = identities[i];
    ef.identity.project = j.at("project").get<std::string>();
    ef.identity.binary = j.at("binary").get<std::string>();
    ef.identity.function_name = j.at("function").get<std::string>();
    ef.identity.opt = opt_level_from_string(j.at("opt").get<std::string>());
  }
  return ec;
}

}  // namespace jat
