#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

namespace jat {

// Manifest+blob container: 8-byte magic, u32 version, u64 manifest length,
// UTF-8 JSON manifest, then one raw little-endian blob. Tensor descriptors
// (name, dtype, shape, byte offset) live in the manifest under "tensors";
// callers add their own metadata next to them. Aliased tensors appear once in
// the blob and are declared under "aliases".
inline constexpr std::uint32_t kContainerVersion = 1;

class ContainerWriter {
 public:
  explicit ContainerWriter(std::string magic8);

  void add_f32(const std::string& name, std::vector<std::size_t> shape, const float* data);
  void add_i32(const std::string& name, std::vector<std::size_t> shape, const std::int32_t* data);
  // Marks `name` as a row-range view of `target` (no blob bytes of its own).
  void add_row_alias(const std::string& name, const std::string& target, std::size_t row_offset,
                     std::size_t rows);

  nlohmann::json& meta() { return meta_; }
  void write(const std::filesystem::path& path) const;

 private:
  void add_raw(const std::string& name, const char* dtype, std::vector<std::size_t> shape,
               const void* data, std::size_t elem_size);

  std::string magic_;
  nlohmann::json meta_ = nlohmann::json::object();
  nlohmann::json tensors_ = nlohmann::json::array();
  nlohmann::json aliases_ = nlohmann::json::array();
  std::vector<char> blob_;
};

struct ContainerTensor {
  std::string dtype;
  std::vector<std::size_t> shape;
  std::size_t offset = 0;  // bytes into the blob
  std::size_t byte_size = 0;
};

class ContainerReader {
 public:
  // Throws on magic/version mismatch, truncation, or malformed manifest.
  ContainerReader(const std::filesystem::path& path, const std::string& expected_magic);

  const nlohmann::json& meta() const { return meta_; }
  bool has(const std::string& name) const { return tensors_.count(name) != 0; }
  const ContainerTensor& descriptor(const std::string& name) const;
  const float* f32(const std::string& name) const;
  const std::int32_t* i32(const std::string& name) const;
  std::size_t element_count(const std::string& name) const;

 private:
  const ContainerTensor& typed(const std::string& name, const char* dtype) const;

  nlohmann::json meta_;
  std::map<std::string, ContainerTensor> tensors_;
  std::vector<char> blob_;
};

}  // namespace jat
