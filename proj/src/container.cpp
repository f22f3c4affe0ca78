#include "jat/container.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace jat {

static_assert(std::endian::native == std::endian::little,
              "container format is little-endian; big-endian hosts are unsupported");

ContainerWriter::ContainerWriter(std::string magic8) : magic_(std::move(magic8)) {
  if (magic_.size() != 8) throw std::runtime_error("container magic must be exactly 8 bytes");
}

void ContainerWriter::add_raw(const std::string& name, const char* dtype,
                              std::vector<std::size_t> shape, const void* data,
                              std::size_t elem_size) {
  std::size_t count = 1;
  for (const std::size_t s : shape) count *= s;
  const std::size_t bytes = count * elem_size;
  nlohmann::json desc{{"name", name},
                      {"dtype", dtype},
                      {"shape", shape},
                      {"offset", blob_.size()},
                      {"bytes", bytes}};
  tensors_.push_back(std::move(desc));
  const std::size_t at = blob_.size();
  blob_.resize(at + bytes);
  std::memcpy(blob_.data() + at, data, bytes);
}

void ContainerWriter::add_f32(const std::string& name, std::vector<std::size_t> shape,
                              const float* data) {
  add_raw(name, "f32", std::move(shape), data, sizeof(float));
}

void ContainerWriter::add_i32(const std::string& name, std::vector<std::size_t> shape,
                              const std::int32_t* data) {
  add_raw(name, "i32", std::move(shape), data, sizeof(std::int32_t));
}

void ContainerWriter::add_row_alias(const std::string& name, const std::string& target,
                                    std::size_t row_offset, std::size_t rows) {
  aliases_.push_back(nlohmann::json{
      {"name", name}, {"alias_of", target}, {"row_offset", row_offset}, {"rows", rows}});
}

void ContainerWriter::write(const std::filesystem::path& path) const {
  nlohmann::json manifest = meta_;
  manifest["tensors"] = tensors_;
  if (!aliases_.empty()) manifest["aliases"] = aliases_;
  const std::string manifest_str = manifest.dump();

  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write: " + path.string());
  out.write(magic_.data(), 8);
  const std::uint32_t version = kContainerVersion;
  out.write(reinterpret_cast<const char*>(&version), sizeof(version));
  const std::uint64_t mlen = manifest_str.size();
  out.write(reinterpret_cast<const char*>(&mlen), sizeof(mlen));
  out.write(manifest_str.data(), static_cast<std::streamsize>(manifest_str.size()));
  out.write(blob_.data(), static_cast<std::streamsize>(blob_.size()));
  if (!out) throw std::runtime_error("short write: " + path.string());
}

ContainerReader::ContainerReader(const std::filesystem::path& path,
                                 const std::string& expected_magic) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open: " + path.string());

  char magic[8] = {};
  in.read(magic, 8);
  if (in.gcount() != 8 || std::string(magic, 8) != expected_magic)
    throw std::runtime_error(path.string() + ": bad magic (expected " + expected_magic + ")");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), sizeof(version));
  if (!in || version != kContainerVersion)
    throw std::runtime_error(path.string() + ": unsupported container version " +
                             std::to_string(version));
  std::uint64_t mlen = 0;
  in.read(reinterpret_cast<char*>(&mlen), sizeof(mlen));
  if (!in) throw std::runtime_error(path.string() + ": truncated header");
  std::string manifest_str(mlen, '\0');
  in.read(manifest_str.data(), static_cast<std::streamsize>(mlen));
  if (in.gcount() != static_cast<std::streamsize>(mlen))
    throw std::runtime_error(path.string() + ": truncated manifest");

  try {
    meta_ = nlohmann::json::parse(manifest_str);
  } catch (const nlohmann::json::exception& e) {
    throw std::runtime_error(path.string() + ": malformed manifest: " + e.what());
  }

  std::size_t blob_size = 0;
  for (const auto& t : meta_.at("tensors")) {
    ContainerTensor ct;
    ct.dtype = t.at("dtype").get<std::string>();
    ct.shape = t.at("shape").get<std::vector<std::size_t>>();
    ct.offset = t.at("offset").get<std::size_t>();
    ct.byte_size = t.at("bytes").get<std::size_t>();
    blob_size = std::max(blob_size, ct.offset + ct.byte_size);
    tensors_.emplace(t.at("name").get<std::string>(), std::move(ct));
  }
  blob_.resize(blob_size);
  in.read(blob_.data(), static_cast<std::streamsize>(blob_size));
  if (in.gcount() != static_cast<std::streamsize>(blob_size))
    throw std::runtime_error(path.string() + ": truncated blob (expected " +
                             std::to_string(blob_size) + " bytes)");
}

const ContainerTensor& ContainerReader::descriptor(const std::string& name) const {
  const auto it = tensors_.find(name);
  if (it == tensors_.end()) throw std::runtime_error("container: missing tensor '" + name + "'");
  return it->second;
}

const ContainerTensor& ContainerReader::typed(const std::string& name, const char* dtype) const {
  const auto& d = descriptor(name);
  if (d.dtype != dtype)
    throw std::runtime_error("container: tensor '" + name + "' has dtype " + d.dtype +
                             ", expected " + dtype);
  return d;
}

const float* ContainerReader::f32(const std::string& name) const {
  return reinterpret_cast<const float*>(blob_.data() + typed(name, "f32").offset);
}

const std::int32_t* ContainerReader::i32(const std::string& name) const {
  return reinterpret_cast<const std::int32_t*>(blob_.data() + typed(name, "i32").offset);
}

std::size_t ContainerReader::element_count(const std::string& name) const {
  const auto& d = descriptor(name);
  std::size_t count = 1;
  for (const std::size_t s : d.shape) count *= s;
  return count;
}

}  // namespace jat
