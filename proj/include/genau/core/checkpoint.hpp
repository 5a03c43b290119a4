#pragma once

// Checkpoint container: 8-byte magic, u64 little-endian header length, a JSON
// header table, then the concatenated little-endian float32 blobs.
//
//   {"format": "genau-checkpoint", "version": 1, "meta": {...},
//    "tensors": [{"name", "dtype": "float32", "shape", "byte_offset"}, ...]}
//
// byte_offset is relative to the first byte after the header.

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "json.hpp"

#include "genau/core/autograd.hpp"
#include "genau/core/error.hpp"
#include "genau/core/tensor.hpp"

namespace genau::checkpoint {

using json = nlohmann::json;

inline constexpr std::array<char, 8> kMagic{'G', 'E', 'N', 'A', 'U', 'C', 'K', '1'};

struct NamedTensor {
  std::string name;
  Tensor<float> tensor;
};

struct Checkpoint {
  json meta = json::object();
  std::vector<NamedTensor> tensors;

  const Tensor<float>* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t.tensor;
    return nullptr;
  }
  const Tensor<float>& at(const std::string& name) const {
    if (const auto* t = find(name)) return *t;
    throw FormatError("checkpoint", "missing tensor '" + name + "'");
  }
  void add(std::string name, Tensor<float> t) { tensors.push_back({std::move(name), std::move(t)}); }
};

namespace detail {
inline void put_u32_le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xFF));
}
inline std::uint32_t get_u32_le(const unsigned char* p) {
  return std::uint32_t(p[0]) | std::uint32_t(p[1]) << 8 | std::uint32_t(p[2]) << 16 | std::uint32_t(p[3]) << 24;
}
}  // namespace detail

inline std::string serialize(const Checkpoint& ck) {
  json table = json::array();
  std::string blob;
  for (const auto& nt : ck.tensors) {
    table.push_back({{"name", nt.name}, {"dtype", "float32"}, {"shape", nt.tensor.shape()}, {"byte_offset", blob.size()}});
    for (float v : nt.tensor.vec()) detail::put_u32_le(blob, std::bit_cast<std::uint32_t>(v));
  }
  json header = {{"format", "genau-checkpoint"}, {"version", 1}, {"meta", ck.meta}, {"tensors", table}};
  const std::string hs = header.dump();
  std::string out(kMagic.begin(), kMagic.end());
  const std::uint64_t len = hs.size();
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((len >> (8 * i)) & 0xFF));
  out += hs;
  out += blob;
  return out;
}

inline Checkpoint deserialize(const std::string& bytes) {
  const auto* p = reinterpret_cast<const unsigned char*>(bytes.data());
  if (bytes.size() < 16 || std::memcmp(bytes.data(), kMagic.data(), 8) != 0)
    throw FormatError("checkpoint", "bad magic; not a genau checkpoint");
  std::uint64_t len = 0;
  for (int i = 0; i < 8; ++i) len |= std::uint64_t(p[8 + i]) << (8 * i);
  if (16 + len > bytes.size()) throw FormatError("checkpoint", "truncated header");
  json header;
  try {
    header = json::parse(bytes.substr(16, len));
  } catch (const json::exception& e) {
    throw FormatError("checkpoint", std::string("malformed header: ") + e.what());
  }
  if (header.value("format", "") != "genau-checkpoint")
    throw FormatError("checkpoint", "unexpected format tag");
  const std::size_t blob_start = 16 + len;
  Checkpoint ck;
  ck.meta = header.value("meta", json::object());
  for (const auto& e : header.at("tensors")) {
    if (e.at("dtype") != "float32") throw FormatError("checkpoint", "unsupported dtype " + e.at("dtype").dump());
    Shape shape = e.at("shape").get<Shape>();
    const std::size_t off = e.at("byte_offset").get<std::size_t>();
    const std::size_t n = numel(shape);
    if (blob_start + off + 4 * n > bytes.size())
      throw FormatError("checkpoint", "tensor '" + e.at("name").get<std::string>() + "' extends past end of file");
    std::vector<float> data(n);
    for (std::size_t i = 0; i < n; ++i) data[i] = std::bit_cast<float>(detail::get_u32_le(p + blob_start + off + 4 * i));
    ck.tensors.push_back({e.at("name").get<std::string>(), Tensor<float>(std::move(shape), std::move(data))});
  }
  return ck;
}

inline void save(const std::filesystem::path& path, const Checkpoint& ck) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  const std::filesystem::path tmp = path.string() + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw FormatError("checkpoint", "cannot open " + tmp.string() + " for writing");
    const std::string bytes = serialize(ck);
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw FormatError("checkpoint", "write failed for " + tmp.string());
  }
  std::filesystem::rename(tmp, path);
}

inline Checkpoint load(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw FormatError("checkpoint", "cannot open " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

// Copies parameters into a checkpoint under their own names, prefixed.
template <class T, class Visit>
void store_parameters(Checkpoint& ck, Visit&& visit, const std::string& prefix = "") {
  visit([&](Parameter<T>& p) { ck.add(prefix + p.name, p.value.template cast<float>()); });
}

// Loads every visited parameter; a missing name or a shape mismatch throws.
template <class T, class Visit>
void load_parameters(const Checkpoint& ck, Visit&& visit, const std::string& prefix = "") {
  visit([&](Parameter<T>& p) {
    const Tensor<float>* t = ck.find(prefix + p.name);
    if (!t) throw FormatError("checkpoint", "missing parameter '" + prefix + p.name + "'");
    if (t->shape() != p.value.shape())
      throw FormatError("checkpoint", "shape mismatch for '" + prefix + p.name + "': checkpoint " + shape_str(t->shape()) +
                                          " vs model " + shape_str(p.value.shape()));
    p.value = t->template cast<T>();
    p.zero_grad();
  });
}

}  // namespace genau::checkpoint
