#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "rankcount/tensor.hpp"

namespace rankcount {

/// Versioned binary container for named tensors:
///   magic "RCTENSOR" | u32 version | u32 meta_len | meta bytes |
///   u32 tensor count | per tensor: u32 name_len | name | u32 rank |
///   u32 dims[rank] | little-endian float32 values.
/// `meta` carries the model architecture string for checkpoints and is empty
/// for plain tensor dumps. In-memory values are double; they are rounded to
/// float32 on save.
struct TensorEntry {
  std::string name;
  ag::Shape shape;
  std::vector<double> values;
};

struct TensorFile {
  std::uint32_t version = 1;
  std::string meta;
  std::vector<TensorEntry> entries;

  const TensorEntry* find(std::string_view name) const;
};

inline constexpr char kTensorFileMagic[8] = {'R', 'C', 'T', 'E', 'N', 'S', 'O', 'R'};
inline constexpr std::uint32_t kTensorFileVersion = 1;

void save_tensor_file(const std::filesystem::path& path, std::string_view meta,
                      std::span<const TensorEntry> entries);
TensorFile load_tensor_file(const std::filesystem::path& path);

/// FNV-1a over a file's bytes; used as the checkpoint fingerprint.
std::uint64_t hash_file(const std::filesystem::path& path);

}  // namespace rankcount
