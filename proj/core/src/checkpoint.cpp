#include "rankcount/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace rankcount {

namespace {

void put_u32(std::string& buf, std::uint32_t v) {
  char b[4] = {static_cast<char>(v & 0xff), static_cast<char>((v >> 8) & 0xff),
               static_cast<char>((v >> 16) & 0xff), static_cast<char>((v >> 24) & 0xff)};
  buf.append(b, 4);
}

void put_f32(std::string& buf, float v) {
  static_assert(sizeof(float) == 4);
  std::uint32_t bits = std::bit_cast<std::uint32_t>(v);
  put_u32(buf, bits);
}

class Reader {
 public:
  Reader(const char* data, std::size_t size, std::string path)
      : data_(data), size_(size), path_(std::move(path)) {}

  void raw(void* out, std::size_t n) {
    if (pos_ + n > size_) {
      throw std::runtime_error("truncated tensor file: " + path_);
    }
    std::memcpy(out, data_ + pos_, n);
    pos_ += n;
  }

  std::uint32_t u32() {
    unsigned char b[4];
    raw(b, 4);
    return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
           (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
  }

  float f32() { return std::bit_cast<float>(u32()); }

  std::string str(std::size_t n) {
    std::string s(n, '\0');
    raw(s.data(), n);
    return s;
  }

 private:
  const char* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
  std::string path_;
};

}  // namespace

const TensorEntry* TensorFile::find(std::string_view name) const {
  for (const auto& e : entries)
    if (e.name == name) return &e;
  return nullptr;
}

void save_tensor_file(const std::filesystem::path& path, std::string_view meta,
                      std::span<const TensorEntry> entries) {
  std::string buf;
  buf.append(kTensorFileMagic, sizeof(kTensorFileMagic));
  put_u32(buf, kTensorFileVersion);
  put_u32(buf, static_cast<std::uint32_t>(meta.size()));
  buf.append(meta);
  put_u32(buf, static_cast<std::uint32_t>(entries.size()));
  for (const auto& e : entries) {
    if (static_cast<std::int64_t>(e.values.size()) != ag::element_count(e.shape)) {
      throw std::runtime_error("tensor entry '" + e.name + "' has inconsistent shape");
    }
    put_u32(buf, static_cast<std::uint32_t>(e.name.size()));
    buf.append(e.name);
    put_u32(buf, static_cast<std::uint32_t>(e.shape.size()));
    for (int d : e.shape) put_u32(buf, static_cast<std::uint32_t>(d));
    for (double v : e.values) put_f32(buf, static_cast<float>(v));
  }

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot open for writing: " + path.string());
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  if (!out) throw std::runtime_error("write failed: " + path.string());
}

TensorFile load_tensor_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open tensor file: " + path.string());
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  Reader r(bytes.data(), bytes.size(), path.string());

  char magic[8];
  r.raw(magic, 8);
  if (std::memcmp(magic, kTensorFileMagic, 8) != 0) {
    throw std::runtime_error("not a tensor file (bad magic): " + path.string());
  }
  TensorFile file;
  file.version = r.u32();
  if (file.version != kTensorFileVersion) {
    throw std::runtime_error("unsupported tensor file version " +
                             std::to_string(file.version) + ": " + path.string());
  }
  file.meta = r.str(r.u32());
  const std::uint32_t count = r.u32();
  file.entries.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    TensorEntry e;
    e.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    e.shape.resize(rank);
    for (auto& d : e.shape) d = static_cast<int>(r.u32());
    const std::int64_t n = ag::element_count(e.shape);
    e.values.resize(static_cast<std::size_t>(n));
    for (auto& v : e.values) v = static_cast<double>(r.f32());
    file.entries.push_back(std::move(e));
  }
  return file;
}

std::uint64_t hash_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open for hashing: " + path.string());
  std::uint64_t h = 0xcbf29ce484222325ULL;
  char chunk[4096];
  while (in.read(chunk, sizeof(chunk)) || in.gcount() > 0) {
    for (std::streamsize i = 0; i < in.gcount(); ++i) {
      h ^= static_cast<unsigned char>(chunk[i]);
      h *= 0x100000001b3ULL;
    }
    if (!in) break;
  }
  return h;
}

}  // namespace rankcount
