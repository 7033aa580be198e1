#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <type_traits>
#include <vector>

#include "lossforge/tensor.hpp"

namespace lossforge {

/// Versioned container of named arrays plus string metadata.
///
/// Layout: "LFCKPT\0\0", u32 version, u32 #meta, {str key, str value}*,
/// u32 #arrays, {str name, u8 dtype (0 f32, 1 f64), i32[4] shape, data}*,
/// u64 FNV-1a of all preceding bytes. Strings are u32 length + bytes.
class ArchiveFile {
 public:
  static constexpr std::uint32_t kFormatVersion = 1;
  static constexpr char kMagic[8] = {'L', 'F', 'C', 'K', 'P', 'T', '\0', '\0'};

  std::map<std::string, std::string> meta;

  template <typename T>
  void put(const std::string& name, const Tensor<T>& t) {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>);
    Entry e;
    e.dtype = std::is_same_v<T, float> ? 0 : 1;
    e.shape = t.shape();
    e.bytes.resize(t.size() * sizeof(T));
    std::memcpy(e.bytes.data(), t.data(), e.bytes.size());
    entries_[name] = std::move(e);
  }

  bool has(const std::string& name) const { return entries_.count(name) > 0; }

  template <typename T>
  Tensor<T> get(const std::string& name) const {
    auto it = entries_.find(name);
    require(it != entries_.end(), Errc::CorruptCheckpoint, "checkpoint lacks array '" + name + "'");
    const Entry& e = it->second;
    Tensor<T> out(e.shape[0], e.shape[1], e.shape[2], e.shape[3]);
    const std::size_t n = out.size();
    if (e.dtype == 0) {
      require(e.bytes.size() == n * sizeof(float), Errc::CorruptCheckpoint, "array size mismatch for " + name);
      const auto* src = reinterpret_cast<const float*>(e.bytes.data());
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(src[i]);
    } else {
      require(e.bytes.size() == n * sizeof(double), Errc::CorruptCheckpoint, "array size mismatch for " + name);
      const auto* src = reinterpret_cast<const double*>(e.bytes.data());
      for (std::size_t i = 0; i < n; ++i) out[i] = static_cast<T>(src[i]);
    }
    return out;
  }

  /// Copies a stored array into `dst`, requiring identical shape.
  template <typename T>
  void load_into(const std::string& name, Tensor<T>& dst) const {
    Tensor<T> t = get<T>(name);
    require(t.same_shape(dst), Errc::CorruptCheckpoint,
            "shape of '" + name + "' is " + shape_str(t.shape()) + ", expected " + shape_str(dst.shape()));
    dst = std::move(t);
  }

  std::string meta_at(const std::string& key) const {
    auto it = meta.find(key);
    require(it != meta.end(), Errc::CorruptCheckpoint, "checkpoint lacks metadata '" + key + "'");
    return it->second;
  }

  void save(const std::filesystem::path& path, std::uint32_t version = kFormatVersion) const {
    std::string buf;
    buf.append(kMagic, sizeof kMagic);
    put_u32(buf, version);
    put_u32(buf, static_cast<std::uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
      put_str(buf, k);
      put_str(buf, v);
    }
    put_u32(buf, static_cast<std::uint32_t>(entries_.size()));
    for (const auto& [name, e] : entries_) {
      put_str(buf, name);
      buf.push_back(static_cast<char>(e.dtype));
      buf.append(reinterpret_cast<const char*>(e.shape.data()), sizeof(int) * 4);
      buf.append(e.bytes.begin(), e.bytes.end());
    }
    const std::uint64_t h = fnv1a(buf.data(), buf.size());
    buf.append(reinterpret_cast<const char*>(&h), sizeof h);
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    const auto tmp = path.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      require(static_cast<bool>(out), Errc::Io, "cannot write " + tmp);
      out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
      require(static_cast<bool>(out), Errc::Io, "short write to " + tmp);
    }
    std::filesystem::rename(tmp, path);
  }

  static ArchiveFile load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), Errc::Io, "cannot open " + path.string());
    std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    require(buf.size() >= sizeof kMagic + 4 + 8 && std::memcmp(buf.data(), kMagic, sizeof kMagic) == 0,
            Errc::CorruptCheckpoint, path.string() + " is not a checkpoint");
    Reader r{buf, sizeof kMagic, buf.size() - 8};
    const std::uint32_t version = r.u32();
    require(version == kFormatVersion, Errc::VersionMismatch,
            "checkpoint format " + std::to_string(version) + ", expected " + std::to_string(kFormatVersion));
    std::uint64_t stored;
    std::memcpy(&stored, buf.data() + buf.size() - 8, 8);
    require(stored == fnv1a(buf.data(), buf.size() - 8), Errc::CorruptCheckpoint, "checksum mismatch in " + path.string());

    ArchiveFile a;
    const std::uint32_t n_meta = r.u32();
    for (std::uint32_t i = 0; i < n_meta; ++i) {
      std::string k = r.str();
      a.meta[k] = r.str();
    }
    const std::uint32_t n = r.u32();
    for (std::uint32_t i = 0; i < n; ++i) {
      std::string name = r.str();
      Entry e;
      e.dtype = static_cast<std::uint8_t>(r.take(1)[0]);
      require(e.dtype <= 1, Errc::CorruptCheckpoint, "bad dtype for " + name);
      std::memcpy(e.shape.data(), r.take(sizeof(int) * 4), sizeof(int) * 4);
      std::size_t count = 1;
      for (int d : e.shape) {
        require(d >= 0, Errc::CorruptCheckpoint, "negative dimension for " + name);
        count *= static_cast<std::size_t>(d);
      }
      const std::size_t bytes = count * (e.dtype == 0 ? 4 : 8);
      const char* p = r.take(bytes);
      e.bytes.assign(p, p + bytes);
      a.entries_[name] = std::move(e);
    }
    require(r.pos == r.end, Errc::CorruptCheckpoint, "trailing bytes in " + path.string());
    return a;
  }

 private:
  struct Entry {
    std::uint8_t dtype = 0;
    std::array<int, 4> shape{};
    std::vector<char> bytes;
  };

  struct Reader {
    const std::string& buf;
    std::size_t pos, end;
    const char* take(std::size_t n) {
      require(pos + n <= end, Errc::CorruptCheckpoint, "truncated checkpoint");
      const char* p = buf.data() + pos;
      pos += n;
      return p;
    }
    std::uint32_t u32() {
      std::uint32_t v;
      std::memcpy(&v, take(4), 4);
      return v;
    }
    std::string str() {
      const std::uint32_t n = u32();
      const char* p = take(n);
      return std::string(p, n);
    }
  };

  static void put_u32(std::string& b, std::uint32_t v) { b.append(reinterpret_cast<const char*>(&v), 4); }
  static void put_str(std::string& b, const std::string& s) {
    put_u32(b, static_cast<std::uint32_t>(s.size()));
    b.append(s);
  }

  std::map<std::string, Entry> entries_;
};

}  // namespace lossforge
