#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "neurbf/error.hpp"

namespace neurbf {

/// Binary checkpoint, all integers and reals little-endian:
///
///   bytes 0-3    magic "NRBF"
///   u32          format version (kCheckpointVersion)
///   u64, bytes   header length, then UTF-8 JSON header (run config and model layout)
///   u32          segment count
///   per segment: u32 name length, name bytes, u8 flags (bit 0: trainable),
///                u32 rank, u64 dims[rank], f64 values[product of dims]
///   u64          FNV-1a hash of every preceding byte
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr char kCheckpointMagic[4] = {'N', 'R', 'B', 'F'};

struct CheckpointSegment {
  std::string name;
  bool trainable = true;
  std::vector<std::uint64_t> dims;
  std::vector<double> values;
};

struct Checkpoint {
  std::uint32_t version = kCheckpointVersion;
  std::string header;  // JSON text
  std::vector<CheckpointSegment> segments;

  const CheckpointSegment* find(const std::string& name) const {
    for (const auto& s : segments)
      if (s.name == name) return &s;
    return nullptr;
  }

  const CheckpointSegment& at(const std::string& name) const {
    const auto* s = find(name);
    require(s != nullptr, ErrorKind::config, "checkpoint has no segment '" + name + "'");
    return *s;
  }
};

namespace detail {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes a little-endian host");

inline std::uint64_t fnv1a(const std::string& bytes, std::size_t n) {
  std::uint64_t h = 0xCBF29CE484222325ULL;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(bytes[i]);
    h *= 0x100000001B3ULL;
  }
  return h;
}

template <class T>
void put(std::string& buf, T v) {
  char raw[sizeof(T)];
  std::memcpy(raw, &v, sizeof(T));
  buf.append(raw, sizeof(T));
}

class ByteReader {
 public:
  ByteReader(const std::string& buf, std::size_t end, std::string path) : buf_(buf), end_(end), path_(std::move(path)) {}

  template <class T>
  T get() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }

  std::string bytes(std::size_t n) {
    need(n);
    std::string s = buf_.substr(pos_, n);
    pos_ += n;
    return s;
  }

  std::size_t pos() const noexcept { return pos_; }

 private:
  void need(std::size_t n) const {
    require(n <= end_ - pos_, ErrorKind::io, "checkpoint '" + path_ + "' is truncated");
  }

  const std::string& buf_;
  std::size_t end_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string serialize_checkpoint(const Checkpoint& ck) {
  std::string buf(kCheckpointMagic, 4);
  detail::put<std::uint32_t>(buf, ck.version);
  detail::put<std::uint64_t>(buf, ck.header.size());
  buf += ck.header;
  detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(ck.segments.size()));
  for (const auto& s : ck.segments) {
    std::uint64_t count = 1;
    for (auto d : s.dims) count *= d;
    require(count == s.values.size(), ErrorKind::logic, "checkpoint segment '" + s.name + "': dims do not match values");
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.name.size()));
    buf += s.name;
    detail::put<std::uint8_t>(buf, s.trainable ? 1 : 0);
    detail::put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.dims.size()));
    for (auto d : s.dims) detail::put<std::uint64_t>(buf, d);
    const std::size_t at = buf.size();
    buf.resize(at + s.values.size() * sizeof(double));
    if (!s.values.empty()) std::memcpy(buf.data() + at, s.values.data(), s.values.size() * sizeof(double));
  }
  detail::put<std::uint64_t>(buf, detail::fnv1a(buf, buf.size()));
  return buf;
}

/// Parses checkpoint bytes. Bad magic, truncation or a hash mismatch is an io error; an
/// unsupported version is a config error.
inline Checkpoint parse_checkpoint(const std::string& buf, const std::string& path = "<memory>") {
  require(buf.size() >= 4 && std::memcmp(buf.data(), kCheckpointMagic, 4) == 0, ErrorKind::io,
          "'" + path + "' is not a checkpoint (bad magic)");
  require(buf.size() >= 4 + 4 + 8, ErrorKind::io, "checkpoint '" + path + "' is truncated");
  const std::size_t body = buf.size() - 8;
  std::uint64_t stored = 0;
  std::memcpy(&stored, buf.data() + body, 8);
  require(stored == detail::fnv1a(buf, body), ErrorKind::io, "checkpoint '" + path + "' is corrupted (hash mismatch)");

  detail::ByteReader r(buf, body, path);
  r.bytes(4);
  Checkpoint ck;
  ck.version = r.get<std::uint32_t>();
  require(ck.version == kCheckpointVersion, ErrorKind::config,
          "checkpoint '" + path + "' has version " + std::to_string(ck.version) + ", expected " +
              std::to_string(kCheckpointVersion));
  ck.header = r.bytes(static_cast<std::size_t>(r.get<std::uint64_t>()));
  const auto count = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointSegment s;
    s.name = r.bytes(r.get<std::uint32_t>());
    s.trainable = (r.get<std::uint8_t>() & 1) != 0;
    const auto rank = r.get<std::uint32_t>();
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < rank; ++d) {
      s.dims.push_back(r.get<std::uint64_t>());
      n *= s.dims.back();
    }
    require(n <= (body - r.pos()) / sizeof(double), ErrorKind::io, "checkpoint '" + path + "' is truncated");
    const std::string raw = r.bytes(static_cast<std::size_t>(n) * sizeof(double));
    s.values.resize(static_cast<std::size_t>(n));
    if (n) std::memcpy(s.values.data(), raw.data(), raw.size());
    ck.segments.push_back(std::move(s));
  }
  require(r.pos() == body, ErrorKind::io, "checkpoint '" + path + "' has trailing bytes");
  return ck;
}

inline void write_checkpoint(const Checkpoint& ck, const std::string& path) {
  const std::string buf = serialize_checkpoint(ck);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  require(out.good(), ErrorKind::io, "cannot write checkpoint '" + path + "'");
  out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
  out.flush();
  require(out.good(), ErrorKind::io, "failed writing checkpoint '" + path + "'");
}

inline Checkpoint read_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  require(in.good(), ErrorKind::io, "cannot open checkpoint '" + path + "'");
  const std::string buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return parse_checkpoint(buf, path);
}

}  // namespace neurbf
