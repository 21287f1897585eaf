#include "mmt/shard.hpp"

#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>

namespace mmt {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'T', 'S'};
constexpr std::uint32_t kVersion = 1;

template <typename T>
void put(std::vector<unsigned char>& buf, T v) {
  unsigned char b[sizeof(T)];
  std::memcpy(b, &v, sizeof(T));
  // serialize little-endian regardless of host order
  if constexpr (sizeof(T) > 1) {
    const std::uint16_t probe = 1;
    if (*reinterpret_cast<const unsigned char*>(&probe) == 0)
      for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
        std::swap(b[i], b[sizeof(T) - 1 - i]);
  }
  buf.insert(buf.end(), b, b + sizeof(T));
}

class Reader {
 public:
  Reader(const unsigned char* p, std::size_t n) : p_(p), n_(n) {}
  template <typename T>
  T get() {
    if (pos_ + sizeof(T) > n_) throw shard_error("truncated shard record");
    T v;
    unsigned char b[sizeof(T)];
    std::memcpy(b, p_ + pos_, sizeof(T));
    if constexpr (sizeof(T) > 1) {
      const std::uint16_t probe = 1;
      if (*reinterpret_cast<const unsigned char*>(&probe) == 0)
        for (std::size_t i = 0; i < sizeof(T) / 2; ++i)
          std::swap(b[i], b[sizeof(T) - 1 - i]);
    }
    std::memcpy(&v, b, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::size_t remaining() const { return n_ - pos_; }

 private:
  const unsigned char* p_;
  std::size_t n_;
  std::size_t pos_ = 0;
};

std::vector<unsigned char> encode_record(const Example& ex) {
  std::vector<unsigned char> buf;
  put<std::int64_t>(buf, ex.index);
  put<std::int32_t>(buf, ex.class_id);
  put<std::uint8_t>(buf, static_cast<std::uint8_t>(ex.modalities.size()));
  for (const auto& s : ex.modalities) {
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(s.modality));
    put<std::uint8_t>(buf, static_cast<std::uint8_t>(s.dims.size()));
    for (auto d : s.dims) put<std::int64_t>(buf, d);
    if (s.modality == Modality::kText) {
      put<std::uint32_t>(buf, static_cast<std::uint32_t>(s.tokens.size()));
      for (auto t : s.tokens) put<std::int32_t>(buf, t);
    } else {
      if (static_cast<std::int64_t>(s.payload.size()) != s.payload_size())
        throw shard_error("payload size does not match dims");
      for (float f : s.payload) put<float>(buf, f);
    }
  }
  put<std::uint32_t>(buf, static_cast<std::uint32_t>(ex.caption.size()));
  for (auto t : ex.caption) put<std::int32_t>(buf, t);
  return buf;
}

Example decode_record(const unsigned char* p, std::size_t n) {
  Reader r(p, n);
  Example ex;
  ex.index = r.get<std::int64_t>();
  ex.class_id = r.get<std::int32_t>();
  const int nm = r.get<std::uint8_t>();
  for (int m = 0; m < nm; ++m) {
    RawSample s;
    s.modality = static_cast<Modality>(r.get<std::uint8_t>());
    const int nd = r.get<std::uint8_t>();
    for (int d = 0; d < nd; ++d) s.dims.push_back(r.get<std::int64_t>());
    if (s.modality == Modality::kText) {
      const auto nt = r.get<std::uint32_t>();
      s.tokens.reserve(nt);
      for (std::uint32_t i = 0; i < nt; ++i)
        s.tokens.push_back(r.get<std::int32_t>());
    } else {
      const std::int64_t np = s.payload_size();
      s.payload.reserve(np);
      for (std::int64_t i = 0; i < np; ++i) s.payload.push_back(r.get<float>());
    }
    ex.modalities.push_back(std::move(s));
  }
  const auto nc = r.get<std::uint32_t>();
  for (std::uint32_t i = 0; i < nc; ++i)
    ex.caption.push_back(r.get<std::int32_t>());
  if (r.remaining() != 0) throw shard_error("trailing bytes in shard record");
  return ex;
}

std::uint32_t crc(const std::vector<unsigned char>& buf) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, buf.data(), static_cast<uInt>(buf.size())));
}

}  // namespace

void write_shard(const std::string& path, const std::vector<Example>& examples) {
  const auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw shard_error("cannot open shard for writing: " + path);
  std::vector<unsigned char> header;
  header.insert(header.end(), kMagic, kMagic + 4);
  put<std::uint32_t>(header, kVersion);
  out.write(reinterpret_cast<const char*>(header.data()),
            static_cast<std::streamsize>(header.size()));
  for (const auto& ex : examples) {
    const auto payload = encode_record(ex);
    std::vector<unsigned char> rec;
    put<std::uint32_t>(rec, static_cast<std::uint32_t>(payload.size()));
    rec.insert(rec.end(), payload.begin(), payload.end());
    put<std::uint32_t>(rec, crc(payload));
    out.write(reinterpret_cast<const char*>(rec.data()),
              static_cast<std::streamsize>(rec.size()));
  }
  if (!out) throw shard_error("short write to shard: " + path);
}

namespace {

template <typename OnRecord>
void scan_shard(const std::string& path, OnRecord on_record) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw shard_error("cannot open shard: " + path);
  char magic[4];
  std::uint32_t version_le = 0;
  if (!in.read(magic, 4) ||
      !in.read(reinterpret_cast<char*>(&version_le), 4))
    throw shard_error("shard too short for header: " + path);
  if (std::memcmp(magic, kMagic, 4) != 0)
    throw shard_error("bad shard magic in " + path);
  std::vector<unsigned char> vbuf(reinterpret_cast<unsigned char*>(&version_le),
                                  reinterpret_cast<unsigned char*>(&version_le) + 4);
  Reader vr(vbuf.data(), 4);
  if (vr.get<std::uint32_t>() != kVersion)
    throw shard_error("unsupported shard version in " + path);
  for (;;) {
    unsigned char lenb[4];
    in.read(reinterpret_cast<char*>(lenb), 4);
    if (in.gcount() == 0 && in.eof()) break;
    if (in.gcount() != 4) throw shard_error("truncated record length in " + path);
    Reader lr(lenb, 4);
    const std::uint32_t len = lr.get<std::uint32_t>();
    std::vector<unsigned char> payload(len);
    in.read(reinterpret_cast<char*>(payload.data()), len);
    if (in.gcount() != static_cast<std::streamsize>(len))
      throw shard_error("truncated record payload in " + path);
    unsigned char crcb[4];
    in.read(reinterpret_cast<char*>(crcb), 4);
    if (in.gcount() != 4) throw shard_error("truncated record checksum in " + path);
    Reader cr(crcb, 4);
    if (cr.get<std::uint32_t>() != crc(payload))
      throw shard_error("checksum mismatch in " + path);
    on_record(payload);
  }
}

}  // namespace

std::vector<Example> read_shard(const std::string& path) {
  std::vector<Example> out;
  scan_shard(path, [&](const std::vector<unsigned char>& payload) {
    out.push_back(decode_record(payload.data(), payload.size()));
  });
  return out;
}

std::int64_t count_shard_records(const std::string& path) {
  std::int64_t n = 0;
  scan_shard(path, [&](const std::vector<unsigned char>&) { ++n; });
  return n;
}

}  // namespace mmt
