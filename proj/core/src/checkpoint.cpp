#include "mmt/checkpoint.hpp"

#include <json.hpp>
#include <zlib.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

namespace mmt {

using nlohmann::json;

void write_manifest_file(const std::string& path,
                         const CheckpointManifest& m) {
  std::set<std::string> seen;
  for (const auto& e : m.entries)
    if (!seen.insert(e.kind + ":" + e.path).second)
      throw checkpoint_error("duplicate manifest entry: " + e.path);
  json j;
  j["version"] = m.version;
  j["step"] = m.step;
  j["master_seed"] = m.master_seed;
  j["task_rng"] = {{"key", m.task_rng_key}, {"counter", m.task_rng_counter}};
  j["plan_builds"] = m.plan_builds;
  j["plan_signatures"] = m.plan_signatures;
  j["precision"] = m.precision;
  j["config_hash"] = m.config_hash;
  json entries = json::array();
  for (const auto& e : m.entries) {
    json je;
    je["kind"] = e.kind;
    je["path"] = e.path;
    je["shape"] = e.shape;
    je["offset"] = e.offset;
    je["crc32"] = e.crc32;
    entries.push_back(je);
  }
  j["entries"] = entries;
  const auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw checkpoint_error("cannot write manifest: " + path);
  out << j.dump(2) << "\n";
}

CheckpointManifest read_manifest_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw checkpoint_error("cannot open manifest: " + path);
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    throw checkpoint_error("corrupt manifest " + path + ": " + e.what());
  }
  CheckpointManifest m;
  try {
    m.version = j.at("version").get<std::uint32_t>();
    if (m.version != 1)
      throw checkpoint_error("unsupported checkpoint version " +
                             std::to_string(m.version) + " in " + path);
    m.step = j.at("step").get<std::int64_t>();
    m.master_seed = j.at("master_seed").get<std::uint64_t>();
    m.task_rng_key = j.at("task_rng").at("key").get<std::uint64_t>();
    m.task_rng_counter = j.at("task_rng").at("counter").get<std::uint64_t>();
    m.plan_builds = j.at("plan_builds").get<std::uint64_t>();
    m.plan_signatures =
        j.at("plan_signatures").get<std::vector<std::string>>();
    m.precision = j.at("precision").get<std::string>();
    m.config_hash = j.at("config_hash").get<std::string>();
    for (const auto& je : j.at("entries")) {
      ManifestEntry e;
      e.kind = je.at("kind").get<std::string>();
      e.path = je.at("path").get<std::string>();
      e.shape = je.at("shape").get<Shape>();
      e.offset = je.at("offset").get<std::uint64_t>();
      e.crc32 = je.at("crc32").get<std::uint32_t>();
      m.entries.push_back(std::move(e));
    }
  } catch (const json::exception& e) {
    throw checkpoint_error("corrupt manifest " + path + ": " + e.what());
  }
  std::set<std::string> seen;
  for (const auto& e : m.entries)
    if (!seen.insert(e.kind + ":" + e.path).second)
      throw checkpoint_error("duplicate manifest entry: " + e.path);
  return m;
}

std::uint32_t payload_crc(const float* data, std::size_t count) {
  return static_cast<std::uint32_t>(
      ::crc32(0L, reinterpret_cast<const Bytef*>(data),
              static_cast<uInt>(count * sizeof(float))));
}

void write_payload_file(const std::string& path,
                        const std::vector<float>& data) {
  const auto dir = std::filesystem::path(path).parent_path();
  if (!dir.empty()) std::filesystem::create_directories(dir);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw checkpoint_error("cannot write payload: " + path);
  // float32 little-endian; byte-swap on big-endian hosts
  const std::uint16_t probe = 1;
  if (*reinterpret_cast<const unsigned char*>(&probe) == 1) {
    out.write(reinterpret_cast<const char*>(data.data()),
              static_cast<std::streamsize>(data.size() * sizeof(float)));
  } else {
    for (float f : data) {
      unsigned char b[4];
      std::memcpy(b, &f, 4);
      std::swap(b[0], b[3]);
      std::swap(b[1], b[2]);
      out.write(reinterpret_cast<const char*>(b), 4);
    }
  }
  if (!out) throw checkpoint_error("short write to payload: " + path);
}

std::vector<float> read_payload_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) throw checkpoint_error("cannot open payload: " + path);
  const auto bytes = static_cast<std::size_t>(in.tellg());
  if (bytes % sizeof(float) != 0)
    throw checkpoint_error("payload size is not a float multiple: " + path);
  std::vector<float> data(bytes / sizeof(float));
  in.seekg(0);
  in.read(reinterpret_cast<char*>(data.data()),
          static_cast<std::streamsize>(bytes));
  if (!in) throw checkpoint_error("short read from payload: " + path);
  const std::uint16_t probe = 1;
  if (*reinterpret_cast<const unsigned char*>(&probe) != 1) {
    for (float& f : data) {
      unsigned char b[4];
      std::memcpy(b, &f, 4);
      std::swap(b[0], b[3]);
      std::swap(b[1], b[2]);
      std::memcpy(&f, b, 4);
    }
  }
  return data;
}

}  // namespace mmt
