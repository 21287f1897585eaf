#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "mmt/tensor.hpp"

namespace mmt {

class checkpoint_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Checkpoints are a JSON manifest plus a little-endian float32 payload file.
// The manifest lists every tensor (parameters and optimizer moments) exactly
// once with its byte offset and checksum, and carries the scalar training
// state: step, RNG streams, and the plan cache's signature set and build
// counter.
struct ManifestEntry {
  std::string kind;  // "param" | "adam_m" | "adam_v"
  std::string path;
  Shape shape;
  std::uint64_t offset = 0;  // bytes into the payload file
  std::uint32_t crc32 = 0;
};

struct CheckpointManifest {
  std::uint32_t version = 1;
  std::int64_t step = 0;
  std::uint64_t master_seed = 0;
  std::uint64_t task_rng_key = 0;
  std::uint64_t task_rng_counter = 0;
  std::uint64_t plan_builds = 0;
  std::vector<std::string> plan_signatures;
  std::string precision;  // compute precision of the run
  std::string config_hash;
  std::vector<ManifestEntry> entries;
};

void write_manifest_file(const std::string& path, const CheckpointManifest& m);
CheckpointManifest read_manifest_file(const std::string& path);

// Payload helpers (shared by save and restore).
void write_payload_file(const std::string& path,
                        const std::vector<float>& data);
std::vector<float> read_payload_file(const std::string& path);
std::uint32_t payload_crc(const float* data, std::size_t count);

inline std::string manifest_path(const std::string& prefix) {
  return prefix + ".manifest.json";
}
inline std::string payload_path(const std::string& prefix) {
  return prefix + ".params.bin";
}

}  // namespace mmt
