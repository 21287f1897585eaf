#pragma once

#include <string>
#include <vector>

#include "mmt/sample.hpp"

namespace mmt {

// Length-prefixed record shards. Layout (all little-endian):
//   file:   magic "MMTS", u32 version
//   record: u32 payload_len, payload bytes, u32 crc32(payload)
// Payload: i64 index, i32 class_id, u8 n_modalities,
//          per modality { u8 tag, u8 ndims, i64 dims[], f32 data[] },
//          u32 caption_len, i32 caption[].
class shard_error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

void write_shard(const std::string& path, const std::vector<Example>& examples);
std::vector<Example> read_shard(const std::string& path);

// Record count without materializing payloads.
std::int64_t count_shard_records(const std::string& path);

}  // namespace mmt
