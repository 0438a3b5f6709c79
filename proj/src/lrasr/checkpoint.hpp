#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "lrasr/params.hpp"

namespace lrasr::nn {

// Metadata block written ahead of the tensor records.
struct CheckpointMeta {
  int version = 1;
  std::vector<std::string> groups;
  int vocab_size = 0;
  std::string config_digest;
  nlohmann::json model_config;  // carried so a checkpoint is self-describing
};

// Layout: "LRCK", u32 version, u32 metadata length, metadata JSON, u32 tensor
// count, then per tensor: u32+bytes name, u32+bytes group, u32 ndims (2),
// u32 dims, float32 little-endian values (row-major).
std::string encode_checkpoint(const ParamStore<float>& store, const CheckpointMeta& meta);
void save_checkpoint(const std::string& path, const ParamStore<float>& store,
                     const CheckpointMeta& meta);

struct LoadedCheckpoint {
  ParamStore<float> store;
  CheckpointMeta meta;
};
LoadedCheckpoint decode_checkpoint(const std::string& bytes);
LoadedCheckpoint load_checkpoint(const std::string& path);

// Copies every tensor of `src` into `dst`, requiring identical names and
// shapes; the error names the offending tensor.
void copy_compatible(const ParamStore<float>& src, ParamStore<float>& dst);

std::string digest_hex(const std::string& text);

}  // namespace lrasr::nn
