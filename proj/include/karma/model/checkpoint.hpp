#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include "karma/model/karma.hpp"

namespace karma::model {

/// Binary layout, little-endian throughout:
///   "KARMA1"
///   u32 entry count, then per entry: u32 key length, key, u32 value length, value
///   u32 tensor count, then per tensor: u32 name length, name, u32 rank, u64 dims[rank],
///   fp64 payload
/// Entries are written in key order; tensors in insertion order.
struct Checkpoint {
  std::map<std::string, std::string> entries;
  std::vector<NamedTensor> tensors;

  const Tensor* find(const std::string& name) const;
};

std::string encode_checkpoint(const Checkpoint& ckpt);
/// DataError on truncation, bad magic or trailing bytes.
Checkpoint decode_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Config entries plus every parameter.
Checkpoint to_checkpoint(const KarmaModel& model);
/// Rebuilds a model; every parameter must be present with its expected shape. Entries that
/// are not model keys and tensors that are not parameters are ignored.
KarmaModel model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace karma::model
