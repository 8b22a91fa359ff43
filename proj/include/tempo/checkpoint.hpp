#pragma once

// Binary checkpoint: magic, format version, section count, then per section
// a length-prefixed name, a length-prefixed payload and an FNV-1a checksum of
// the payload. Integers are little-endian, doubles are raw IEEE-754 bytes.

#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "tempo/tensor.hpp"

namespace tempo::train {

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

struct Checkpoint {
  std::string task;          // "lm" or "cl"
  std::string config_text;   // resolved run configuration
  std::uint64_t config_hash = 0;
  std::int64_t step = 0;
  double loss_accum = 0.0;  // training loss summed since the last metrics row
  std::int64_t loss_count = 0;
  std::vector<std::uint32_t> vocab;  // LM code points, empty for cl
  NamedTensors model;
  NamedTensors tempnet;
  NamedTensors optimizer;    // moments, named "<group>.m.<param>" / "<group>.v.<param>"
  std::vector<std::int64_t> optimizer_steps;
  std::string rng_state;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

std::uint64_t fnv1a(std::string_view bytes);

std::string encode_checkpoint(const Checkpoint& ckpt);
/// Throws IntegrityError naming the first section that fails to parse or verify.
Checkpoint decode_checkpoint(std::string_view bytes);

/// Writes to "<path>.tmp" and renames over path.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Looks up a tensor by name; throws IntegrityError(section) when absent.
const Tensor& find_tensor(const NamedTensors& tensors, const std::string& name, const std::string& section);

}  // namespace tempo::train
