#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "medmamba/config.hpp"
#include "medmamba/gradcheck.hpp"
#include "medmamba/model.hpp"

namespace medmamba {

// File layout, all integers little-endian:
//   "MMB1" | u32 version | u32 header_len | JSON header | payload
// The header is {"config": ..., "tensors": [{name, dtype, shape, byte_offset,
// byte_len}], "meta": ...}; byte_offset is relative to the payload start.
inline constexpr char kCheckpointMagic[4] = {'M', 'M', 'B', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct Checkpoint {
  ModelConfig config;
  std::vector<NamedTensor> tensors;
  nlohmann::json meta = nlohmann::json::object();

  // Tensor by name; throws IoError when absent.
  const Tensor& tensor(const std::string& name) const;
  bool contains(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt);
Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes);

void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Model state plus optional extra tensors (e.g. normalization statistics).
Checkpoint make_checkpoint(const model::Model& model, const std::vector<NamedTensor>& extra = {},
                           nlohmann::json meta = nlohmann::json::object());
model::Model restore_model(const Checkpoint& ckpt);

}  // namespace medmamba
