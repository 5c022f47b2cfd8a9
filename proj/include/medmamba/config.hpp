#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

namespace medmamba {

struct ModelConfig {
  std::size_t channels = 12;   // C
  std::size_t length = 256;    // L, timesteps per window
  std::size_t classes = 2;     // K
  std::size_t d_model = 128;   // D
  std::size_t n_layer = 2;     // blocks per scale
  std::size_t expand = 2;      // D_inner = expand * D
  std::size_t ffn_expand = 4;  // D_ffn = ffn_expand * D
  std::size_t d_state = 16;    // N
  std::vector<std::size_t> strides{5, 10, 25};
  std::size_t rho = 2;         // channel-mixer expansion
  std::size_t conv_kernel = 5; // depthwise conv inside each block, odd
  double p_do = 0.1;
  double p_dp = 0.1;
  double p_ch = 0.1;
  double ln_eps = 1e-5;
  bool shared_a = false;       // backward scan reuses the forward A_log

  std::size_t d_inner() const { return expand * d_model; }
  std::size_t d_ffn() const { return ffn_expand * d_model; }
  std::size_t scales() const { return strides.size(); }
  // floor((L - s) / s) + 1
  std::size_t tokens(std::size_t scale) const;

  // Throws ConfigError naming the first violated constraint.
  void validate() const;
};

// floor((length - stride) / stride) + 1; throws DimensionError if length < stride.
std::size_t token_count(std::size_t length, std::size_t stride);

void to_json(nlohmann::json& j, const ModelConfig& c);
// Missing keys keep their defaults; unknown keys are rejected.
void from_json(const nlohmann::json& j, ModelConfig& c);

}  // namespace medmamba
