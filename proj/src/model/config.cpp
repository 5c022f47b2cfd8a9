#include "medmamba/config.hpp"

#include <set>
#include <type_traits>

#include "medmamba/errors.hpp"

namespace medmamba {

std::size_t token_count(std::size_t length, std::size_t stride) {
  if (stride == 0) throw ConfigError("stride must be >= 1");
  if (length < stride) {
    throw DimensionError("input of length " + std::to_string(length) + " is shorter than stride " +
                         std::to_string(stride));
  }
  return (length - stride) / stride + 1;
}

std::size_t ModelConfig::tokens(std::size_t scale) const { return token_count(length, strides.at(scale)); }

void ModelConfig::validate() const {
  auto fail = [](const std::string& m) { throw ConfigError("model config: " + m); };
  if (channels == 0) fail("C must be >= 1");
  if (length == 0) fail("L must be >= 1");
  if (classes < 2) fail("K must be >= 2");
  if (d_model == 0 || d_model % 4 != 0) fail("D must be a positive multiple of 4");
  if (n_layer == 0) fail("N_layer must be >= 1");
  if (expand == 0 || ffn_expand == 0 || d_state == 0 || rho == 0) fail("E, E_ffn, N and rho must be >= 1");
  if (conv_kernel == 0 || conv_kernel % 2 == 0) fail("conv_kernel must be odd");
  if (strides.empty()) fail("at least one stride is required");
  for (std::size_t s : strides) {
    if (s < 1 || s > length) fail("stride " + std::to_string(s) + " outside [1, L=" + std::to_string(length) + "]");
  }
  auto prob = [&](double p, const char* name) {
    if (!(p >= 0.0 && p < 1.0)) fail(std::string(name) + " must be in [0, 1)");
  };
  prob(p_do, "p_do");
  prob(p_dp, "p_dp");
  prob(p_ch, "p_ch");
  if (!(ln_eps > 0.0)) fail("ln_eps must be positive");
}

void to_json(nlohmann::json& j, const ModelConfig& c) {
  j = nlohmann::json{{"C", c.channels},       {"L", c.length},        {"K", c.classes},
                     {"D", c.d_model},        {"N_layer", c.n_layer}, {"E", c.expand},
                     {"E_ffn", c.ffn_expand}, {"N", c.d_state},       {"strides", c.strides},
                     {"rho", c.rho},          {"conv_kernel", c.conv_kernel},
                     {"p_do", c.p_do},        {"p_dp", c.p_dp},       {"p_ch", c.p_ch},
                     {"ln_eps", c.ln_eps},    {"shared_A", c.shared_a}};
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  if (!j.is_object()) throw ConfigError("model config must be a JSON object");
  static const std::set<std::string> known{"C",   "L",           "K",    "D",    "N_layer", "E",      "E_ffn",   "N",
                                           "strides", "rho", "conv_kernel", "p_do", "p_dp", "p_ch",   "ln_eps", "shared_A"};
  for (const auto& [key, _] : j.items()) {
    if (!known.count(key)) throw ConfigError("model config: unknown key '" + key + "'");
  }
  try {
    auto get = [&](const char* key, auto& field) {
      if (!j.contains(key)) return;
      if constexpr (std::is_same_v<std::decay_t<decltype(field)>, std::size_t>) {
        if (!j.at(key).is_number_unsigned()) throw ConfigError(std::string("model config: ") + key + " must be a non-negative integer");
      }
      j.at(key).get_to(field);
    };
    get("C", c.channels);
    get("L", c.length);
    get("K", c.classes);
    get("D", c.d_model);
    get("N_layer", c.n_layer);
    get("E", c.expand);
    get("E_ffn", c.ffn_expand);
    get("N", c.d_state);
    get("strides", c.strides);
    get("rho", c.rho);
    get("conv_kernel", c.conv_kernel);
    get("p_do", c.p_do);
    get("p_dp", c.p_dp);
    get("p_ch", c.p_ch);
    get("ln_eps", c.ln_eps);
    get("shared_A", c.shared_a);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("model config: ") + e.what());
  }
}

}  // namespace medmamba
