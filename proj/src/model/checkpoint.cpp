#include "medmamba/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

#include "medmamba/errors.hpp"

namespace medmamba {

namespace {

using Kind = CheckpointError::Kind;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(p[i]) << (8 * i);
  return v;
}

template <typename T>
T from_le(const std::uint8_t* p) {
  using U = std::conditional_t<sizeof(T) == 8, std::uint64_t, std::uint32_t>;
  U bits = 0;
  for (std::size_t i = 0; i < sizeof(T); ++i) bits |= static_cast<U>(p[i]) << (8 * i);
  return std::bit_cast<T>(bits);
}

void put_f64(std::vector<std::uint8_t>& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(bits >> (8 * i)));
}

}  // namespace

const Tensor& Checkpoint::tensor(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return t.value;
  throw IoError("checkpoint has no tensor '" + name + "'");
}

bool Checkpoint::contains(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return true;
  return false;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ckpt) {
  nlohmann::json manifest = nlohmann::json::array();
  std::size_t offset = 0;
  for (const auto& t : ckpt.tensors) {
    const std::size_t len = t.value.size() * 8;
    manifest.push_back({{"name", t.name},
                        {"dtype", "f64"},
                        {"shape", t.value.shape()},
                        {"byte_offset", offset},
                        {"byte_len", len}});
    offset += len;
  }
  const nlohmann::json header{{"config", ckpt.config}, {"tensors", manifest}, {"meta", ckpt.meta}};
  const std::string text = header.dump();

  std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
  put_u32(out, kCheckpointVersion);
  put_u32(out, static_cast<std::uint32_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  out.reserve(out.size() + offset);
  for (const auto& t : ckpt.tensors)
    for (double v : t.value.values()) put_f64(out, v);
  return out;
}

Checkpoint decode_checkpoint(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < 4 || std::memcmp(bytes.data(), kCheckpointMagic, 4) != 0) {
    throw CheckpointError(Kind::bad_magic, "checkpoint: bad magic (not an MMB1 file)");
  }
  if (bytes.size() < 12) throw CheckpointError(Kind::truncated, "checkpoint: truncated preamble");
  const std::uint32_t version = get_u32(bytes.data() + 4);
  if (version != kCheckpointVersion) {
    throw CheckpointError(Kind::version_mismatch, "checkpoint: format version " + std::to_string(version) +
                                                      " (supported: " + std::to_string(kCheckpointVersion) + ")");
  }
  const std::size_t header_len = get_u32(bytes.data() + 8);
  if (bytes.size() < 12 + header_len) throw CheckpointError(Kind::truncated, "checkpoint: truncated header");

  Checkpoint ckpt;
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(bytes.begin() + 12, bytes.begin() + 12 + static_cast<std::ptrdiff_t>(header_len));
    ckpt.config = header.at("config").get<ModelConfig>();
    if (header.contains("meta")) ckpt.meta = header.at("meta");
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::bad_header, std::string("checkpoint: bad header: ") + e.what());
  } catch (const ConfigError& e) {
    throw CheckpointError(Kind::bad_header, std::string("checkpoint: bad header: ") + e.what());
  }

  const std::uint8_t* payload = bytes.data() + 12 + header_len;
  const std::size_t payload_len = bytes.size() - 12 - header_len;
  try {
    for (const auto& entry : header.at("tensors")) {
      NamedTensor t{entry.at("name").get<std::string>(), Tensor(entry.at("shape").get<Shape>())};
      const std::string dtype = entry.at("dtype").get<std::string>();
      const std::size_t width = dtype == "f64" ? 8 : dtype == "f32" ? 4 : 0;
      if (width == 0) throw CheckpointError(Kind::bad_header, "checkpoint: tensor '" + t.name + "' has dtype " + dtype);
      const std::size_t off = entry.at("byte_offset").get<std::size_t>();
      const std::size_t len = entry.at("byte_len").get<std::size_t>();
      if (len != t.value.size() * width) {
        throw CheckpointError(Kind::bad_header, "checkpoint: tensor '" + t.name + "' byte_len disagrees with shape");
      }
      if (off > payload_len || len > payload_len - off) {
        throw CheckpointError(Kind::truncated, "checkpoint: payload of tensor '" + t.name + "' is truncated");
      }
      for (std::size_t i = 0; i < t.value.size(); ++i) {
        const std::uint8_t* p = payload + off + i * width;
        t.value[i] = width == 8 ? from_le<double>(p) : static_cast<double>(from_le<float>(p));
      }
      ckpt.tensors.push_back(std::move(t));
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointError(Kind::bad_header, std::string("checkpoint: bad tensor table: ") + e.what());
  }
  return ckpt;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  const auto bytes = encode_checkpoint(ckpt);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing '" + path + "'");
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint '" + path + "'");
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_checkpoint(bytes);
}

Checkpoint make_checkpoint(const model::Model& model, const std::vector<NamedTensor>& extra, nlohmann::json meta) {
  Checkpoint ckpt{model.config(), model.state(), std::move(meta)};
  ckpt.tensors.insert(ckpt.tensors.end(), extra.begin(), extra.end());
  return ckpt;
}

model::Model restore_model(const Checkpoint& ckpt) {
  model::Model m(ckpt.config, 0);
  m.load_state(ckpt.tensors);
  return m;
}

}  // namespace medmamba
