#ifndef ASSIST_NN_CHECKPOINT_HPP_
#define ASSIST_NN_CHECKPOINT_HPP_

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "assist/core/encoding.hpp"
#include "assist/core/error.hpp"
#include "assist/core/image.hpp"
#include "assist/nn/network.hpp"
#include "assist/patch/norm_stats.hpp"
#include "assist/train/hyperparams.hpp"

namespace assist::nn {

static_assert(std::endian::native == std::endian::little, "checkpoint I/O assumes little-endian");

// A trained network plus everything needed to reproduce and serve it.
struct Checkpoint {
  Model<float> model;
  patch::NormStats norm;
  train::Hyperparams hyperparams;
  std::vector<double> loss_trace;
  nlohmann::json metadata = nlohmann::json::object();
};

// File layout (little-endian):
//   8 bytes   magic "ASSISTCK"
//   u32       format version
//   u64       header length
//   header    UTF-8 JSON: config, norm stats, hyperparams, loss trace,
//             metadata, parameter and buffer names/shapes
//   payload   float32 parameters then buffers, in header order
inline constexpr char kCheckpointMagic[8] = {'A', 'S', 'S', 'I', 'S', 'T', 'C', 'K'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline nlohmann::json slots_json(const std::vector<TensorSlot>& slots) {
  auto arr = nlohmann::json::array();
  for (const auto& s : slots) arr.push_back({{"name", s.name}, {"shape", s.shape}});
  return arr;
}

template <typename T>
void put(std::vector<std::uint8_t>& out, const T& v) {
  const auto* p = reinterpret_cast<const std::uint8_t*>(&v);
  out.insert(out.end(), p, p + sizeof(T));
}

template <typename T>
T get(std::span<const std::uint8_t> in, std::size_t& pos) {
  if (pos + sizeof(T) > in.size()) throw FormatError("checkpoint truncated");
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace detail

inline std::vector<std::uint8_t> serialize(const Checkpoint& ck) {
  nlohmann::json header = {
      {"format", "assist-checkpoint"},
      {"version", kCheckpointVersion},
      {"config", ck.model.config},
      {"norm", ck.norm},
      {"hyperparams", ck.hyperparams},
      {"loss_trace", ck.loss_trace},
      {"metadata", ck.metadata},
      {"params", detail::slots_json(ck.model.layout.params)},
      {"buffers", detail::slots_json(ck.model.layout.buffers)},
  };
  const std::string text = header.dump();
  std::vector<std::uint8_t> out(kCheckpointMagic, kCheckpointMagic + 8);
  detail::put(out, kCheckpointVersion);
  detail::put(out, static_cast<std::uint64_t>(text.size()));
  out.insert(out.end(), text.begin(), text.end());
  auto append = [&](const std::vector<Tensor<float>>& ts) {
    for (const auto& t : ts) {
      const auto* p = reinterpret_cast<const std::uint8_t*>(t.data());
      out.insert(out.end(), p, p + t.size() * sizeof(float));
    }
  };
  append(ck.model.params);
  append(ck.model.buffers);
  return out;
}

inline Checkpoint deserialize(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < 20 || std::memcmp(bytes.data(), kCheckpointMagic, 8) != 0)
    throw FormatError("not a checkpoint file");
  std::size_t pos = 8;
  const auto version = detail::get<std::uint32_t>(bytes, pos);
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version));
  const auto header_len = detail::get<std::uint64_t>(bytes, pos);
  if (pos + header_len > bytes.size()) throw FormatError("checkpoint header truncated");
  const auto header = nlohmann::json::parse(bytes.begin() + pos, bytes.begin() + pos + header_len);
  pos += header_len;

  Checkpoint ck;
  const auto cfg = header.at("config").get<NetworkConfig>();
  ck.model = detail::allocate<float>(cfg);
  ck.norm = header.at("norm").get<patch::NormStats>();
  ck.hyperparams = header.at("hyperparams").get<train::Hyperparams>();
  ck.loss_trace = header.at("loss_trace").get<std::vector<double>>();
  ck.metadata = header.at("metadata");

  auto read = [&](std::vector<Tensor<float>>& ts, const std::vector<TensorSlot>& slots,
                  const nlohmann::json& declared) {
    if (declared.size() != slots.size()) throw FormatError("checkpoint tensor list mismatch");
    for (std::size_t i = 0; i < ts.size(); ++i) {
      if (declared[i].at("name") != slots[i].name ||
          declared[i].at("shape").get<Shape>() != slots[i].shape)
        throw FormatError("checkpoint tensor " + slots[i].name + " does not match config");
      const std::size_t n = ts[i].size() * sizeof(float);
      if (pos + n > bytes.size()) throw FormatError("checkpoint payload truncated");
      std::memcpy(ts[i].data(), bytes.data() + pos, n);
      pos += n;
    }
  };
  read(ck.model.params, ck.model.layout.params, header.at("params"));
  read(ck.model.buffers, ck.model.layout.buffers, header.at("buffers"));
  if (pos != bytes.size()) throw FormatError("trailing bytes after checkpoint payload");
  return ck;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  write_file(path, serialize(ck));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
  return deserialize(read_file(path));
}

// Content hash used as the checkpoint id.
inline std::string checkpoint_id(const Checkpoint& ck) { return sha256_hex(serialize(ck)); }

// Warm start: copy every parameter and buffer whose name and shape match.
// Returns the number of tensors copied.
inline std::size_t import_weights(Model<float>& target, const Model<float>& source) {
  std::size_t copied = 0;
  auto copy = [&](std::vector<Tensor<float>>& dst, const std::vector<TensorSlot>& dst_slots,
                  const std::vector<Tensor<float>>& src, const std::vector<TensorSlot>& src_slots) {
    for (std::size_t i = 0; i < dst.size(); ++i)
      for (std::size_t j = 0; j < src.size(); ++j)
        if (src_slots[j].name == dst_slots[i].name && src_slots[j].shape == dst_slots[i].shape) {
          dst[i] = src[j];
          ++copied;
          break;
        }
  };
  copy(target.params, target.layout.params, source.params, source.layout.params);
  copy(target.buffers, target.layout.buffers, source.buffers, source.layout.buffers);
  return copied;
}

}  // namespace assist::nn

#endif  // ASSIST_NN_CHECKPOINT_HPP_
