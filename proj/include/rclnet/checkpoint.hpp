#pragma once

#include <array>
#include <filesystem>

#include "rclnet/binary_io.hpp"
#include "rclnet/network.hpp"

namespace rclnet {

// Model checkpoint, magic "RCLNET1" + version byte, then the configuration
// and every state tensor in declaration order as little-endian 32-bit floats
// with a per-tensor shape header.
inline constexpr std::array<char, 7> kCheckpointMagic = {'R', 'C', 'L', 'N', 'E', 'T', '1'};
inline constexpr std::uint8_t kCheckpointVersion = 1;

namespace detail {

inline void write_config(ByteWriter& w, const NetworkConfig& cfg) {
  w.u32(static_cast<std::uint32_t>(cfg.input_w));
  w.u32(static_cast<std::uint32_t>(cfg.input_h));
  w.u32(static_cast<std::uint32_t>(cfg.channels));
  w.u32(static_cast<std::uint32_t>(cfg.maps));
  w.u32(static_cast<std::uint32_t>(cfg.rcl_count));
  w.u32(static_cast<std::uint32_t>(cfg.iterations));
  w.u8(cfg.head == HeadKind::Regression ? 0 : 1);
  w.u32(static_cast<std::uint32_t>(cfg.class_count));
  w.f64(cfg.dropout_rate);
  w.f64(cfg.bn_epsilon);
  w.f64(cfg.bn_momentum);
  w.u8(cfg.use_batchnorm ? 1 : 0);
  w.u8(cfg.clamp_predictions ? 1 : 0);
  w.u32(static_cast<std::uint32_t>(cfg.pool_specs.size()));
  for (const PoolSpec& p : cfg.pool_specs) {
    w.u32(static_cast<std::uint32_t>(p.pool_w));
    w.u32(static_cast<std::uint32_t>(p.pool_h));
    w.u32(static_cast<std::uint32_t>(p.stride_w));
    w.u32(static_cast<std::uint32_t>(p.stride_h));
  }
}

// Caps that keep a bit-flipped header from requesting absurd allocations.
inline std::uint32_t checked_u32(ByteReader& r, std::uint32_t max, const char* what) {
  const std::uint64_t at = r.offset();
  const std::uint32_t v = r.u32();
  if (v > max) throw FormatError(std::string(what) + " out of range", at);
  return v;
}

inline NetworkConfig read_config(ByteReader& r) {
  NetworkConfig cfg;
  cfg.input_w = checked_u32(r, 1u << 20, "input_w");
  cfg.input_h = checked_u32(r, 1u << 20, "input_h");
  cfg.channels = checked_u32(r, 1u << 12, "channels");
  cfg.maps = checked_u32(r, 1u << 16, "maps");
  cfg.rcl_count = static_cast<int>(checked_u32(r, 256, "rcl_count"));
  cfg.iterations = static_cast<int>(checked_u32(r, 256, "iterations"));
  const std::uint8_t head = r.u8();
  if (head > 1) throw FormatError("unknown head kind", r.offset() - 1);
  cfg.head = head == 0 ? HeadKind::Regression : HeadKind::Classification;
  cfg.class_count = static_cast<int>(checked_u32(r, 1u << 16, "class_count"));
  cfg.dropout_rate = r.f64();
  cfg.bn_epsilon = r.f64();
  cfg.bn_momentum = r.f64();
  cfg.use_batchnorm = r.u8() != 0;
  cfg.clamp_predictions = r.u8() != 0;
  const std::uint32_t pools = checked_u32(r, 257, "pool count");
  cfg.pool_specs.clear();
  for (std::uint32_t i = 0; i < pools; ++i) {
    PoolSpec p;
    p.pool_w = static_cast<int>(checked_u32(r, 1u << 20, "pool_w"));
    p.pool_h = static_cast<int>(checked_u32(r, 1u << 20, "pool_h"));
    p.stride_w = static_cast<int>(checked_u32(r, 1u << 20, "stride_w"));
    p.stride_h = static_cast<int>(checked_u32(r, 1u << 20, "stride_h"));
    cfg.pool_specs.push_back(p);
  }
  return cfg;
}

}  // namespace detail

template <typename Scalar>
void save_checkpoint(Network<Scalar>& net, const std::filesystem::path& path) {
  ByteWriter w;
  w.bytes(kCheckpointMagic.data(), kCheckpointMagic.size());
  w.u8(kCheckpointVersion);
  detail::write_config(w, net.config());
  auto tensors = net.state_tensors();
  w.u32(static_cast<std::uint32_t>(tensors.size()));
  for (const auto& view : tensors) {
    const Tensor<Scalar>& t = *view.value;
    w.u32(static_cast<std::uint32_t>(t.rank()));
    for (Index d : t.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (Index i = 0; i < t.size(); ++i) w.f32(static_cast<float>(t[i]));
  }
  w.save(path);
}

/// Rebuilds the network described by the checkpoint. Any mismatch between the
/// stored tensors and the configuration they claim is a FormatError; corrupt
/// files never crash the loader.
template <typename Scalar>
Network<Scalar> load_checkpoint(const std::filesystem::path& path) {
  ByteReader r = ByteReader::from_file(path);
  std::array<char, 7> magic{};
  r.bytes(magic.data(), magic.size(), "file too short for magic");
  if (magic != kCheckpointMagic)
    throw FormatError("bad magic, expected \"RCLNET1\"", 0);
  const std::uint8_t version = r.u8();
  if (version != kCheckpointVersion)
    throw FormatError("unsupported checkpoint version " + std::to_string(version), r.offset() - 1);

  NetworkConfig cfg = detail::read_config(r);
  const std::uint64_t config_end = r.offset();
  try {
    trace_shapes(cfg);
  } catch (const Error& e) {
    throw FormatError(std::string("stored configuration is invalid: ") + e.what(), config_end);
  }

  Network<Scalar> net(cfg, 0);
  auto tensors = net.state_tensors();
  const std::uint32_t count = r.u32();
  if (count != tensors.size())
    throw FormatError("checkpoint holds " + std::to_string(count) + " tensors, expected " +
                          std::to_string(tensors.size()),
                      r.offset() - 4);
  for (auto& view : tensors) {
    Tensor<Scalar>& t = *view.value;
    const std::uint64_t header_at = r.offset();
    const std::uint32_t rank = r.u32();
    if (rank != static_cast<std::uint32_t>(t.rank()))
      throw FormatError("tensor " + view.name + " rank mismatch", header_at);
    for (Index a = 0; a < t.rank(); ++a) {
      const std::uint32_t d = r.u32();
      if (d != static_cast<std::uint32_t>(t.extent(a)))
        throw FormatError("tensor " + view.name + " extent mismatch on axis " + std::to_string(a),
                          r.offset() - 4);
    }
    r.require(static_cast<std::size_t>(t.size()) * 4, "tensor data truncated");
    for (Index i = 0; i < t.size(); ++i) t[i] = static_cast<Scalar>(r.f32());
  }
  if (!r.exhausted()) throw FormatError("trailing bytes after checkpoint payload", r.offset());
  return net;
}

}  // namespace rclnet
