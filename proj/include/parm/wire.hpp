#pragma once

#include <cstdint>
#include <cstring>
#include <span>
#include <stdexcept>
#include <vector>

namespace parm {

struct frame_error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

enum class MsgType : std::uint8_t {
  kQuery = 1,
  kPrediction = 2,
  kRegister = 3,
  kShutdown = 4,
};

namespace frame_flags {
inline constexpr std::uint8_t kParity = 1u << 0;
inline constexpr std::uint8_t kApproximate = 1u << 1;
inline constexpr std::uint8_t kDefault = 1u << 2;
}  // namespace frame_flags

// Wire frame, all integers little-endian:
//   u16 magic 0x504D, u8 version=1, u8 msg_type, u64 query_id, u64 group_id,
//   u8 position, u8 flags, u32 payload_len, payload_len * f32.
struct Frame {
  MsgType type = MsgType::kQuery;
  std::uint64_t query_id = 0;
  std::uint64_t group_id = 0;
  std::uint8_t position = 0;
  std::uint8_t flags = 0;
  std::vector<float> payload;

  bool operator==(const Frame&) const = default;
};

inline constexpr std::uint16_t kFrameMagic = 0x504D;
inline constexpr std::uint8_t kFrameVersion = 1;
inline constexpr std::size_t kFrameHeaderSize = 2 + 1 + 1 + 8 + 8 + 1 + 1 + 4;

inline std::vector<std::uint8_t> encode_frame(const Frame& f) {
  std::vector<std::uint8_t> buf(kFrameHeaderSize + f.payload.size() * 4);
  std::uint8_t* p = buf.data();
  auto put = [&p](const void* src, std::size_t n) {
    std::memcpy(p, src, n);
    p += n;
  };
  put(&kFrameMagic, 2);
  put(&kFrameVersion, 1);
  const std::uint8_t type = static_cast<std::uint8_t>(f.type);
  put(&type, 1);
  put(&f.query_id, 8);
  put(&f.group_id, 8);
  put(&f.position, 1);
  put(&f.flags, 1);
  const std::uint32_t len = static_cast<std::uint32_t>(f.payload.size());
  put(&len, 4);
  put(f.payload.data(), f.payload.size() * 4);
  return buf;
}

inline Frame decode_frame(std::span<const std::uint8_t> buf) {
  if (buf.size() < kFrameHeaderSize) throw frame_error("frame: truncated header");
  const std::uint8_t* p = buf.data();
  auto take = [&p](void* dst, std::size_t n) {
    std::memcpy(dst, p, n);
    p += n;
  };
  std::uint16_t magic = 0;
  take(&magic, 2);
  if (magic != kFrameMagic) throw frame_error("frame: bad magic");
  std::uint8_t version = 0;
  take(&version, 1);
  if (version != kFrameVersion) throw frame_error("frame: unsupported version");
  Frame f;
  std::uint8_t type = 0;
  take(&type, 1);
  if (type < 1 || type > 4) throw frame_error("frame: unknown message type");
  f.type = static_cast<MsgType>(type);
  take(&f.query_id, 8);
  take(&f.group_id, 8);
  take(&f.position, 1);
  take(&f.flags, 1);
  std::uint32_t len = 0;
  take(&len, 4);
  if (buf.size() != kFrameHeaderSize + static_cast<std::size_t>(len) * 4)
    throw frame_error("frame: payload length mismatch");
  f.payload.resize(len);
  take(f.payload.data(), static_cast<std::size_t>(len) * 4);
  return f;
}

}  // namespace parm
