#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

namespace tstream {

// CRC-32C (Castagnoli, reflected polynomial 0x82F63B78).
// `crc32c_extend` continues a running checksum; start from 0.
std::uint32_t crc32c_extend(std::uint32_t crc, std::span<const std::byte> data) noexcept;

inline std::uint32_t crc32c(std::span<const std::byte> data) noexcept {
  return crc32c_extend(0, data);
}

}  // namespace tstream
