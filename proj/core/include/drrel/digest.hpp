#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace drrel {

/// 64-bit FNV-1a over a byte string.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t basis = 0xcbf29ce484222325ULL);

/// Lower-case, zero-padded 16 character hex rendering.
std::string hex64(std::uint64_t value);

inline std::string digest_hex(std::string_view bytes) { return hex64(fnv1a64(bytes)); }

}  // namespace drrel
