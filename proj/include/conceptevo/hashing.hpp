#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace conceptevo {

/// 64-bit FNV-1a. Stable across platforms, unlike std::hash.
constexpr std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t hash = 0xcbf29ce484222325ULL) noexcept {
    for (unsigned char c : bytes) {
        hash ^= c;
        hash *= 0x100000001b3ULL;
    }
    return hash;
}

/// FNV-1a over the contents of a file; throws DependencyError when missing.
std::uint64_t hash_file(const std::filesystem::path& path, std::uint64_t hash = 0xcbf29ce484222325ULL);

std::string to_hex(std::uint64_t value);

}  // namespace conceptevo
