#include "conceptevo/hashing.hpp"

#include "conceptevo/error.hpp"

#include <array>
#include <fstream>

#include <fmt/format.h>

namespace conceptevo {

std::uint64_t hash_file(const std::filesystem::path& path, std::uint64_t hash) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DependencyError(path.string());
    std::array<char, 1 << 16> buffer{};
    while (in) {
        in.read(buffer.data(), static_cast<std::streamsize>(buffer.size()));
        hash = fnv1a64({buffer.data(), static_cast<std::size_t>(in.gcount())}, hash);
    }
    return hash;
}

std::string to_hex(std::uint64_t value) { return fmt::format("{:016x}", value); }

}  // namespace conceptevo
