#pragma once

#include <cstdint>
#include <string>
#include <string_view>

namespace calclab {

// FNV-1a, used for split assignment and artifact/manifest hashes.
inline std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 14695981039346656037ULL) {
    std::uint64_t h = seed;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 1099511628211ULL;
    }
    return h;
}

std::string hex64(std::uint64_t v);
std::string hash_file(const std::string& path);  // fnv1a64 over the file bytes, hex

}  // namespace calclab
