#pragma once

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace ampse {

// 64-bit FNV-1a; used for content hashes of packages and artifacts.
inline std::uint64_t fnv1a(std::string_view data, std::uint64_t h = 0xcbf29ce484222325ULL) {
    for (unsigned char c : data) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(std::uint64_t h);

std::vector<std::string> split_ws(std::string_view line);
std::vector<std::string> split_char(std::string_view line, char sep);

double parse_real(std::string_view tok, const std::string& context);
std::int64_t parse_int(std::string_view tok, const std::string& context);
std::uint64_t parse_u64(std::string_view tok, const std::string& context);

// Shortest decimal that round-trips the double exactly.
std::string format_real(double v);

std::string read_file(const std::filesystem::path& path);

// Crash-safe write: temp file in the target directory, then rename.
void atomic_write(const std::filesystem::path& path, std::string_view content);

} // namespace ampse
