#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ophmm {

// Shortest decimal that parses back to the identical double.
std::string format_double(double value);

// Strict full-field parse; nullopt on any trailing garbage or non-finite text.
std::optional<double> parse_double(std::string_view text);

// 64-bit FNV-1a, used for data digests and cache keys. Stable across builds.
std::uint64_t fnv1a64(std::string_view bytes, std::uint64_t seed = 0xcbf29ce484222325ULL);
std::string hex_digest(std::uint64_t value);

// SplitMix64 finalizer; combines a base seed with a stream id into an
// independent seed.
std::uint64_t derive_seed(std::uint64_t base, std::uint64_t stream);

std::vector<std::string> split_fields(std::string_view line, char delimiter = ',');
std::string_view trim(std::string_view text);

std::string read_text_file(const std::filesystem::path& path);
void write_text_file(const std::filesystem::path& path, std::string_view contents);

}  // namespace ophmm
