#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

namespace tslice {

// Hex SHA-1 of "blob <len>\0" + bytes, as `git hash-object` computes it.
std::string git_blob_hash(std::string_view bytes);
std::string hash_file(const std::filesystem::path& path);
// Hash of a directory tree: sorted relative paths and their blob hashes.
std::string hash_tree(const std::filesystem::path& dir);

// Deterministic seed mixing (splitmix64 finalizer over the combined value).
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt);

}  // namespace tslice
