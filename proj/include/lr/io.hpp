#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

#include "lr/error.hpp"

namespace lr::io {

// 64-bit FNV-1a, hex-encoded where reports need a digest.
uint64_t fnv1a64(const void* bytes, size_t len);
uint64_t fnv1a64(const std::string& s);
std::string hex64(uint64_t v);
uint64_t file_digest(const std::string& path);

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const void* bytes, size_t len);
std::string read_text(const std::string& path);
void write_text(const std::string& path, const std::string& text);
bool file_exists(const std::string& path);

// Checkpoint container: magic "LRCK", u32 version (little-endian), u32 header
// length, UTF-8 JSON header, then the raw little-endian float32 blob. The
// header must declare "blob_len" (number of floats). See docs/formats.md.
inline constexpr uint32_t kContainerVersion = 1;

struct Container {
    std::string header_json;
    std::vector<float> blob;
};

void write_container(const std::string& path, const std::string& header_json,
                     std::span<const float> blob);
Container read_container(const std::string& path);

}  // namespace lr::io
