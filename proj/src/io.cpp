#include "lr/io.hpp"

#include <nlohmann/json.hpp>

#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>

namespace lr::io {

uint64_t fnv1a64(const void* bytes, size_t len) {
    const auto* p = static_cast<const uint8_t*>(bytes);
    uint64_t h = 0xCBF29CE484222325ull;
    for (size_t i = 0; i < len; ++i) {
        h ^= p[i];
        h *= 0x100000001B3ull;
    }
    return h;
}

uint64_t fnv1a64(const std::string& s) { return fnv1a64(s.data(), s.size()); }

std::string hex64(uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return std::string(buf);
}

uint64_t file_digest(const std::string& path) {
    const auto bytes = read_file(path);
    return fnv1a64(bytes.data(), bytes.size());
}

std::vector<uint8_t> read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError(IoError::Kind::open, "cannot open " + path);
    in.seekg(0, std::ios::end);
    const auto len = static_cast<size_t>(in.tellg());
    in.seekg(0, std::ios::beg);
    std::vector<uint8_t> bytes(len);
    if (len > 0) in.read(reinterpret_cast<char*>(bytes.data()), static_cast<std::streamsize>(len));
    if (!in) throw IoError(IoError::Kind::other, "failed to read " + path);
    return bytes;
}

void write_file(const std::string& path, const void* bytes, size_t len) {
    const auto parent = std::filesystem::path(path).parent_path();
    if (!parent.empty()) std::filesystem::create_directories(parent);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError(IoError::Kind::open, "cannot open " + path + " for writing");
    out.write(static_cast<const char*>(bytes), static_cast<std::streamsize>(len));
    if (!out) throw IoError(IoError::Kind::other, "failed to write " + path);
}

std::string read_text(const std::string& path) {
    const auto bytes = read_file(path);
    return std::string(bytes.begin(), bytes.end());
}

void write_text(const std::string& path, const std::string& text) {
    write_file(path, text.data(), text.size());
}

bool file_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::exists(path, ec);
}

namespace {

constexpr char kMagic[4] = {'L', 'R', 'C', 'K'};

uint32_t read_u32_le(const uint8_t* p) {
    return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
           (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

void append_u32_le(std::vector<uint8_t>& out, uint32_t v) {
    out.push_back(static_cast<uint8_t>(v & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 8) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 16) & 0xFF));
    out.push_back(static_cast<uint8_t>((v >> 24) & 0xFF));
}

}  // namespace

void write_container(const std::string& path, const std::string& header_json,
                     std::span<const float> blob) {
    std::vector<uint8_t> out;
    out.reserve(12 + header_json.size() + blob.size() * 4);
    out.insert(out.end(), kMagic, kMagic + 4);
    append_u32_le(out, kContainerVersion);
    append_u32_le(out, static_cast<uint32_t>(header_json.size()));
    out.insert(out.end(), header_json.begin(), header_json.end());
    const size_t blob_off = out.size();
    out.resize(out.size() + blob.size() * 4);
    // little-endian host assumed; documented in docs/formats.md
    std::memcpy(out.data() + blob_off, blob.data(), blob.size() * 4);
    write_file(path, out.data(), out.size());
}

Container read_container(const std::string& path) {
    const auto bytes = read_file(path);
    if (bytes.size() < 12) throw IoError(IoError::Kind::truncated, path + ": file too short");
    if (std::memcmp(bytes.data(), kMagic, 4) != 0) {
        throw IoError(IoError::Kind::magic, path + ": bad magic bytes");
    }
    const uint32_t version = read_u32_le(bytes.data() + 4);
    if (version != kContainerVersion) {
        throw IoError(IoError::Kind::version,
                      path + ": unsupported version " + std::to_string(version));
    }
    const uint32_t header_len = read_u32_le(bytes.data() + 8);
    if (bytes.size() < 12 + static_cast<size_t>(header_len)) {
        throw IoError(IoError::Kind::truncated, path + ": header truncated");
    }
    Container c;
    c.header_json.assign(bytes.begin() + 12, bytes.begin() + 12 + header_len);

    int64_t declared = -1;
    try {
        const auto header = nlohmann::json::parse(c.header_json);
        declared = header.at("blob_len").get<int64_t>();
    } catch (const nlohmann::json::exception& e) {
        throw IoError(IoError::Kind::header, path + ": bad header: " + e.what());
    }
    const size_t avail = bytes.size() - 12 - header_len;
    if (declared < 0 || avail % 4 != 0) {
        throw IoError(IoError::Kind::consistency, path + ": malformed blob");
    }
    if (avail < static_cast<size_t>(declared) * 4) {
        throw IoError(IoError::Kind::truncated,
                      path + ": blob has " + std::to_string(avail / 4) + " floats, header declares " +
                          std::to_string(declared));
    }
    if (avail != static_cast<size_t>(declared) * 4) {
        throw IoError(IoError::Kind::consistency,
                      path + ": blob has " + std::to_string(avail / 4) + " floats, header declares " +
                          std::to_string(declared));
    }
    c.blob.resize(static_cast<size_t>(declared));
    std::memcpy(c.blob.data(), bytes.data() + 12 + header_len, avail);
    return c;
}

}  // namespace lr::io
