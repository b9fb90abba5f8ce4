#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

namespace sta {

using json = nlohmann::ordered_json;

// CRC-32 (zlib polynomial) of a byte range.
uint32_t crc32_bytes(std::span<const unsigned char> bytes);

// Little-endian binary builder used by the checkpoint and scene-file writers.
class ByteWriter {
public:
    void u8(uint8_t v);
    void u32(uint32_t v);
    void u64(uint64_t v);
    void f64(double v);
    void raw(const void* p, size_t n);
    void str(std::string_view s);                    // u64 length + bytes
    void f64_array(std::span<const double> values);  // u64 count + payload

    const std::vector<unsigned char>& bytes() const { return buf_; }
    size_t size() const { return buf_.size(); }

private:
    std::vector<unsigned char> buf_;
};

// Little-endian reader over a byte range; every primitive read throws
// FormatError naming the byte offset when the buffer is too short.
class ByteReader {
public:
    explicit ByteReader(std::span<const unsigned char> bytes) : buf_(bytes) {}

    uint8_t u8();
    uint32_t u32();
    uint64_t u64();
    double f64();
    void raw(void* p, size_t n);
    std::string str();
    std::vector<double> f64_array();

    size_t pos() const { return pos_; }
    size_t remaining() const { return buf_.size() - pos_; }
    std::span<const unsigned char> slice(size_t from, size_t to) const;
    void expect_end() const;

private:
    void need(size_t n) const;
    std::span<const unsigned char> buf_;
    size_t pos_ = 0;
};

// Compact JSON text with object keys sorted, so equal configurations always
// serialize to equal bytes.
std::string canonical_json(const json& j);

// 16-hex-digit FNV-1a hash of the canonical JSON text; used to stamp outputs
// with the configuration that produced them.
std::string config_hash(const json& j);

std::vector<unsigned char> read_file(const std::filesystem::path& path);
void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes);
void write_text_file(const std::filesystem::path& path, std::string_view text);

}  // namespace sta
