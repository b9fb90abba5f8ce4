#include "sta/io.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <limits>

#include <zlib.h>

#include "sta/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "serialized formats are pinned to little-endian hosts");
static_assert(std::numeric_limits<double>::is_iec559, "IEEE-754 doubles required");

namespace sta {

uint32_t crc32_bytes(std::span<const unsigned char> bytes) {
    uLong crc = ::crc32(0L, Z_NULL, 0);
    size_t off = 0;
    while (off < bytes.size()) {
        uInt chunk = static_cast<uInt>(std::min<size_t>(bytes.size() - off, 1u << 30));
        crc = ::crc32(crc, bytes.data() + off, chunk);
        off += chunk;
    }
    return static_cast<uint32_t>(crc);
}

void ByteWriter::u8(uint8_t v) { buf_.push_back(v); }

void ByteWriter::u32(uint32_t v) {
    for (int i = 0; i < 4; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void ByteWriter::u64(uint64_t v) {
    for (int i = 0; i < 8; ++i) buf_.push_back(static_cast<unsigned char>(v >> (8 * i)));
}

void ByteWriter::f64(double v) {
    uint64_t bits;
    std::memcpy(&bits, &v, 8);
    u64(bits);
}

void ByteWriter::raw(const void* p, size_t n) {
    const auto* b = static_cast<const unsigned char*>(p);
    buf_.insert(buf_.end(), b, b + n);
}

void ByteWriter::str(std::string_view s) {
    u64(s.size());
    raw(s.data(), s.size());
}

void ByteWriter::f64_array(std::span<const double> values) {
    u64(values.size());
    for (double v : values) f64(v);
}

void ByteReader::need(size_t n) const {
    if (buf_.size() - pos_ < n) {
        throw FormatError("truncated input: need " + std::to_string(n) + " bytes at offset " +
                          std::to_string(pos_) + ", have " + std::to_string(buf_.size() - pos_));
    }
}

uint8_t ByteReader::u8() {
    need(1);
    return buf_[pos_++];
}

uint32_t ByteReader::u32() {
    need(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
}

uint64_t ByteReader::u64() {
    need(8);
    uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(buf_[pos_ + i]) << (8 * i);
    pos_ += 8;
    return v;
}

double ByteReader::f64() {
    uint64_t bits = u64();
    double v;
    std::memcpy(&v, &bits, 8);
    return v;
}

void ByteReader::raw(void* p, size_t n) {
    need(n);
    std::memcpy(p, buf_.data() + pos_, n);
    pos_ += n;
}

std::string ByteReader::str() {
    uint64_t n = u64();
    if (n > remaining()) {
        throw FormatError("string length " + std::to_string(n) + " at offset " +
                          std::to_string(pos_ - 8) + " exceeds remaining bytes");
    }
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), static_cast<size_t>(n));
    pos_ += static_cast<size_t>(n);
    return s;
}

std::vector<double> ByteReader::f64_array() {
    uint64_t n = u64();
    if (n > remaining() / 8) {
        throw FormatError("array length " + std::to_string(n) + " at offset " +
                          std::to_string(pos_ - 8) + " exceeds remaining bytes");
    }
    std::vector<double> out(static_cast<size_t>(n));
    for (auto& v : out) v = f64();
    return out;
}

std::span<const unsigned char> ByteReader::slice(size_t from, size_t to) const {
    if (from > to || to > buf_.size()) {
        throw FormatError("invalid slice [" + std::to_string(from) + ", " + std::to_string(to) +
                          ") of a " + std::to_string(buf_.size()) + "-byte buffer");
    }
    return buf_.subspan(from, to - from);
}

void ByteReader::expect_end() const {
    if (pos_ != buf_.size()) {
        throw FormatError(std::to_string(buf_.size() - pos_) + " unexpected trailing bytes at offset " +
                          std::to_string(pos_));
    }
}

std::string canonical_json(const json& j) {
    // Round-trip through the map-backed document type to sort object keys at
    // every level, then dump compactly.
    return nlohmann::json::parse(j.dump()).dump();
}

std::string config_hash(const json& j) {
    std::string text = canonical_json(j);
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : text) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    static const char* hex = "0123456789abcdef";
    std::string out(16, '0');
    for (int i = 15; i >= 0; --i) {
        out[static_cast<size_t>(i)] = hex[h & 0xF];
        h >>= 4;
    }
    return out;
}

std::vector<unsigned char> read_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw FormatError("cannot open file: " + path.string());
    std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                     std::istreambuf_iterator<char>());
    if (in.bad()) throw FormatError("failed reading file: " + path.string());
    return bytes;
}

void write_file(const std::filesystem::path& path, std::span<const unsigned char> bytes) {
    if (path.has_parent_path()) {
        std::filesystem::create_directories(path.parent_path());
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw FormatError("cannot open file for writing: " + path.string());
    out.write(reinterpret_cast<const char*>(bytes.data()),
              static_cast<std::streamsize>(bytes.size()));
    if (!out) throw FormatError("failed writing file: " + path.string());
}

void write_text_file(const std::filesystem::path& path, std::string_view text) {
    write_file(path, {reinterpret_cast<const unsigned char*>(text.data()), text.size()});
}

}  // namespace sta
