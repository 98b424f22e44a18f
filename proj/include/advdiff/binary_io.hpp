#pragma once

// Little-endian byte buffers with a trailing FNV-1a checksum, shared by the
// dataset and checkpoint containers.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace advdiff {

static_assert(std::endian::native == std::endian::little, "container formats assume a little-endian host");

class ByteWriter {
public:
    void bytes(const void* p, std::size_t n) {
        const auto* b = static_cast<const unsigned char*>(p);
        buf_.insert(buf_.end(), b, b + n);
    }
    template <typename T>
    void pod(T v) { bytes(&v, sizeof v); }
    void u8(std::uint8_t v) { pod(v); }
    void u32(std::uint32_t v) { pod(v); }
    void i32(std::int32_t v) { pod(v); }
    void u64(std::uint64_t v) { pod(v); }
    void f64(double v) { pod(v); }
    void str(std::string_view s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }
    void finish_with_checksum();
    const std::vector<unsigned char>& buffer() const { return buf_; }
    void write_file(const std::filesystem::path& path) const;

private:
    std::vector<unsigned char> buf_;
};

/// Reads a buffer whose checksum has been verified; every read past the end
/// throws CorruptFile.
class ByteReader {
public:
    ByteReader(std::vector<unsigned char> data, std::string origin) : buf_(std::move(data)), origin_(std::move(origin)) {}

    /// Loads a file, verifies and strips the trailing checksum.
    static ByteReader from_file_checked(const std::filesystem::path& path);

    void read(void* out, std::size_t n);
    template <typename T>
    T pod() {
        T v;
        read(&v, sizeof v);
        return v;
    }
    std::uint8_t u8() { return pod<std::uint8_t>(); }
    std::uint32_t u32() { return pod<std::uint32_t>(); }
    std::int32_t i32() { return pod<std::int32_t>(); }
    std::uint64_t u64() { return pod<std::uint64_t>(); }
    double f64() { return pod<double>(); }
    std::string str();

    void expect_magic(std::string_view magic);
    void expect_end() const;
    std::size_t remaining() const { return buf_.size() - pos_; }
    const std::string& origin() const { return origin_; }

private:
    std::vector<unsigned char> buf_;
    std::size_t pos_ = 0;
    std::string origin_;
};

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path);
/// FNV-1a of a whole file, used for provenance manifests.
std::uint64_t file_hash(const std::filesystem::path& path);

}  // namespace advdiff
