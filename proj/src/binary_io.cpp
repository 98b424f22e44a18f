#include "advdiff/binary_io.hpp"

#include <fstream>
#include <iterator>

#include "advdiff/error.hpp"
#include "advdiff/rng.hpp"

namespace advdiff {

void ByteWriter::finish_with_checksum() { u64(fnv1a64(buf_)); }

void ByteWriter::write_file(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(buf_.data()), static_cast<std::streamsize>(buf_.size()));
    if (!out) throw IoError("failed writing " + path.string());
}

std::vector<unsigned char> read_file_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::uint64_t file_hash(const std::filesystem::path& path) { return fnv1a64(read_file_bytes(path)); }

ByteReader ByteReader::from_file_checked(const std::filesystem::path& path) {
    auto data = read_file_bytes(path);
    if (data.size() < 8) throw CorruptFile(path.string() + ": file too short");
    std::uint64_t stored;
    std::memcpy(&stored, data.data() + data.size() - 8, 8);
    data.resize(data.size() - 8);
    if (fnv1a64(data) != stored) throw CorruptFile(path.string() + ": checksum mismatch (truncated or corrupt)");
    return ByteReader(std::move(data), path.string());
}

void ByteReader::read(void* out, std::size_t n) {
    if (n > remaining()) throw CorruptFile(origin_ + ": unexpected end of data");
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
}

std::string ByteReader::str() {
    const auto n = u32();
    if (n > remaining()) throw CorruptFile(origin_ + ": string length out of range");
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), n);
    pos_ += n;
    return s;
}

void ByteReader::expect_magic(std::string_view magic) {
    std::string got(magic.size(), '\0');
    read(got.data(), got.size());
    if (got != magic) throw CorruptFile(origin_ + ": bad magic, expected " + std::string(magic));
}

void ByteReader::expect_end() const {
    if (pos_ != buf_.size()) throw CorruptFile(origin_ + ": trailing bytes after payload");
}

}  // namespace advdiff
