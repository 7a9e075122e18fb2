#include "driftlab/binary_io.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>

#include "driftlab/error.hpp"

namespace driftlab {
namespace {

template <class T>
T to_little(T value) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(value);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return value;
}

template <class T>
void append(std::vector<char>& buffer, T value) {
    const auto le = to_little(value);
    const auto bytes = std::bit_cast<std::array<char, sizeof(T)>>(le);
    buffer.insert(buffer.end(), bytes.begin(), bytes.end());
}

} // namespace

void BinaryWriter::magic(std::string_view tag) { raw(tag); }

void BinaryWriter::u32(std::uint32_t value) { append(buffer_, value); }

void BinaryWriter::f64(double value) { append(buffer_, value); }

void BinaryWriter::f64s(std::span<const double> values) {
    buffer_.reserve(buffer_.size() + values.size() * sizeof(double));
    for (double v : values) {
        append(buffer_, v);
    }
}

void BinaryWriter::raw(std::string_view bytes) { buffer_.insert(buffer_.end(), bytes.begin(), bytes.end()); }

BinaryReader::BinaryReader(std::vector<char> bytes, std::string what)
    : buffer_(std::move(bytes)), what_(std::move(what)) {}

void BinaryReader::require(std::size_t n, const char* field) const {
    if (remaining() < n) {
        throw FormatError(what_ + ": truncated payload while reading " + field);
    }
}

void BinaryReader::expect_magic(std::string_view tag) {
    if (remaining() < tag.size() || std::string_view(buffer_.data() + pos_, tag.size()) != tag) {
        throw FormatError(what_ + ": bad magic, expected \"" + std::string(tag) + "\"");
    }
    pos_ += tag.size();
}

std::uint32_t BinaryReader::u32() {
    require(4, "u32");
    std::array<char, 4> bytes{};
    std::memcpy(bytes.data(), buffer_.data() + pos_, 4);
    pos_ += 4;
    return to_little(std::bit_cast<std::uint32_t>(bytes));
}

double BinaryReader::f64() {
    require(8, "f64");
    std::array<char, 8> bytes{};
    std::memcpy(bytes.data(), buffer_.data() + pos_, 8);
    pos_ += 8;
    return to_little(std::bit_cast<double>(bytes));
}

void BinaryReader::f64s(std::span<double> out) {
    require(out.size() * 8, "f64 payload");
    for (double& v : out) {
        v = f64();
    }
}

std::string BinaryReader::raw(std::size_t n) {
    require(n, "bytes");
    std::string s(buffer_.data() + pos_, n);
    pos_ += n;
    return s;
}

void BinaryReader::expect_end() const {
    if (remaining() != 0) {
        throw FormatError(what_ + ": dimension mismatch, " + std::to_string(remaining()) + " trailing bytes");
    }
}

std::vector<char> read_file_bytes(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::string& path, const std::vector<char>& bytes) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) {
        throw IoError("cannot write " + path);
    }
    out << text;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open " + path);
    }
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

} // namespace driftlab
