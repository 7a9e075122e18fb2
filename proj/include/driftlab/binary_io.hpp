#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace driftlab {

/// Little-endian encoder used by every binary format of the project.
class BinaryWriter {
  public:
    void magic(std::string_view tag);
    void u32(std::uint32_t value);
    void f64(double value);
    void f64s(std::span<const double> values);
    void raw(std::string_view bytes);

    const std::vector<char>& bytes() const { return buffer_; }

  private:
    std::vector<char> buffer_;
};

/// Little-endian decoder; throws FormatError on truncation or bad magic.
class BinaryReader {
  public:
    explicit BinaryReader(std::vector<char> bytes, std::string what = "file");

    void expect_magic(std::string_view tag);
    std::uint32_t u32();
    double f64();
    void f64s(std::span<double> out);
    std::string raw(std::size_t n);

    std::size_t remaining() const { return buffer_.size() - pos_; }
    /// Throws FormatError unless the payload has been consumed exactly.
    void expect_end() const;

  private:
    void require(std::size_t n, const char* field) const;

    std::vector<char> buffer_;
    std::size_t pos_ = 0;
    std::string what_;
};

/// Reads a whole file; throws IoError when it cannot be opened.
std::vector<char> read_file_bytes(const std::string& path);
void write_file_bytes(const std::string& path, const std::vector<char>& bytes);
void write_text_file(const std::string& path, const std::string& text);
std::string read_text_file(const std::string& path);

} // namespace driftlab
