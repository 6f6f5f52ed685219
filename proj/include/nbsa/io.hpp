#pragma once

// Little-endian binary helpers shared by the checkpoint and feature formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>

#include "nbsa/errors.hpp"

namespace nbsa::io {

static_assert(std::endian::native == std::endian::little, "binary formats assume a little-endian host");

std::uint32_t crc32(std::string_view bytes);

inline void put_u32(std::string& out, std::uint32_t v) {
    char buf[4];
    std::memcpy(buf, &v, 4);
    out.append(buf, 4);
}

inline void put_f64(std::string& out, double v) {
    char buf[8];
    std::memcpy(buf, &v, 8);
    out.append(buf, 8);
}

/// Sequential reader that throws FormatError on truncation.
class Reader {
public:
    Reader(std::string_view bytes, std::string what) : bytes_(bytes), what_(std::move(what)) {}

    std::string_view take(std::size_t n) {
        if (bytes_.size() - pos_ < n) {
            throw FormatError(what_ + ": truncated at byte " + std::to_string(pos_) + " (needed " +
                              std::to_string(n) + ", have " + std::to_string(bytes_.size() - pos_) + ")");
        }
        const std::string_view s = bytes_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::uint32_t u32() {
        std::uint32_t v;
        std::memcpy(&v, take(4).data(), 4);
        return v;
    }

    std::size_t position() const { return pos_; }
    std::size_t remaining() const { return bytes_.size() - pos_; }

private:
    std::string_view bytes_;
    std::string what_;
    std::size_t pos_ = 0;
};

inline double f64_at(std::string_view payload, std::size_t offset) {
    double v;
    std::memcpy(&v, payload.data() + offset, 8);
    return v;
}

/// Whole file as bytes; FormatError naming the path when unreadable.
std::string read_file(const std::filesystem::path& path);

/// Writes through a temporary sibling and renames, so a failed write never
/// leaves a partial file at `path`.
void write_file(const std::filesystem::path& path, std::string_view bytes);

}  // namespace nbsa::io
