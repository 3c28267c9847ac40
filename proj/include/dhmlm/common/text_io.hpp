#pragma once

#include <charconv>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "dhmlm/common/error.hpp"

namespace dhmlm::text {

std::vector<std::string_view> split(std::string_view s, char sep);

std::int64_t parse_int(std::string_view s);
double parse_double(std::string_view s);

template <class Int>
std::vector<Int> parse_ints(std::string_view s) {
    std::vector<Int> out;
    for (auto part : split(s, ' ')) {
        if (!part.empty()) {
            out.push_back(static_cast<Int>(parse_int(part)));
        }
    }
    return out;
}

template <class Int>
void append_ints(std::string& line, std::span<const Int> values) {
    char buf[24];
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (i != 0) {
            line += ' ';
        }
        auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), values[i]);
        line.append(buf, end);
    }
}

template <class Int>
void append_ints(std::string& line, const std::vector<Int>& values) {
    append_ints(line, std::span<const Int>(values));
}

/// Shortest round-trip representation.
std::string format_double(double v);

/// Writes through a temporary file in the same directory and renames it into
/// place, so readers never observe a partial file.
void write_file_atomic(const std::string& path, const std::function<void(std::ostream&)>& writer);

std::string read_file(const std::string& path);

/// 64-bit FNV-1a over a file's bytes, as 16 hex digits.
std::string file_checksum(const std::string& path);

}  // namespace dhmlm::text
