#include "dhmlm/common/text_io.hpp"

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "dhmlm/common/rng.hpp"

namespace dhmlm::text {

std::vector<std::string_view> split(std::string_view s, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    for (;;) {
        const std::size_t pos = s.find(sep, start);
        if (pos == std::string_view::npos) {
            out.push_back(s.substr(start));
            return out;
        }
        out.push_back(s.substr(start, pos - start));
        start = pos + 1;
    }
}

std::int64_t parse_int(std::string_view s) {
    std::int64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc() && ptr == s.data() + s.size(), ErrorKind::Io,
            "bad integer '" + std::string(s) + "'");
    return v;
}

double parse_double(std::string_view s) {
    double v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    require(ec == std::errc() && ptr == s.data() + s.size(), ErrorKind::Io,
            "bad number '" + std::string(s) + "'");
    return v;
}

std::string format_double(double v) {
    char buf[32];
    auto [end, ec] = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, end);
}

void write_file_atomic(const std::string& path, const std::function<void(std::ostream&)>& writer) {
    namespace fs = std::filesystem;
    const fs::path target(path);
    if (target.has_parent_path()) {
        fs::create_directories(target.parent_path());
    }
    const fs::path tmp = target.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        require(static_cast<bool>(out), ErrorKind::Io, "cannot write " + tmp.string());
        writer(out);
        out.flush();
        require(static_cast<bool>(out), ErrorKind::Io, "write failed for " + tmp.string());
    }
    fs::rename(tmp, target);
}

std::string read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    require(static_cast<bool>(in), ErrorKind::NotFound, "cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

std::string file_checksum(const std::string& path) {
    const std::string bytes = read_file(path);
    const std::uint64_t h = tag_hash(bytes);
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

}  // namespace dhmlm::text
