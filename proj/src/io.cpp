#include "camf/io.hpp"

#include <zlib.h>

#include <cerrno>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "camf/error.hpp"

namespace camf {

namespace fs = std::filesystem;

bool ends_with(std::string_view s, std::string_view suffix) {
    return s.size() >= suffix.size() && s.substr(s.size() - suffix.size()) == suffix;
}

namespace {

std::string read_gzip(const std::string& path) {
    gzFile f = gzopen(path.c_str(), "rb");
    if (!f) throw DataError("cannot open " + path);
    std::string out;
    char buf[1 << 16];
    int n;
    while ((n = gzread(f, buf, sizeof buf)) > 0) out.append(buf, static_cast<std::size_t>(n));
    int err = Z_OK;
    const char* msg = gzerror(f, &err);
    const bool failed = n < 0 || (err != Z_OK && err != Z_STREAM_END);
    const std::string detail = failed ? msg : "";
    gzclose(f);
    if (failed) throw DataError("corrupt gzip stream in " + path + ": " + detail);
    return out;
}

std::string gzip_bytes(std::string_view content) {
    z_stream zs{};
    // window bits 15 + 16 selects the gzip wrapper
    if (deflateInit2(&zs, Z_DEFAULT_COMPRESSION, Z_DEFLATED, 15 + 16, 8, Z_DEFAULT_STRATEGY) != Z_OK) {
        throw Error("deflateInit2 failed");
    }
    std::string out(deflateBound(&zs, static_cast<uLong>(content.size())) + 32, '\0');
    zs.next_in = reinterpret_cast<Bytef*>(const_cast<char*>(content.data()));
    zs.avail_in = static_cast<uInt>(content.size());
    zs.next_out = reinterpret_cast<Bytef*>(out.data());
    zs.avail_out = static_cast<uInt>(out.size());
    const int rc = deflate(&zs, Z_FINISH);
    const auto written = zs.total_out;
    deflateEnd(&zs);
    if (rc != Z_STREAM_END) throw Error("gzip compression failed");
    out.resize(written);
    return out;
}

}  // namespace

std::string read_file(const std::string& path) {
    if (!fs::exists(path)) throw DataError("no such file: " + path);
    if (ends_with(path, ".gz")) return read_gzip(path);
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file_atomic(const std::string& path, std::string_view content) {
    const fs::path target(path);
    if (target.has_parent_path()) fs::create_directories(target.parent_path());
    const std::string tmp = path + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw Error("cannot write " + tmp + ": " + std::strerror(errno));
        if (ends_with(path, ".gz")) {
            const std::string z = gzip_bytes(content);
            out.write(z.data(), static_cast<std::streamsize>(z.size()));
        } else {
            out.write(content.data(), static_cast<std::streamsize>(content.size()));
        }
        out.flush();
        if (!out) throw Error("short write to " + tmp);
    }
    fs::rename(tmp, target);
}

}  // namespace camf
