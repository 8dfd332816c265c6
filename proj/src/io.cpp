#include "qgfs/io.hpp"

#include <zlib.h>

#include <algorithm>
#include <thread>
#include <cstdlib>

namespace qgfs {

int resolve_threads(int requested) {
    int hw = int(std::thread::hardware_concurrency());
    if (hw <= 0) hw = 1;
    int base = requested == 0 ? hw : std::max(1, requested);
    if (const char* env = std::getenv("QGFS_THREADS")) {
        char* end = nullptr;
        long cap = std::strtol(env, &end, 10);
        if (end != env && cap >= 0) {
            int capped = cap == 0 ? hw : int(cap);
            base = std::min(base, capped);
        }
    }
    return std::max(1, base);
}

}  // namespace qgfs

namespace qgfs::io {

BinaryWriter::BinaryWriter(const std::string& path) : path_(path) {
    f_ = std::fopen(path.c_str(), "wb");
    if (!f_) throw IoError("cannot open for writing: " + path);
    crc_ = uint32_t(crc32(0L, Z_NULL, 0));
}

BinaryWriter::~BinaryWriter() {
    if (f_) std::fclose(f_);
}

void BinaryWriter::bytes(const void* data, size_t n) {
    if (!f_ || finished_) throw IoError("write after finish: " + path_);
    if (n == 0) return;
    if (std::fwrite(data, 1, n, f_) != n) throw IoError("short write: " + path_);
    crc_ = uint32_t(crc32(crc_, static_cast<const Bytef*>(data), uInt(n)));
}

void BinaryWriter::finish() {
    if (finished_) return;
    uint32_t c = crc_;
    if (std::fwrite(&c, 1, 4, f_) != 4) throw IoError("short write: " + path_);
    finished_ = true;
    if (std::fclose(f_) != 0) throw IoError("close failed: " + path_);
    f_ = nullptr;
}

BinaryReader::BinaryReader(const std::string& path) : path_(path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open: " + path);
    std::fseek(f, 0, SEEK_END);
    long n = std::ftell(f);
    std::fseek(f, 0, SEEK_SET);
    buf_.resize(size_t(std::max(0L, n)));
    if (!buf_.empty() && std::fread(buf_.data(), 1, buf_.size(), f) != buf_.size()) {
        std::fclose(f);
        throw IoError("short read: " + path);
    }
    std::fclose(f);
}

void BinaryReader::bytes(void* out, size_t n) {
    if (pos_ + n > buf_.size()) throw IoError("truncated file: " + path_);
    std::memcpy(out, buf_.data() + pos_, n);
    pos_ += n;
}

std::string BinaryReader::str() {
    uint64_t n = u64();
    if (n > remaining()) throw IoError("truncated string in " + path_);
    std::string s(reinterpret_cast<const char*>(buf_.data() + pos_), size_t(n));
    pos_ += size_t(n);
    return s;
}

void BinaryReader::verify_checksum() const {
    if (buf_.size() < 4) throw IoError("file too small for checksum: " + path_);
    uint32_t stored;
    std::memcpy(&stored, buf_.data() + buf_.size() - 4, 4);
    uint32_t actual = uint32_t(crc32(crc32(0L, Z_NULL, 0), buf_.data(), uInt(buf_.size() - 4)));
    if (stored != actual) throw IoError("checksum mismatch: " + path_);
}

void write_ppm(const std::string& path, int width, int height, const std::vector<real>& rgb) {
    if (int64_t(rgb.size()) != int64_t(width) * height * 3)
        throw ContractError("write_ppm: size mismatch");
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path);
    std::fprintf(f, "P6\n%d %d\n255\n", width, height);
    std::vector<unsigned char> row(size_t(width) * 3);
    for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width * 3; ++x) {
            real v = rgb[size_t(y) * width * 3 + x];
            v = std::min(real(1), std::max(real(0), v));
            row[size_t(x)] = (unsigned char)std::lround(double(v) * 255.0);
        }
        if (std::fwrite(row.data(), 1, row.size(), f) != row.size()) {
            std::fclose(f);
            throw IoError("short write: " + path);
        }
    }
    std::fclose(f);
}

void write_raw_planes(const std::string& path, int width, int height, int channels,
                      const std::vector<real>& data) {
    if (int64_t(data.size()) != int64_t(width) * height * channels)
        throw ContractError("write_raw_planes: size mismatch");
    FILE* f = std::fopen(path.c_str(), "wb");
    if (!f) throw IoError("cannot open for writing: " + path);
    std::fwrite("QGFS", 1, 4, f);
    uint32_t dims[3] = {uint32_t(width), uint32_t(height), uint32_t(channels)};
    std::fwrite(dims, 4, 3, f);
    std::vector<float> plane(size_t(width) * height);
    for (int c = 0; c < channels; ++c) {
        for (int64_t i = 0; i < int64_t(width) * height; ++i)
            plane[size_t(i)] = float(data[size_t(i) * channels + c]);
        if (std::fwrite(plane.data(), 4, plane.size(), f) != plane.size()) {
            std::fclose(f);
            throw IoError("short write: " + path);
        }
    }
    std::fclose(f);
}

RawPlanes read_raw_planes(const std::string& path) {
    FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) throw IoError("cannot open: " + path);
    char magic[4];
    uint32_t dims[3];
    if (std::fread(magic, 1, 4, f) != 4 || std::memcmp(magic, "QGFS", 4) != 0 ||
        std::fread(dims, 4, 3, f) != 3) {
        std::fclose(f);
        throw IoError("bad raw plane header: " + path);
    }
    RawPlanes out;
    out.width = int(dims[0]);
    out.height = int(dims[1]);
    out.channels = int(dims[2]);
    size_t n = size_t(out.width) * out.height;
    out.data.assign(n * out.channels, 0.f);
    std::vector<float> plane(n);
    for (int c = 0; c < out.channels; ++c) {
        if (std::fread(plane.data(), 4, n, f) != n) {
            std::fclose(f);
            throw IoError("truncated raw plane file: " + path);
        }
        for (size_t i = 0; i < n; ++i) out.data[i * out.channels + c] = plane[i];
    }
    std::fclose(f);
    return out;
}

}  // namespace qgfs::io
