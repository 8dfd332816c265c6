#pragma once

#include "qgfs/common.hpp"

#include <cstdio>
#include <cstring>
#include <string>
#include <vector>

namespace qgfs::io {

// Little-endian binary writer that tracks a running CRC32 of everything
// written. finish() appends the checksum as the final 4 bytes.
class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path);
    ~BinaryWriter();
    BinaryWriter(const BinaryWriter&) = delete;
    BinaryWriter& operator=(const BinaryWriter&) = delete;

    void bytes(const void* data, size_t n);
    void u8(uint8_t v)   { bytes(&v, 1); }
    void u32(uint32_t v) { bytes(&v, 4); }
    void u64(uint64_t v) { bytes(&v, 8); }
    void i64(int64_t v)  { bytes(&v, 8); }
    void f32(float v)    { bytes(&v, 4); }
    void f64(double v)   { bytes(&v, 8); }
    void str(const std::string& s) { u64(s.size()); bytes(s.data(), s.size()); }
    template <class T> void vec(const std::vector<T>& v) {
        static_assert(std::is_trivially_copyable_v<T>);
        bytes(v.data(), v.size() * sizeof(T));
    }
    // Writes the trailing CRC32 and closes the file.
    void finish();

private:
    FILE* f_ = nullptr;
    uint32_t crc_ = 0;
    bool finished_ = false;
    std::string path_;
};

// Reader counterpart; verify_checksum() checks the trailing CRC32 over the
// whole preceding file, catching truncation and corruption.
class BinaryReader {
public:
    explicit BinaryReader(const std::string& path);

    void bytes(void* out, size_t n);
    uint8_t u8()   { uint8_t v; bytes(&v, 1); return v; }
    uint32_t u32() { uint32_t v; bytes(&v, 4); return v; }
    uint64_t u64() { uint64_t v; bytes(&v, 8); return v; }
    int64_t i64()  { int64_t v; bytes(&v, 8); return v; }
    float f32()    { float v; bytes(&v, 4); return v; }
    double f64()   { double v; bytes(&v, 8); return v; }
    std::string str();
    template <class T> void vec(std::vector<T>& v, size_t count) {
        static_assert(std::is_trivially_copyable_v<T>);
        v.resize(count);
        bytes(v.data(), count * sizeof(T));
    }
    void verify_checksum() const;
    size_t remaining() const { return buf_.size() - pos_; }

private:
    std::vector<unsigned char> buf_;
    size_t pos_ = 0;
    std::string path_;
};

// 8-bit binary PPM (P6). rgb is H*W*3 row-major in [0,1]; values are clamped.
void write_ppm(const std::string& path, int width, int height, const std::vector<real>& rgb);

// Raw float plane dump: magic "QGFS", u32 width/height/channels, then
// channel-planar f32 data (little-endian). data is H*W*C interleaved in memory.
void write_raw_planes(const std::string& path, int width, int height, int channels,
                      const std::vector<real>& data);
struct RawPlanes {
    int width = 0, height = 0, channels = 0;
    std::vector<float> data;  // interleaved H*W*C
};
RawPlanes read_raw_planes(const std::string& path);

}  // namespace qgfs::io
