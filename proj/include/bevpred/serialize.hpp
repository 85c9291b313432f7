#pragma once

#include <cstdint>
#include <iostream>
#include <stdexcept>
#include <string>
#include <utility>

#include "bevpred/tensor.hpp"

namespace bevpred {

// File-format faults are split by cause so callers (and tests) can tell a
// stale format from a damaged file.
struct FileFormatError : std::runtime_error {
    explicit FileFormatError(const std::string& msg) : std::runtime_error(msg) {}
};
struct VersionError : FileFormatError {
    explicit VersionError(const std::string& msg) : FileFormatError(msg) {}
};
struct TruncatedError : FileFormatError {
    explicit TruncatedError(const std::string& msg) : FileFormatError(msg) {}
};
struct ChecksumError : FileFormatError {
    explicit ChecksumError(const std::string& msg) : FileFormatError(msg) {}
};

namespace io {

uint32_t crc32(const void* data, size_t n, uint32_t running = 0xFFFFFFFFu);
inline uint32_t crc32_final(uint32_t running) { return running ^ 0xFFFFFFFFu; }

// Little-endian sink; optionally folds every written byte into a CRC.
class Sink {
public:
    explicit Sink(std::ostream& os) : os_(os) {}
    void put(const void* p, size_t n);
    void u8(uint8_t v) { put(&v, 1); }
    void u16(uint16_t v) { put(&v, 2); }
    void u32(uint32_t v) { put(&v, 4); }
    void f32(float v) { put(&v, 4); }
    void f64(double v) { put(&v, 8); }
    void str(const std::string& s);  // u16 length + bytes

    void crc_reset() { crc_ = 0xFFFFFFFFu; }
    uint32_t crc_value() const { return crc32_final(crc_); }
    void write_crc();  // appends the running CRC (not folded into itself)

private:
    std::ostream& os_;
    uint32_t crc_ = 0xFFFFFFFFu;
};

// Little-endian source; throws TruncatedError on short reads.
class Source {
public:
    explicit Source(std::istream& is) : is_(is) {}
    void get(void* p, size_t n);
    uint8_t u8();
    uint16_t u16();
    uint32_t u32();
    float f32();
    double f64();
    std::string str();

    void crc_reset() { crc_ = 0xFFFFFFFFu; }
    uint32_t crc_value() const { return crc32_final(crc_); }
    void check_crc(const std::string& what);  // reads stored CRC, compares
    bool at_eof();

private:
    std::istream& is_;
    uint32_t crc_ = 0xFFFFFFFFu;
};

// Shared named-tensor block: u16 name length, name bytes, u8 rank,
// u32 extents, raw float32 values.
void write_named_tensor(Sink& s, const std::string& name, const Tensor& t);
std::pair<std::string, Tensor> read_named_tensor(Source& s);

}  // namespace io
}  // namespace bevpred
