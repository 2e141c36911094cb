#include "normalcast/tensor.hpp"

#include <cstring>
#include <fstream>

namespace ncast {

namespace {

constexpr char kMagic[8] = {'N', 'T', 'E', 'N', 'S', 'O', 'R', '1'};

void write_magic(std::ofstream& f) {
    char block[16] = {0};
    std::memcpy(block, kMagic, 8);
    f.write(block, 16);
}

struct NtfHeader {
    Shape shape;
    NtfType type;
};

void write_header(std::ofstream& f, const Shape& shape, NtfType type) {
    write_magic(f);
    uint32_t rank = static_cast<uint32_t>(shape.size());
    f.write(reinterpret_cast<const char*>(&rank), 4);
    for (int d : shape) {
        uint32_t u = static_cast<uint32_t>(d);
        f.write(reinterpret_cast<const char*>(&u), 4);
    }
    uint8_t t = static_cast<uint8_t>(type);
    f.write(reinterpret_cast<const char*>(&t), 1);
}

NtfHeader read_header(std::ifstream& f, const std::string& path) {
    char block[16];
    f.read(block, 16);
    if (!f || std::memcmp(block, kMagic, 8) != 0) throw IoError("not an NTF file: " + path);
    uint32_t rank = 0;
    f.read(reinterpret_cast<char*>(&rank), 4);
    if (!f || rank > 8) throw IoError("bad NTF rank in " + path);
    NtfHeader h;
    for (uint32_t i = 0; i < rank; ++i) {
        uint32_t d = 0;
        f.read(reinterpret_cast<char*>(&d), 4);
        h.shape.push_back(static_cast<int>(d));
    }
    uint8_t t = 255;
    f.read(reinterpret_cast<char*>(&t), 1);
    if (!f || t > 2) throw IoError("bad NTF dtype in " + path);
    h.type = static_cast<NtfType>(t);
    return h;
}

std::ofstream open_out(const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for writing: " + path);
    return f;
}

std::ifstream open_in(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw IoError("cannot open for reading: " + path);
    return f;
}

}  // namespace

void ntf_write_f32(const std::string& path, const Tensor& t) {
    auto f = open_out(path);
    write_header(f, t.shape(), NtfType::F32);
    f.write(reinterpret_cast<const char*>(t.data()), t.size() * 4);
    if (!f) throw IoError("write failed: " + path);
}

void ntf_write_u8(const std::string& path, const Shape& shape, const std::vector<uint8_t>& data) {
    if (static_cast<long long>(data.size()) != numel(shape))
        throw ShapeError("u8 payload size mismatch for " + path);
    auto f = open_out(path);
    write_header(f, shape, NtfType::U8);
    f.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(data.size()));
    if (!f) throw IoError("write failed: " + path);
}

void ntf_write_bool(const std::string& path, const Mask& m) {
    auto f = open_out(path);
    write_header(f, m.shape(), NtfType::Bool);
    f.write(reinterpret_cast<const char*>(m.bytes().data()), static_cast<std::streamsize>(m.bytes().size()));
    if (!f) throw IoError("write failed: " + path);
}

NtfType ntf_peek_type(const std::string& path) {
    auto f = open_in(path);
    return read_header(f, path).type;
}

Tensor ntf_read_f32(const std::string& path) {
    auto f = open_in(path);
    NtfHeader h = read_header(f, path);
    if (h.type != NtfType::F32) throw IoError("expected f32 NTF: " + path);
    Tensor t(h.shape);
    f.read(reinterpret_cast<char*>(t.data()), t.size() * 4);
    if (!f) throw IoError("truncated NTF: " + path);
    return t;
}

Tensor ntf_read_u8_as_float(const std::string& path) {
    auto f = open_in(path);
    NtfHeader h = read_header(f, path);
    if (h.type != NtfType::U8) throw IoError("expected u8 NTF: " + path);
    std::vector<uint8_t> raw(static_cast<size_t>(numel(h.shape)));
    f.read(reinterpret_cast<char*>(raw.data()), static_cast<std::streamsize>(raw.size()));
    if (!f) throw IoError("truncated NTF: " + path);
    Tensor t(h.shape);
    for (long long i = 0; i < t.size(); ++i) t[i] = static_cast<float>(raw[static_cast<size_t>(i)]) / 255.0f;
    return t;
}

Mask ntf_read_bool(const std::string& path) {
    auto f = open_in(path);
    NtfHeader h = read_header(f, path);
    if (h.type != NtfType::Bool) throw IoError("expected bool NTF: " + path);
    Mask m(h.shape);
    f.read(reinterpret_cast<char*>(m.bytes().data()), static_cast<std::streamsize>(m.bytes().size()));
    if (!f) throw IoError("truncated NTF: " + path);
    return m;
}

Tensor ntf_read_as_float(const std::string& path) {
    NtfType t = ntf_peek_type(path);
    if (t == NtfType::F32) return ntf_read_f32(path);
    if (t == NtfType::U8) return ntf_read_u8_as_float(path);
    throw IoError("cannot read bool NTF as float: " + path);
}

uint64_t bytes_checksum(const float* data, size_t count) {
    const uint8_t* p = reinterpret_cast<const uint8_t*>(data);
    uint64_t h = 14695981039346656037ULL;
    for (size_t i = 0; i < count * 4; ++i) {
        h ^= p[i];
        h *= 1099511628211ULL;
    }
    return h;
}

}  // namespace ncast
