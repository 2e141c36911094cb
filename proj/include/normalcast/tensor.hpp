#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "normalcast/errors.hpp"

namespace ncast {

using Shape = std::vector<int>;

inline long long numel(const Shape& s) {
    long long n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "[";
    for (size_t i = 0; i < s.size(); ++i) out += std::to_string(s[i]) + (i + 1 < s.size() ? "x" : "");
    return out + "]";
}

// Dense row-major float tensor. The one value type everything in this
// project passes around; layout conventions (FHWC vs NCHW) live at the
// call sites.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, float fill = 0.0f)
        : shape_(std::move(shape)), data_(static_cast<size_t>(numel(shape_)), fill) {}
    Tensor(Shape shape, std::vector<float> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (static_cast<long long>(data_.size()) != numel(shape_))
            throw ShapeError("tensor data size does not match shape " + shape_str(shape_));
    }

    const Shape& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    int rank() const { return static_cast<int>(shape_.size()); }
    long long size() const { return static_cast<long long>(data_.size()); }
    bool empty() const { return data_.empty(); }

    float* data() { return data_.data(); }
    const float* data() const { return data_.data(); }
    float& operator[](long long i) { return data_[static_cast<size_t>(i)]; }
    float operator[](long long i) const { return data_[static_cast<size_t>(i)]; }

    std::vector<float>& vec() { return data_; }
    const std::vector<float>& vec() const { return data_; }

    Tensor reshaped(Shape s) const {
        if (numel(s) != size()) throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s));
        Tensor t = *this;
        t.shape_ = std::move(s);
        return t;
    }

    void fill(float v) { std::fill(data_.begin(), data_.end(), v); }

private:
    Shape shape_;
    std::vector<float> data_;
};

// Boolean mask with tensor-like shape, stored one byte per element.
class Mask {
public:
    Mask() = default;
    explicit Mask(Shape shape, bool fill = false)
        : shape_(std::move(shape)), data_(static_cast<size_t>(numel(shape_)), fill ? 1 : 0) {}

    const Shape& shape() const { return shape_; }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    long long size() const { return static_cast<long long>(data_.size()); }

    bool get(long long i) const { return data_[static_cast<size_t>(i)] != 0; }
    void set(long long i, bool v) { data_[static_cast<size_t>(i)] = v ? 1 : 0; }

    std::vector<uint8_t>& bytes() { return data_; }
    const std::vector<uint8_t>& bytes() const { return data_; }

    long long count() const {
        long long n = 0;
        for (uint8_t b : data_) n += (b != 0);
        return n;
    }

private:
    Shape shape_;
    std::vector<uint8_t> data_;
};

// ---- NTF tensor file format ----
// 16-byte magic block ("NTENSOR1" + zero padding), then little-endian
// u32 rank, u32 dims[rank], u8 dtype (0=f32, 1=u8, 2=bool), row-major payload.
enum class NtfType : uint8_t { F32 = 0, U8 = 1, Bool = 2 };

void ntf_write_f32(const std::string& path, const Tensor& t);
void ntf_write_u8(const std::string& path, const Shape& shape, const std::vector<uint8_t>& data);
void ntf_write_bool(const std::string& path, const Mask& m);

NtfType ntf_peek_type(const std::string& path);
Tensor ntf_read_f32(const std::string& path);
// Reads u8 payload and rescales to float in [0,1].
Tensor ntf_read_u8_as_float(const std::string& path);
Mask ntf_read_bool(const std::string& path);
// Reads f32 as-is or u8 rescaled to [0,1], depending on the stored dtype.
Tensor ntf_read_as_float(const std::string& path);

// FNV-1a over raw float bytes; used for freeze-contract checks.
uint64_t bytes_checksum(const float* data, size_t count);

}  // namespace ncast
