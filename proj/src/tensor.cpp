#include "umo/tensor.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace umo {

static int shape_numel(const std::vector<int>& shape) {
    long long n = 1;
    for (int d : shape) {
        if (d <= 0) throw std::invalid_argument("tensor: nonpositive dim in shape " + shape_str(shape));
        n *= d;
    }
    return static_cast<int>(n);
}

Tensor::Tensor(std::vector<int> shape_, std::vector<float> data_)
    : shape(std::move(shape_)), data(std::move(data_)) {
    if (shape_numel(shape) != static_cast<int>(data.size()))
        throw std::invalid_argument("tensor: shape " + shape_str(shape) + " does not match data length " +
                                    std::to_string(data.size()));
}

Tensor Tensor::zeros(const std::vector<int>& shape) {
    return Tensor(shape, std::vector<float>(static_cast<size_t>(shape_numel(shape)), 0.0f));
}

Tensor Tensor::full(const std::vector<int>& shape, float value) {
    return Tensor(shape, std::vector<float>(static_cast<size_t>(shape_numel(shape)), value));
}

Tensor Tensor::scalar(float value) { return Tensor({1}, {value}); }

Tensor Tensor::row(const std::vector<float>& values) {
    return Tensor({static_cast<int>(values.size())}, values);
}

Tensor Tensor::matrix(int rows, int cols, std::vector<float> v) {
    return Tensor({rows, cols}, std::move(v));
}

int Tensor::numel() const { return static_cast<int>(data.size()); }

bool Tensor::all_finite() const {
    for (float v : data)
        if (!std::isfinite(v)) return false;
    return true;
}

std::string shape_str(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

namespace {

void put_u32(std::ofstream& out, uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v & 0xff), static_cast<unsigned char>((v >> 8) & 0xff),
                          static_cast<unsigned char>((v >> 16) & 0xff), static_cast<unsigned char>((v >> 24) & 0xff)};
    out.write(reinterpret_cast<const char*>(b), 4);
}

uint32_t get_u32(std::ifstream& in) {
    unsigned char b[4];
    in.read(reinterpret_cast<char*>(b), 4);
    if (!in) throw std::runtime_error("umot: truncated file");
    return static_cast<uint32_t>(b[0]) | (static_cast<uint32_t>(b[1]) << 8) | (static_cast<uint32_t>(b[2]) << 16) |
           (static_cast<uint32_t>(b[3]) << 24);
}

}  // namespace

void save_umot(const Tensor& t, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("umot: cannot open for write: " + path);
    out.write("UMOT", 4);
    put_u32(out, static_cast<uint32_t>(t.shape.size()));
    for (int d : t.shape) put_u32(out, static_cast<uint32_t>(d));
    static_assert(sizeof(float) == 4);
    for (float v : t.data) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_u32(out, bits);
    }
    if (!out) throw std::runtime_error("umot: write failed: " + path);
}

Tensor load_umot(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("umot: cannot open: " + path);
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, "UMOT", 4) != 0) throw std::runtime_error("umot: bad magic in " + path);
    uint32_t rank = get_u32(in);
    if (rank > 8) throw std::runtime_error("umot: implausible rank in " + path);
    std::vector<int> shape(rank);
    long long n = 1;
    for (uint32_t i = 0; i < rank; ++i) {
        uint32_t d = get_u32(in);
        if (d == 0 || d > (1u << 28)) throw std::runtime_error("umot: bad dim in " + path);
        shape[i] = static_cast<int>(d);
        n *= d;
    }
    std::vector<float> data(static_cast<size_t>(n));
    for (long long i = 0; i < n; ++i) {
        uint32_t bits = get_u32(in);
        std::memcpy(&data[static_cast<size_t>(i)], &bits, 4);
    }
    char extra;
    in.read(&extra, 1);
    if (in.gcount() != 0) throw std::runtime_error("umot: trailing bytes in " + path);
    return Tensor(std::move(shape), std::move(data));
}

}  // namespace umo
