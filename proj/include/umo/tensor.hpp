#pragma once

#include <cstdint>
#include <initializer_list>
#include <string>
#include <vector>

namespace umo {

// Dense row-major float32 array. Shape dims are positive; product(shape) == data.size().
struct Tensor {
    std::vector<int> shape;
    std::vector<float> data;

    Tensor() = default;
    Tensor(std::vector<int> shape_, std::vector<float> data_);

    static Tensor zeros(const std::vector<int>& shape);
    static Tensor full(const std::vector<int>& shape, float value);
    static Tensor scalar(float value);
    static Tensor row(const std::vector<float>& values);              // shape {n}
    static Tensor matrix(int rows, int cols, std::vector<float> v);   // shape {rows, cols}

    int numel() const;
    int rank() const { return static_cast<int>(shape.size()); }
    bool same_shape(const Tensor& other) const { return shape == other.shape; }
    bool is_scalar() const { return numel() == 1; }

    float& at(int i) { return data[static_cast<size_t>(i)]; }
    float at(int i) const { return data[static_cast<size_t>(i)]; }

    bool all_finite() const;
};

std::string shape_str(const std::vector<int>& shape);

// UMOT binary format: magic "UMOT", u32 rank, rank x u32 dims, row-major
// little-endian f32 payload. Round trips are bit-exact.
void save_umot(const Tensor& t, const std::string& path);
Tensor load_umot(const std::string& path);

}  // namespace umo
