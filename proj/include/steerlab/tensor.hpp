#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "steerlab/error.hpp"

namespace steerlab {

/// Dense row-major f32 tensor.
struct Tensor {
    std::vector<std::size_t> shape;
    std::vector<float> data;

    Tensor() = default;
    explicit Tensor(std::vector<std::size_t> dims, float fill = 0.0f)
        : shape(std::move(dims)), data(element_count(shape), fill)
    {}

    static std::size_t element_count(const std::vector<std::size_t>& dims)
    {
        return std::accumulate(dims.begin(), dims.end(), std::size_t{1}, std::multiplies<>{});
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rows() const { return shape.empty() ? 0 : shape.front(); }
    std::size_t cols() const { return shape.size() < 2 ? 1 : shape[1]; }

    std::span<const float> row(std::size_t r) const { return {data.data() + r * cols(), cols()}; }
    std::span<float> row(std::size_t r) { return {data.data() + r * cols(), cols()}; }

    float& at(std::size_t r, std::size_t c) { return data[r * cols() + c]; }
    float at(std::size_t r, std::size_t c) const { return data[r * cols() + c]; }

    bool operator==(const Tensor&) const = default;
};

inline std::string shape_string(const std::vector<std::size_t>& shape)
{
    std::string out = "[";
    for (std::size_t i = 0; i < shape.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(shape[i]);
    }
    return out + "]";
}

// Double-precision vector helpers shared by the analysis code.

inline double dot(std::span<const float> a, std::span<const float> b)
{
    if (a.size() != b.size()) throw InvalidArgument("dot: length mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

inline double norm(std::span<const float> a) { return std::sqrt(dot(a, a)); }

/// Cosine similarity; zero when either vector is zero.
inline double cosine(std::span<const float> a, std::span<const float> b)
{
    const double na = norm(a);
    const double nb = norm(b);
    if (na == 0.0 || nb == 0.0) return 0.0;
    return dot(a, b) / (na * nb);
}

inline bool all_finite(std::span<const float> v)
{
    for (float x : v) {
        if (!std::isfinite(x)) return false;
    }
    return true;
}

}  // namespace steerlab
