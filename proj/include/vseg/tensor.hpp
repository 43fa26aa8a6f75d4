#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "vseg/common.hpp"

namespace vseg {

/// Dimensions of a rank-4 tensor, batch-major: (n, c, h, w), w fastest.
struct Shape4 {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;

    bool operator==(const Shape4&) const = default;

    std::int64_t count() const {
        return static_cast<std::int64_t>(n) * c * h * w;
    }

    std::string str() const {
        return "(" + std::to_string(n) + "," + std::to_string(c) + "," +
               std::to_string(h) + "," + std::to_string(w) + ")";
    }
};

/// Rank-4 float32 array, the currency of all network computation.
/// Layout is n-major, then c, then h, then w (w contiguous).
struct Tensor4 {
    Shape4 shape;
    std::vector<float> data;

    Tensor4() = default;

    explicit Tensor4(Shape4 s, float fill = 0.0f)
        : shape(s), data(static_cast<std::size_t>(s.count()), fill) {
        if (s.n < 0 || s.c < 0 || s.h < 0 || s.w < 0)
            throw ShapeError("Tensor4: negative dimension in " + s.str());
    }

    Tensor4(Shape4 s, std::vector<float> values) : shape(s), data(std::move(values)) {
        if (static_cast<std::int64_t>(data.size()) != s.count())
            throw ShapeError("Tensor4: payload of " + std::to_string(data.size()) +
                             " values does not fill " + s.str());
    }

    std::size_t size() const { return data.size(); }

    std::size_t index(int n, int c, int y, int x) const {
        return ((static_cast<std::size_t>(n) * shape.c + c) * shape.h + y) * shape.w + x;
    }

    float& at(int n, int c, int y, int x) { return data[index(n, c, y, x)]; }
    float at(int n, int c, int y, int x) const { return data[index(n, c, y, x)]; }

    /// Contiguous h*w plane for one (batch, channel) pair.
    float* plane(int n, int c) { return data.data() + index(n, c, 0, 0); }
    const float* plane(int n, int c) const { return data.data() + index(n, c, 0, 0); }

    void fill(float v) { std::fill(data.begin(), data.end(), v); }

    bool all_finite() const;

    /// Throws ShapeError unless this tensor has exactly shape `s`.
    void require_shape(const Shape4& s, const char* what) const;
};

}  // namespace vseg
