// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <Eigen/Core>

#include <cstddef>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnsplat {

template <typename T> using Vec2 = Eigen::Matrix<T, 2, 1>;
template <typename T> using Vec3 = Eigen::Matrix<T, 3, 1>;
template <typename T> using Vec4 = Eigen::Matrix<T, 4, 1>;
template <typename T> using Mat2 = Eigen::Matrix<T, 2, 2>;
template <typename T> using Mat3 = Eigen::Matrix<T, 3, 3>;
template <typename T> using Mat23 = Eigen::Matrix<T, 2, 3>;

/// Raised when a loss or gradient turns non-finite during optimization.
class NumericalError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

/// Raised when a caller hands the backward pass buffers from a different forward pass.
class ContractViolation : public std::logic_error {
  public:
    using std::logic_error::logic_error;
};

/// Dense row-major image with interleaved channels.
template <typename T> struct Image {
    int width    = 0;
    int height   = 0;
    int channels = 1;
    std::vector<T> data;

    Image() = default;
    Image(int w, int h, int c, T fill = T(0))
        : width(w), height(h), channels(c), data(static_cast<std::size_t>(w) * h * c, fill) {}

    std::size_t pixel_count() const { return static_cast<std::size_t>(width) * height; }
    bool same_shape(const Image &o) const {
        return width == o.width && height == o.height && channels == o.channels;
    }

    T &operator()(int x, int y, int c = 0) {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }
    const T &operator()(int x, int y, int c = 0) const {
        return data[(static_cast<std::size_t>(y) * width + x) * channels + c];
    }

    Vec3<T> vec3(int x, int y) const {
        const T *p = &(*this)(x, y, 0);
        return {p[0], p[1], p[2]};
    }
    void set_vec3(int x, int y, const Vec3<T> &v) {
        T *p = &(*this)(x, y, 0);
        p[0] = v.x();
        p[1] = v.y();
        p[2] = v.z();
    }
};

template <typename U, typename T> Image<U> image_cast(const Image<T> &src) {
    Image<U> out(src.width, src.height, src.channels);
    for (std::size_t i = 0; i < src.data.size(); ++i) {
        out.data[i] = static_cast<U>(src.data[i]);
    }
    return out;
}

using PixelMask = std::vector<unsigned char>;

} // namespace dnsplat
