// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/ply.hpp"
#include "dnsplat/types.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnsplat {

/// Portable float map: little-endian, rows stored bottom-up, 1 or 3 channels.
template <typename T> std::string encode_pfm(const Image<T> &img) {
    if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("pfm: 1 or 3 channels required");
    std::string out = img.channels == 3 ? "PF\n" : "Pf\n";
    out += std::to_string(img.width) + " " + std::to_string(img.height) + "\n-1.0\n";
    for (int y = img.height - 1; y >= 0; --y)
        for (int x = 0; x < img.width; ++x)
            for (int c = 0; c < img.channels; ++c) detail::put_le(out, static_cast<float>(img(x, y, c)));
    return out;
}

template <typename T> Image<T> decode_pfm(std::string_view bytes) {
    std::size_t pos = 0;
    auto token      = [&]() {
        while (pos < bytes.size() && std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        const std::size_t b = pos;
        while (pos < bytes.size() && !std::isspace(static_cast<unsigned char>(bytes[pos]))) ++pos;
        return bytes.substr(b, pos - b);
    };
    const auto magic = token();
    if (magic != "PF" && magic != "Pf") throw std::runtime_error("pfm: bad magic");
    const int channels = magic == "PF" ? 3 : 1;
    const int w        = static_cast<int>(detail::parse_double(token()));
    const int h        = static_cast<int>(detail::parse_double(token()));
    const double scale = detail::parse_double(token());
    ++pos; // single whitespace byte before the raster
    if (w <= 0 || h <= 0) throw std::runtime_error("pfm: bad dimensions");
    if (!(scale < 0)) throw std::runtime_error("pfm: only little-endian files are supported");
    const std::size_t need = static_cast<std::size_t>(w) * h * channels * sizeof(float);
    if (bytes.size() - std::min(pos, bytes.size()) < need) throw std::runtime_error("pfm: truncated raster");
    Image<T> img(w, h, channels);
    for (int y = h - 1; y >= 0; --y) {
        for (int x = 0; x < w; ++x) {
            for (int c = 0; c < channels; ++c) {
                float v;
                std::memcpy(&v, bytes.data() + pos, sizeof(float));
                pos += sizeof(float);
                img(x, y, c) = static_cast<T>(v);
            }
        }
    }
    return img;
}

/// Writes an 8-bit PNG; values are clamped to [0, 1] after `scale * v + offset`.
template <typename T>
void write_png(const std::string &path, const Image<T> &img, double scale = 1.0, double offset = 0.0) {
    if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("png: 1 or 3 channels required");
    std::unique_ptr<FILE, int (*)(FILE *)> fp(std::fopen(path.c_str(), "wb"), &std::fclose);
    if (!fp) throw std::runtime_error("cannot write " + path);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    png_infop info  = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: out of memory");
    }
    std::vector<png_byte> row(static_cast<std::size_t>(img.width) * img.channels);
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        throw std::runtime_error("png: write failed for " + path);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, static_cast<png_uint_32>(img.width), static_cast<png_uint_32>(img.height), 8,
                 img.channels == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    for (int y = 0; y < img.height; ++y) {
        for (int x = 0; x < img.width; ++x) {
            for (int c = 0; c < img.channels; ++c) {
                const double v = std::clamp(scale * double(img(x, y, c)) + offset, 0.0, 1.0);
                row[static_cast<std::size_t>(x) * img.channels + c] = static_cast<png_byte>(std::lround(v * 255.0));
            }
        }
        png_write_row(png, row.data());
    }
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

/// Reads an 8-bit PNG as gray or RGB in [0, 1]; alpha channels are dropped.
template <typename T> Image<T> read_png(const std::string &path) {
    png_image image;
    std::memset(&image, 0, sizeof(image));
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&image, path.c_str())) throw std::runtime_error("cannot read png " + path);
    const bool gray = (image.format & PNG_FORMAT_FLAG_COLOR) == 0;
    image.format    = gray ? PNG_FORMAT_GRAY : PNG_FORMAT_RGB;
    std::vector<png_byte> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        png_image_free(&image);
        throw std::runtime_error("png decode failed: " + path);
    }
    Image<T> img(static_cast<int>(image.width), static_cast<int>(image.height), gray ? 1 : 3);
    for (std::size_t i = 0; i < buf.size(); ++i) img.data[i] = static_cast<T>(buf[i]) / T(255);
    return img;
}

} // namespace dnsplat
