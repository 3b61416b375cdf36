// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/gaussian.hpp"

#include <array>
#include <bit>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <iterator>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace dnsplat {

class PlyError : public std::runtime_error {
  public:
    enum class Kind { malformed_header, wrong_property_set, truncated_body, trailing_data };

    PlyError(Kind kind, const std::string &what) : std::runtime_error(what), kind_(kind) {}
    Kind kind() const { return kind_; }

  private:
    Kind kind_;
};

namespace detail {

inline const std::array<std::string, kParamsPerGaussian> &ply_property_names() {
    static const std::array<std::string, kParamsPerGaussian> names = [] {
        std::array<std::string, kParamsPerGaussian> n{"x",           "y",           "z",           "quat_w",
                                                      "quat_x",      "quat_y",      "quat_z",      "log_scale_1",
                                                      "log_scale_2", "log_scale_3", "opacity_logit"};
        for (int c = 0; c < kColorCoeffs; ++c) {
            n[static_cast<std::size_t>(11 + c)] = "c_" + std::to_string(c);
        }
        return n;
    }();
    return names;
}

inline std::string shortest_repr(double v) {
    char buf[64];
    auto res = std::to_chars(buf, buf + sizeof(buf), v);
    return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s) {
    double v   = 0.0;
    auto res   = std::from_chars(s.data(), s.data() + s.size(), v);
    if (res.ec != std::errc() || res.ptr != s.data() + s.size()) {
        throw PlyError(PlyError::Kind::malformed_header, "bad number in header: " + std::string(s));
    }
    return v;
}

template <typename V> void put_le(std::string &out, V v) {
    static_assert(std::endian::native == std::endian::little, "big-endian hosts not supported");
    char b[sizeof(V)];
    std::memcpy(b, &v, sizeof(V));
    out.append(b, sizeof(V));
}

inline std::vector<std::string_view> split_ws(std::string_view line) {
    std::vector<std::string_view> out;
    std::size_t i = 0;
    while (i < line.size()) {
        while (i < line.size() && (line[i] == ' ' || line[i] == '\t' || line[i] == '\r')) ++i;
        std::size_t j = i;
        while (j < line.size() && line[j] != ' ' && line[j] != '\t' && line[j] != '\r') ++j;
        if (j > i) out.push_back(line.substr(i, j - i));
        i = j;
    }
    return out;
}

} // namespace detail

/// Little-endian binary PLY, one `vertex` element per Gaussian, all properties as double.
template <typename T> std::string save_ply(const Scene<T> &scene) {
    std::string out;
    out += "ply\nformat binary_little_endian 1.0\n";
    out += "comment bounds";
    for (int i = 0; i < 3; ++i) out += " " + detail::shortest_repr(static_cast<double>(scene.bounds.lo[i]));
    for (int i = 0; i < 3; ++i) out += " " + detail::shortest_repr(static_cast<double>(scene.bounds.hi[i]));
    out += "\nelement vertex " + std::to_string(scene.size()) + "\n";
    for (const auto &name : detail::ply_property_names()) {
        out += "property double " + name + "\n";
    }
    out += "end_header\n";
    out.reserve(out.size() + scene.size() * kParamsPerGaussian * sizeof(double));
    for (const auto &g : scene.gaussians) {
        for (int i = 0; i < kParamsPerGaussian; ++i) {
            detail::put_le(out, static_cast<double>(g.param(i)));
        }
    }
    return out;
}

template <typename T> Scene<T> load_ply(std::string_view bytes) {
    using Kind = PlyError::Kind;
    std::size_t pos = 0;
    auto next_line  = [&](std::string_view &line) {
        const std::size_t nl = bytes.find('\n', pos);
        if (nl == std::string_view::npos) return false;
        line = bytes.substr(pos, nl - pos);
        pos  = nl + 1;
        return true;
    };

    std::string_view line;
    if (!next_line(line) || detail::split_ws(line) != std::vector<std::string_view>{"ply"}) {
        throw PlyError(Kind::malformed_header, "missing 'ply' magic");
    }
    if (!next_line(line)) throw PlyError(Kind::malformed_header, "missing format line");
    {
        auto tok = detail::split_ws(line);
        if (tok.size() != 3 || tok[0] != "format" || tok[1] != "binary_little_endian" || tok[2] != "1.0") {
            throw PlyError(Kind::malformed_header, "unsupported format line: " + std::string(line));
        }
    }

    Scene<T> scene;
    bool have_element = false;
    bool have_end     = false;
    std::size_t count = 0;
    struct Prop {
        std::string name;
        bool is_double;
    };
    std::vector<Prop> props;

    while (next_line(line)) {
        auto tok = detail::split_ws(line);
        if (tok.empty()) throw PlyError(Kind::malformed_header, "empty header line");
        if (tok[0] == "comment") {
            if (tok.size() == 8 && tok[1] == "bounds") {
                for (int i = 0; i < 3; ++i) scene.bounds.lo[i] = static_cast<T>(detail::parse_double(tok[2 + i]));
                for (int i = 0; i < 3; ++i) scene.bounds.hi[i] = static_cast<T>(detail::parse_double(tok[5 + i]));
            }
            continue;
        }
        if (tok[0] == "end_header") {
            have_end = true;
            break;
        }
        if (tok[0] == "element") {
            if (have_element || tok.size() != 3 || tok[1] != "vertex") {
                throw PlyError(Kind::malformed_header, "unexpected element line: " + std::string(line));
            }
            unsigned long long n = 0;
            auto res             = std::from_chars(tok[2].data(), tok[2].data() + tok[2].size(), n);
            if (res.ec != std::errc() || res.ptr != tok[2].data() + tok[2].size()) {
                throw PlyError(Kind::malformed_header, "bad vertex count");
            }
            count        = static_cast<std::size_t>(n);
            have_element = true;
            continue;
        }
        if (tok[0] == "property") {
            if (!have_element || tok.size() != 3) {
                throw PlyError(Kind::malformed_header, "bad property line: " + std::string(line));
            }
            if (tok[1] != "double" && tok[1] != "float") {
                throw PlyError(Kind::malformed_header, "unsupported property type: " + std::string(tok[1]));
            }
            props.push_back({std::string(tok[2]), tok[1] == "double"});
            continue;
        }
        throw PlyError(Kind::malformed_header, "unknown header line: " + std::string(line));
    }
    if (!have_end) throw PlyError(Kind::malformed_header, "missing end_header");
    if (!have_element) throw PlyError(Kind::malformed_header, "missing vertex element");

    const auto &names = detail::ply_property_names();
    std::array<int, kParamsPerGaussian> slot_of_param;
    slot_of_param.fill(-1);
    std::vector<int> param_of_slot(props.size(), -1);
    for (std::size_t s = 0; s < props.size(); ++s) {
        int found = -1;
        for (int p = 0; p < kParamsPerGaussian; ++p) {
            if (names[static_cast<std::size_t>(p)] == props[s].name) found = p;
        }
        if (found < 0) throw PlyError(Kind::wrong_property_set, "unexpected property '" + props[s].name + "'");
        if (slot_of_param[static_cast<std::size_t>(found)] >= 0) {
            throw PlyError(Kind::wrong_property_set, "duplicate property '" + props[s].name + "'");
        }
        slot_of_param[static_cast<std::size_t>(found)] = static_cast<int>(s);
        param_of_slot[s]                                = found;
    }
    for (int p = 0; p < kParamsPerGaussian; ++p) {
        if (slot_of_param[static_cast<std::size_t>(p)] < 0) {
            throw PlyError(Kind::wrong_property_set, "missing property '" + names[static_cast<std::size_t>(p)] + "'");
        }
    }

    std::size_t stride = 0;
    for (const auto &p : props) stride += p.is_double ? 8 : 4;
    const std::size_t body = bytes.size() - pos;
    if (count > 0 && body / stride < count) {
        throw PlyError(Kind::truncated_body, "body holds " + std::to_string(body) + " bytes, expected " +
                                                 std::to_string(count * stride));
    }
    if (body != count * stride) {
        throw PlyError(Kind::trailing_data, "unexpected bytes after the last vertex");
    }

    scene.gaussians.resize(count);
    const char *ptr = bytes.data() + pos;
    for (std::size_t i = 0; i < count; ++i) {
        for (std::size_t s = 0; s < props.size(); ++s) {
            double v;
            if (props[s].is_double) {
                std::memcpy(&v, ptr, 8);
                ptr += 8;
            } else {
                float f;
                std::memcpy(&f, ptr, 4);
                ptr += 4;
                v = f;
            }
            scene.gaussians[i].param(param_of_slot[s]) = static_cast<T>(v);
        }
    }
    return scene;
}

inline std::string read_file_bytes(const std::string &path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file_bytes(const std::string &path, std::string_view bytes) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path);
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

} // namespace dnsplat
