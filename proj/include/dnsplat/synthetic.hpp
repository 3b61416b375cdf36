// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/densify.hpp"
#include "dnsplat/losses.hpp"

#include <json.hpp>

#include <Eigen/Geometry>

#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <optional>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace dnsplat {

/// Raised for malformed scene specifications.
class SpecError : public std::runtime_error {
  public:
    using std::runtime_error::runtime_error;
};

enum class PrimitiveKind { plane, sphere, box };

/// Finite rectangle (plane), sphere or oriented box. For planes the local z axis is the normal
/// and `size` holds the side lengths along local x and y; boxes use all three.
struct Primitive {
    PrimitiveKind kind  = PrimitiveKind::plane;
    Vec3<double> center = Vec3<double>::Zero();
    Mat3<double> rotation = Mat3<double>::Identity(); // local -> world
    Vec3<double> size   = Vec3<double>::Ones();
    double radius       = 1.0;
    Vec3<double> albedo = Vec3<double>::Constant(0.7);
    /// Side of a solid 3D checker modulating the albedo by 1 +- checker_contrast; 0 disables it.
    double checker          = 0.0;
    double checker_contrast = 0.3;

    Vec3<double> albedo_at(const Vec3<double> &x) const {
        if (!(checker > 0)) return albedo;
        const long parity = static_cast<long>(std::floor(x.x() / checker)) + static_cast<long>(std::floor(x.y() / checker)) +
                            static_cast<long>(std::floor(x.z() / checker));
        return albedo * (1.0 + ((parity & 1) ? -checker_contrast : checker_contrast));
    }

    double area() const {
        switch (kind) {
        case PrimitiveKind::plane: return size.x() * size.y();
        case PrimitiveKind::sphere: return 4 * M_PI * radius * radius;
        case PrimitiveKind::box: return 2 * (size.x() * size.y() + size.y() * size.z() + size.x() * size.z());
        }
        return 0;
    }
};

enum class CameraRig { orbit, cuboid_random };
enum class NoiseMode { none, per_view_rotation, patch_corruption };

struct NormalNoiseSpec {
    NoiseMode mode            = NoiseMode::none;
    double magnitude_deg      = 0;
    double corrupted_fraction = 0;
    int patch_size            = 8;
    std::uint64_t seed        = 0;
};

struct InitSpec {
    int points         = 400;
    double jitter      = 0.02; // fraction of the scene diagonal
    std::uint64_t seed = 0;
};

struct SceneSpec {
    std::vector<Primitive> primitives;
    CameraRig rig = CameraRig::orbit;
    int camera_count = 12;
    double orbit_radius = 3.0;
    std::vector<double> elevations_deg{35.0};
    Vec3<double> target = Vec3<double>::Zero();
    std::uint64_t camera_seed = 0;
    double fov_deg = 50.0;
    int width = 64, height = 64;
    NormalNoiseSpec noise;
    InitSpec init;
    std::optional<Aabb<double>> bounds_override;
    nlohmann::json train; // optional defaults for the training command

    /// Primitive bounding box padded by 10% of its diagonal on every side.
    Aabb<double> bounds() const;
    double focal() const { return 0.5 * width / std::tan(0.5 * fov_deg * M_PI / 180.0); }
    std::vector<Camera<double>> cameras() const;
    void validate() const;
};

namespace detail {

inline Vec3<double> json_vec3(const nlohmann::json &j, const char *key, const Vec3<double> &fallback) {
    if (!j.contains(key)) return fallback;
    const auto &a = j.at(key);
    if (!a.is_array() || a.size() != 3) throw SpecError(std::string("expected a 3-vector for '") + key + "'");
    return {a[0].get<double>(), a[1].get<double>(), a[2].get<double>()};
}

/// XYZ Euler angles in degrees, applied x first.
inline Mat3<double> euler_deg(const Vec3<double> &deg) {
    const Vec3<double> r = deg * (M_PI / 180.0);
    return (Eigen::AngleAxisd(r.z(), Vec3<double>::UnitZ()) * Eigen::AngleAxisd(r.y(), Vec3<double>::UnitY()) *
            Eigen::AngleAxisd(r.x(), Vec3<double>::UnitX()))
        .toRotationMatrix();
}

} // namespace detail

inline SceneSpec parse_scene_spec(const nlohmann::json &j) {
    SceneSpec s;
    try {
        for (const auto &pj : j.at("primitives")) {
            Primitive p;
            const std::string type = pj.at("type").get<std::string>();
            p.center   = detail::json_vec3(pj, "center", Vec3<double>::Zero());
            p.rotation = detail::euler_deg(detail::json_vec3(pj, "rotation_deg", Vec3<double>::Zero()));
            p.albedo   = detail::json_vec3(pj, "albedo", p.albedo);
            p.checker  = pj.value("checker", 0.0);
            p.checker_contrast = pj.value("checker_contrast", p.checker_contrast);
            if (type == "plane") {
                p.kind = PrimitiveKind::plane;
                const auto sz = pj.at("size");
                p.size = {sz.at(0).get<double>(), sz.at(1).get<double>(), 0.0};
            } else if (type == "sphere") {
                p.kind   = PrimitiveKind::sphere;
                p.radius = pj.at("radius").get<double>();
            } else if (type == "box") {
                p.kind = PrimitiveKind::box;
                p.size = detail::json_vec3(pj, "size", Vec3<double>::Ones());
            } else {
                throw SpecError("unknown primitive type '" + type + "'");
            }
            s.primitives.push_back(p);
        }
        const auto &cj = j.at("cameras");
        const std::string rig = cj.value("rig", std::string("orbit"));
        if (rig == "orbit") {
            s.rig = CameraRig::orbit;
        } else if (rig == "cuboid_random") {
            s.rig = CameraRig::cuboid_random;
        } else {
            throw SpecError("unknown camera rig '" + rig + "'");
        }
        s.camera_count = cj.value("count", 12);
        s.orbit_radius = cj.value("radius", 3.0);
        if (cj.contains("elevation_deg")) {
            const auto &e = cj.at("elevation_deg");
            s.elevations_deg = e.is_array() ? e.get<std::vector<double>>() : std::vector<double>{e.get<double>()};
        }
        s.target      = detail::json_vec3(cj, "target", s.target);
        s.camera_seed = cj.value("seed", std::uint64_t{0});
        s.fov_deg     = cj.value("fov_deg", 50.0);
        if (j.contains("image")) {
            s.width  = j.at("image").value("width", 64);
            s.height = j.at("image").value("height", 64);
        }
        if (j.contains("noise")) {
            const auto &nj = j.at("noise");
            const std::string mode = nj.value("mode", std::string("none"));
            if (mode == "none") {
                s.noise.mode = NoiseMode::none;
            } else if (mode == "per_view_rotation") {
                s.noise.mode = NoiseMode::per_view_rotation;
            } else if (mode == "patch_corruption") {
                s.noise.mode = NoiseMode::patch_corruption;
            } else {
                throw SpecError("unknown noise mode '" + mode + "'");
            }
            s.noise.magnitude_deg      = nj.value("magnitude_deg", 0.0);
            s.noise.corrupted_fraction = nj.value("corrupted_fraction", 0.0);
            s.noise.patch_size         = nj.value("patch_size", 8);
            s.noise.seed               = nj.value("seed", std::uint64_t{0});
        }
        if (j.contains("init")) {
            s.init.points = j.at("init").value("points", s.init.points);
            s.init.jitter = j.at("init").value("jitter", s.init.jitter);
            s.init.seed   = j.at("init").value("seed", s.init.seed);
        }
        if (j.contains("bounds")) {
            s.bounds_override = Aabb<double>{detail::json_vec3(j.at("bounds"), "min", Vec3<double>::Zero()),
                                             detail::json_vec3(j.at("bounds"), "max", Vec3<double>::Zero())};
        }
        if (j.contains("train")) s.train = j.at("train");
    } catch (const nlohmann::json::exception &e) {
        throw SpecError(std::string("scene spec: ") + e.what());
    }
    s.validate();
    return s;
}

inline SceneSpec load_scene_spec(const std::string &path) {
    std::ifstream in(path);
    if (!in) throw SpecError("cannot open scene spec " + path);
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception &e) {
        throw SpecError(path + ": " + e.what());
    }
    return parse_scene_spec(j);
}

inline void SceneSpec::validate() const {
    if (primitives.empty()) throw SpecError("scene spec: no primitives");
    if (camera_count < 2) throw SpecError("scene spec: at least 2 cameras required");
    if (width <= 0 || height <= 0) throw SpecError("scene spec: image size must be positive");
    if (!(fov_deg > 0 && fov_deg < 180)) throw SpecError("scene spec: fov_deg must lie in (0, 180)");
    if (elevations_deg.empty()) throw SpecError("scene spec: empty elevation list");
    if (!(noise.magnitude_deg >= 0)) throw SpecError("scene spec: noise magnitude must be >= 0");
    if (!(noise.corrupted_fraction >= 0 && noise.corrupted_fraction <= 1)) {
        throw SpecError("scene spec: corrupted_fraction must lie in [0, 1]");
    }
    if (noise.patch_size <= 0) throw SpecError("scene spec: patch_size must be positive");
    for (const auto &p : primitives) {
        if (p.kind == PrimitiveKind::sphere && !(p.radius > 0)) throw SpecError("scene spec: sphere radius must be positive");
        if (p.kind == PrimitiveKind::plane && !(p.size.x() > 0 && p.size.y() > 0)) throw SpecError("scene spec: bad plane size");
        if (p.kind == PrimitiveKind::box && !(p.size.minCoeff() > 0)) throw SpecError("scene spec: bad box size");
        if (!(p.checker >= 0) || !(p.checker_contrast >= 0 && p.checker_contrast < 1)) {
            throw SpecError("scene spec: checker must be >= 0 and checker_contrast in [0, 1)");
        }
    }
}

inline Aabb<double> SceneSpec::bounds() const {
    if (bounds_override) return *bounds_override;
    std::vector<Vec3<double>> pts;
    for (const auto &p : primitives) {
        if (p.kind == PrimitiveKind::sphere) {
            pts.push_back(p.center - Vec3<double>::Constant(p.radius));
            pts.push_back(p.center + Vec3<double>::Constant(p.radius));
            continue;
        }
        const Vec3<double> h = 0.5 * p.size;
        for (int c = 0; c < 8; ++c) {
            const Vec3<double> local((c & 1 ? 1 : -1) * h.x(), (c & 2 ? 1 : -1) * h.y(), (c & 4 ? 1 : -1) * h.z());
            pts.push_back(p.center + p.rotation * local);
        }
    }
    Aabb<double> b  = Aabb<double>::around(pts);
    const double pad = 0.1 * b.diagonal();
    b.lo.array() -= pad;
    b.hi.array() += pad;
    return b;
}

inline std::vector<Camera<double>> SceneSpec::cameras() const {
    std::vector<Camera<double>> cams;
    if (rig == CameraRig::orbit) {
        for (int i = 0; i < camera_count; ++i) {
            const double az = 2 * M_PI * i / camera_count;
            const double el = elevations_deg[static_cast<std::size_t>(i) % elevations_deg.size()] * M_PI / 180.0;
            const Vec3<double> eye =
                target + orbit_radius * Vec3<double>(std::cos(el) * std::cos(az), std::cos(el) * std::sin(az), std::sin(el));
            cams.push_back(Camera<double>::look_at(eye, target, {0, 0, 1}, width, height, focal()));
        }
    } else {
        std::mt19937_64 rng(camera_seed);
        cams = cuboid_cameras(bounds(), 1.5, camera_count, rng, width, height, focal());
    }
    return cams;
}

struct Hit {
    double t = std::numeric_limits<double>::infinity();
    Vec3<double> normal = Vec3<double>::Zero(); // world, unit, not yet oriented
    int primitive = -1;
};

/// Closest hit with t > eps along origin + t * dir (dir need not be unit).
inline Hit intersect(const std::vector<Primitive> &prims, const Vec3<double> &origin, const Vec3<double> &dir,
                     double eps = 1e-9) {
    Hit best;
    for (std::size_t k = 0; k < prims.size(); ++k) {
        const Primitive &p = prims[k];
        double t = std::numeric_limits<double>::infinity();
        Vec3<double> n;
        if (p.kind == PrimitiveKind::plane) {
            n = p.rotation.col(2);
            const double dn = n.dot(dir);
            if (std::abs(dn) < 1e-15) continue;
            const double tt       = n.dot(p.center - origin) / dn;
            const Vec3<double> q = p.rotation.transpose() * (origin + tt * dir - p.center);
            if (std::abs(q.x()) <= 0.5 * p.size.x() && std::abs(q.y()) <= 0.5 * p.size.y()) t = tt;
        } else if (p.kind == PrimitiveKind::sphere) {
            const Vec3<double> oc = origin - p.center;
            const double a = dir.squaredNorm(), b = oc.dot(dir), c = oc.squaredNorm() - p.radius * p.radius;
            const double disc = b * b - a * c;
            if (disc < 0) continue;
            const double s  = std::sqrt(disc);
            const double t0 = (-b - s) / a, t1 = (-b + s) / a;
            t = t0 > eps ? t0 : t1;
            n = (origin + t * dir - p.center).normalized();
        } else {
            const Vec3<double> o = p.rotation.transpose() * (origin - p.center);
            const Vec3<double> d = p.rotation.transpose() * dir;
            const Vec3<double> h = 0.5 * p.size;
            double tn = -std::numeric_limits<double>::infinity(), tf = std::numeric_limits<double>::infinity();
            int axis_n = 0, axis_f = 0;
            bool miss  = false;
            for (int a = 0; a < 3; ++a) {
                if (std::abs(d[a]) < 1e-15) {
                    if (std::abs(o[a]) > h[a]) miss = true;
                    continue;
                }
                double t0 = (-h[a] - o[a]) / d[a], t1 = (h[a] - o[a]) / d[a];
                if (t0 > t1) std::swap(t0, t1);
                if (t0 > tn) tn = t0, axis_n = a;
                if (t1 < tf) tf = t1, axis_f = a;
            }
            if (miss || tn > tf) continue;
            const int axis = tn > eps ? axis_n : axis_f;
            t              = tn > eps ? tn : tf;
            n              = p.rotation.col(axis);
        }
        if (t > eps && t < best.t) {
            best.t         = t;
            best.normal    = n;
            best.primitive = static_cast<int>(k);
        }
    }
    return best;
}

inline Vec3<double> light_direction() { return Vec3<double>(0.3, 0.2, 1.0).normalized(); }

struct GroundTruthView {
    Camera<double> camera;
    Image<double> rgb;    // 3 channels
    Image<double> depth;  // camera z, 0 where empty
    Image<double> normal; // camera frame, unit, facing the camera
    PixelMask mask;
};

/// First-hit ray casting with ambient + Lambertian shading under a fixed directional light.
inline GroundTruthView render_view(const SceneSpec &spec, const Camera<double> &cam) {
    GroundTruthView v{cam, Image<double>(cam.width, cam.height, 3), Image<double>(cam.width, cam.height, 1),
                      Image<double>(cam.width, cam.height, 3), PixelMask(static_cast<std::size_t>(cam.width) * cam.height, 0)};
    const Vec3<double> eye = cam.center();
    const Vec3<double> L   = light_direction();
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            const Vec3<double> ray_cam = pixel_ray_unnormalized(cam, double(x), double(y)); // unit z
            const Hit h = intersect(spec.primitives, eye, cam.rotation.transpose() * ray_cam);
            if (h.primitive < 0) continue;
            Vec3<double> n_world = h.normal;
            if (n_world.dot(cam.rotation.transpose() * ray_cam) > 0) n_world = -n_world;
            const double shade = 0.35 + 0.65 * std::max(0.0, n_world.dot(L));
            const Vec3<double> hit_point = eye + h.t * (cam.rotation.transpose() * ray_cam);
            v.rgb.set_vec3(x, y, shade * spec.primitives[static_cast<std::size_t>(h.primitive)].albedo_at(hit_point));
            v.depth(x, y) = h.t;
            v.normal.set_vec3(x, y, cam.rotation * n_world);
            v.mask[static_cast<std::size_t>(y) * cam.width + x] = 1;
        }
    }
    return v;
}

inline std::vector<GroundTruthView> render_ground_truth(const SceneSpec &spec) {
    std::vector<GroundTruthView> out;
    for (const auto &cam : spec.cameras()) out.push_back(render_view(spec, cam));
    return out;
}

/// Pseudo normals per view plus the pixels that were corrupted (patch mode only).
struct NoisyNormals {
    std::vector<PseudoNormalFrame<double>> frames;
    std::vector<PixelMask> corrupted;
};

namespace detail {

// Rotates unit n by `angle` about the component of `axis` orthogonal to n, so n . result = cos(angle) exactly
// up to rounding. A shared axis gives a coherent tilt across a view.
inline Vec3<double> tilt(const Vec3<double> &n, const Vec3<double> &axis, double angle) {
    Vec3<double> a = axis - axis.dot(n) * n;
    if (a.norm() < 1e-8) a = n.unitOrthogonal();
    return Eigen::AngleAxisd(angle, a.normalized()) * n;
}

inline Vec3<double> random_unit(std::mt19937_64 &rng) {
    std::normal_distribution<double> nd(0.0, 1.0);
    for (;;) {
        const Vec3<double> v(nd(rng), nd(rng), nd(rng));
        if (v.norm() > 1e-9) return v.normalized();
    }
}

inline Vec3<double> face_camera(Vec3<double> n) {
    n.normalize();
    return n.z() > 0 ? Vec3<double>(-n) : n;
}

} // namespace detail

inline NoisyNormals corrupt_normals(const std::vector<GroundTruthView> &views, const NormalNoiseSpec &noise) {
    NoisyNormals out;
    const double angle = noise.magnitude_deg * M_PI / 180.0;
    for (std::size_t v = 0; v < views.size(); ++v) {
        const auto &gt = views[v];
        const int W = gt.normal.width, H = gt.normal.height;
        PseudoNormalFrame<double> f{gt.normal, gt.mask};
        PixelMask bad(gt.mask.size(), 0);
        std::mt19937_64 rng(noise.seed * 0x9E3779B97F4A7C15ULL + v + 1);
        if (noise.mode == NoiseMode::per_view_rotation && angle > 0) {
            const Vec3<double> axis = detail::random_unit(rng);
            for (int y = 0; y < H; ++y)
                for (int x = 0; x < W; ++x)
                    if (gt.mask[static_cast<std::size_t>(y) * W + x])
                        f.normal.set_vec3(x, y, detail::face_camera(detail::tilt(gt.normal.vec3(x, y), axis, angle)));
        } else if (noise.mode == NoiseMode::patch_corruption && noise.corrupted_fraction > 0) {
            std::size_t mask_count = 0;
            for (auto m : gt.mask) mask_count += m;
            const auto target = static_cast<std::size_t>(std::llround(noise.corrupted_fraction * double(mask_count)));
            std::size_t marked = 0;
            std::uniform_int_distribution<int> px(0, std::max(0, W - 1)), py(0, std::max(0, H - 1));
            for (int attempt = 0; marked < target && attempt < 100000; ++attempt) {
                const int x0 = px(rng) - noise.patch_size / 2, y0 = py(rng) - noise.patch_size / 2;
                const Vec3<double> axis = detail::random_unit(rng);
                for (int y = std::max(0, y0); y < std::min(H, y0 + noise.patch_size) && marked < target; ++y) {
                    for (int x = std::max(0, x0); x < std::min(W, x0 + noise.patch_size) && marked < target; ++x) {
                        const std::size_t i = static_cast<std::size_t>(y) * W + x;
                        if (!gt.mask[i] || bad[i]) continue;
                        bad[i] = 1;
                        ++marked;
                        f.normal.set_vec3(x, y, detail::face_camera(detail::tilt(gt.normal.vec3(x, y), axis, angle)));
                    }
                }
            }
        }
        out.frames.push_back(std::move(f));
        out.corrupted.push_back(std::move(bad));
    }
    return out;
}

/// Unsigned distance from `q` to the union of primitive surfaces.
inline double distance_to_surface(const std::vector<Primitive> &prims, const Vec3<double> &q) {
    double best = std::numeric_limits<double>::infinity();
    for (const auto &p : prims) {
        const Vec3<double> l = p.rotation.transpose() * (q - p.center);
        double d;
        if (p.kind == PrimitiveKind::plane) {
            const Vec2<double> c(std::clamp(l.x(), -0.5 * p.size.x(), 0.5 * p.size.x()),
                                 std::clamp(l.y(), -0.5 * p.size.y(), 0.5 * p.size.y()));
            d = Vec3<double>(l.x() - c.x(), l.y() - c.y(), l.z()).norm();
        } else if (p.kind == PrimitiveKind::sphere) {
            d = std::abs(l.norm() - p.radius);
        } else {
            const Vec3<double> e = l.cwiseAbs() - 0.5 * p.size;
            d = std::abs(e.cwiseMax(0.0).norm() + std::min(e.maxCoeff(), 0.0));
        }
        best = std::min(best, d);
    }
    return best;
}

/// True when some camera sees `q` unobstructed inside its image.
inline bool visible_from_any(const std::vector<Primitive> &prims, const std::vector<Camera<double>> &cams,
                             const Vec3<double> &q) {
    for (const auto &cam : cams) {
        const Vec3<double> pc = cam.to_camera(q);
        if (pc.z() <= kNearPlane) continue;
        const double u = cam.fx * pc.x() / pc.z() + cam.cx, v = cam.fy * pc.y() / pc.z() + cam.cy;
        if (u < 0 || v < 0 || u >= cam.width || v >= cam.height) continue;
        const Vec3<double> eye = cam.center();
        const Hit h = intersect(prims, eye, q - eye);
        if (h.t >= 1.0 - 1e-6) return true;
    }
    return false;
}

/// Area-uniform surface samples, optionally restricted to points some camera sees.
inline std::vector<Vec3<double>> sample_surface(const SceneSpec &spec, std::size_t count, std::uint64_t seed,
                                                bool visible_only = true) {
    std::mt19937_64 rng(seed);
    std::vector<double> areas;
    for (const auto &p : spec.primitives) areas.push_back(p.area());
    std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
    std::uniform_real_distribution<double> u(-0.5, 0.5);
    const auto cams = spec.cameras();
    std::vector<Vec3<double>> out;
    std::size_t attempts = 0;
    while (out.size() < count && attempts++ < 200 * count + 1000) {
        const Primitive &p = spec.primitives[pick(rng)];
        Vec3<double> l;
        if (p.kind == PrimitiveKind::plane) {
            l = {u(rng) * p.size.x(), u(rng) * p.size.y(), 0.0};
        } else if (p.kind == PrimitiveKind::sphere) {
            l = p.radius * detail::random_unit(rng);
        } else {
            const Vec3<double> s = p.size;
            std::discrete_distribution<int> face({s.y() * s.z(), s.x() * s.z(), s.x() * s.y()});
            const int a = face(rng);
            l           = {u(rng) * s.x(), u(rng) * s.y(), u(rng) * s.z()};
            l[a]        = (u(rng) < 0 ? -0.5 : 0.5) * s[a];
        }
        const Vec3<double> q = p.center + p.rotation * l;
        if (visible_only && !visible_from_any(spec.primitives, cams, q)) continue;
        out.push_back(q);
    }
    return out;
}

/// Initial Gaussians from visible surface samples jittered by init.jitter * diagonal, colored by albedo.
inline Scene<double> initial_scene(const SceneSpec &spec) {
    const Aabb<double> b = spec.bounds();
    std::vector<Vec3<double>> pts = sample_surface(spec, static_cast<std::size_t>(spec.init.points), spec.init.seed ^ 0xA5A5ULL);
    if (pts.empty()) throw SpecError("scene spec: no visible surface to initialize from");
    std::mt19937_64 rng(spec.init.seed);
    std::normal_distribution<double> nd(0.0, spec.init.jitter * b.diagonal());
    std::vector<Vec3<double>> colors;
    for (auto &p : pts) {
        double best = std::numeric_limits<double>::infinity();
        Vec3<double> albedo = Vec3<double>::Constant(0.5);
        for (const auto &prim : spec.primitives) {
            const double d = distance_to_surface({prim}, p);
            if (d < best) best = d, albedo = prim.albedo;
        }
        colors.push_back(0.6 * albedo);
        if (spec.init.jitter > 0) p += Vec3<double>(nd(rng), nd(rng), nd(rng));
    }
    return init_from_points<double>(pts, colors, b);
}

} // namespace dnsplat
