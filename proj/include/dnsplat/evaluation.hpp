// Copyright Contributors to the dnsplat Project
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include "dnsplat/mesh.hpp"

#include <boost/geometry/algorithms/distance.hpp>
#include <boost/geometry/geometries/box.hpp>
#include <boost/geometry/strategies/strategies.hpp>
#include <boost/geometry/geometries/point.hpp>
#include <boost/geometry/index/rtree.hpp>

#include <cmath>
#include <cstdint>
#include <iterator>
#include <random>
#include <stdexcept>
#include <vector>

namespace dnsplat {

/// Nearest-neighbour queries over a fixed point set (bulk-loaded R*-tree).
class PointIndex {
  public:
    using BPoint = boost::geometry::model::point<double, 3, boost::geometry::cs::cartesian>;

    template <typename T> explicit PointIndex(const std::vector<Vec3<T>> &pts) {
        std::vector<BPoint> bp;
        bp.reserve(pts.size());
        for (const auto &p : pts) bp.emplace_back(double(p.x()), double(p.y()), double(p.z()));
        tree_ = Tree(bp.begin(), bp.end());
    }

    bool empty() const { return tree_.empty(); }

    /// Euclidean distance from `q` to the closest indexed point.
    template <typename T> double distance(const Vec3<T> &q) const {
        if (tree_.empty()) throw std::logic_error("PointIndex: empty index");
        const BPoint bq(double(q.x()), double(q.y()), double(q.z()));
        std::vector<BPoint> hit;
        tree_.query(boost::geometry::index::nearest(bq, 1), std::back_inserter(hit));
        return boost::geometry::distance(bq, hit.front());
    }

  private:
    using Tree = boost::geometry::index::rtree<BPoint, boost::geometry::index::rstar<16>>;
    Tree tree_;
};

/// Distance from every point of `from` to its nearest neighbour in `to`.
template <typename T> std::vector<double> nearest_distances(const std::vector<Vec3<T>> &from, const std::vector<Vec3<T>> &to) {
    if (from.empty() || to.empty()) throw std::invalid_argument("nearest_distances: empty point set");
    const PointIndex index(to);
    std::vector<double> d(from.size());
    for (std::size_t i = 0; i < from.size(); ++i) d[i] = index.distance(from[i]);
    return d;
}

struct FScore {
    double precision = 0;
    double recall    = 0;
    double fscore    = 0;
};

/// Precision, recall and their harmonic mean at distance threshold `tau` (strict).
template <typename T> FScore evaluate_fscore(const std::vector<Vec3<T>> &pred, const std::vector<Vec3<T>> &gt, double tau) {
    if (!(tau > 0)) throw std::invalid_argument("evaluate_fscore: tau must be positive");
    auto within = [tau](const std::vector<double> &d) {
        std::size_t n = 0;
        for (double v : d) n += v < tau ? 1 : 0;
        return double(n) / double(d.size());
    };
    FScore s;
    s.precision = within(nearest_distances(pred, gt));
    s.recall    = within(nearest_distances(gt, pred));
    s.fscore    = s.precision + s.recall > 0 ? 2 * s.precision * s.recall / (s.precision + s.recall) : 0.0;
    return s;
}

/// Mean of the two one-sided mean nearest-neighbour distances.
template <typename T> double evaluate_chamfer(const std::vector<Vec3<T>> &pred, const std::vector<Vec3<T>> &gt) {
    auto mean = [](const std::vector<double> &d) {
        double s = 0;
        for (double v : d) s += v;
        return s / double(d.size());
    };
    return 0.5 * (mean(nearest_distances(pred, gt)) + mean(nearest_distances(gt, pred)));
}

/// `count` points distributed uniformly by area over the mesh surface.
template <typename T> std::vector<Vec3<T>> sample_mesh(const TriangleMesh<T> &mesh, std::size_t count, std::uint64_t seed) {
    std::vector<double> areas(mesh.triangles.size());
    for (std::size_t t = 0; t < areas.size(); ++t) areas[t] = double(mesh.triangle_area(t));
    std::vector<Vec3<T>> out;
    if (areas.empty() || count == 0) return out;
    std::mt19937_64 rng(seed);
    std::discrete_distribution<std::size_t> pick(areas.begin(), areas.end());
    std::uniform_real_distribution<double> u(0.0, 1.0);
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto &f = mesh.triangles[pick(rng)];
        const double r1 = std::sqrt(u(rng)), r2 = u(rng);
        const T a = T(1 - r1), b = T(r1 * (1 - r2)), c = T(r1 * r2);
        out.push_back(a * mesh.vertices[static_cast<std::size_t>(f[0])] + b * mesh.vertices[static_cast<std::size_t>(f[1])] +
                      c * mesh.vertices[static_cast<std::size_t>(f[2])]);
    }
    return out;
}

/// Samples per unit area times total area, at least one.
template <typename T> std::size_t samples_for_density(const TriangleMesh<T> &mesh, double per_unit_area) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::ceil(double(mesh.surface_area()) * per_unit_area)));
}

} // namespace dnsplat
