#pragma once

#include <cstddef>
#include <random>

#include <Eigen/Geometry>

#include "eit/metrics.hpp"

namespace eit::test {

inline TargetSpec random_target(std::mt19937_64& rng) {
    std::uniform_real_distribution<double> u(-1, 1);
    TargetSpec t;
    t.center = Vec3(3 * u(rng), 3 * u(rng), 3 * u(rng));
    t.semi_axes = Vec3(2 + u(rng), 3 + u(rng), 4 + u(rng));
    const Eigen::Quaterniond q(Eigen::Vector4d(u(rng), u(rng), u(rng), u(rng)).normalized());
    t.rotation = q.toRotationMatrix();
    return t;
}

inline bool inside(const TargetSpec& t, double x, double y, double z, double k = 1.0) {
    const Vec3 d(x - t.center.x(), y - t.center.y(), z - t.center.z());
    double s = 0;
    for (int a = 0; a < 3; ++a) {
        const double c = t.rotation.col(a).dot(d) / (k * t.semi_axes[a]);
        s += c * c;
    }
    return s <= 1.0;
}

// Brute-force counts over explicit (x, y, z) loops.
struct Counts {
    std::size_t roi_errors = 0, recon = 0, truth = 0, outside = 0;
};

inline Counts count(const BinaryVolume& rec, const TargetSpec& t, double roi_scale) {
    Counts c;
    const auto& g = rec.geometry;
    for (int k = 0; k < g.dims[2]; ++k)
        for (int j = 0; j < g.dims[1]; ++j)
            for (int i = 0; i < g.dims[0]; ++i) {
                const double x = g.origin.x() + (i + 0.5) * g.spacing;
                const double y = g.origin.y() + (j + 0.5) * g.spacing;
                const double z = g.origin.z() + (k + 0.5) * g.spacing;
                const bool r = rec.bits[std::size_t((k * g.dims[1] + j) * g.dims[0] + i)];
                const bool in = inside(t, x, y, z);
                c.recon += r;
                c.truth += in;
                c.outside += r && !in;
                if (inside(t, x, y, z, roi_scale)) c.roi_errors += r != in;
            }
    return c;
}

}  // namespace eit::test
