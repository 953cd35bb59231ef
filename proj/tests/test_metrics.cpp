#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <sstream>

#include <Eigen/Geometry>

#include "common.hpp"
#include "oracles.hpp"
#include "eit/errors.hpp"
#include "eit/metrics.hpp"

using namespace eit;
using namespace eit::test;

namespace {

GridGeometry small_grid() {
    GridGeometry g;
    g.origin = Vec3(-12, -12, -12);
    g.spacing = 0.75;
    g.dims = {32, 32, 32};
    return g;
}

}  // namespace

TEST_CASE("metrics equal brute-force voxel counting on random volumes") {
    std::mt19937_64 rng(21);
    const GridGeometry g = small_grid();
    const MetricOptions opt;
    for (int trial = 0; trial < 50; ++trial) {
        const TargetSpec t = random_target(rng);
        const TargetSpec other = random_target(rng);
        BinaryVolume rec{g, std::vector<std::uint8_t>(g.size(), 0)};
        std::bernoulli_distribution flip(0.05);
        for (std::size_t v = 0; v < g.size(); ++v) rec.bits[v] = other.contains(g.center(v)) != flip(rng);
        const BinaryVolume truth = voxelize_target(g, t);
        const Counts c = count(rec, t, opt.roi_scale);
        const double dv = g.spacing * g.spacing * g.spacing;
        CHECK(truth.count() == c.truth);
        CHECK(nade(rec, t, opt) == double(c.roi_errors) * dv / ellipsoid_surface_area(t.semi_axes) / opt.probe_diameter);
        const double res = std::abs(std::cbrt(c.recon * dv / opt.domain_volume()) - std::cbrt(c.truth * dv / opt.domain_volume())) * 100.0;
        CHECK(delta_res(rec, truth, opt.domain_volume()) == res);
        CHECK(shape_deformation(rec, truth) == 100.0 * double(c.outside) / double(c.recon));
    }
}

TEST_CASE("ellipsoid surface area matches quadrature and closed forms") {
    CHECK(ellipsoid_surface_area(Vec3(2, 2, 2)) == doctest::Approx(16 * std::numbers::pi).epsilon(1e-12));
    // Prolate spheroid a = b < c.
    const double a = 2, c = 5, e = std::sqrt(1 - a * a / (c * c));
    const double prolate = 2 * std::numbers::pi * a * a * (1 + c / (a * e) * std::asin(e));
    CHECK(ellipsoid_surface_area(Vec3(a, a, c)) == doctest::Approx(prolate).epsilon(1e-10));
    // Midpoint quadrature over the parametric surface.
    const Vec3 s(4, 6, 9);
    const int n = 1200;
    double area = 0;
    for (int i = 0; i < n; ++i) {
        const double th = std::numbers::pi * (i + 0.5) / n;
        for (int j = 0; j < 2 * n; ++j) {
            const double ph = std::numbers::pi * (j + 0.5) / n;
            const Vec3 du(s.x() * std::cos(th) * std::cos(ph), s.y() * std::cos(th) * std::sin(ph), -s.z() * std::sin(th));
            const Vec3 dw(-s.x() * std::sin(th) * std::sin(ph), s.y() * std::sin(th) * std::cos(ph), 0);
            area += du.cross(dw).norm();
        }
    }
    area *= (std::numbers::pi / n) * (std::numbers::pi / n);
    CHECK(ellipsoid_surface_area(s) == doctest::Approx(area).epsilon(1e-5));
}

TEST_CASE("reports are invariant to image scaling") {
    const Mesh& m = test::coarse_mesh();
    const VoxelMap map(m, GridSpec{}.geometry());
    TargetSpec t;
    t.center = Vec3(13, 0, 0);
    Eigen::VectorXd x(Eigen::Index(m.node_count()));
    for (std::size_t v = 0; v < m.node_count(); ++v) x[Eigen::Index(v)] = std::exp(-(m.nodes[v] - Vec3(11, 1, 0)).squaredNorm() / 30);
    const auto base = full_report(map, {x, m.id()}, t, 3.0, "gn");
    for (double k : {0.1, 1.0, 7.0}) {
        const auto r = full_report(map, {k * x, m.id()}, t, 3.0, "gn");
        CHECK(r.nade == base.nade);
        CHECK(r.delta_res == base.delta_res);
        CHECK(r.sd == base.sd);
    }
}

TEST_CASE("empty images are degenerate and scored as worst case") {
    const Mesh& m = test::coarse_mesh();
    const VoxelMap map(m, GridSpec{}.geometry());
    TargetSpec t;
    t.center = Vec3(13, 0, 0);
    const VoxelGrid zero = map.interpolate(Eigen::VectorXd::Zero(Eigen::Index(m.node_count())));
    CHECK_THROWS_AS(threshold_quarter(zero), EmptyImageError);
    const auto r = full_report(map, {Eigen::VectorXd::Zero(Eigen::Index(m.node_count())), m.id()}, t, 3.0, "gn");
    CHECK(r.degenerate);
    CHECK(r.sd == 100.0);
    CHECK(r.nade > 0);
    CHECK_THROWS_AS(full_report(map, {Eigen::VectorXd::Zero(3), 12345}, t, 3.0, "gn"), ProvenanceError);
}

TEST_CASE("voxel interpolation reproduces linear fields") {
    const Mesh& m = test::coarse_mesh();
    const VoxelMap map(m, GridSpec{}.geometry());
    Eigen::VectorXd f(Eigen::Index(m.node_count()));
    const Vec3 a(0.3, -0.2, 0.7);
    for (std::size_t v = 0; v < m.node_count(); ++v) f[Eigen::Index(v)] = 1.5 + a.dot(m.nodes[v]);
    const VoxelGrid g = map.interpolate(f);
    std::size_t in = 0;
    for (std::size_t v = 0; v < g.values.size(); ++v) {
        if (!g.in_mesh[v]) continue;
        ++in;
        CHECK(g.values[v] == doctest::Approx(1.5 + a.dot(g.geometry.center(v))).epsilon(1e-9));
    }
    CHECK(in > g.values.size() / 2);
}

TEST_CASE("quarter threshold honours the contrast sign") {
    VoxelGrid g;
    g.geometry = small_grid();
    g.values.assign(g.geometry.size(), 0.0);
    g.in_mesh.assign(g.geometry.size(), 1);
    g.values[0] = 4.0;
    g.values[1] = 1.0;
    g.values[2] = 0.99;
    g.values[3] = -8.0;
    const auto pos = threshold_quarter(g, 1);
    CHECK(pos.count() == 2);
    const auto neg = threshold_quarter(g, -1);
    CHECK(neg.count() == 1);
    CHECK(neg.bits[3] == 1);
}

TEST_CASE("report CSV and VTK layouts") {
    std::ostringstream csv;
    write_report_csv(csv, {{1.5, 2.0, 30.0, 1.0, "gn", "case0000", false}});
    CHECK(csv.str() == "method,distance,nade,delta_res_pct,sd_pct,case_id\ngn,1,1.5,2,30,case0000\n");

    BinaryVolume v{small_grid(), std::vector<std::uint8_t>(small_grid().size(), 0)};
    v.bits[5] = v.bits[40] = 1;
    std::ostringstream vtk;
    write_binary_volume_vtk(vtk, v, "title");
    const std::string s = vtk.str();
    CHECK(s.rfind("# vtk DataFile Version 3.0\ntitle\nASCII\nDATASET UNSTRUCTURED_GRID\n", 0) == 0);
    CHECK(s.find("POINTS 2 double") != std::string::npos);
    CHECK(s.find("CELLS 2 4") != std::string::npos);
    CHECK(s.find("CELL_TYPES 2") != std::string::npos);
    CHECK(s.find("POINT_DATA 2") != std::string::npos);
}

TEST_CASE("adding spurious volume outside the truth never lowers NADE or SD") {
    std::mt19937_64 rng(5);
    const GridGeometry g = small_grid();
    const MetricOptions opt;
    for (int trial = 0; trial < 10; ++trial) {
        const TargetSpec t = random_target(rng);
        const BinaryVolume truth = voxelize_target(g, t);
        const TargetSpec roi = t.scaled(opt.roi_scale);
        BinaryVolume rec = truth;
        std::vector<std::size_t> outside;
        for (std::size_t v = 0; v < g.size(); ++v)
            if (!truth.bits[v] && roi.contains(g.center(v))) outside.push_back(v);
        std::shuffle(outside.begin(), outside.end(), rng);
        double n_prev = nade(rec, t, opt), s_prev = shape_deformation(rec, truth);
        for (std::size_t k = 0; k < outside.size() && k < 400; k += 40) {
            for (std::size_t i = k; i < k + 40 && i < outside.size(); ++i) rec.bits[outside[i]] = 1;
            const double n = nade(rec, t, opt), s = shape_deformation(rec, truth);
            CHECK(n >= n_prev);
            CHECK(s >= s_prev);
            n_prev = n;
            s_prev = s;
        }
    }
}
