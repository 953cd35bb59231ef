#include "eit/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <numbers>
#include <ostream>

#include <Eigen/Dense>

#include "eit/errors.hpp"

namespace eit {

Vec3 GridGeometry::center(std::size_t index) const {
    const std::size_t i = index % dims[0];
    const std::size_t j = (index / dims[0]) % dims[1];
    const std::size_t k = index / (std::size_t(dims[0]) * dims[1]);
    return origin + spacing * Vec3(double(i) + 0.5, double(j) + 0.5, double(k) + 0.5);
}

void GridGeometry::check() const {
    if (!(spacing > 0)) throw DimensionError("voxel spacing must be positive");
    for (int d : dims)
        if (d < 8) throw DimensionError("voxel grids need at least 8 voxels per axis");
}

GridGeometry GridSpec::geometry() const {
    GridGeometry g;
    g.spacing = 2.0 * half_width / n;
    g.origin = center - Vec3::Constant(half_width);
    g.dims = {n, n, n};
    g.check();
    return g;
}

std::size_t BinaryVolume::count() const {
    return std::size_t(std::count(bits.begin(), bits.end(), std::uint8_t(1)));
}

VoxelMap::VoxelMap(const Mesh& mesh, const GridGeometry& grid)
    : grid_(grid), mesh_id_(mesh.id()), node_count_(mesh.node_count()) {
    grid_.check();
    const std::size_t n = grid_.size();
    element_.assign(n, -1);
    nodes_.assign(n, {0, 0, 0, 0});
    weights_.assign(n, {0, 0, 0, 0});
    std::vector<double> best(n, -1.0);
    const double eps = 1e-12;

    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        const auto& t = mesh.tets[e];
        Vec3 lo = mesh.nodes[t[0]], hi = lo;
        for (int a = 1; a < 4; ++a) {
            lo = lo.cwiseMin(mesh.nodes[t[a]]);
            hi = hi.cwiseMax(mesh.nodes[t[a]]);
        }
        std::array<int, 3> i0{}, i1{};
        bool empty = false;
        for (int d = 0; d < 3; ++d) {
            i0[d] = std::max(0, int(std::ceil((lo[d] - grid_.origin[d]) / grid_.spacing - 0.5)));
            i1[d] = std::min(grid_.dims[d] - 1, int(std::floor((hi[d] - grid_.origin[d]) / grid_.spacing - 0.5)));
            empty = empty || i0[d] > i1[d];
        }
        if (empty) continue;

        const Vec3& p0 = mesh.nodes[t[0]];
        Eigen::Matrix3d edges;
        for (int a = 0; a < 3; ++a) edges.col(a) = mesh.nodes[t[a + 1]] - p0;
        const Eigen::Matrix3d inv = edges.inverse();
        for (int k = i0[2]; k <= i1[2]; ++k)
            for (int j = i0[1]; j <= i1[1]; ++j)
                for (int i = i0[0]; i <= i1[0]; ++i) {
                    const std::size_t idx = (std::size_t(k) * grid_.dims[1] + j) * grid_.dims[0] + i;
                    const Vec3 lam = inv * (grid_.center(idx) - p0);
                    const double l0 = 1.0 - lam.sum();
                    const double worst = std::min({l0, lam[0], lam[1], lam[2]});
                    if (worst < -eps || worst <= best[idx]) continue;
                    best[idx] = worst;
                    element_[idx] = int(e);
                    nodes_[idx] = t;
                    weights_[idx] = {l0, lam[0], lam[1], lam[2]};
                }
    }
}

VoxelGrid VoxelMap::interpolate(const Eigen::VectorXd& nodal) const {
    if (std::size_t(nodal.size()) != node_count_) throw DimensionError("nodal image length does not match the mesh");
    VoxelGrid out;
    out.geometry = grid_;
    out.values.assign(grid_.size(), 0.0);
    out.in_mesh.assign(grid_.size(), 0);
    for (std::size_t v = 0; v < grid_.size(); ++v) {
        if (element_[v] < 0) continue;
        double s = 0.0;
        for (int a = 0; a < 4; ++a) s += weights_[v][a] * nodal[nodes_[v][a]];
        out.values[v] = s;
        out.in_mesh[v] = 1;
    }
    return out;
}

VoxelGrid voxelize(const Mesh& mesh, const NodalImage& img, const GridSpec& spec) {
    return VoxelMap(mesh, spec.geometry()).interpolate(img.values);
}

BinaryVolume threshold_quarter(const VoxelGrid& grid, int contrast_sign) {
    const double s = contrast_sign < 0 ? -1.0 : 1.0;
    double peak = 0.0;
    for (double v : grid.values) peak = std::max(peak, s * v);
    if (!(peak > 0)) throw EmptyImageError("image has no voxel with the expected contrast sign");
    BinaryVolume out{grid.geometry, std::vector<std::uint8_t>(grid.values.size(), 0)};
    const double level = 0.25 * peak;
    for (std::size_t v = 0; v < grid.values.size(); ++v) out.bits[v] = s * grid.values[v] >= level ? 1 : 0;
    return out;
}

BinaryVolume voxelize_target(const GridGeometry& grid, const TargetSpec& target) {
    BinaryVolume out{grid, std::vector<std::uint8_t>(grid.size(), 0)};
    for (std::size_t v = 0; v < grid.size(); ++v) out.bits[v] = target.contains(grid.center(v)) ? 1 : 0;
    return out;
}

double ellipsoid_volume(const Vec3& semi_axes) {
    return 4.0 / 3.0 * std::numbers::pi * semi_axes.prod();
}

double ellipsoid_surface_area(const Vec3& semi_axes) {
    std::array<double, 3> s{semi_axes[0], semi_axes[1], semi_axes[2]};
    std::sort(s.begin(), s.end(), std::greater<>());
    const double a = s[0], b = s[1], c = s[2];
    const double pi = std::numbers::pi;
    if (a - c < 1e-12 * a) return 4.0 * pi * a * a;
    const double phi = std::acos(c / a);
    const double k = std::sqrt(a * a * (b * b - c * c) / (b * b * (a * a - c * c)));
    const double sin_phi = std::sin(phi);
    return 2.0 * pi * c * c +
           2.0 * pi * a * b / sin_phi *
               (std::ellint_2(k, phi) * sin_phi * sin_phi + std::ellint_1(k, phi) * std::cos(phi) * std::cos(phi));
}

double MetricOptions::domain_volume() const {
    return 4.0 / 3.0 * std::numbers::pi * domain_radius * domain_radius * domain_radius;
}

namespace {

void require_same(const GridGeometry& a, const GridGeometry& b) {
    if (!(a == b)) throw DimensionError("binary volumes do not share a grid");
}

}  // namespace

double nade(const BinaryVolume& recon, const TargetSpec& truth, const MetricOptions& opt) {
    const auto& g = recon.geometry;
    const TargetSpec roi = truth.scaled(opt.roi_scale);
    std::size_t errors = 0;
    for (std::size_t v = 0; v < g.size(); ++v) {
        const Vec3 p = g.center(v);
        if (!roi.contains(p)) continue;
        errors += (recon.bits[v] != 0) != truth.contains(p);
    }
    return double(errors) * g.voxel_volume() / ellipsoid_surface_area(truth.semi_axes) / opt.probe_diameter;
}

double delta_res(const BinaryVolume& recon, const BinaryVolume& truth, double domain_volume) {
    require_same(recon.geometry, truth.geometry);
    const double dv = recon.geometry.voxel_volume();
    const double res_recon = std::cbrt(double(recon.count()) * dv / domain_volume);
    const double res_truth = std::cbrt(double(truth.count()) * dv / domain_volume);
    return std::abs(res_recon - res_truth) * 100.0;
}

double shape_deformation(const BinaryVolume& recon, const BinaryVolume& truth) {
    require_same(recon.geometry, truth.geometry);
    std::size_t total = 0, outside = 0;
    for (std::size_t v = 0; v < recon.bits.size(); ++v) {
        if (!recon.bits[v]) continue;
        ++total;
        outside += !truth.bits[v];
    }
    if (total == 0) throw EmptyImageError("shape deformation of an empty reconstruction");
    return 100.0 * double(outside) / double(total);
}

ErrorReport full_report(const VoxelMap& map, const NodalImage& img, const TargetSpec& target, double distance,
                        const std::string& method, const MetricOptions& opt) {
    if (img.mesh_id != 0 && img.mesh_id != map.mesh_id()) throw ProvenanceError("image belongs to a different mesh");
    ErrorReport r;
    r.distance = distance;
    r.method = method;
    const BinaryVolume truth = voxelize_target(map.geometry(), target);
    const int sign = target.sigma_in >= target.sigma_bg ? 1 : -1;
    try {
        const BinaryVolume recon = threshold_quarter(map.interpolate(img.values), sign);
        r.nade = nade(recon, target, opt);
        r.delta_res = delta_res(recon, truth, opt.domain_volume());
        r.sd = shape_deformation(recon, truth);
    } catch (const EmptyImageError&) {
        // Worst case: every ROI voxel misclassified.
        BinaryVolume worst{map.geometry(), std::vector<std::uint8_t>(map.geometry().size(), 0)};
        const TargetSpec roi = target.scaled(opt.roi_scale);
        for (std::size_t v = 0; v < worst.bits.size(); ++v) {
            const Vec3 p = worst.geometry.center(v);
            worst.bits[v] = roi.contains(p) && !truth.bits[v];
        }
        r.nade = nade(worst, target, opt);
        const BinaryVolume empty{map.geometry(), std::vector<std::uint8_t>(map.geometry().size(), 0)};
        r.delta_res = delta_res(empty, truth, opt.domain_volume());
        r.sd = 100.0;
        r.degenerate = true;
    }
    return r;
}

ErrorReport full_report(const Mesh& mesh, const NodalImage& img, const TargetSpec& target, const GridSpec& spec,
                        double distance, const std::string& method, const MetricOptions& opt) {
    return full_report(VoxelMap(mesh, spec.geometry()), img, target, distance, method, opt);
}

void write_report_csv(std::ostream& os, const std::vector<ErrorReport>& reports) {
    os << "method,distance,nade,delta_res_pct,sd_pct,case_id\n";
    const auto flags = os.flags();
    const auto precision = os.precision();
    os << std::setprecision(10);
    for (const auto& r : reports)
        os << r.method << ',' << r.distance << ',' << r.nade << ',' << r.delta_res << ',' << r.sd << ',' << r.case_id
           << '\n';
    os.flags(flags);
    os.precision(precision);
}

void write_binary_volume_vtk(std::ostream& os, const BinaryVolume& volume, const std::string& title) {
    std::vector<std::size_t> set;
    for (std::size_t v = 0; v < volume.bits.size(); ++v)
        if (volume.bits[v]) set.push_back(v);
    os << "# vtk DataFile Version 3.0\n" << title << "\nASCII\nDATASET UNSTRUCTURED_GRID\n";
    os << "POINTS " << set.size() << " double\n";
    os << std::setprecision(10);
    for (std::size_t v : set) {
        const Vec3 c = volume.geometry.center(v);
        os << c.x() << ' ' << c.y() << ' ' << c.z() << '\n';
    }
    os << "CELLS " << set.size() << ' ' << 2 * set.size() << '\n';
    for (std::size_t i = 0; i < set.size(); ++i) os << "1 " << i << '\n';
    os << "CELL_TYPES " << set.size() << '\n';
    for (std::size_t i = 0; i < set.size(); ++i) os << "1\n";
    os << "POINT_DATA " << set.size() << "\nSCALARS occupied unsigned_char 1\nLOOKUP_TABLE default\n";
    for (std::size_t i = 0; i < set.size(); ++i) os << "1\n";
}

}  // namespace eit
