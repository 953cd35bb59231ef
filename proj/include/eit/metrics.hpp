#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "eit/mesh.hpp"
#include "eit/recon_linear.hpp"

namespace eit {

/// Regular voxel lattice. Voxel (i,j,k) has its centre at
/// origin + (i + 1/2, j + 1/2, k + 1/2) * spacing; x varies fastest.
struct GridGeometry {
    Vec3 origin = Vec3::Zero();
    double spacing = 1.0;
    std::array<int, 3> dims{8, 8, 8};

    std::size_t size() const { return std::size_t(dims[0]) * dims[1] * dims[2]; }
    Vec3 center(std::size_t index) const;
    double voxel_volume() const { return spacing * spacing * spacing; }
    void check() const;
    bool operator==(const GridGeometry&) const = default;
};

/// Cube of `half_width` around `center` with `n` voxels per axis.
struct GridSpec {
    Vec3 center = Vec3::Zero();
    double half_width = 24.0;
    int n = 64;

    GridGeometry geometry() const;
};

struct VoxelGrid {
    GridGeometry geometry;
    std::vector<double> values;
    std::vector<std::uint8_t> in_mesh;
};

struct BinaryVolume {
    GridGeometry geometry;
    std::vector<std::uint8_t> bits;

    std::size_t count() const;
};

/// Point location of every voxel centre in the mesh, reusable across images.
class VoxelMap {
public:
    VoxelMap(const Mesh& mesh, const GridGeometry& grid);

    VoxelGrid interpolate(const Eigen::VectorXd& nodal) const;
    const GridGeometry& geometry() const { return grid_; }
    std::uint64_t mesh_id() const { return mesh_id_; }
    /// Containing element per voxel, -1 outside the mesh.
    const std::vector<int>& elements() const { return element_; }

private:
    GridGeometry grid_;
    std::uint64_t mesh_id_;
    std::size_t node_count_;
    std::vector<int> element_;
    std::vector<std::array<int, 4>> nodes_;
    std::vector<std::array<double, 4>> weights_;
};

VoxelGrid voxelize(const Mesh& mesh, const NodalImage& img, const GridSpec& spec);

/// Voxels whose signed value reaches a quarter of the signed maximum.
/// `contrast_sign` is +1 for a conductive target, -1 for a resistive one.
BinaryVolume threshold_quarter(const VoxelGrid& grid, int contrast_sign = 1);

/// Voxels whose centre lies inside the target ellipsoid.
BinaryVolume voxelize_target(const GridGeometry& grid, const TargetSpec& target);

double ellipsoid_surface_area(const Vec3& semi_axes);
double ellipsoid_volume(const Vec3& semi_axes);

struct MetricOptions {
    double probe_diameter = 2.0;
    double roi_scale = 2.0;          // ROI semi-axes relative to the target
    double domain_radius = 10.0;     // RES reference sphere
    double domain_volume() const;
};

double nade(const BinaryVolume& recon, const TargetSpec& truth, const MetricOptions& opt = {});
double delta_res(const BinaryVolume& recon, const BinaryVolume& truth, double domain_volume);
double shape_deformation(const BinaryVolume& recon, const BinaryVolume& truth);

struct ErrorReport {
    double nade = 0.0;
    double delta_res = 0.0;  // percent
    double sd = 0.0;         // percent
    double distance = 0.0;
    std::string method;
    std::string case_id;
    bool degenerate = false;
};

ErrorReport full_report(const VoxelMap& map, const NodalImage& img, const TargetSpec& target, double distance,
                        const std::string& method, const MetricOptions& opt = {});
ErrorReport full_report(const Mesh& mesh, const NodalImage& img, const TargetSpec& target, const GridSpec& spec,
                        double distance, const std::string& method, const MetricOptions& opt = {});

void write_report_csv(std::ostream& os, const std::vector<ErrorReport>& reports);

/// Legacy VTK text layout: set voxels as vertex cells.
void write_binary_volume_vtk(std::ostream& os, const BinaryVolume& volume,
                             const std::string& title = "thresholded reconstruction");

}  // namespace eit
