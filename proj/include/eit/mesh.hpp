#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace eit {

using Vec3 = Eigen::Vector3d;

/// Open-domain tank around a cylindrical probe. All lengths are in probe
/// radii. The probe bore runs through the full tank height; the electrode
/// array sits in the band around z = 0.
struct TankGeometry {
    double probe_radius = 1.0;
    double probe_height = 70.0;
    double tank_radius = 35.0;
    double tank_height = 70.0;
    int layers = 4;
    int electrodes_per_layer = 8;
    double electrode_arc = 0.4;     // arc length of one patch
    double electrode_height = 0.4;  // axial extent of one patch
    double layer_pitch = 0.8;       // axial distance between ring centres

    int electrode_count() const { return layers * electrodes_per_layer; }
    /// Angle of the centre of electrode `k` within its ring.
    double electrode_angle(int k) const;
    /// Axial centre of ring `layer`.
    double layer_z(int layer) const;
    /// Throws GeometryError when an invariant does not hold.
    void check() const;
};

/// Target edge lengths near the probe and in the far field.
struct RefinementSpec {
    double near_edge = 0.4;
    double far_edge = 8.0;
    /// Seed for the interior node jitter. Zero disables jitter.
    std::uint64_t seed = 0;
    /// Jitter amplitude as a fraction of the local spacing.
    double jitter = 0.15;
    /// Geometric growth of radial and axial spacing away from the probe.
    /// Zero derives it from the azimuthal segment count.
    double growth = 0.0;
};

using Tet = std::array<int, 4>;
using Face = std::array<int, 3>;

struct Mesh {
    TankGeometry geometry;
    std::vector<Vec3> nodes;
    std::vector<Tet> tets;
    std::vector<std::vector<Face>> electrodes;
    std::vector<Face> outer_faces;

    std::size_t node_count() const { return nodes.size(); }
    std::size_t element_count() const { return tets.size(); }

    /// Content hash over geometry, nodes, tets and patches.
    std::uint64_t id() const;
};

enum class BoundaryKind { Electrode, Probe, Outer, Cap };

/// Named presets: "desk" and "paper".
RefinementSpec refinement_preset(const std::string& name);

Mesh build_mesh(const TankGeometry& geom, const RefinementSpec& density);

struct Violation {
    enum class Kind { InvertedElement, OrphanNode, Disconnected, EmptyPatch, PatchOffProbe };
    Kind kind;
    std::size_t index;  // element, node, component or electrode index
    std::string message;
};

struct ValidationReport {
    std::vector<Violation> violations;
    bool ok() const { return violations.empty(); }
    std::string summary() const;
};

ValidationReport validate_mesh(const Mesh& mesh);

/// Rotated, translated ellipsoid with a conductivity inside and outside.
struct TargetSpec {
    Vec3 center = Vec3::Zero();
    Vec3 semi_axes = Vec3(4.0, 6.0, 9.0);
    Eigen::Matrix3d rotation = Eigen::Matrix3d::Identity();
    double sigma_in = 0.3;
    double sigma_bg = 0.15;

    /// True when `p` lies inside the ellipsoid (boundary included).
    bool contains(const Vec3& p) const;
    /// Same ellipsoid with every semi-axis multiplied by `k`.
    TargetSpec scaled(double k) const;
};

std::vector<std::size_t> elements_in_ellipsoid(const Mesh& mesh, const TargetSpec& target);

// Per-element geometry helpers shared by the solvers.
double tet_signed_volume(const Mesh& mesh, std::size_t e);
Vec3 tet_centroid(const Mesh& mesh, std::size_t e);
std::vector<double> element_volumes(const Mesh& mesh);
double face_area(const Mesh& mesh, const Face& f);

/// Boundary faces (faces owned by exactly one tet) with their classification.
struct BoundaryFace {
    Face face;
    BoundaryKind kind;
    int electrode = -1;
    std::size_t element = 0;  // owning tet
};
std::vector<BoundaryFace> classify_boundary(const Mesh& mesh);

/// Interior faces with their two neighbouring elements.
struct InteriorFace {
    Face face;
    std::size_t left;
    std::size_t right;
};
std::vector<InteriorFace> interior_faces(const Mesh& mesh);

}  // namespace eit
