#include "eit/mesh.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_map>

#include <Eigen/Dense>

#include "eit/errors.hpp"
#include "eit/hash.hpp"

namespace eit {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;

double wrap_angle(double a) {
    a = std::fmod(a + std::numbers::pi, kTwoPi);
    if (a < 0) a += kTwoPi;
    return a - std::numbers::pi;
}

std::uint64_t face_key(Face f) {
    std::sort(f.begin(), f.end());
    return (std::uint64_t(f[0]) << 42) | (std::uint64_t(f[1]) << 21) | std::uint64_t(f[2]);
}

struct FaceOwners {
    Face face;
    std::size_t first;
    std::size_t second;
    int count;
};

std::vector<FaceOwners> collect_faces(const Mesh& mesh) {
    static constexpr int kLocal[4][3] = {{1, 2, 3}, {0, 3, 2}, {0, 1, 3}, {0, 2, 1}};
    std::unordered_map<std::uint64_t, std::size_t> index;
    index.reserve(mesh.tets.size() * 3);
    std::vector<FaceOwners> faces;
    faces.reserve(mesh.tets.size() * 3);
    for (std::size_t e = 0; e < mesh.tets.size(); ++e) {
        const auto& t = mesh.tets[e];
        for (const auto& lf : kLocal) {
            Face f{t[lf[0]], t[lf[1]], t[lf[2]]};
            auto [it, inserted] = index.try_emplace(face_key(f), faces.size());
            if (inserted) {
                faces.push_back({f, e, e, 1});
            } else {
                auto& owner = faces[it->second];
                owner.second = e;
                ++owner.count;
            }
        }
    }
    return faces;
}

// Axial node levels: uniform near-edge spacing through the electrode band
// (hitting every patch edge exactly), geometric growth beyond it.
std::vector<double> axial_levels(const TankGeometry& g, const RefinementSpec& d, double growth) {
    std::vector<double> breaks;
    for (int l = 0; l < g.layers; ++l) {
        breaks.push_back(g.layer_z(l) - 0.5 * g.electrode_height);
        breaks.push_back(g.layer_z(l) + 0.5 * g.electrode_height);
    }
    std::sort(breaks.begin(), breaks.end());
    breaks.insert(breaks.begin(), breaks.front() - d.near_edge);
    breaks.push_back(breaks.back() + d.near_edge);

    std::vector<double> band;
    for (std::size_t i = 0; i + 1 < breaks.size(); ++i) {
        const double gap = breaks[i + 1] - breaks[i];
        const int pieces = std::max(1, int(std::ceil(gap / d.near_edge - 1e-9)));
        for (int p = 0; p < pieces; ++p) band.push_back(breaks[i] + gap * p / pieces);
    }
    band.push_back(breaks.back());

    const double top = 0.5 * g.tank_height;
    auto grow = [&](double start, double dir) {
        std::vector<double> out;
        double z = start;
        double h = d.near_edge;
        while (true) {
            h = std::min(d.far_edge, h * growth);
            const double remaining = top - std::abs(z);
            if (remaining <= 1.5 * h) {
                out.push_back(dir * top);
                break;
            }
            z += dir * h;
            out.push_back(z);
        }
        return out;
    };
    if (band.front() <= -top || band.back() >= top) throw GeometryError("electrode band does not fit inside the tank height");
    auto below = grow(band.front(), -1.0);
    auto above = grow(band.back(), 1.0);
    std::vector<double> levels(below.rbegin(), below.rend());
    levels.insert(levels.end(), band.begin(), band.end());
    levels.insert(levels.end(), above.begin(), above.end());
    return levels;
}

std::vector<double> radial_rings(const TankGeometry& g, const RefinementSpec& d, double growth) {
    std::vector<double> rings{g.probe_radius};
    double r = g.probe_radius;
    while (true) {
        const double h = std::clamp((growth - 1.0) * r, d.near_edge, d.far_edge);
        if (r + 1.5 * h >= g.tank_radius) {
            rings.push_back(g.tank_radius);
            break;
        }
        r += h;
        rings.push_back(r);
    }
    return rings;
}

}  // namespace

double TankGeometry::electrode_angle(int k) const {
    return kTwoPi * k / electrodes_per_layer;
}

double TankGeometry::layer_z(int layer) const {
    return (layer - 0.5 * (layers - 1)) * layer_pitch;
}

void TankGeometry::check() const {
    if (!(probe_radius > 0)) throw GeometryError("probe_radius must be positive");
    if (tank_radius < 20.0 * probe_radius)
        throw GeometryError("tank_radius must be at least 20 probe radii (open-domain condition)");
    if (layers * electrodes_per_layer != 32)
        throw GeometryError("layers x electrodes_per_layer must equal 32");
    if (!(electrode_arc > 0) || !(electrode_height > 0))
        throw GeometryError("electrode_size must be positive");
    if (electrode_arc >= kTwoPi * probe_radius / electrodes_per_layer)
        throw GeometryError("electrode_size arc exceeds 1/" + std::to_string(electrodes_per_layer) +
                            " of the probe circumference: patches would overlap");
    if (electrode_height >= layer_pitch)
        throw GeometryError("electrode_size height exceeds layer_pitch: patches would overlap");
    if (probe_height < tank_height) throw GeometryError("probe_height must span the tank height");
    if (layers * layer_pitch >= tank_height) throw GeometryError("electrode array taller than the tank");
}

std::uint64_t Mesh::id() const {
    Fnv1a h;
    h.add(geometry.probe_radius).add(geometry.tank_radius).add(geometry.tank_height);
    h.add(geometry.layers).add(geometry.electrodes_per_layer);
    h.add(geometry.electrode_arc).add(geometry.electrode_height).add(geometry.layer_pitch);
    for (const auto& p : nodes) h.add(p.x()).add(p.y()).add(p.z());
    for (const auto& t : tets) h.add_bytes(t.data(), sizeof(int) * 4);
    for (const auto& patch : electrodes) {
        h.add(patch.size());
        for (const auto& f : patch) h.add_bytes(f.data(), sizeof(int) * 3);
    }
    return h.value();
}

RefinementSpec refinement_preset(const std::string& name) {
    if (name == "desk") return {0.4, 8.0, 0, 0.15, 0.0};
    if (name == "desk-generation") return {0.4, 6.0, 7, 0.15, 0.0};
    if (name == "paper-generation") return {0.3, 6.0, 7, 0.15, 1.25};
    if (name == "paper") return {0.3, 8.0, 0, 0.15, 1.33};
    throw GeometryError("unknown refinement preset: " + name);
}

Mesh build_mesh(const TankGeometry& geom, const RefinementSpec& density) {
    geom.check();
    if (!(density.near_edge > 0) || density.far_edge < density.near_edge)
        throw GeometryError("refinement spec requires 0 < near_edge <= far_edge");

    const int per_layer = geom.electrodes_per_layer;
    const int segments =
        per_layer * std::max(1, int(std::ceil(kTwoPi * geom.probe_radius / (per_layer * density.near_edge) - 1e-9)));
    const double growth = density.growth > 1.0 ? density.growth : 1.0 + kTwoPi / segments;
    const auto rings = radial_rings(geom, density, growth);
    const auto levels = axial_levels(geom, density, growth);

    const int n_rings = int(rings.size());
    const int n_levels = int(levels.size());

    // Azimuthal count per ring: doubles where the arc spacing outgrows the
    // radial spacing, and the outer wall always gets at least 32 segments.
    std::vector<int> counts(n_rings, segments);
    for (int i = 1; i < n_rings; ++i) {
        const double h = rings[i] - rings[i - 1];
        counts[i] = counts[i - 1];
        if (kTwoPi * rings[i] / counts[i] > 2.0 * h) counts[i] *= 2;
        if (i + 1 == n_rings)
            while (counts[i] < 32) counts[i] *= 2;
        counts[i] = std::min(counts[i], 2 * counts[i - 1]);
    }
    std::vector<int> offsets(n_rings + 1, 0);
    for (int i = 0; i < n_rings; ++i) offsets[i + 1] = offsets[i] + counts[i];
    const int per_level = offsets[n_rings];

    Mesh mesh;
    mesh.geometry = geom;
    mesh.nodes.resize(std::size_t(per_level) * n_levels);

    std::mt19937_64 rng(density.seed);
    std::uniform_real_distribution<double> unit(-1.0, 1.0);
    const bool jitter = density.seed != 0 && density.jitter > 0;

    for (int k = 0; k < n_levels; ++k) {
        for (int i = 0; i < n_rings; ++i) {
            for (int j = 0; j < counts[i]; ++j) {
                double r = rings[i];
                // Doubled rings keep every other node aligned with the ring inside.
                double theta = kTwoPi * (j + 0.5 * counts[i] / segments) / counts[i];
                double z = levels[k];
                if (jitter && i > 0 && i + 1 < n_rings && k > 0 && k + 1 < n_levels) {
                    const double dr = std::min(rings[i] - rings[i - 1], rings[i + 1] - rings[i]);
                    const double dz = std::min(levels[k] - levels[k - 1], levels[k + 1] - levels[k]);
                    r += density.jitter * dr * unit(rng);
                    theta += density.jitter * (kTwoPi / counts[i]) * unit(rng);
                    z += density.jitter * dz * unit(rng);
                }
                mesh.nodes[std::size_t(k) * per_level + offsets[i] + j] =
                    Vec3(r * std::cos(theta), r * std::sin(theta), z);
            }
        }
    }

    // 2D annulus triangulation. Rings with equal counts are joined by quads
    // split along alternating diagonals; a doubling ring uses a fan pattern.
    std::vector<std::array<int, 3>> tris;
    for (int i = 0; i + 1 < n_rings; ++i) {
        const int na = counts[i], nb = counts[i + 1];
        const int oa = offsets[i], ob = offsets[i + 1];
        for (int j = 0; j < na; ++j) {
            const int jn = (j + 1) % na;
            if (nb == na) {
                const int a = oa + j, b = oa + jn, c = ob + jn, d = ob + j;
                if ((i + j) % 2 == 0) {
                    tris.push_back({a, b, c});
                    tris.push_back({a, c, d});
                } else {
                    tris.push_back({a, b, d});
                    tris.push_back({b, c, d});
                }
            } else {
                const int a = oa + j, b = oa + jn;
                const int c0 = ob + 2 * j, c1 = ob + 2 * j + 1, c2 = ob + (2 * j + 2) % nb;
                tris.push_back({a, c1, c0});
                tris.push_back({a, b, c1});
                tris.push_back({b, c2, c1});
            }
        }
    }

    // Each prism splits into three tets; the diagonal of every quad face runs
    // from the lower-index bottom node to the higher-index top node, so
    // neighbouring prisms agree.
    mesh.tets.reserve(tris.size() * 3 * (n_levels - 1));
    for (int k = 0; k + 1 < n_levels; ++k) {
        const int lo = k * per_level, hi = (k + 1) * per_level;
        for (auto t : tris) {
            std::sort(t.begin(), t.end());
            const int v0 = t[0], v1 = t[1], v2 = t[2];
            const std::array<Tet, 3> split{
                Tet{lo + v0, lo + v1, lo + v2, hi + v2},
                Tet{lo + v0, lo + v1, hi + v1, hi + v2},
                Tet{lo + v0, hi + v0, hi + v1, hi + v2},
            };
            for (auto tet : split) {
                mesh.tets.push_back(tet);
                if (tet_signed_volume(mesh, mesh.tets.size() - 1) < 0)
                    std::swap(mesh.tets.back()[2], mesh.tets.back()[3]);
            }
        }
    }
    for (std::size_t e = 0; e < mesh.tets.size(); ++e)
        if (!(tet_signed_volume(mesh, e) > 0)) throw MeshingError("inverted element " + std::to_string(e));

    mesh.electrodes.assign(geom.electrode_count(), {});
    for (const auto& bf : classify_boundary(mesh)) {
        if (bf.kind == BoundaryKind::Electrode) mesh.electrodes[bf.electrode].push_back(bf.face);
        if (bf.kind == BoundaryKind::Outer) mesh.outer_faces.push_back(bf.face);
    }
    for (std::size_t l = 0; l < mesh.electrodes.size(); ++l)
        if (mesh.electrodes[l].empty())
            throw MeshingError("electrode " + std::to_string(l) + " received no boundary faces; refine near_edge");
    return mesh;
}

std::vector<BoundaryFace> classify_boundary(const Mesh& mesh) {
    const auto& g = mesh.geometry;
    const double tol = 1e-9 * g.tank_radius;
    auto radius = [&](int n) { return mesh.nodes[n].head<2>().norm(); };

    std::vector<BoundaryFace> out;
    for (const auto& f : collect_faces(mesh)) {
        if (f.count != 1) continue;
        const auto& v = f.face;
        BoundaryFace bf{v, BoundaryKind::Cap, -1, f.first};
        const bool on_probe = std::all_of(v.begin(), v.end(), [&](int n) { return std::abs(radius(n) - g.probe_radius) < tol; });
        const bool on_outer = std::all_of(v.begin(), v.end(), [&](int n) { return std::abs(radius(n) - g.tank_radius) < tol; });
        if (on_probe) {
            bf.kind = BoundaryKind::Probe;
            const Vec3 c = (mesh.nodes[v[0]] + mesh.nodes[v[1]] + mesh.nodes[v[2]]) / 3.0;
            const double theta = std::atan2(c.y(), c.x());
            for (int l = 0; l < g.layers && bf.electrode < 0; ++l) {
                if (std::abs(c.z() - g.layer_z(l)) > 0.5 * g.electrode_height) continue;
                for (int k = 0; k < g.electrodes_per_layer; ++k) {
                    if (std::abs(wrap_angle(theta - g.electrode_angle(k))) * g.probe_radius <= 0.5 * g.electrode_arc) {
                        bf.kind = BoundaryKind::Electrode;
                        bf.electrode = l * g.electrodes_per_layer + k;
                        break;
                    }
                }
            }
        } else if (on_outer) {
            bf.kind = BoundaryKind::Outer;
        }
        out.push_back(bf);
    }
    return out;
}

std::vector<InteriorFace> interior_faces(const Mesh& mesh) {
    std::vector<InteriorFace> out;
    for (const auto& f : collect_faces(mesh))
        if (f.count == 2) out.push_back({f.face, f.first, f.second});
    return out;
}

std::string ValidationReport::summary() const {
    if (violations.empty()) return "mesh valid";
    std::ostringstream os;
    os << violations.size() << " violation(s)";
    for (const auto& v : violations) os << "\n  " << v.message;
    return os.str();
}

ValidationReport validate_mesh(const Mesh& mesh) {
    ValidationReport report;
    auto add = [&](Violation::Kind kind, std::size_t index, std::string msg) {
        report.violations.push_back({kind, index, std::move(msg)});
    };

    const std::size_t n = mesh.nodes.size();
    std::vector<char> used(n, 0);
    std::vector<std::size_t> parent(n);
    std::iota(parent.begin(), parent.end(), 0);
    auto find = [&](std::size_t x) {
        while (parent[x] != x) x = parent[x] = parent[parent[x]];
        return x;
    };

    for (std::size_t e = 0; e < mesh.tets.size(); ++e) {
        const auto& t = mesh.tets[e];
        bool in_range = true;
        for (int v : t) in_range = in_range && v >= 0 && std::size_t(v) < n;
        if (!in_range) {
            add(Violation::Kind::InvertedElement, e, "element " + std::to_string(e) + " references a missing node");
            continue;
        }
        if (!(tet_signed_volume(mesh, e) > 0))
            add(Violation::Kind::InvertedElement, e, "element " + std::to_string(e) + " has non-positive volume");
        for (int v : t) used[v] = 1;
        for (int a = 1; a < 4; ++a) parent[find(t[a])] = find(t[0]);
    }

    std::size_t components = 0;
    for (std::size_t i = 0; i < n; ++i) {
        if (!used[i]) {
            add(Violation::Kind::OrphanNode, i, "node " + std::to_string(i) + " is not referenced by any element");
        } else if (find(i) == i) {
            ++components;
        }
    }
    if (components > 1)
        add(Violation::Kind::Disconnected, components, "mesh has " + std::to_string(components) + " connected components");

    const double tol = 1e-9 * mesh.geometry.tank_radius;
    for (std::size_t l = 0; l < mesh.electrodes.size(); ++l) {
        if (mesh.electrodes[l].empty()) {
            add(Violation::Kind::EmptyPatch, l, "electrode " + std::to_string(l) + " has an empty patch");
            continue;
        }
        for (const auto& f : mesh.electrodes[l]) {
            const bool on_probe = std::all_of(f.begin(), f.end(), [&](int v) {
                return v >= 0 && std::size_t(v) < n &&
                       std::abs(mesh.nodes[v].head<2>().norm() - mesh.geometry.probe_radius) < tol;
            });
            if (!on_probe) {
                add(Violation::Kind::PatchOffProbe, l, "electrode " + std::to_string(l) + " has a face off the probe surface");
                break;
            }
        }
    }
    return report;
}

bool TargetSpec::contains(const Vec3& p) const {
    const Vec3 local = rotation.transpose() * (p - center);
    return local.cwiseQuotient(semi_axes).squaredNorm() <= 1.0;
}

TargetSpec TargetSpec::scaled(double k) const {
    TargetSpec t = *this;
    t.semi_axes *= k;
    return t;
}

std::vector<std::size_t> elements_in_ellipsoid(const Mesh& mesh, const TargetSpec& target) {
    std::vector<std::size_t> inside;
    for (std::size_t e = 0; e < mesh.tets.size(); ++e)
        if (target.contains(tet_centroid(mesh, e))) inside.push_back(e);
    return inside;
}

double tet_signed_volume(const Mesh& mesh, std::size_t e) {
    const auto& t = mesh.tets[e];
    const Vec3& p0 = mesh.nodes[t[0]];
    return (mesh.nodes[t[1]] - p0).dot((mesh.nodes[t[2]] - p0).cross(mesh.nodes[t[3]] - p0)) / 6.0;
}

Vec3 tet_centroid(const Mesh& mesh, std::size_t e) {
    const auto& t = mesh.tets[e];
    return 0.25 * (mesh.nodes[t[0]] + mesh.nodes[t[1]] + mesh.nodes[t[2]] + mesh.nodes[t[3]]);
}

std::vector<double> element_volumes(const Mesh& mesh) {
    std::vector<double> v(mesh.tets.size());
    for (std::size_t e = 0; e < v.size(); ++e) v[e] = tet_signed_volume(mesh, e);
    return v;
}

double face_area(const Mesh& mesh, const Face& f) {
    const Vec3& a = mesh.nodes[f[0]];
    return 0.5 * (mesh.nodes[f[1]] - a).cross(mesh.nodes[f[2]] - a).norm();
}

}  // namespace eit
