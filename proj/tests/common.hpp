#pragma once

#include "eit/fem.hpp"
#include "eit/mesh.hpp"

namespace eit::test {

// Coarse meshes small enough for dense oracles.
inline RefinementSpec coarse_spec() { return {1.0, 30.0, 0, 0.15, 0.0}; }
inline RefinementSpec coarse_generation_spec() { return {0.8, 20.0, 5, 0.15, 0.0}; }

inline const Mesh& coarse_mesh() {
    static const Mesh m = build_mesh(TankGeometry{}, coarse_spec());
    return m;
}

inline const Mesh& coarse_generation_mesh() {
    static const Mesh m = build_mesh(TankGeometry{}, coarse_generation_spec());
    return m;
}

inline const Mesh& desk_mesh() {
    static const Mesh m = build_mesh(TankGeometry{}, refinement_preset("desk"));
    return m;
}

inline const StimPattern& adjacent_pattern() {
    static const StimPattern p = StimPattern::adjacent(TankGeometry{});
    return p;
}

inline const MeasurementSchedule& adjacent_schedule() {
    static const MeasurementSchedule s = MeasurementSchedule::adjacent(TankGeometry{}, adjacent_pattern());
    return s;
}

}  // namespace eit::test

#include "eit/recon_linear.hpp"

namespace eit::test {

inline const Jacobian& coarse_jacobian() {
    static const Jacobian j =
        compute_jacobian(coarse_mesh(), ConductivityField::uniform(coarse_mesh(), 0.15), adjacent_pattern(), adjacent_schedule());
    return j;
}

inline const ReconstructionMatrix& coarse_matrix() {
    static const ReconstructionMatrix r = build_reconstruction_matrix(coarse_jacobian(), coarse_mesh(), GnConfig{});
    return r;
}

}  // namespace eit::test
