#pragma once

#include <cstdint>
#include <memory>
#include <utility>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "eit/mesh.hpp"

namespace eit {

/// Per-element conductivity in S/m.
struct ConductivityField {
    Eigen::VectorXd sigma;

    static ConductivityField uniform(const Mesh& mesh, double value);
    /// Throws DimensionError on a length mismatch or a non-positive entry.
    void check(const Mesh& mesh) const;
};

/// Ordered current injections between electrode pairs.
struct StimPattern {
    std::vector<std::pair<int, int>> injections;  // (source, sink)
    double amplitude = 5e-6;                      // A

    /// Adjacent pairs on the same ring, injection-major over rings.
    static StimPattern adjacent(const TankGeometry& geom, double amplitude = 5e-6);
    void check(const TankGeometry& geom) const;
};

struct MeasurementPair {
    int plus;
    int minus;
    bool dropped;  // shares an electrode with the injection pair
};

/// Differential measurements taken for each injection.
struct MeasurementSchedule {
    std::vector<std::vector<MeasurementPair>> per_injection;

    static MeasurementSchedule adjacent(const TankGeometry& geom, const StimPattern& pattern);

    struct Entry {
        int injection;
        int plus;
        int minus;
    };
    /// Retained measurements in frame order (injection-major).
    std::vector<Entry> retained() const;
    std::size_t retained_count() const;
    std::uint64_t id() const;
};

inline constexpr std::size_t kFrameLength = 928;

struct VoltageFrame {
    Eigen::VectorXd values;
    std::uint64_t schedule_id = 0;
};

/// CEM system over nodal potentials followed by electrode potentials.
/// `matrix` is the full (singular) operator; the solver grounds `ground`.
struct SparseSystem {
    Eigen::SparseMatrix<double> matrix;
    std::size_t node_count = 0;
    std::size_t electrode_count = 0;
    int ground = 0;
    double contact_impedance = 0.0;
    std::uint64_t mesh_id = 0;
    /// Per electrode: (face area / 3, node) contributions for current recovery.
    std::vector<std::vector<std::pair<int, double>>> electrode_weights;
    std::vector<double> electrode_area;

    std::size_t size() const { return node_count + electrode_count; }
};

SparseSystem assemble_system(const Mesh& mesh, const ConductivityField& sigma, double contact_impedance = 0.01);

/// Sparse Cholesky factorisation of a grounded system, reusable across
/// right-hand sides. Immutable after construction.
class ForwardSolver {
public:
    explicit ForwardSolver(const SparseSystem& system);
    ~ForwardSolver();
    ForwardSolver(ForwardSolver&&) noexcept;
    ForwardSolver& operator=(ForwardSolver&&) noexcept;

    /// Solves for full potential vectors (nodes then electrodes), one column
    /// per right-hand side. Throws SolverError above 1e-10 relative residual.
    Eigen::MatrixXd solve(const Eigen::MatrixXd& rhs) const;

    /// Unit-current fields for the given (source, sink) pairs.
    Eigen::MatrixXd pair_fields(const std::vector<std::pair<int, int>>& pairs) const;

    const SparseSystem& system() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

VoltageFrame solve_forward(const SparseSystem& system, const StimPattern& pattern, const MeasurementSchedule& schedule);
VoltageFrame solve_forward(const ForwardSolver& solver, const StimPattern& pattern, const MeasurementSchedule& schedule);

/// Electrode currents recovered from a full potential vector.
Eigen::VectorXd electrode_currents(const SparseSystem& system, const Eigen::VectorXd& potentials);

struct Jacobian {
    Eigen::MatrixXd matrix;  // measurements x elements, V per (S/m)
    std::uint64_t mesh_id = 0;
    std::uint64_t schedule_id = 0;
};

Jacobian compute_jacobian(const Mesh& mesh, const ConductivityField& sigma_ref, const StimPattern& pattern,
                          const MeasurementSchedule& schedule, double contact_impedance = 0.01);

/// Gradients of the four P1 basis functions of element `e` (columns).
Eigen::Matrix<double, 3, 4> basis_gradients(const Mesh& mesh, std::size_t e);

}  // namespace eit
