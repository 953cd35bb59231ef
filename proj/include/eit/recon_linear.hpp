#pragma once

#include <cstdint>
#include <string>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "eit/fem.hpp"
#include "eit/mesh.hpp"

namespace eit {

enum class Prior { TikhonovIdentity, LaplacianSmoothness };

std::string to_string(Prior p);
Prior prior_from_string(const std::string& s);

struct GnConfig {
    double lambda = 1e-4;
    Prior prior = Prior::LaplacianSmoothness;
    double sigma_ref = 0.15;
    /// Weight of the identity term that keeps the smoothness prior invertible.
    double identity_weight = 1e-3;
    /// Exponent p of the column scaling (mean volume / element volume)^p.
    double volume_exponent = 0.0;

    void check() const;
    std::uint64_t hash() const;
};

/// Per-node conductivity change (S/m) on the inverse mesh.
struct NodalImage {
    Eigen::VectorXd values;
    std::uint64_t mesh_id = 0;
};

/// Precomputed one-step Gauss-Newton operator, elements x measurements.
struct ReconstructionMatrix {
    Eigen::MatrixXd matrix;
    std::uint64_t mesh_id = 0;
    std::uint64_t config_hash = 0;
};

/// Node-averaging operator: node value = volume-weighted mean of incident
/// elements. Shape nodes x elements.
Eigen::SparseMatrix<double> nodal_averaging(const Mesh& mesh);

NodalImage element_to_nodal(const Eigen::VectorXd& element_values, const Mesh& mesh);

/// Element adjacency graph Laplacian (one edge per shared face).
Eigen::SparseMatrix<double> element_graph_laplacian(const Mesh& mesh);

ReconstructionMatrix build_reconstruction_matrix(const Jacobian& jac, const Mesh& mesh, const GnConfig& cfg);

/// Element image R * dv. Throws ProvenanceError when `mesh_id` differs.
Eigen::VectorXd reconstruct_gn_elements(const ReconstructionMatrix& r, const VoltageFrame& dv, std::uint64_t mesh_id);

/// Nodal image of R * dv on `mesh`.
NodalImage reconstruct_gn(const ReconstructionMatrix& r, const VoltageFrame& dv, const Mesh& mesh);

/// Frame difference a - b; both must share a schedule.
VoltageFrame frame_difference(const VoltageFrame& a, const VoltageFrame& b);

}  // namespace eit
