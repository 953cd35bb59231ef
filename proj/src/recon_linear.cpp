#include "eit/recon_linear.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "eit/errors.hpp"
#include "eit/hash.hpp"

namespace eit {

std::string to_string(Prior p) {
    return p == Prior::TikhonovIdentity ? "tikhonov" : "laplacian";
}

Prior prior_from_string(const std::string& s) {
    if (s == "tikhonov") return Prior::TikhonovIdentity;
    if (s == "laplacian") return Prior::LaplacianSmoothness;
    throw FormatError("unknown prior: " + s);
}

void GnConfig::check() const {
    if (!(lambda > 0)) throw DimensionError("GN lambda must be positive");
    if (!(sigma_ref > 0)) throw DimensionError("GN sigma_ref must be positive");
    if (!(identity_weight > 0)) throw DimensionError("GN identity_weight must be positive");
}

std::uint64_t GnConfig::hash() const {
    Fnv1a h;
    h.add(std::string_view("gn")).add(lambda).add(int(prior)).add(sigma_ref).add(identity_weight).add(volume_exponent);
    return h.value();
}

Eigen::SparseMatrix<double> nodal_averaging(const Mesh& mesh) {
    const auto vol = element_volumes(mesh);
    Eigen::VectorXd total = Eigen::VectorXd::Zero(Eigen::Index(mesh.node_count()));
    for (std::size_t e = 0; e < mesh.element_count(); ++e)
        for (int v : mesh.tets[e]) total[v] += vol[e];
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(mesh.element_count() * 4);
    for (std::size_t e = 0; e < mesh.element_count(); ++e)
        for (int v : mesh.tets[e]) trip.emplace_back(v, int(e), vol[e] / total[v]);
    Eigen::SparseMatrix<double> p(Eigen::Index(mesh.node_count()), Eigen::Index(mesh.element_count()));
    p.setFromTriplets(trip.begin(), trip.end());
    return p;
}

NodalImage element_to_nodal(const Eigen::VectorXd& element_values, const Mesh& mesh) {
    if (std::size_t(element_values.size()) != mesh.element_count())
        throw DimensionError("element image length does not match the mesh");
    return {nodal_averaging(mesh) * element_values, mesh.id()};
}

Eigen::SparseMatrix<double> element_graph_laplacian(const Mesh& mesh) {
    std::vector<Eigen::Triplet<double>> trip;
    for (const auto& f : interior_faces(mesh)) {
        const int a = int(f.left), b = int(f.right);
        trip.emplace_back(a, a, 1.0);
        trip.emplace_back(b, b, 1.0);
        trip.emplace_back(a, b, -1.0);
        trip.emplace_back(b, a, -1.0);
    }
    const auto n = Eigen::Index(mesh.element_count());
    Eigen::SparseMatrix<double> g(n, n);
    g.setFromTriplets(trip.begin(), trip.end());
    return g;
}

ReconstructionMatrix build_reconstruction_matrix(const Jacobian& jac, const Mesh& mesh, const GnConfig& cfg) {
    cfg.check();
    if (jac.mesh_id != mesh.id()) throw ProvenanceError("Jacobian was computed on a different mesh");
    const Eigen::Index n = jac.matrix.cols();

    // Volume scaling: unknowns are volume-normalised, so mesh grading does not
    // bias the image towards large elements.
    const auto vol = element_volumes(mesh);
    double mean_vol = 0.0;
    for (double v : vol) mean_vol += v;
    mean_vol /= double(vol.size());
    Eigen::VectorXd scale(n);
    for (Eigen::Index e = 0; e < n; ++e) scale[e] = std::pow(mean_vol / vol[std::size_t(e)], cfg.volume_exponent);

    Eigen::MatrixXd jt = jac.matrix * scale.asDiagonal();
    const double jnorm = std::sqrt(jt.squaredNorm() / double(n));
    if (!(jnorm > 0) || !std::isfinite(jnorm)) throw IllConditionedError("Jacobian is zero or non-finite");
    jt /= jnorm;

    // Prior Gram matrix W = Rr^T Rr, normalised to unit mean diagonal.
    Eigen::SparseMatrix<double> w(n, n);
    if (cfg.prior == Prior::TikhonovIdentity) {
        w.setIdentity();
    } else {
        w = element_graph_laplacian(mesh);
        const double mean_diag = w.diagonal().mean();
        w /= mean_diag;
        Eigen::SparseMatrix<double> id(n, n);
        id.setIdentity();
        w += cfg.identity_weight * id;
    }

    // (Jt^T Jt + l^2 W)^-1 Jt^T = W^-1 Jt^T (Jt W^-1 Jt^T + l^2 I)^-1
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> wllt(w);
    if (wllt.info() != Eigen::Success) throw IllConditionedError("prior Gram matrix is not positive definite");
    Eigen::MatrixXd z = wllt.solve(Eigen::MatrixXd(jt.transpose()));
    jt.resize(0, 0);

    Eigen::MatrixXd normal = jac.matrix * scale.asDiagonal() * z / jnorm;
    normal.diagonal().array() += cfg.lambda * cfg.lambda;
    Eigen::LLT<Eigen::MatrixXd> llt(normal);
    if (llt.info() != Eigen::Success) throw IllConditionedError("regularised normal matrix failed to factorise");

    // R = D Z S^-1 / jnorm, computed as (S^-1 Z^T)^T.
    Eigen::MatrixXd zt = z.transpose();
    z.resize(0, 0);
    llt.solveInPlace(zt);
    ReconstructionMatrix r;
    r.matrix = scale.asDiagonal() * zt.transpose() / jnorm;
    r.mesh_id = mesh.id();
    r.config_hash = cfg.hash();
    if (!r.matrix.allFinite()) throw IllConditionedError("reconstruction matrix has non-finite entries");
    return r;
}

VoltageFrame frame_difference(const VoltageFrame& a, const VoltageFrame& b) {
    if (a.schedule_id != b.schedule_id) throw ProvenanceError("frames come from different schedules");
    if (a.values.size() != b.values.size()) throw DimensionError("frame lengths differ");
    return {a.values - b.values, a.schedule_id};
}

Eigen::VectorXd reconstruct_gn_elements(const ReconstructionMatrix& r, const VoltageFrame& dv, std::uint64_t mesh_id) {
    if (r.mesh_id != mesh_id) throw ProvenanceError("reconstruction matrix belongs to a different mesh");
    if (dv.values.size() != r.matrix.cols())
        throw DimensionError("voltage difference length " + std::to_string(dv.values.size()) + " != " +
                             std::to_string(r.matrix.cols()));
    return r.matrix * dv.values;
}

NodalImage reconstruct_gn(const ReconstructionMatrix& r, const VoltageFrame& dv, const Mesh& mesh) {
    return element_to_nodal(reconstruct_gn_elements(r, dv, mesh.id()), mesh);
}

}  // namespace eit
