#pragma once

#include <cstdint>
#include <iosfwd>
#include <memory>
#include <vector>

#include <Eigen/Core>
#include <Eigen/SparseCore>

#include "eit/errors.hpp"
#include "eit/fem.hpp"
#include "eit/mesh.hpp"
#include "eit/recon_linear.hpp"

namespace eit {

struct PdipmConfig {
    double alpha = 0.1;
    /// TV smoothing. Zero picks 1e-4 of the peak of the back-projected
    /// image scaled to the data (capped at 1e-2).
    double beta = 0.0;
    int max_iters = 100;
    double tol = 1e-6;
    double shrink = 0.5;
    double armijo = 1e-4;
    int max_shrinks = 30;
    /// Rank of the Jacobian term kept in the Newton preconditioner.
    int lowrank = 240;
    int cg_max_iters = 80;
    double cg_tol = 1e-5;

    void check() const;
    std::uint64_t hash() const;
};

/// Jumps across interior faces. Row f carries +area at the left element and
/// -area at the right one, so |L x|_1 of a two-valued image is the cut area
/// times the jump.
struct TvOperator {
    Eigen::SparseMatrix<double> matrix;
    std::uint64_t mesh_id = 0;
};

TvOperator build_tv_operator(const Mesh& mesh);

struct ConvergenceTrace {
    enum class Status { Converged, MaxIters, LineSearch };
    struct Entry {
        int iter;
        double objective;
        double step_len;
        double dual_max;
    };
    std::vector<Entry> entries;
    Status status = Status::MaxIters;
    double beta = 0.0;
    int cg_iterations = 0;
};

void write_trace_csv(std::ostream& os, const ConvergenceTrace& trace);

struct PdipmResult {
    Eigen::VectorXd elements;  // conductivity change per element, S/m
    NodalImage image;
    ConvergenceTrace trace;
};

/// Raised when the line search fails; carries the best iterate.
class LineSearchError : public SolverError {
public:
    LineSearchError(const std::string& what, PdipmResult best) : SolverError(what), best_(std::move(best)) {}
    const PdipmResult& best() const { return best_; }

private:
    PdipmResult best_;
};

/// TV-regularised least squares on the fixed reference Jacobian,
/// F(x) = 1/2 |J x - dv|^2 + alpha sum sqrt((L x)^2 + beta^2), with J and dv
/// divided by the RMS column norm of J and L by the mean face area.
/// Precomputes everything that does not depend on the data.
class PdipmSolver {
public:
    PdipmSolver(const Mesh& mesh, const Jacobian& jac, const PdipmConfig& cfg = {});
    ~PdipmSolver();
    PdipmSolver(PdipmSolver&&) noexcept;
    PdipmSolver& operator=(PdipmSolver&&) noexcept;

    PdipmResult solve(const VoltageFrame& dv) const;
    /// Objective in the solver's scaling for an element image.
    double objective(const Eigen::VectorXd& x, const VoltageFrame& dv, double beta) const;
    const PdipmConfig& config() const;

private:
    struct Impl;
    std::unique_ptr<Impl> impl_;
};

PdipmResult reconstruct_pdipm(const Mesh& mesh, const Jacobian& jac, const VoltageFrame& v_meas,
                              const VoltageFrame& v_ref, const PdipmConfig& cfg = {});

}  // namespace eit
