#include "eit/recon_pdipm.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <ostream>

#include <Eigen/Dense>
#include <Eigen/CholmodSupport>

#include "eit/hash.hpp"

namespace eit {

void PdipmConfig::check() const {
    if (!(alpha > 0)) throw DimensionError("PDIPM alpha must be positive");
    if (beta < 0 || beta > 1e-2) throw DimensionError("PDIPM beta must lie in (0, 1e-2] (0 selects it automatically)");
    if (max_iters < 1) throw DimensionError("PDIPM max_iters must be at least 1");
    if (!(tol > 0 && tol < 1)) throw DimensionError("PDIPM tol must lie in (0, 1)");
    if (!(shrink > 0 && shrink < 1)) throw DimensionError("line-search shrink factor must lie in (0, 1)");
    if (!(armijo > 0 && armijo < 0.5)) throw DimensionError("Armijo constant must lie in (0, 0.5)");
    if (max_shrinks < 1 || lowrank < 0 || cg_max_iters < 1 || !(cg_tol > 0))
        throw DimensionError("invalid PDIPM inner-solver settings");
}

std::uint64_t PdipmConfig::hash() const {
    Fnv1a h;
    h.add(std::string_view("pdipm")).add(alpha).add(beta).add(max_iters).add(tol).add(shrink).add(armijo);
    h.add(max_shrinks).add(lowrank).add(cg_max_iters).add(cg_tol);
    return h.value();
}

TvOperator build_tv_operator(const Mesh& mesh) {
    const auto faces = interior_faces(mesh);
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(faces.size() * 2);
    for (std::size_t f = 0; f < faces.size(); ++f) {
        const double a = face_area(mesh, faces[f].face);
        trip.emplace_back(int(f), int(faces[f].left), a);
        trip.emplace_back(int(f), int(faces[f].right), -a);
    }
    TvOperator op;
    op.matrix.resize(Eigen::Index(faces.size()), Eigen::Index(mesh.element_count()));
    op.matrix.setFromTriplets(trip.begin(), trip.end());
    op.matrix.makeCompressed();
    op.mesh_id = mesh.id();
    return op;
}

void write_trace_csv(std::ostream& os, const ConvergenceTrace& trace) {
    os << "iter,objective,step_len,dual_max\n";
    const auto precision = os.precision();
    os << std::setprecision(17);
    for (const auto& e : trace.entries) os << e.iter << ',' << e.objective << ',' << e.step_len << ',' << e.dual_max << '\n';
    os.precision(precision);
}

using SpMat = Eigen::SparseMatrix<double>;
using Llt = Eigen::CholmodSupernodalLLT<SpMat, Eigen::Lower>;

struct PdipmSolver::Impl {
    PdipmConfig cfg;
    std::uint64_t mesh_id = 0;
    std::uint64_t schedule_id = 0;
    Eigen::MatrixXd j;     // scaled Jacobian
    double jnorm = 1.0;
    SpMat l, lt;           // scaled TV operator
    Eigen::MatrixXd w;     // J^T U_k, low-rank part of J^T J
    double shift = 0.0;    // diagonal shift of the preconditioner
    SpMat averaging;

    Eigen::VectorXd scaled_data(const VoltageFrame& dv) const {
        if (dv.values.size() != j.rows())
            throw DimensionError("voltage difference length does not match the Jacobian");
        if (dv.schedule_id != 0 && schedule_id != 0 && dv.schedule_id != schedule_id)
            throw ProvenanceError("voltage difference comes from a different schedule");
        return dv.values / jnorm;
    }

    double objective(const Eigen::VectorXd& x, const Eigen::VectorXd& d, double alpha, double beta) const {
        const double misfit = 0.5 * (j * x - d).squaredNorm();
        const Eigen::VectorXd z = l * x;
        return misfit + alpha * (z.array().square() + beta * beta).sqrt().sum();
    }
};

PdipmSolver::PdipmSolver(const Mesh& mesh, const Jacobian& jac, const PdipmConfig& cfg)
    : impl_(std::make_unique<Impl>()) {
    cfg.check();
    if (jac.mesh_id != mesh.id()) throw ProvenanceError("Jacobian was computed on a different mesh");
    if (std::size_t(jac.matrix.cols()) != mesh.element_count()) throw DimensionError("Jacobian width != element count");
    auto& s = *impl_;
    s.cfg = cfg;
    s.mesh_id = mesh.id();
    s.schedule_id = jac.schedule_id;
    const Eigen::Index n = jac.matrix.cols();
    s.jnorm = std::sqrt(jac.matrix.squaredNorm() / double(n));
    if (!(s.jnorm > 0) || !std::isfinite(s.jnorm)) throw IllConditionedError("Jacobian is zero or non-finite");
    s.j = jac.matrix / s.jnorm;

    const TvOperator tv = build_tv_operator(mesh);
    const double mean_area = tv.matrix.coeffs().cwiseAbs().sum() / double(tv.matrix.nonZeros());
    // Rows for the tank wall and caps compare against a zero exterior, which
    // anchors the otherwise free constant level of the contrast.
    std::vector<Eigen::Triplet<double>> trip;
    for (int k = 0; k < tv.matrix.outerSize(); ++k)
        for (SpMat::InnerIterator itr(tv.matrix, k); itr; ++itr) trip.emplace_back(int(itr.row()), int(itr.col()), itr.value());
    Eigen::Index rows = tv.matrix.rows();
    for (const auto& bf : classify_boundary(mesh))
        if (bf.kind == BoundaryKind::Outer || bf.kind == BoundaryKind::Cap)
            trip.emplace_back(int(rows++), int(bf.element), face_area(mesh, bf.face));
    s.l.resize(rows, n);
    s.l.setFromTriplets(trip.begin(), trip.end());
    s.l /= mean_area;
    s.lt = s.l.transpose();
    s.averaging = nodal_averaging(mesh);
    const int k = std::min<int>(cfg.lowrank, int(s.j.rows()));
    if (k > 0) {
        Eigen::MatrixXd g = Eigen::MatrixXd::Zero(s.j.rows(), s.j.rows());
        g.selfadjointView<Eigen::Lower>().rankUpdate(s.j);
        Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g.selfadjointView<Eigen::Lower>());
        if (eig.info() != Eigen::Success) throw IllConditionedError("eigen-decomposition of J J^T failed");
        // Keep the numerically relevant part of the spectrum only.
        const Eigen::VectorXd& ev = eig.eigenvalues();
        int keep = 0;
        while (keep < k && ev[ev.size() - 1 - keep] > 1e-10 * ev[ev.size() - 1]) ++keep;
        const Eigen::MatrixXd u = eig.eigenvectors().rightCols(keep);
        s.w = s.j.transpose() * u;
        s.shift = 1e-10 * ev[ev.size() - 1];
    }
}

PdipmSolver::~PdipmSolver() = default;
PdipmSolver::PdipmSolver(PdipmSolver&&) noexcept = default;
PdipmSolver& PdipmSolver::operator=(PdipmSolver&&) noexcept = default;

const PdipmConfig& PdipmSolver::config() const { return impl_->cfg; }

double PdipmSolver::objective(const Eigen::VectorXd& x, const VoltageFrame& dv, double beta) const {
    return impl_->objective(x, impl_->scaled_data(dv), impl_->cfg.alpha, beta);
}

PdipmResult PdipmSolver::solve(const VoltageFrame& dv) const {
    const auto& s = *impl_;
    const auto& cfg = s.cfg;
    const Eigen::VectorXd d = s.scaled_data(dv);
    const Eigen::Index n = s.j.cols(), m = s.l.rows();
    const double alpha = cfg.alpha;

    const Eigen::VectorXd jtd = s.j.transpose() * d;
    double beta = cfg.beta;
    if (beta == 0.0) {
        // Back-projection scaled to the data, as a yardstick for jump sizes.
        const Eigen::VectorXd jb = s.j * jtd;
        const double den = jb.squaredNorm();
        const double t = den > 0 ? d.dot(jb) / den : 0.0;
        const double peak = std::abs(t) * jtd.cwiseAbs().maxCoeff();
        beta = peak > 0 ? std::clamp(1e-4 * peak, 1e-300, 1e-2) : 1e-2;
    }

    PdipmResult res;
    res.trace.beta = beta;
    Eigen::VectorXd x = Eigen::VectorXd::Zero(n);
    Eigen::VectorXd y = Eigen::VectorXd::Zero(m);
    double f = s.objective(x, d, alpha, beta);
    res.trace.entries.push_back({0, f, 0.0, 0.0});
    const double gscale = jtd.norm();

    auto finish = [&](ConvergenceTrace::Status st) {
        res.trace.status = st;
        res.elements = x;
        res.image = {s.averaging * x, s.mesh_id};
        return res;
    };

    Llt llt;
    Eigen::VectorXd hv(n);
    for (int it = 1; it <= cfg.max_iters; ++it) {
        const Eigen::VectorXd r = s.j * x - d;
        const Eigen::VectorXd z = s.l * x;
        const Eigen::ArrayXd eta = (z.array().square() + beta * beta).sqrt();
        const Eigen::VectorXd grad = s.j.transpose() * r + alpha * (s.lt * (z.array() / eta).matrix());
        if (grad.norm() <= 1e-13 * gscale) return finish(ConvergenceTrace::Status::Converged);

        const Eigen::ArrayXd kk = (1.0 - y.array() * z.array() / eta).max(1e-12);
        const Eigen::VectorXd dw = alpha * kk / eta;
        SpMat a = s.lt * dw.asDiagonal() * s.l;
        const double eps = s.shift > 0 ? s.shift : 1e-10 * a.diagonal().mean() + 1e-300;
        SpMat b = a;
        for (Eigen::Index i = 0; i < n; ++i) b.coeffRef(i, i) += eps;
        if (it == 1) llt.analyzePattern(b);
        llt.factorize(b);
        if (llt.info() != Eigen::Success) throw IllConditionedError("TV Newton block failed to factorise");

        // Woodbury preconditioner for B + W W^T.
        Eigen::MatrixXd zw;
        Eigen::LLT<Eigen::MatrixXd> cap;
        if (s.w.cols() > 0) {
            zw = llt.solve(s.w);
            Eigen::MatrixXd c = s.w.transpose() * zw;
            c.diagonal().array() += 1.0;
            cap.compute(c);
        }
        auto precond = [&](const Eigen::VectorXd& v) {
            Eigen::VectorXd out = llt.solve(v);
            if (s.w.cols() > 0) out -= zw * cap.solve(zw.transpose() * v);
            return out;
        };
        auto apply_h = [&](const Eigen::VectorXd& v) {
            hv.noalias() = s.j.transpose() * (s.j * v);
            hv.noalias() += a * v;
            return hv;
        };

        // Truncated PCG from zero: every iterate is a descent direction.
        Eigen::VectorXd dx = Eigen::VectorXd::Zero(n);
        Eigen::VectorXd res_cg = -grad;
        Eigen::VectorXd zc = precond(res_cg);
        Eigen::VectorXd p = zc;
        double rz = res_cg.dot(zc);
        const double rnorm0 = res_cg.norm();
        for (int c = 0; c < cfg.cg_max_iters; ++c) {
            const Eigen::VectorXd hp = apply_h(p);
            const double php = p.dot(hp);
            if (!(php > 0)) break;
            const double step = rz / php;
            dx += step * p;
            res_cg -= step * hp;
            ++res.trace.cg_iterations;
            if (res_cg.norm() <= cfg.cg_tol * rnorm0) break;
            zc = precond(res_cg);
            const double rz_new = res_cg.dot(zc);
            p = zc + (rz_new / rz) * p;
            rz = rz_new;
        }
        const double slope = grad.dot(dx);
        if (!(slope < 0)) return finish(ConvergenceTrace::Status::Converged);

        double t = 1.0;
        double f_new = s.objective(x + dx, d, alpha, beta);
        int shrinks = 0;
        while (!(f_new <= f + cfg.armijo * t * slope)) {
            if (++shrinks > cfg.max_shrinks) {
                finish(ConvergenceTrace::Status::LineSearch);
                throw LineSearchError("PDIPM line search failed at iteration " + std::to_string(it), res);
            }
            t *= cfg.shrink;
            f_new = s.objective(x + t * dx, d, alpha, beta);
        }
        const Eigen::VectorXd step = t * dx;
        x += step;

        // Dual Newton update, damped to stay inside the unit box.
        const Eigen::ArrayXd dy = (z.array() + kk * (s.l * step).array()) / eta - y.array();
        double sd = 1.0;
        for (Eigen::Index i = 0; i < m; ++i) {
            if (dy[i] > 0) sd = std::min(sd, 0.99 * (1.0 - y[i]) / dy[i]);
            else if (dy[i] < 0) sd = std::min(sd, 0.99 * (-1.0 - y[i]) / dy[i]);
        }
        y.array() += std::max(sd, 0.0) * dy;
        const double dual_max = y.cwiseAbs().maxCoeff();
        if (dual_max > 1.0 + 1e-12) throw SolverError("PDIPM dual iterate left the feasible set");

        const double decrease = f - f_new;
        f = f_new;
        res.trace.entries.push_back({it, f, t * dx.norm(), dual_max});
        if (decrease <= cfg.tol * std::max(std::abs(f + decrease), 1e-300))
            return finish(ConvergenceTrace::Status::Converged);
    }
    return finish(ConvergenceTrace::Status::MaxIters);
}

PdipmResult reconstruct_pdipm(const Mesh& mesh, const Jacobian& jac, const VoltageFrame& v_meas,
                              const VoltageFrame& v_ref, const PdipmConfig& cfg) {
    return PdipmSolver(mesh, jac, cfg).solve(frame_difference(v_meas, v_ref));
}

}  // namespace eit
