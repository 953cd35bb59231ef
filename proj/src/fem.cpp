#include "eit/fem.hpp"

#include <cmath>

#include <Eigen/Dense>
#include <Eigen/SparseCholesky>

#include "eit/errors.hpp"
#include "eit/hash.hpp"

namespace eit {

ConductivityField ConductivityField::uniform(const Mesh& mesh, double value) {
    return {Eigen::VectorXd::Constant(Eigen::Index(mesh.element_count()), value)};
}

void ConductivityField::check(const Mesh& mesh) const {
    if (std::size_t(sigma.size()) != mesh.element_count())
        throw DimensionError("conductivity length " + std::to_string(sigma.size()) + " != element count " +
                             std::to_string(mesh.element_count()));
    for (Eigen::Index e = 0; e < sigma.size(); ++e)
        if (!(sigma[e] > 0) || !std::isfinite(sigma[e]))
            throw DimensionError("conductivity of element " + std::to_string(e) + " is not strictly positive");
}

StimPattern StimPattern::adjacent(const TankGeometry& geom, double amplitude) {
    StimPattern p;
    p.amplitude = amplitude;
    const int n = geom.electrodes_per_layer;
    for (int l = 0; l < geom.layers; ++l)
        for (int k = 0; k < n; ++k) p.injections.emplace_back(l * n + k, l * n + (k + 1) % n);
    return p;
}

void StimPattern::check(const TankGeometry& geom) const {
    const int n = geom.electrodes_per_layer;
    for (auto [a, b] : injections) {
        if (a == b) throw DimensionError("injection source equals sink");
        if (a < 0 || b < 0 || a >= geom.electrode_count() || b >= geom.electrode_count())
            throw DimensionError("injection electrode out of range");
        const bool same_layer = a / n == b / n;
        const int d = std::abs(a % n - b % n);
        if (!same_layer || (d != 1 && d != n - 1)) throw DimensionError("injection pair is not adjacent on one ring");
    }
}

MeasurementSchedule MeasurementSchedule::adjacent(const TankGeometry& geom, const StimPattern& pattern) {
    const auto pairs = StimPattern::adjacent(geom).injections;
    MeasurementSchedule s;
    for (auto [a, b] : pattern.injections) {
        std::vector<MeasurementPair> row;
        for (auto [p, m] : pairs) row.push_back({p, m, p == a || p == b || m == a || m == b});
        s.per_injection.push_back(std::move(row));
    }
    return s;
}

std::vector<MeasurementSchedule::Entry> MeasurementSchedule::retained() const {
    std::vector<Entry> out;
    for (std::size_t i = 0; i < per_injection.size(); ++i)
        for (const auto& p : per_injection[i])
            if (!p.dropped) out.push_back({int(i), p.plus, p.minus});
    return out;
}

std::size_t MeasurementSchedule::retained_count() const {
    std::size_t n = 0;
    for (const auto& row : per_injection)
        for (const auto& p : row) n += !p.dropped;
    return n;
}

std::uint64_t MeasurementSchedule::id() const {
    Fnv1a h;
    h.add(std::string_view("schedule"));
    for (const auto& row : per_injection) {
        h.add(row.size());
        for (const auto& p : row) h.add(p.plus).add(p.minus).add(int(p.dropped));
    }
    return h.value();
}

Eigen::Matrix<double, 3, 4> basis_gradients(const Mesh& mesh, std::size_t e) {
    const auto& t = mesh.tets[e];
    const Vec3& p0 = mesh.nodes[t[0]];
    Eigen::Matrix3d edges;
    edges.col(0) = mesh.nodes[t[1]] - p0;
    edges.col(1) = mesh.nodes[t[2]] - p0;
    edges.col(2) = mesh.nodes[t[3]] - p0;
    const Eigen::Matrix3d inv = edges.inverse();
    Eigen::Matrix<double, 3, 4> g;
    g.col(1) = inv.row(0).transpose();
    g.col(2) = inv.row(1).transpose();
    g.col(3) = inv.row(2).transpose();
    g.col(0) = -(g.col(1) + g.col(2) + g.col(3));
    return g;
}

SparseSystem assemble_system(const Mesh& mesh, const ConductivityField& sigma, double contact_impedance) {
    sigma.check(mesh);
    if (!(contact_impedance > 0)) throw DimensionError("contact impedance must be positive");

    SparseSystem sys;
    sys.node_count = mesh.node_count();
    sys.electrode_count = mesh.electrodes.size();
    sys.contact_impedance = contact_impedance;
    sys.mesh_id = mesh.id();

    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(mesh.element_count() * 16 + 64 * mesh.electrodes.size());
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        const auto g = basis_gradients(mesh, e);
        const double w = sigma.sigma[Eigen::Index(e)] * tet_signed_volume(mesh, e);
        const Eigen::Matrix4d k = w * g.transpose() * g;
        const auto& t = mesh.tets[e];
        for (int a = 0; a < 4; ++a)
            for (int b = 0; b < 4; ++b) trip.emplace_back(t[a], t[b], k(a, b));
    }

    const double y = 1.0 / contact_impedance;
    sys.electrode_weights.resize(sys.electrode_count);
    sys.electrode_area.assign(sys.electrode_count, 0.0);
    for (std::size_t l = 0; l < mesh.electrodes.size(); ++l) {
        const int el = int(sys.node_count + l);
        for (const auto& f : mesh.electrodes[l]) {
            const double area = face_area(mesh, f);
            sys.electrode_area[l] += area;
            for (int a = 0; a < 3; ++a) {
                for (int b = 0; b < 3; ++b) trip.emplace_back(f[a], f[b], y * area / 12.0 * (a == b ? 2.0 : 1.0));
                trip.emplace_back(f[a], el, -y * area / 3.0);
                trip.emplace_back(el, f[a], -y * area / 3.0);
                sys.electrode_weights[l].emplace_back(f[a], area / 3.0);
            }
        }
        trip.emplace_back(el, el, y * sys.electrode_area[l]);
    }

    sys.matrix.resize(Eigen::Index(sys.size()), Eigen::Index(sys.size()));
    sys.matrix.setFromTriplets(trip.begin(), trip.end());
    sys.matrix.makeCompressed();

    // Ground at an outer-wall node: the far boundary is the reference potential.
    sys.ground = mesh.outer_faces.empty() ? 0 : mesh.outer_faces.front()[0];
    return sys;
}

struct ForwardSolver::Impl {
    SparseSystem system;
    Eigen::SimplicialLLT<Eigen::SparseMatrix<double>, Eigen::Lower, Eigen::AMDOrdering<int>> llt;
    Eigen::SparseMatrix<double> reduced;
};

namespace {

Eigen::SparseMatrix<double> drop_index(const Eigen::SparseMatrix<double>& a, int g) {
    std::vector<Eigen::Triplet<double>> trip;
    trip.reserve(std::size_t(a.nonZeros()));
    for (int c = 0; c < a.outerSize(); ++c) {
        if (c == g) continue;
        for (Eigen::SparseMatrix<double>::InnerIterator it(a, c); it; ++it) {
            const int r = int(it.row());
            if (r == g) continue;
            trip.emplace_back(r < g ? r : r - 1, c < g ? c : c - 1, it.value());
        }
    }
    Eigen::SparseMatrix<double> out(a.rows() - 1, a.cols() - 1);
    out.setFromTriplets(trip.begin(), trip.end());
    out.makeCompressed();
    return out;
}

}  // namespace

ForwardSolver::ForwardSolver(const SparseSystem& system) : impl_(std::make_unique<Impl>()) {
    impl_->system = system;
    impl_->reduced = drop_index(system.matrix, system.ground);
    impl_->llt.compute(impl_->reduced);
    if (impl_->llt.info() != Eigen::Success)
        throw SingularSystemError("grounded CEM system is not positive definite (disconnected mesh?)");
}

ForwardSolver::~ForwardSolver() = default;
ForwardSolver::ForwardSolver(ForwardSolver&&) noexcept = default;
ForwardSolver& ForwardSolver::operator=(ForwardSolver&&) noexcept = default;

const SparseSystem& ForwardSolver::system() const { return impl_->system; }

Eigen::MatrixXd ForwardSolver::solve(const Eigen::MatrixXd& rhs) const {
    const int g = impl_->system.ground;
    const Eigen::Index n = Eigen::Index(impl_->system.size());
    if (rhs.rows() != n) throw DimensionError("right-hand side length does not match the system");

    Eigen::MatrixXd reduced_rhs(n - 1, rhs.cols());
    reduced_rhs.topRows(g) = rhs.topRows(g);
    reduced_rhs.bottomRows(n - 1 - g) = rhs.bottomRows(n - 1 - g);
    const Eigen::MatrixXd x = impl_->llt.solve(reduced_rhs);

    const Eigen::MatrixXd residual = impl_->reduced * x - reduced_rhs;
    for (Eigen::Index c = 0; c < rhs.cols(); ++c) {
        const double scale = reduced_rhs.col(c).norm();
        if (!x.col(c).allFinite() || residual.col(c).norm() > 1e-10 * std::max(scale, 1e-300))
            throw SolverError("sparse Cholesky solve missed the 1e-10 relative residual tolerance");
    }

    Eigen::MatrixXd full = Eigen::MatrixXd::Zero(n, rhs.cols());
    full.topRows(g) = x.topRows(g);
    full.bottomRows(n - 1 - g) = x.bottomRows(n - 1 - g);
    return full;
}

Eigen::MatrixXd ForwardSolver::pair_fields(const std::vector<std::pair<int, int>>& pairs) const {
    const auto& sys = impl_->system;
    Eigen::MatrixXd rhs = Eigen::MatrixXd::Zero(Eigen::Index(sys.size()), Eigen::Index(pairs.size()));
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        rhs(Eigen::Index(sys.node_count + pairs[i].first), Eigen::Index(i)) = 1.0;
        rhs(Eigen::Index(sys.node_count + pairs[i].second), Eigen::Index(i)) = -1.0;
    }
    return solve(rhs);
}

VoltageFrame solve_forward(const ForwardSolver& solver, const StimPattern& pattern, const MeasurementSchedule& schedule) {
    if (schedule.per_injection.size() != pattern.injections.size())
        throw DimensionError("schedule and stimulation pattern disagree on injection count");
    const auto& sys = solver.system();
    const Eigen::MatrixXd fields = solver.pair_fields(pattern.injections);
    const auto entries = schedule.retained();
    VoltageFrame frame;
    frame.schedule_id = schedule.id();
    frame.values.resize(Eigen::Index(entries.size()));
    const auto base = Eigen::Index(sys.node_count);
    for (std::size_t i = 0; i < entries.size(); ++i) {
        const auto& en = entries[i];
        frame.values[Eigen::Index(i)] =
            pattern.amplitude * (fields(base + en.plus, en.injection) - fields(base + en.minus, en.injection));
    }
    return frame;
}

VoltageFrame solve_forward(const SparseSystem& system, const StimPattern& pattern, const MeasurementSchedule& schedule) {
    return solve_forward(ForwardSolver(system), pattern, schedule);
}

Eigen::VectorXd electrode_currents(const SparseSystem& system, const Eigen::VectorXd& potentials) {
    Eigen::VectorXd out(Eigen::Index(system.electrode_count));
    for (std::size_t l = 0; l < system.electrode_count; ++l) {
        double mean = 0.0;
        for (auto [node, w] : system.electrode_weights[l]) mean += w * potentials[node];
        const double u = potentials[Eigen::Index(system.node_count + l)];
        out[Eigen::Index(l)] = (system.electrode_area[l] * u - mean) / system.contact_impedance;
    }
    return out;
}

Jacobian compute_jacobian(const Mesh& mesh, const ConductivityField& sigma_ref, const StimPattern& pattern,
                          const MeasurementSchedule& schedule, double contact_impedance) {
    const ForwardSolver solver(assemble_system(mesh, sigma_ref, contact_impedance));

    // Drive fields and measurement (adjoint) fields share one solve when the
    // measurement pair coincides with a drive pair.
    std::vector<std::pair<int, int>> pairs = pattern.injections;
    auto find_pair = [&](int p, int m) {
        for (std::size_t i = 0; i < pairs.size(); ++i)
            if (pairs[i].first == p && pairs[i].second == m) return int(i);
        pairs.emplace_back(p, m);
        return int(pairs.size() - 1);
    };
    const auto entries = schedule.retained();
    std::vector<int> meas_index(entries.size());
    for (std::size_t i = 0; i < entries.size(); ++i) meas_index[i] = find_pair(entries[i].plus, entries[i].minus);

    const Eigen::MatrixXd fields = solver.pair_fields(pairs);
    const Eigen::Index n_fields = fields.cols();

    Jacobian jac;
    jac.mesh_id = mesh.id();
    jac.schedule_id = schedule.id();
    jac.matrix.resize(Eigen::Index(entries.size()), Eigen::Index(mesh.element_count()));

    Eigen::Matrix<double, 4, Eigen::Dynamic> local(4, n_fields);
    Eigen::Matrix<double, 3, Eigen::Dynamic> grad(3, n_fields);
    for (std::size_t e = 0; e < mesh.element_count(); ++e) {
        const auto& t = mesh.tets[e];
        for (int a = 0; a < 4; ++a) local.row(a) = fields.row(t[a]);
        grad.noalias() = basis_gradients(mesh, e) * local;
        const double w = -pattern.amplitude * tet_signed_volume(mesh, e);
        for (std::size_t i = 0; i < entries.size(); ++i)
            jac.matrix(Eigen::Index(i), Eigen::Index(e)) =
                w * grad.col(entries[i].injection).dot(grad.col(meas_index[i]));
    }
    return jac;
}

}  // namespace eit
