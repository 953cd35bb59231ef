#include <doctest.h>

#include <cmath>
#include <random>

#include <Eigen/Dense>

#include "common.hpp"
#include "eit/errors.hpp"

using namespace eit;
using test::adjacent_pattern;
using test::adjacent_schedule;
using test::coarse_mesh;

namespace {

// Dense CEM assembly from first principles: P1 stiffness from the inverse of
// the barycentric coordinate matrix, face mass integrals for the contacts.
Eigen::MatrixXd dense_cem(const Mesh& m, const Eigen::VectorXd& sigma, double z) {
    const auto n = Eigen::Index(m.node_count()), ne = Eigen::Index(m.electrodes.size());
    Eigen::MatrixXd a = Eigen::MatrixXd::Zero(n + ne, n + ne);
    for (std::size_t e = 0; e < m.element_count(); ++e) {
        Eigen::Matrix4d c;
        for (int i = 0; i < 4; ++i) c.row(i) << 1.0, m.nodes[std::size_t(m.tets[e][i])].transpose();
        const Eigen::Matrix4d inv = c.inverse();  // column i: coefficients of basis i
        const double vol = std::abs(c.determinant()) / 6.0;
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                a(m.tets[e][i], m.tets[e][j]) += sigma[Eigen::Index(e)] * vol * inv.block<3, 1>(1, i).dot(inv.block<3, 1>(1, j));
    }
    for (Eigen::Index l = 0; l < ne; ++l) {
        double total = 0;
        for (const auto& f : m.electrodes[std::size_t(l)]) {
            const Vec3 &p = m.nodes[std::size_t(f[0])], &q = m.nodes[std::size_t(f[1])], &r = m.nodes[std::size_t(f[2])];
            const double area = 0.5 * (q - p).cross(r - p).norm();
            total += area;
            for (int i = 0; i < 3; ++i) {
                for (int j = 0; j < 3; ++j) a(f[i], f[j]) += area / z * (i == j ? 1.0 / 6.0 : 1.0 / 12.0);
                a(f[i], n + l) -= area / (3 * z);
                a(n + l, f[i]) -= area / (3 * z);
            }
        }
        a(n + l, n + l) += total / z;
    }
    return a;
}

Eigen::VectorXd dense_frame(const Mesh& m, const Eigen::VectorXd& sigma, double z) {
    const Eigen::MatrixXd a = dense_cem(m, sigma, z);
    const auto n = Eigen::Index(m.node_count());
    // Ground node 0 by replacing its row and column.
    Eigen::MatrixXd g = a;
    g.row(0).setZero();
    g.col(0).setZero();
    g(0, 0) = 1.0;
    const Eigen::PartialPivLU<Eigen::MatrixXd> lu(g);
    const auto& pat = adjacent_pattern();
    const auto entries = adjacent_schedule().retained();
    std::vector<Eigen::VectorXd> fields;
    for (auto [s, k] : pat.injections) {
        Eigen::VectorXd rhs = Eigen::VectorXd::Zero(a.rows());
        rhs[n + s] = pat.amplitude;
        rhs[n + k] = -pat.amplitude;
        fields.push_back(lu.solve(rhs));
    }
    Eigen::VectorXd out(Eigen::Index(entries.size()));
    for (std::size_t i = 0; i < entries.size(); ++i)
        out[Eigen::Index(i)] = fields[std::size_t(entries[i].injection)][n + entries[i].plus] -
                               fields[std::size_t(entries[i].injection)][n + entries[i].minus];
    return out;
}

}  // namespace

TEST_CASE("adjacent schedule keeps 928 measurements") {
    CHECK(adjacent_pattern().injections.size() == 32);
    CHECK(adjacent_schedule().retained_count() == kFrameLength);
    for (const auto& e : adjacent_schedule().retained()) {
        const auto [s, k] = adjacent_pattern().injections[std::size_t(e.injection)];
        CHECK(e.plus != s);
        CHECK(e.plus != k);
        CHECK(e.minus != s);
        CHECK(e.minus != k);
    }
}

TEST_CASE("sparse forward solve matches a dense LU oracle") {
    const Mesh& m = coarse_mesh();
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(0.1, 0.4);
    ConductivityField s{Eigen::VectorXd(Eigen::Index(m.element_count()))};
    for (Eigen::Index e = 0; e < s.sigma.size(); ++e) s.sigma[e] = u(rng);
    const VoltageFrame f = solve_forward(assemble_system(m, s, 0.01), adjacent_pattern(), adjacent_schedule());
    const Eigen::VectorXd oracle = dense_frame(m, s.sigma, 0.01);
    CHECK((f.values - oracle).norm() / oracle.norm() < 1e-9);
}

TEST_CASE("reciprocity, current conservation and conductivity scaling") {
    const Mesh& m = coarse_mesh();
    const auto sys = assemble_system(m, ConductivityField::uniform(m, 0.15));
    const ForwardSolver solver(sys);
    const auto& pat = adjacent_pattern();
    const Eigen::MatrixXd fields = solver.pair_fields(pat.injections);
    const auto base = Eigen::Index(sys.node_count);
    auto pair_index = [&](int a, int b) {
        for (std::size_t i = 0; i < pat.injections.size(); ++i)
            if (pat.injections[i] == std::pair{a, b}) return Eigen::Index(i);
        FAIL("measurement pair is not a drive pair");
        return Eigen::Index(0);
    };
    double worst = 0;
    for (const auto& e : adjacent_schedule().retained()) {
        const auto [s, k] = pat.injections[std::size_t(e.injection)];
        const double v = fields(base + e.plus, e.injection) - fields(base + e.minus, e.injection);
        const Eigen::Index r = pair_index(e.plus, e.minus);
        const double w = fields(base + s, r) - fields(base + k, r);
        worst = std::max(worst, std::abs(v - w) / std::max(std::abs(v), std::abs(w)));
    }
    CHECK(worst <= 1e-8);

    for (Eigen::Index c = 0; c < fields.cols(); ++c) {
        const Eigen::VectorXd i = pat.amplitude * electrode_currents(sys, fields.col(c));
        const auto [s, k] = pat.injections[std::size_t(c)];
        for (Eigen::Index l = 0; l < i.size(); ++l) {
            const double expect = l == s ? pat.amplitude : l == k ? -pat.amplitude : 0.0;
            REQUIRE(std::abs(i[l] - expect) <= 1e-12 * pat.amplitude);
        }
        CHECK(std::abs(i.sum()) <= 1e-12 * pat.amplitude);
    }

    const auto f1 = solve_forward(sys, pat, adjacent_schedule());
    const auto f2 = solve_forward(assemble_system(m, ConductivityField::uniform(m, 0.3), 0.005), pat, adjacent_schedule());
    CHECK((f1.values - 2.0 * f2.values).cwiseAbs().maxCoeff() <= 1e-10 * f1.values.cwiseAbs().maxCoeff());
}

TEST_CASE("invalid conductivity fields are rejected") {
    const Mesh& m = coarse_mesh();
    ConductivityField s = ConductivityField::uniform(m, 0.15);
    s.sigma[3] = 0.0;
    CHECK_THROWS_AS(assemble_system(m, s), DimensionError);
    s.sigma.resize(5);
    CHECK_THROWS_AS(assemble_system(m, s), DimensionError);
}

TEST_CASE("Jacobian entries match central finite differences") {
    const Mesh& m = coarse_mesh();
    const double s0 = 0.15;
    const auto ref = ConductivityField::uniform(m, s0);
    const Jacobian j = compute_jacobian(m, ref, adjacent_pattern(), adjacent_schedule());
    REQUIRE(j.matrix.rows() == Eigen::Index(kFrameLength));
    std::mt19937_64 rng(3);
    // Elements near the electrodes carry most of the sensitivity; sample
    // half of the checks there.
    std::vector<std::size_t> near;
    for (std::size_t e = 0; e < m.element_count(); ++e)
        if (tet_centroid(m, e).head<2>().norm() < 2.5 && std::abs(tet_centroid(m, e).z()) < 2) near.push_back(e);
    std::uniform_int_distribution<std::size_t> any(0, m.element_count() - 1), close(0, near.size() - 1);
    const double h = 1e-6 * s0;
    for (int k = 0; k < 40; ++k) {
        const std::size_t e = k % 2 ? any(rng) : near[close(rng)];
        ConductivityField up = ref, down = ref;
        up.sigma[Eigen::Index(e)] += h;
        down.sigma[Eigen::Index(e)] -= h;
        const auto fu = solve_forward(assemble_system(m, up), adjacent_pattern(), adjacent_schedule());
        const auto fd = solve_forward(assemble_system(m, down), adjacent_pattern(), adjacent_schedule());
        const Eigen::VectorXd fdj = (fu.values - fd.values) / (2 * h);
        for (int t = 0; t < 5; ++t) {
            const auto i = Eigen::Index(std::uniform_int_distribution<int>(0, int(kFrameLength) - 1)(rng));
            const double a = j.matrix(i, Eigen::Index(e)), b = fdj[i];
            CHECK((std::abs(a - b) <= 1e-3 * std::abs(b) || std::abs(a - b) <= 1e-12));
        }
    }
}

TEST_CASE("linearisation error is second order") {
    const Mesh& m = coarse_mesh();
    const auto ref = ConductivityField::uniform(m, 0.15);
    const Jacobian j = compute_jacobian(m, ref, adjacent_pattern(), adjacent_schedule());
    const auto f0 = solve_forward(assemble_system(m, ref), adjacent_pattern(), adjacent_schedule());
    std::size_t e = 0;
    for (std::size_t k = 0; k < m.element_count(); ++k)
        if (tet_centroid(m, k).norm() < tet_centroid(m, e).norm()) e = k;
    auto err = [&](double d) {
        ConductivityField s = ref;
        s.sigma[Eigen::Index(e)] += d;
        const auto f = solve_forward(assemble_system(m, s), adjacent_pattern(), adjacent_schedule());
        return ((f.values - f0.values) - j.matrix.col(Eigen::Index(e)) * d).norm();
    };
    const double e1 = err(0.05), e2 = err(0.025);
    CHECK(e1 / e2 >= 3.5);
}
