#include <doctest.h>

#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

#include "common.hpp"
#include "eit/errors.hpp"
#include "eit/io.hpp"
#include "eit/pipeline.hpp"

using namespace eit;
using test::coarse_jacobian;
using test::coarse_matrix;
using test::coarse_mesh;

namespace {

// Relative residual of (J^T J / jn2 + l^2 W) R = J^T / jn2 in the normalised units.
double normal_residual(const ReconstructionMatrix& rm, const GnConfig& cfg) {
    const Mesh& m = coarse_mesh();
    const Eigen::MatrixXd& j = coarse_jacobian().matrix;
    const Eigen::MatrixXd& r = rm.matrix;
    const double jn2 = j.squaredNorm() / double(j.cols());
    Eigen::SparseMatrix<double> w = element_graph_laplacian(m);
    w /= w.diagonal().mean();
    Eigen::SparseMatrix<double> id(w.rows(), w.cols());
    id.setIdentity();
    w += cfg.identity_weight * id;
    const Eigen::MatrixXd lhs = j.transpose() * (j * r) / jn2 + cfg.lambda * cfg.lambda * (w * r);
    const Eigen::MatrixXd rhs = j.transpose() / jn2;
    return (lhs - rhs).norm() / rhs.norm();
}

}  // namespace

TEST_CASE("R solves the regularised normal equations") {
    const Mesh& m = coarse_mesh();
    REQUIRE(coarse_matrix().matrix.rows() == Eigen::Index(m.element_count()));
    REQUIRE(coarse_matrix().matrix.cols() == Eigen::Index(kFrameLength));
    GnConfig cfg;
    cfg.lambda = 1e-2;
    CHECK(normal_residual(build_reconstruction_matrix(coarse_jacobian(), m, cfg), cfg) < 1e-8);
    // The default lambda leaves the normal matrix with a condition number near
    // 1e12, so the forward residual is bounded by that loss of digits.
    CHECK(normal_residual(coarse_matrix(), GnConfig{}) < 1e-3);
}

TEST_CASE("strong regularisation suppresses the image") {
    GnConfig cfg;
    cfg.lambda = 1e6;
    const auto big = build_reconstruction_matrix(coarse_jacobian(), coarse_mesh(), cfg);
    CHECK(big.matrix.cwiseAbs().maxCoeff() < 1e-12 * coarse_matrix().matrix.cwiseAbs().maxCoeff());
    cfg.lambda = 0;
    CHECK_THROWS_AS(cfg.check(), DimensionError);
}

TEST_CASE("single-element perturbation peaks on that element") {
    const Mesh& m = coarse_mesh();
    const Eigen::MatrixXd& j = coarse_jacobian().matrix;
    // Elements at the probe surface in the electrode band.
    int hits = 0, trials = 0;
    for (std::size_t e = 0; e < m.element_count(); ++e) {
        const Vec3 c = tet_centroid(m, e);
        if (c.head<2>().norm() > 1.6 || std::abs(c.z()) > 1.2 || trials >= 10) continue;
        ++trials;
        const VoltageFrame dv{j.col(Eigen::Index(e)) * 0.01, test::adjacent_schedule().id()};
        const Eigen::VectorXd img = reconstruct_gn_elements(coarse_matrix(), dv, m.id());
        Eigen::Index arg = 0;
        img.cwiseAbs().maxCoeff(&arg);
        // The peak element shares a node with the perturbed one.
        bool shares = false;
        for (int a : m.tets[std::size_t(arg)])
            for (int b : m.tets[e]) shares = shares || a == b;
        hits += shares;
    }
    REQUIRE(trials == 10);
    CHECK(hits == trials);
}

TEST_CASE("reconstruction is linear and zero data gives a zero image") {
    const Mesh& m = coarse_mesh();
    const auto sid = test::adjacent_schedule().id();
    std::mt19937_64 rng(2);
    std::normal_distribution<double> n(0, 1e-6);
    VoltageFrame a{Eigen::VectorXd(Eigen::Index(kFrameLength)), sid}, b = a;
    for (Eigen::Index i = 0; i < a.values.size(); ++i) {
        a.values[i] = n(rng);
        b.values[i] = n(rng);
    }
    const auto ia = reconstruct_gn(coarse_matrix(), a, m), ib = reconstruct_gn(coarse_matrix(), b, m);
    const VoltageFrame c{2.5 * a.values - 0.5 * b.values, sid};
    const auto ic = reconstruct_gn(coarse_matrix(), c, m);
    CHECK((ic.values - (2.5 * ia.values - 0.5 * ib.values)).norm() <= 1e-10 * ic.values.norm());
    const VoltageFrame z{Eigen::VectorXd::Zero(Eigen::Index(kFrameLength)), sid};
    CHECK(reconstruct_gn(coarse_matrix(), z, m).values.isZero(0.0));
    CHECK_THROWS_AS(reconstruct_gn(coarse_matrix(), z, test::coarse_generation_mesh()), ProvenanceError);
}

TEST_CASE("element_to_nodal averages incident elements by volume") {
    const Mesh& m = coarse_mesh();
    const auto n = Eigen::Index(m.element_count());
    CHECK((element_to_nodal(Eigen::VectorXd::Constant(n, 0.7), m).values.array() - 0.7).abs().maxCoeff() < 1e-14);

    Eigen::VectorXd one = Eigen::VectorXd::Zero(n);
    one[42] = 1.0;
    const auto img = element_to_nodal(one, m).values;
    for (Eigen::Index v = 0; v < img.size(); ++v) {
        const bool on = std::find(m.tets[42].begin(), m.tets[42].end(), int(v)) != m.tets[42].end();
        CHECK((img[v] != 0.0) == on);
    }

    // Two-pass accumulation oracle.
    std::mt19937_64 rng(8);
    std::uniform_real_distribution<double> u(-1, 1);
    Eigen::VectorXd x(n);
    for (auto& v : x) v = u(rng);
    std::vector<double> num(m.node_count(), 0.0), den(m.node_count(), 0.0);
    for (std::size_t e = 0; e < m.element_count(); ++e) {
        const double vol = std::abs(tet_signed_volume(m, e));
        for (int a : m.tets[e]) den[std::size_t(a)] += vol;
    }
    for (std::size_t e = 0; e < m.element_count(); ++e) {
        const double vol = std::abs(tet_signed_volume(m, e));
        for (int a : m.tets[e]) num[std::size_t(a)] += vol * x[Eigen::Index(e)];
    }
    const auto got = element_to_nodal(x, m).values;
    for (std::size_t v = 0; v < num.size(); ++v) CHECK(got[Eigen::Index(v)] == doctest::Approx(num[v] / den[v]).epsilon(1e-12));
}

TEST_CASE("rebuilding R is bit-identical") {
    const auto again = build_reconstruction_matrix(coarse_jacobian(), coarse_mesh(), GnConfig{});
    CHECK(again.matrix == coarse_matrix().matrix);
    CHECK(again.config_hash == coarse_matrix().config_hash);
    GnConfig other;
    other.lambda = 2e-4;
    CHECK(other.hash() != GnConfig{}.hash());
}

TEST_CASE("EITR container is row-major and checks its header") {
    const auto dir = std::filesystem::temp_directory_path() / "eit_test_eitr";
    std::filesystem::create_directories(dir);
    ReconstructionMatrix r;
    r.matrix = Eigen::MatrixXd(3, 4);
    r.matrix << 1, 2, 3, 4, 5, 6, 7, 8, 9, 10, 11, 12;
    r.mesh_id = 77;
    r.config_hash = 99;
    save_reconstruction_matrix(r, dir / "r.eitr");

    std::ifstream is(dir / "r.eitr", std::ios::binary);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), {});
    REQUIRE(bytes.size() == 4 + 4 + 4 * 8 + 12 * 8);
    CHECK(std::string(bytes.data(), 4) == "EITR");
    std::uint32_t version = 0;
    std::memcpy(&version, bytes.data() + 4, 4);
    CHECK(version == 1);
    double second = 0;
    std::memcpy(&second, bytes.data() + 40 + 8, 8);
    CHECK(second == 2.0);  // row-major: (0,1) follows (0,0)

    const auto back = load_reconstruction_matrix(dir / "r.eitr");
    CHECK(back.matrix == r.matrix);
    CHECK(back.mesh_id == 77);
    CHECK(back.config_hash == 99);

    bytes[0] = 'X';
    std::ofstream(dir / "bad.eitr", std::ios::binary).write(bytes.data(), std::streamsize(bytes.size()));
    CHECK_THROWS_AS(load_reconstruction_matrix(dir / "bad.eitr"), FormatError);
    bytes[0] = 'E';
    std::ofstream(dir / "short.eitr", std::ios::binary).write(bytes.data(), std::streamsize(bytes.size() - 8));
    CHECK_THROWS_AS(load_reconstruction_matrix(dir / "short.eitr"), FormatError);
    std::filesystem::remove_all(dir);
}

namespace {

// Mean distance of the set voxels from the probe axis.
double radial_centroid(const BinaryVolume& v) {
    double sum = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < v.bits.size(); ++i) {
        if (!v.bits[i]) continue;
        sum += v.geometry.center(i).head<2>().norm();
        ++n;
    }
    return n ? sum / double(n) : 0.0;
}

}  // namespace

TEST_CASE("GN images of noiseless targets are displaced outwards") {
    const Workspace ws = Workspace::build(Preset::named("desk"));
    DatasetConfig cfg;
    cfg.count = 20;
    cfg.seed = 31;
    cfg.bounds = ws.preset.bounds;
    cfg.threads = 2;
    const Dataset ds = gen_dataset(cfg, ws.generation, ws.inverse, ws.pattern, ws.schedule, ws.r);
    const VoxelMap map(ws.inverse, ws.preset.grid.geometry());
    int outward = 0;
    for (const Sample& s : ds.samples) {
        const BinaryVolume rec = threshold_quarter(map.interpolate(s.gn_image.values));
        const BinaryVolume truth = voxelize_target(map.geometry(), s.target);
        outward += radial_centroid(rec) >= radial_centroid(truth);
    }
    MESSAGE(outward << " of " << ds.samples.size() << " displaced outwards");
    CHECK(outward >= 16);
}
