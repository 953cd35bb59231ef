#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>

#include <Eigen/Geometry>

#include "common.hpp"
#include "eit/datagen.hpp"
#include "eit/errors.hpp"
#include "eit/io.hpp"

using namespace eit;
namespace fs = std::filesystem;

namespace {

// Surface sampling oracle for the edge-to-edge distance to an infinite probe.
double sampled_distance(const TargetSpec& t, double probe_radius) {
    double best = std::numeric_limits<double>::infinity();
    const int n = 400;
    for (int i = 0; i <= n; ++i) {
        const double th = std::numbers::pi * i / n;
        for (int j = 0; j < 2 * n; ++j) {
            const double ph = std::numbers::pi * j / n;
            const Vec3 local(t.semi_axes.x() * std::sin(th) * std::cos(ph), t.semi_axes.y() * std::sin(th) * std::sin(ph),
                             t.semi_axes.z() * std::cos(th));
            const Vec3 p = t.center + t.rotation * local;
            best = std::min(best, p.head<2>().norm());
        }
    }
    return best - probe_radius;
}

std::string file_bytes(const fs::path& p) { return read_text(p); }

}  // namespace

TEST_CASE("sampled targets respect the distance bound and the oracle") {
    Rng rng(4);
    TargetBounds b;
    for (int i = 0; i < 20; ++i) {
        const TargetSpec t = sample_target(rng, b);
        const double d = probe_distance(t);
        CHECK(d >= -1e-9);
        CHECK(d <= b.max_distance + 1e-9);
        CHECK(std::abs(sampled_distance(t, 1.0) - d) < 2e-2);
    }
}

TEST_CASE("placement hits the requested distance exactly") {
    TargetBounds b;
    const Eigen::Matrix3d r = Eigen::AngleAxisd(0.7, Vec3(1, 2, 3).normalized()).toRotationMatrix();
    for (double d : {0.0, 1.0, 2.0, 3.0, 3.5, 10.0}) {
        const TargetSpec t = place_target(r, 1.1, 0.4, d, b);
        CHECK(std::abs(probe_distance(t) - d) < 1e-9);
    }
}

TEST_CASE("distance distribution passes a Kolmogorov-Smirnov check") {
    Rng rng(99);
    TargetBounds b;
    b.min_distance = 0.5;
    b.max_distance = 10.0;
    std::vector<double> d;
    for (int i = 0; i < 1000; ++i) d.push_back(probe_distance(sample_target(rng, b)));
    std::sort(d.begin(), d.end());
    double ks = 0;
    for (std::size_t i = 0; i < d.size(); ++i) {
        const double cdf = (d[i] - b.min_distance) / (b.max_distance - b.min_distance);
        ks = std::max({ks, std::abs(cdf - double(i) / 1000.0), std::abs(cdf - double(i + 1) / 1000.0)});
    }
    CHECK(ks < 0.05);
}

TEST_CASE("sampling is deterministic per seed") {
    Rng a(5), b(5);
    const TargetSpec x = sample_target(a, {}), y = sample_target(b, {});
    CHECK(x.center == y.center);
    CHECK(x.rotation == y.rotation);
    CHECK(sample_seed(7, 3) == sample_seed(7, 3));
    CHECK(sample_seed(7, 3) != sample_seed(7, 4));
}

TEST_CASE("rasterisation matches a centroid oracle and the limits") {
    const Mesh& m = test::coarse_mesh();
    TargetSpec far;
    far.center = Vec3(500, 0, 0);
    CHECK((rasterize_target(m, far).sigma.array() == far.sigma_bg).all());
    TargetSpec huge;
    huge.semi_axes = Vec3(200, 200, 200);
    CHECK((rasterize_target(m, huge).sigma.array() == huge.sigma_in).all());

    Rng rng(3);
    const TargetSpec t = sample_target(rng, {});
    const auto f = rasterize_target(m, t);
    for (std::size_t e = 0; e < m.element_count(); ++e) {
        Vec3 c = Vec3::Zero();
        for (int v : m.tets[e]) c += m.nodes[std::size_t(v)];
        c /= 4.0;
        const Vec3 l = t.rotation.transpose() * (c - t.center);
        const bool in = (l.array() / t.semi_axes.array()).square().sum() <= 1.0;
        REQUIRE(f.sigma[Eigen::Index(e)] == (in ? t.sigma_in : t.sigma_bg));
    }
}

TEST_CASE("noise model endpoints and separation") {
    const TankGeometry g;
    const auto snr = measurement_snr_db(g, test::adjacent_schedule(), NoiseModel{});
    CHECK(snr.maxCoeff() == doctest::Approx(50.0));
    CHECK(snr.minCoeff() == doctest::Approx(10.0));
    const auto s = measurement_separation(g, test::adjacent_schedule());
    CHECK(s.minCoeff() == 0.0);
    CHECK(s.maxCoeff() == 1.0);

    CHECK_THROWS_AS((NoiseModel{10, 50}.check()), DimensionError);
    CHECK_NOTHROW(NoiseModel::off().check());
}

TEST_CASE("disabled noise leaves the frame unchanged") {
    VoltageFrame f{Eigen::VectorXd::LinSpaced(Eigen::Index(kFrameLength), 1e-5, 2e-5), test::adjacent_schedule().id()};
    Rng rng(1);
    CHECK(add_noise(f, TankGeometry{}, test::adjacent_schedule(), NoiseModel::off(), rng).values == f.values);
}

TEST_CASE("Monte Carlo SNR and independence of the noise") {
    const TankGeometry g;
    const auto& sch = test::adjacent_schedule();
    const NoiseModel nm;
    const auto snr = measurement_snr_db(g, sch, nm);
    VoltageFrame f{Eigen::VectorXd::Constant(Eigen::Index(kFrameLength), 1e-4), sch.id()};
    const int n = 10000;
    Rng rng(17);
    Eigen::MatrixXd noise(n, Eigen::Index(kFrameLength));
    for (int r = 0; r < n; ++r) noise.row(r) = (add_noise(f, g, sch, nm, rng).values - f.values).transpose();
    for (Eigen::Index m : {Eigen::Index(0), Eigen::Index(100), Eigen::Index(500), Eigen::Index(927)}) {
        const double var = noise.col(m).squaredNorm() / n;
        const double measured = 10 * std::log10(f.values[m] * f.values[m] / var);
        CHECK(std::abs(measured - snr[m]) < 0.5);
    }
    // Standardised correlations against the zero-hypothesis spread 1/sqrt(n).
    for (Eigen::Index m = 0; m + 1 < 20; ++m) {
        const Eigen::VectorXd a = noise.col(m) / noise.col(m).norm(), b = noise.col(m + 1) / noise.col(m + 1).norm();
        CHECK(std::abs(a.dot(b)) < 3.0 / std::sqrt(double(n)));
    }
}

TEST_CASE("datasets: guard, determinism, persistence") {
    const Mesh& inv = test::coarse_mesh();
    const Mesh& gen = test::coarse_generation_mesh();
    const auto& r = test::coarse_matrix();
    DatasetConfig cfg;
    cfg.count = 3;
    cfg.seed = 12;
    CHECK_THROWS_AS(gen_dataset(cfg, inv, inv, test::adjacent_pattern(), test::adjacent_schedule(), r), ProvenanceError);

    const Dataset a = gen_dataset(cfg, gen, inv, test::adjacent_pattern(), test::adjacent_schedule(), r);
    for (const auto& s : a.samples) {
        CHECK(s.v_clean.values == s.v_noisy.values);
        CHECK(s.gn_image.values.size() == Eigen::Index(inv.node_count()));
        CHECK(s.truth_nodal.values.size() == Eigen::Index(inv.node_count()));
        CHECK(std::abs(probe_distance(s.target) - s.distance) < 1e-9);
    }
    cfg.threads = 2;
    const Dataset b = gen_dataset(cfg, gen, inv, test::adjacent_pattern(), test::adjacent_schedule(), r);
    const auto root = fs::temp_directory_path() / "eit_test_ds";
    fs::remove_all(root);
    save_dataset(a, root / "a");
    save_dataset(b, root / "b");
    for (const auto& entry : fs::recursive_directory_iterator(root / "a")) {
        if (!entry.is_regular_file()) continue;
        const auto rel = fs::relative(entry.path(), root / "a");
        const std::string other = file_bytes(root / "b" / rel);
        if (rel == "manifest.json") continue;  // thread count is not part of the manifest
        CHECK(file_bytes(entry.path()) == other);
    }
    CHECK(file_bytes(root / "a" / "manifest.json") == file_bytes(root / "b" / "manifest.json"));

    const Dataset back = load_dataset(root / "a");
    REQUIRE(back.samples.size() == 3);
    CHECK(back.samples[1].gn_image.values == a.samples[1].gn_image.values);
    CHECK(back.samples[2].v_noisy.values == a.samples[2].v_noisy.values);
    CHECK(back.inverse_mesh_id == inv.id());
    CHECK(back.gn_config_hash == r.config_hash);

    const Dataset noisy = renoise_dataset(a, NoiseModel{}, 5, gen, inv, test::adjacent_schedule(), r);
    CHECK(noisy.samples[0].v_clean.values == a.samples[0].v_clean.values);
    CHECK(noisy.samples[0].v_noisy.values != a.samples[0].v_noisy.values);
    fs::remove_all(root);
}
