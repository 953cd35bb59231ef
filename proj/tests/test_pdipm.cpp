#include <doctest.h>

#include <algorithm>
#include <map>
#include <sstream>

#include "common.hpp"
#include "eit/datagen.hpp"
#include "eit/errors.hpp"
#include "eit/recon_pdipm.hpp"

using namespace eit;

namespace {

VoltageFrame target_dv(const TargetSpec& t) {
    const Mesh& gen = test::coarse_generation_mesh();
    const auto& pat = test::adjacent_pattern();
    const auto& sch = test::adjacent_schedule();
    const auto vt = solve_forward(assemble_system(gen, rasterize_target(gen, t)), pat, sch);
    const auto vr = solve_forward(assemble_system(gen, ConductivityField::uniform(gen, t.sigma_bg)), pat, sch);
    return frame_difference(vt, vr);
}

TargetSpec near_target() {
    return place_target(Eigen::Matrix3d::Identity(), 0.3, 0.0, 1.0, TargetBounds{});
}

const PdipmSolver& solver() {
    static const PdipmSolver s(test::coarse_mesh(), test::coarse_jacobian());
    return s;
}

}  // namespace

TEST_CASE("TV operator measures the cut area of a two-valued image") {
    const Mesh& m = test::coarse_mesh();
    const TvOperator tv = build_tv_operator(m);
    CHECK(tv.mesh_id == m.id());
    const TargetSpec t = near_target();
    Eigen::VectorXd x = Eigen::VectorXd::Zero(Eigen::Index(m.element_count()));
    for (std::size_t e : elements_in_ellipsoid(m, t)) x[Eigen::Index(e)] = 2.5;

    // Oracle: faces shared by one inside and one outside element.
    std::map<Face, std::vector<std::size_t>> owners;
    for (std::size_t e = 0; e < m.element_count(); ++e) {
        const Tet& k = m.tets[e];
        for (int skip = 0; skip < 4; ++skip) {
            Face f{};
            for (int i = 0, j = 0; i < 4; ++i)
                if (i != skip) f[std::size_t(j++)] = k[std::size_t(i)];
            std::sort(f.begin(), f.end());
            owners[f].push_back(e);
        }
    }
    double cut = 0;
    for (const auto& [f, o] : owners)
        if (o.size() == 2 && x[Eigen::Index(o[0])] != x[Eigen::Index(o[1])]) cut += face_area(m, f);
    REQUIRE(cut > 0);
    CHECK((tv.matrix * x).cwiseAbs().sum() == doctest::Approx(2.5 * cut).epsilon(1e-10));
    // Constants lie in the null space.
    CHECK((tv.matrix * Eigen::VectorXd::Constant(x.size(), 3.0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("PDIPM descends, keeps the dual feasible and writes its trace") {
    const PdipmResult r = solver().solve(target_dv(near_target()));
    REQUIRE(r.trace.entries.size() >= 2);
    for (std::size_t i = 1; i < r.trace.entries.size(); ++i) {
        CHECK(r.trace.entries[i].objective <= r.trace.entries[i - 1].objective * (1 + 1e-12));
        CHECK(r.trace.entries[i].iter == r.trace.entries[i - 1].iter + 1);
    }
    for (const auto& e : r.trace.entries) CHECK(e.dual_max <= 1.0 + 1e-12);
    CHECK(r.trace.status == ConvergenceTrace::Status::Converged);
    CHECK(r.image.mesh_id == test::coarse_mesh().id());
    CHECK(r.elements.allFinite());
    // The inclusion is more conductive than the background.
    CHECK(r.elements.maxCoeff() > -r.elements.minCoeff());

    std::ostringstream os;
    write_trace_csv(os, r.trace);
    std::istringstream is(os.str());
    std::string line;
    std::getline(is, line);
    CHECK(line == "iter,objective,step_len,dual_max");
    std::size_t rows = 0;
    while (std::getline(is, line)) {
        CHECK(std::count(line.begin(), line.end(), ',') == 3);
        ++rows;
    }
    CHECK(rows == r.trace.entries.size());
}

TEST_CASE("PDIPM on zero data returns zero") {
    VoltageFrame zero{Eigen::VectorXd::Zero(Eigen::Index(kFrameLength)), test::adjacent_schedule().id()};
    const PdipmResult r = solver().solve(zero);
    CHECK(r.elements.cwiseAbs().maxCoeff() == 0.0);
    CHECK(r.image.values.cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("very strong TV drives the image towards a constant") {
    const auto dv = target_dv(near_target());
    const PdipmResult loose = solver().solve(dv);
    PdipmConfig cfg;
    cfg.alpha = 1e4;
    const PdipmSolver strong(test::coarse_mesh(), test::coarse_jacobian(), cfg);
    const PdipmResult r = strong.solve(dv);
    const double spread = r.elements.maxCoeff() - r.elements.minCoeff();
    const double loose_spread = loose.elements.maxCoeff() - loose.elements.minCoeff();
    CHECK(spread < 1e-2 * loose_spread);
}

TEST_CASE("PDIPM rejects bad settings and foreign frames") {
    PdipmConfig cfg;
    cfg.alpha = -1;
    CHECK_THROWS_AS(cfg.check(), DimensionError);
    cfg = {};
    cfg.max_iters = 0;
    CHECK_THROWS_AS(cfg.check(), DimensionError);
    VoltageFrame foreign{Eigen::VectorXd::Zero(Eigen::Index(kFrameLength)), 12345};
    CHECK_THROWS_AS(solver().solve(foreign), ProvenanceError);
    CHECK(PdipmConfig{}.hash() == PdipmConfig{}.hash());
    cfg = {};
    cfg.alpha = 2e-3;
    CHECK(cfg.hash() != PdipmConfig{}.hash());
}
